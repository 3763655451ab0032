//! Checkpoints: the "GCKP1" container.
//!
//! ```text
//! magic    5 bytes "GCKP1"
//! version  u8 = 1
//! config   u32 LE length + that many bytes of JSON (config echo)
//! count    u32 LE number of parameters
//! entry*   u16 LE name length + name bytes
//!          u8 ndim, ndim x u32 LE dims
//!          prod(dims) x f64 LE values
//! ```
//!
//! Values are stored as f64 regardless of the training width; f32 -> f64 ->
//! f32 is exact, so parameter roundtrips are bit-exact at either width.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use gencad_core::scalar::Real;

use crate::tensor::Params;
use crate::NnError;

const MAGIC: &[u8; 5] = b"GCKP1";

/// Serialize every parameter of the model plus a config echo.
pub fn save_checkpoint<T: Real, M: Params<T>>(
    model: &mut M,
    config_json: &str,
    path: &Path,
) -> Result<(), NnError> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params("model", &mut |name, p| {
        entries.push((
            name.to_string(),
            p.value.shape().to_vec(),
            p.value.data().iter().map(|v| v.f64()).collect(),
        ));
    });

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[1u8])?;
    let cfg = config_json.as_bytes();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, shape, data) in entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[shape.len() as u8])?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), NnError> {
    r.read_exact(buf)
        .map_err(|_| NnError::Checkpoint(format!("corrupt checkpoint: truncated {what}")))
}

/// Load a checkpoint into an existing model. Every parameter must be
/// present with a matching shape; returns the config echo.
pub fn load_checkpoint<T: Real, M: Params<T>>(model: &mut M, path: &Path) -> Result<String, NnError> {
    let (config, mut map) = read_entries(path)?;
    let mut err: Option<NnError> = None;
    model.visit_params("model", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match map.remove(name) {
            None => err = Some(NnError::Checkpoint(format!("missing parameter {name}"))),
            Some((shape, data)) => {
                if shape != p.value.shape() {
                    err = Some(NnError::Checkpoint(format!(
                        "shape mismatch for {name}: checkpoint {shape:?}, model {:?}",
                        p.value.shape()
                    )));
                    return;
                }
                for (dst, src) in p.value.data_mut().iter_mut().zip(&data) {
                    *dst = T::of(*src);
                }
                p.zero_grad();
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = map.keys().next() {
        return Err(NnError::Checkpoint(format!("unexpected parameter {name} in checkpoint")));
    }
    Ok(config)
}

/// Read only the config echo.
pub fn peek_config(path: &Path) -> Result<String, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic, expected GCKP1".to_string()));
    }
    let mut ver = [0u8; 1];
    read_exact_or(&mut r, &mut ver, "version")?;
    let mut b4 = [0u8; 4];
    read_exact_or(&mut r, &mut b4, "config length")?;
    let mut cfg = vec![0u8; u32::from_le_bytes(b4) as usize];
    read_exact_or(&mut r, &mut cfg, "config")?;
    String::from_utf8(cfg).map_err(|_| NnError::Checkpoint("config is not utf-8".to_string()))
}

type EntryMap = std::collections::HashMap<String, (Vec<usize>, Vec<f64>)>;

fn read_entries(path: &Path) -> Result<(String, EntryMap), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic, expected GCKP1".to_string()));
    }
    let mut ver = [0u8; 1];
    read_exact_or(&mut r, &mut ver, "version")?;
    if ver[0] != 1 {
        return Err(NnError::Checkpoint(format!("unsupported version {}", ver[0])));
    }
    let mut b4 = [0u8; 4];
    read_exact_or(&mut r, &mut b4, "config length")?;
    let mut cfg = vec![0u8; u32::from_le_bytes(b4) as usize];
    read_exact_or(&mut r, &mut cfg, "config")?;
    let config = String::from_utf8(cfg)
        .map_err(|_| NnError::Checkpoint("config is not utf-8".to_string()))?;

    read_exact_or(&mut r, &mut b4, "entry count")?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut map = EntryMap::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_or(&mut r, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact_or(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("parameter name is not utf-8".to_string()))?;
        let mut nd = [0u8; 1];
        read_exact_or(&mut r, &mut nd, "ndim")?;
        let mut shape = Vec::with_capacity(nd[0] as usize);
        for _ in 0..nd[0] {
            read_exact_or(&mut r, &mut b4, "dim")?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b8 = [0u8; 8];
        for _ in 0..n {
            read_exact_or(&mut r, &mut b8, "values")?;
            data.push(f64::from_le_bytes(b8));
        }
        map.insert(name, (shape, data));
    }
    Ok((config, map))
}

/// FNV-1a fingerprint over every parameter byte, for freeze verification.
pub fn params_fingerprint<T: Real, M: Params<T>>(model: &mut M) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    model.visit_params("model", &mut |name, p| {
        for b in name.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        for v in p.value.data() {
            for b in v.f64().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
    });
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;
    use crate::tensor::{Param, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Two {
        a: Linear<f32>,
        b: Linear<f32>,
    }

    impl Params<f32> for Two {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
            self.a.visit_params(&format!("{prefix}.a"), f);
            self.b.visit_params(&format!("{prefix}.b"), f);
        }
    }

    fn model(seed: u64) -> Two {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Two { a: Linear::new(3, 4, &mut rng), b: Linear::new(4, 2, &mut rng) }
    }

    #[test]
    fn roundtrip_is_bitexact_and_forward_identical() {
        let dir = std::env::temp_dir().join("gencad_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("two.gckp");

        let mut m = model(1);
        save_checkpoint(&mut m, r#"{"kind":"two"}"#, &path).unwrap();
        let mut m2 = model(99);
        let cfg = load_checkpoint(&mut m2, &path).unwrap();
        assert_eq!(cfg, r#"{"kind":"two"}"#);
        assert_eq!(params_fingerprint(&mut m), params_fingerprint(&mut m2));

        let x = Tensor::from_vec(&[1, 3], vec![0.1f32, 0.2, 0.3]);
        let y1 = m.b.forward_frozen(&m.a.forward_frozen(&x));
        let y2 = m2.b.forward_frozen(&m2.a.forward_frozen(&x));
        assert_eq!(y1, y2);
    }

    #[test]
    fn truncated_file_reports_corruption() {
        let dir = std::env::temp_dir().join("gencad_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.gckp");
        let mut m = model(2);
        save_checkpoint(&mut m, "{}", &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&mut model(3), &path).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_explicit() {
        let dir = std::env::temp_dir().join("gencad_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("shape.gckp");
        let mut m = model(4);
        save_checkpoint(&mut m, "{}", &path).unwrap();

        struct Other {
            a: Linear<f32>,
            b: Linear<f32>,
        }
        impl Params<f32> for Other {
            fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
                self.a.visit_params(&format!("{prefix}.a"), f);
                self.b.visit_params(&format!("{prefix}.b"), f);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut other = Other { a: Linear::new(3, 5, &mut rng), b: Linear::new(5, 2, &mut rng) };
        let err = load_checkpoint(&mut other, &path).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }
}
