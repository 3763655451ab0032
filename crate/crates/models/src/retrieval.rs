//! Image-based program retrieval over an embedded corpus, and the batch
//! retrieval-accuracy protocol.
//!
//! The index persists as "GCIX1": magic, u32 count, u32 dim, u8 image-latent
//! flag, per-entry u16 id length + id bytes, then count x dim f32 CAD rows
//! and optionally count x dim f32 image rows, all little-endian.

use std::io::{Read, Write};

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gencad_core::lang::SeqMatrix;
use gencad_core::scalar::Real;
use gencad_nn::tensor::Tensor;

use crate::ccip::l2_normalize_rows;
use crate::csr::CsrModel;
use crate::ModelError;

const MAGIC: &[u8; 5] = b"GCIX1";

/// L2-normalized latent rows keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major `len x dim`, unit rows.
    pub cad: Vec<f32>,
    /// Optional matching image latents, unit rows.
    pub image: Option<Vec<f32>>,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn cad_row(&self, i: usize) -> &[f32] {
        &self.cad[i * self.dim..(i + 1) * self.dim]
    }

    pub fn image_row(&self, i: usize) -> Option<&[f32]> {
        self.image.as_ref().map(|m| &m[i * self.dim..(i + 1) * self.dim])
    }

    pub fn write_gcix(&self, w: &mut impl Write) -> Result<(), ModelError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[u8::from(self.image.is_some())])?;
        for id in &self.ids {
            let b = id.as_bytes();
            w.write_all(&(b.len() as u16).to_le_bytes())?;
            w.write_all(b)?;
        }
        for v in &self.cad {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(img) = &self.image {
            for v in img {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_gcix(r: &mut impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Io("bad magic, expected GCIX1".to_string()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut id)?;
            ids.push(
                String::from_utf8(id).map_err(|_| ModelError::Io("id is not utf-8".to_string()))?,
            );
        }
        let mut read_rows = |count: usize| -> Result<Vec<f32>, ModelError> {
            let mut out = Vec::with_capacity(count);
            let mut b = [0u8; 4];
            for _ in 0..count {
                r.read_exact(&mut b)?;
                out.push(f32::from_le_bytes(b));
            }
            Ok(out)
        };
        let cad = read_rows(n * dim)?;
        let image = if flag[0] == 1 { Some(read_rows(n * dim)?) } else { None };
        Ok(EmbeddingIndex { ids, dim, cad, image })
    }
}

/// Encode a corpus with the frozen sequence encoder into a normalized index.
pub fn build_index<T: Real>(
    csr: &CsrModel<T>,
    corpus: &[(String, SeqMatrix)],
) -> Result<EmbeddingIndex, ModelError> {
    let dim = csr.config.d_z;
    let mut ids = Vec::with_capacity(corpus.len());
    let mut cad = Vec::with_capacity(corpus.len() * dim);
    for chunk in corpus.chunks(64) {
        let mats: Vec<SeqMatrix> = chunk.iter().map(|(_, m)| m.clone()).collect();
        let z = csr.encode_frozen(&mats)?;
        let (zn, _) = l2_normalize_rows(&z);
        for (i, (id, _)) in chunk.iter().enumerate() {
            ids.push(id.clone());
            cad.extend(zn.row(i).iter().map(|v| v.f64() as f32));
        }
    }
    Ok(EmbeddingIndex { ids, dim, cad, image: None })
}

/// Top-k entries by cosine similarity against a normalized query latent.
/// Ties break toward the lower id.
pub fn retrieve(query: &[f32], index: &EmbeddingIndex, k: usize) -> Vec<(String, f32)> {
    let mut scored: Vec<(usize, f32)> = (0..index.len())
        .map(|i| {
            let row = index.cad_row(i);
            let sim: f32 = row.iter().zip(query).map(|(a, b)| a * b).sum();
            (i, sim)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.ids[a.0].cmp(&index.ids[b.0]))
    });
    scored.into_iter().take(k).map(|(i, s)| (index.ids[i].clone(), s)).collect()
}

/// Outcome of the batch protocol at one batch size.
#[derive(Debug, Clone)]
pub struct RetrievalReport {
    pub n_b: usize,
    pub repeats: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

/// The batch retrieval protocol: per repeat, sample `n_b` corpus entries,
/// pick one query image latent, score whether the top-1 cosine match among
/// the batch's CAD latents is the query's own entry.
pub fn eval_protocol(
    cad_latents: &Tensor<f32>,
    image_latents: &Tensor<f32>,
    n_b: usize,
    repeats: usize,
    seed: u64,
) -> Result<RetrievalReport, ModelError> {
    let n = cad_latents.rows();
    if image_latents.rows() != n {
        return Err(ModelError::Dim(format!(
            "{n} cad latents vs {} image latents",
            image_latents.rows()
        )));
    }
    let (cad_n, _) = l2_normalize_rows(cad_latents);
    let (img_n, _) = l2_normalize_rows(image_latents);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let batch: Vec<usize> = if n_b >= n {
            (0..n).collect()
        } else {
            index_sample(&mut rng, n, n_b).into_vec()
        };
        let q = batch[rng.random_range(0..batch.len())];
        let query = img_n.row(q);
        let mut best = batch[0];
        let mut best_sim = f64::NEG_INFINITY;
        for &j in &batch {
            let sim: f64 = query.iter().zip(cad_n.row(j)).map(|(a, b)| (a * b) as f64).sum();
            if sim > best_sim || (sim == best_sim && j < best) {
                best_sim = sim;
                best = j;
            }
        }
        scores.push(if best == q { 1.0 } else { 0.0 });
    }
    let mean = scores.iter().sum::<f64>() / repeats as f64;
    let std_dev = if repeats > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RetrievalReport { n_b: n_b.min(n), repeats, scores, mean, std_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdp::gaussian;

    #[test]
    fn gcix_roundtrip_is_exact() {
        let index = EmbeddingIndex {
            ids: vec!["a".into(), "b".into(), "longer_id_0123".into()],
            dim: 4,
            cad: (0..12).map(|i| i as f32 * 0.25).collect(),
            image: Some((0..12).map(|i| -(i as f32)).collect()),
        };
        let mut buf = Vec::new();
        index.write_gcix(&mut buf).unwrap();
        let back = EmbeddingIndex::read_gcix(&mut buf.as_slice()).unwrap();
        assert_eq!(index, back);
    }

    #[test]
    fn retrieve_orders_by_similarity_with_id_tiebreak() {
        let index = EmbeddingIndex {
            ids: vec!["x".into(), "y".into(), "z".into()],
            dim: 2,
            cad: vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            image: None,
        };
        let hits = retrieve(&[1.0, 0.0], &index, 3);
        assert_eq!(hits.len(), 3);
        // "x" and "z" tie at similarity 1; "x" wins by id.
        assert_eq!(hits[0].0, "x");
        assert_eq!(hits[1].0, "z");
        assert_eq!(hits[2].0, "y");
        // k beyond the corpus clamps.
        assert_eq!(retrieve(&[1.0, 0.0], &index, 10).len(), 3);
    }

    #[test]
    fn perfect_oracle_embeddings_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lat: Tensor<f32> = gaussian(&[64, 8], &mut rng);
        let report = eval_protocol(&lat, &lat, 10, 50, 3).unwrap();
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn degenerate_batch_of_one_always_hits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cad: Tensor<f32> = gaussian(&[16, 4], &mut rng);
        let img: Tensor<f32> = gaussian(&[16, 4], &mut rng);
        let report = eval_protocol(&cad, &img, 1, 20, 5).unwrap();
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn random_embeddings_hit_about_ten_percent_at_nb_10() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cad: Tensor<f32> = gaussian(&[256, 16], &mut rng);
        let img: Tensor<f32> = gaussian(&[256, 16], &mut rng);
        let report = eval_protocol(&cad, &img, 10, 1000, 42).unwrap();
        assert!((report.mean - 0.1).abs() < 0.03, "mean {}", report.mean);
    }

    #[test]
    fn protocol_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cad: Tensor<f32> = gaussian(&[64, 8], &mut rng);
        let img: Tensor<f32> = gaussian(&[64, 8], &mut rng);
        let a = eval_protocol(&cad, &img, 10, 100, 9).unwrap();
        let b = eval_protocol(&cad, &img, 10, 100, 9).unwrap();
        assert_eq!(a.scores, b.scores);
    }
}
