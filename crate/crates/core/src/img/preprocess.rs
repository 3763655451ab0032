//! Encoder input preparation: resize to 256, center crop, normalize to
//! zero mean / unit half-range ((x - 0.5) / 0.5, so outputs lie in [-1, 1]).

use super::{GrayImage, ImgError};

/// Encoder input edge length.
pub const ENCODER_SIZE: usize = 256;

fn bilinear_resize(img: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; out_w * out_h];
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    for oy in 0..out_h {
        for ox in 0..out_w {
            // Map the output pixel center back into source coordinates.
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, img.width as f64 - 1.0);
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, img.height as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let y1 = (y0 + 1).min(img.height - 1);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let v00 = img.get(x0, y0) as f64;
            let v10 = img.get(x1, y0) as f64;
            let v01 = img.get(x0, y1) as f64;
            let v11 = img.get(x1, y1) as f64;
            out[oy * out_w + ox] =
                v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty
                    + v11 * tx * ty;
        }
    }
    out
}

/// Resize to 256x256 (bilinear), center crop 256 (a no-op at that size) and
/// normalize intensities to [-1, 1]. Returns row-major f32 values.
pub fn preprocess_for_encoder(img: &GrayImage) -> Result<Vec<f32>, ImgError> {
    if img.width == 0 || img.height == 0 {
        return Err(ImgError::Parameter("empty image".to_string()));
    }
    let resized = bilinear_resize(img, ENCODER_SIZE, ENCODER_SIZE);
    Ok(resized.iter().map(|&v| (((v / 255.0) - 0.5) / 0.5) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_maps_to_zero() {
        // 0.5 in unit range is 127.5 in u8; use the closest representable.
        let img = GrayImage { width: 16, height: 16, data: vec![128; 256] };
        let t = preprocess_for_encoder(&img).unwrap();
        assert_eq!(t.len(), ENCODER_SIZE * ENCODER_SIZE);
        for v in t {
            assert!(v.abs() < 0.005);
        }
    }

    #[test]
    fn white_maps_to_one_and_black_to_minus_one() {
        let white = GrayImage { width: 8, height: 8, data: vec![255; 64] };
        assert!(preprocess_for_encoder(&white).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let black = GrayImage::new(8, 8);
        assert!(preprocess_for_encoder(&black).unwrap().iter().all(|&v| (v + 1.0).abs() < 1e-6));
    }

    #[test]
    fn resize_preserves_mean_of_checkerboard() {
        let mut img = GrayImage::new(448, 448);
        for y in 0..448 {
            for x in 0..448 {
                if (x / 8 + y / 8) % 2 == 0 {
                    img.set(x, y, 255);
                }
            }
        }
        let src_mean =
            img.data.iter().map(|&v| v as f64).sum::<f64>() / (448.0 * 448.0) / 255.0;
        let t = preprocess_for_encoder(&img).unwrap();
        let dst_mean =
            t.iter().map(|&v| (v as f64 + 1.0) / 2.0).sum::<f64>() / t.len() as f64;
        assert!((src_mean - dst_mean).abs() / src_mean < 0.01, "{src_mean} vs {dst_mean}");
    }

    #[test]
    fn output_range_is_bounded() {
        let mut img = GrayImage::new(100, 60);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as u8;
        }
        for v in preprocess_for_encoder(&img).unwrap() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
}
