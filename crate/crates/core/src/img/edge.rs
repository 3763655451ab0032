//! Sketch synthesis: Gaussian blur, Canny edges, and their composition.

use super::{GrayImage, ImgError};

/// Default pre-smoothing sigma inside canny.
pub const CANNY_SIGMA: f64 = 1.4;
/// Default double thresholds as fractions of the max gradient magnitude.
pub const CANNY_LOW: f64 = 0.1;
pub const CANNY_HIGH: f64 = 0.3;
/// Default blur applied on top of the edge map.
pub const SKETCH_BLUR_SIGMA: f64 = 1.0;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_f32(width: usize, height: usize, src: &[f64], sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let clamp_x = |x: i64| x.clamp(0, width as i64 - 1) as usize;
    let clamp_y = |y: i64| y.clamp(0, height as i64 - 1) as usize;
    // Separable: horizontal then vertical, replicate borders.
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * src[y * width + clamp_x(x as i64 + i as i64 - radius)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * tmp[clamp_y(y as i64 + i as i64 - radius) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Gaussian blur with replicate borders; kernel radius 3 sigma.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, ImgError> {
    if sigma <= 0.0 {
        return Err(ImgError::Parameter(format!("sigma {sigma} must be positive")));
    }
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let out = blur_f32(img.width, img.height, &src, sigma);
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data: out.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
    })
}

/// Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression, double-threshold hysteresis. `low`/`high` are fractions of
/// the maximum gradient magnitude; output is a binary map scaled to 255.
pub fn canny(img: &GrayImage, sigma: f64, low: f64, high: f64) -> Result<GrayImage, ImgError> {
    if sigma <= 0.0 {
        return Err(ImgError::Parameter(format!("sigma {sigma} must be positive")));
    }
    if low >= high {
        return Err(ImgError::Parameter(format!("low {low} must be below high {high}")));
    }
    let (w, h) = (img.width, img.height);
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let smooth = blur_f32(w, h, &src, sigma);

    // Sobel gradients (border pixels keep zero gradient).
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let mut mag = vec![0.0f64; w * h];
    let at = |x: usize, y: usize| smooth[y * w + x];
    let mut max_mag = 0.0f64;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
            let m = (sx * sx + sy * sy).sqrt();
            mag[y * w + x] = m;
            max_mag = max_mag.max(m);
        }
    }
    if max_mag == 0.0 {
        return Ok(GrayImage::new(w, h));
    }

    // Non-maximum suppression along the quantized gradient direction.
    let mut thin = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let angle = gy[y * w + x].atan2(gx[y * w + x]);
            let deg = angle.to_degrees().rem_euclid(180.0);
            let (n1, n2) = if !(22.5..157.5).contains(&deg) {
                (mag[y * w + x - 1], mag[y * w + x + 1])
            } else if deg < 67.5 {
                (mag[(y - 1) * w + x - 1], mag[(y + 1) * w + x + 1])
            } else if deg < 112.5 {
                (mag[(y - 1) * w + x], mag[(y + 1) * w + x])
            } else {
                (mag[(y - 1) * w + x + 1], mag[(y + 1) * w + x - 1])
            };
            if m >= n1 && m >= n2 {
                thin[y * w + x] = m;
            }
        }
    }

    // Hysteresis: strong seeds, weak pixels join by 8-connectivity.
    let lo_t = low * max_mag;
    let hi_t = high * max_mag;
    let mut state = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    let mut stack = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= hi_t {
            state[i] = 2;
            stack.push(i);
        } else if m >= lo_t {
            state[i] = 1;
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = (i % w, i / w);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data: state.iter().map(|&s| if s == 2 { 255 } else { 0 }).collect(),
    })
}

/// The sketch modality: blurred canny edges of a render.
pub fn make_sketch(img: &GrayImage) -> Result<GrayImage, ImgError> {
    let edges = canny(img, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH)?;
    gaussian_blur(&edges, SKETCH_BLUR_SIGMA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayImage { width: 32, height: 32, data: vec![137; 32 * 32] };
        let edges = canny(&img, 1.4, 0.1, 0.3).unwrap();
        assert!(edges.data.iter().all(|&v| v == 0));
        let sketch = make_sketch(&GrayImage::new(32, 32)).unwrap();
        assert!(sketch.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn vertical_step_yields_single_edge_column() {
        let mut img = GrayImage::new(64, 64);
        for y in 0..64 {
            for x in 32..64 {
                img.set(x, y, 255);
            }
        }
        let edges = canny(&img, 1.0, 0.1, 0.3).unwrap();
        // Count edge columns away from the borders.
        let mut cols = Vec::new();
        for x in 2..62 {
            if (2..62).any(|y| edges.get(x, y) > 0) {
                cols.push(x);
            }
        }
        assert_eq!(cols.len(), 1, "edge columns {cols:?}");
        assert!((cols[0] as i64 - 31).abs() <= 1);
    }

    #[test]
    fn blur_preserves_mass_for_interior_support() {
        let mut img = GrayImage::new(64, 64);
        for y in 24..40 {
            for x in 24..40 {
                img.set(x, y, 200);
            }
        }
        let before: f64 = img.data.iter().map(|&v| v as f64).sum();
        let blurred = gaussian_blur(&img, 2.0).unwrap();
        let after: f64 = blurred.data.iter().map(|&v| v as f64).sum();
        assert!((after - before).abs() / before < 0.005, "{before} -> {after}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let img = GrayImage::new(8, 8);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(canny(&img, 1.0, 0.4, 0.2).is_err());
    }
}
