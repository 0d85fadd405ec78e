//! Deterministic resizing and standardization, plus training-time
//! augmentation (CLAHE, flips, rotation).

mod augment;
mod clahe;

use ndarray::Array2;

use crate::dataset::Sample;
use crate::error::{Error, Result};

pub use augment::{augment, rotate, sample_rng, AugmentPolicy};
pub use clahe::apply_clahe;

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
        let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Nearest-neighbour resampling; keeps masks binary.
pub fn resize_nearest<T: Copy>(img: &Array2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = img.dim();
    let pick = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| img[[pick(y, out_h, h), pick(x, out_w, w)]])
}

/// Zero mean, unit (population) variance; constant images become all zero.
pub fn standardize(img: &Array2<f32>) -> Array2<f32> {
    let n = img.len().max(1) as f64;
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-12 {
        return Array2::zeros(img.dim());
    }
    let inv = 1.0 / var.sqrt();
    img.mapv(|v| ((v as f64 - mean) * inv) as f32)
}

pub const MIN_SIDE: usize = 32;

pub fn resize_and_normalize(sample: &Sample, side: usize) -> Result<Sample> {
    if side < MIN_SIDE {
        return Err(Error::Config(format!("image side must be >= {MIN_SIDE}, got {side}")));
    }
    let image = standardize(&resize_bilinear(&sample.image, side, side));
    let mask = resize_nearest(&sample.mask, side, side);
    Sample::new(sample.id.clone(), image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_shapes_and_binary_mask() {
        let img = Array2::from_shape_fn((96, 64), |(y, x)| ((y * 7 + x * 3) % 50) as f32 / 50.0);
        let mask = Array2::from_shape_fn((96, 64), |(y, x)| ((y / 10 + x / 10) % 2) as u8);
        let s = Sample::new("a", img, mask).unwrap();
        let r = resize_and_normalize(&s, 32).unwrap();
        assert_eq!(r.image.dim(), (32, 32));
        assert!(r.mask.iter().all(|&m| m <= 1));
        assert!(resize_and_normalize(&s, 16).is_err());
    }

    #[test]
    fn standardized_image_is_a_fixed_point() {
        let img = standardize(&Array2::from_shape_fn((32, 32), |(y, x)| (y * x) as f32));
        let s = Sample::new("a", img.clone(), Array2::zeros((32, 32))).unwrap();
        let r = resize_and_normalize(&s, 32).unwrap();
        let err = r.image.iter().zip(&img).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5);
        let flat = Sample::new("c", Array2::from_elem((40, 40), 0.3), Array2::zeros((40, 40))).unwrap();
        assert!(resize_and_normalize(&flat, 32).unwrap().image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn halving_averages_pixel_pairs() {
        let img = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f32);
        let r = resize_bilinear(&img, 2, 2);
        assert_eq!(r[[0, 0]], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
    }
}
