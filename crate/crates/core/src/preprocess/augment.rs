use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::apply_clahe;
use crate::dataset::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub clahe_probability: f64,
    pub clahe_clip_limit: f64,
    pub clahe_tile_grid: (usize, usize),
    pub hflip_probability: f64,
    pub vflip_probability: f64,
    /// Rotation angle is uniform in `[-max, max]` degrees; 0 disables it.
    pub rotation_max_degrees: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            clahe_probability: 0.5,
            clahe_clip_limit: 2.0,
            clahe_tile_grid: (8, 8),
            hflip_probability: 0.5,
            vflip_probability: 0.5,
            rotation_max_degrees: 15.0,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            clahe_probability: 0.0,
            hflip_probability: 0.0,
            vflip_probability: 0.0,
            rotation_max_degrees: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("clahe_probability", self.clahe_probability),
            ("hflip_probability", self.hflip_probability),
            ("vflip_probability", self.vflip_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.rotation_max_degrees >= 0.0 && self.rotation_max_degrees.is_finite()) {
            return Err(Error::Config("rotation_max_degrees must be a non-negative number".into()));
        }
        if !(self.clahe_clip_limit > 0.0) || self.clahe_tile_grid.0 == 0 || self.clahe_tile_grid.1 == 0 {
            return Err(Error::Config("CLAHE clip limit and tile grid must be positive".into()));
        }
        Ok(())
    }
}

/// Independent stream for one sample in one epoch, so augmentation does not
/// depend on the order samples are visited in.
pub fn sample_rng(seed: u64, epoch: usize, id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    h.update(id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn flip_h<T: Copy>(a: &Array2<T>) -> Array2<T> {
    let (_, w) = a.dim();
    Array2::from_shape_fn(a.dim(), |(y, x)| a[[y, w - 1 - x]])
}

fn flip_v<T: Copy>(a: &Array2<T>) -> Array2<T> {
    let (h, _) = a.dim();
    Array2::from_shape_fn(a.dim(), |(y, x)| a[[h - 1 - y, x]])
}

/// Rotates image (bilinear) and mask (nearest) about the centre by
/// `degrees`, filling uncovered corners with 0.
pub fn rotate(image: &Array2<f32>, mask: &Array2<u8>, degrees: f64) -> (Array2<f32>, Array2<u8>) {
    let (h, w) = image.dim();
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let source = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        (c * dy - s * dx + cy - 0.5, s * dy + c * dx + cx - 0.5)
    };
    let mut out_img = Array2::zeros((h, w));
    let mut out_mask = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y, x);
            let (ny, nx) = (sy.round(), sx.round());
            if ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w {
                out_mask[[y, x]] = mask[[ny as usize, nx as usize]];
            }
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
            let at = |yy: f64, xx: f64| -> f32 {
                if yy < 0.0 || xx < 0.0 || yy as usize >= h || xx as usize >= w {
                    0.0
                } else {
                    image[[yy as usize, xx as usize]]
                }
            };
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
            let bot = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
            out_img[[y, x]] = top * (1.0 - fy) + bot * fy;
        }
    }
    (out_img, out_mask)
}

/// Applies each stochastic transform with its probability. Four variates
/// are always drawn, in a fixed order, so outcomes are stable per stream.
pub fn augment(sample: &Sample, policy: &AugmentPolicy, draw: &mut impl Rng) -> Result<Sample> {
    let u_clahe: f64 = draw.random();
    let u_h: f64 = draw.random();
    let u_v: f64 = draw.random();
    let u_rot: f64 = draw.random();

    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if u_clahe < policy.clahe_probability {
        image = apply_clahe(image.view(), policy.clahe_clip_limit, policy.clahe_tile_grid)?;
    }
    if u_h < policy.hflip_probability {
        image = flip_h(&image);
        mask = flip_h(&mask);
    }
    if u_v < policy.vflip_probability {
        image = flip_v(&image);
        mask = flip_v(&mask);
    }
    if policy.rotation_max_degrees > 0.0 {
        let angle = (2.0 * u_rot - 1.0) * policy.rotation_max_degrees;
        (image, mask) = rotate(&image, &mask, angle);
    }
    Sample::new(sample.id.clone(), image, mask)
}
