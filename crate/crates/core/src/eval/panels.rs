//! Per-image prediction dumps and four-up overlay panels.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::{binarize, MetricRecord};

use super::EvalOutput;

pub const PREDICTIONS_DIR: &str = "predictions";

fn to_gray(values: &[f32], w: usize, h: usize) -> GrayImage {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (values[y as usize * w + x as usize] - lo) / span;
        Luma([(v * 255.0).round() as u8])
    })
}

fn mask_image(mask: &[u8], w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[y as usize * w + x as usize] > 0 { 255 } else { 0 }])
    })
}

/// Writes `<id>_image.png`, `<id>_gt.png` and `<id>_pred.png` for every
/// evaluated sample, binarized at `threshold`.
pub fn write_predictions(dir: &Path, output: &EvalOutput, threshold: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (s, p) in output.prepared.iter().zip(&output.probabilities) {
        let (h, w) = s.image.dim();
        let img = s.image.as_slice().expect("standard layout");
        to_gray(img, w, h).save(dir.join(format!("{}_image.png", s.id)))?;
        mask_image(s.mask.as_slice().expect("standard layout"), w, h).save(dir.join(format!("{}_gt.png", s.id)))?;
        mask_image(&binarize(p, threshold)?, w, h).save(dir.join(format!("{}_pred.png", s.id)))?;
    }
    Ok(())
}

/// Up to `q` best and `q` worst records by Dice. Ties break on id; records
/// with undefined Dice are skipped and no record appears in both lists.
pub fn select_cases(records: &[MetricRecord], q: usize) -> (Vec<&MetricRecord>, Vec<&MetricRecord>) {
    let mut scored: Vec<&MetricRecord> = records.iter().filter(|r| r.dice.is_some()).collect();
    scored.sort_by(|a, b| {
        b.dice
            .partial_cmp(&a.dice)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    let best: Vec<&MetricRecord> = scored.iter().take(q).copied().collect();
    let rest = &scored[best.len()..];
    let worst: Vec<&MetricRecord> = rest.iter().rev().take(q).copied().collect();
    (best, worst)
}

fn is_edge(mask: &GrayImage, x: u32, y: u32) -> bool {
    if mask.get_pixel(x, y)[0] == 0 {
        return false;
    }
    let (w, h) = mask.dimensions();
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 || mask.get_pixel(nx as u32, ny as u32)[0] == 0
    })
}

/// Image, ground truth, prediction, and overlay side by side. The overlay
/// tints predicted pixels red and outlines the ground truth in green.
pub fn render_panel(image: &GrayImage, gt: &GrayImage, pred: &GrayImage) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if gt.dimensions() != (w, h) || pred.dimensions() != (w, h) {
        return Err(Error::Invalid("panel inputs differ in size".into()));
    }
    const ALPHA: f32 = 0.45;
    let mut out = RgbImage::new(4 * w, h);
    for y in 0..h {
        for x in 0..w {
            let g = image.get_pixel(x, y)[0];
            out.put_pixel(x, y, Rgb([g, g, g]));
            let m = gt.get_pixel(x, y)[0];
            out.put_pixel(w + x, y, Rgb([m, m, m]));
            let p = pred.get_pixel(x, y)[0];
            out.put_pixel(2 * w + x, y, Rgb([p, p, p]));
            let mut o = [g as f32; 3];
            if p > 0 {
                o[0] = o[0] * (1.0 - ALPHA) + 255.0 * ALPHA;
                o[1] *= 1.0 - ALPHA;
                o[2] *= 1.0 - ALPHA;
            }
            let px = if is_edge(gt, x, y) {
                Rgb([0, 255, 0])
            } else {
                Rgb(o.map(|v| v.round() as u8))
            };
            out.put_pixel(3 * w + x, y, px);
        }
    }
    Ok(out)
}

pub(crate) fn load_panel(dir: &Path, id: &str) -> Result<RgbImage> {
    let load = |suffix: &str| -> Result<GrayImage> {
        let p = dir.join(format!("{id}_{suffix}.png"));
        if !p.exists() {
            return Err(Error::Invalid(format!("missing prediction file {}", p.display())));
        }
        Ok(image::open(&p)?.to_luma8())
    };
    render_panel(&load("image")?, &load("gt")?, &load("pred")?)
}
