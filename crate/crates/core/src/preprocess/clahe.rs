use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const BINS: usize = 256;

/// Contrast-limited adaptive histogram equalization on a `[0, 1]` image.
///
/// The image is split into a `tiles.0 x tiles.1` grid. Each tile's 256-bin
/// histogram is clipped at `clip_limit * tile_area / 256` with the excess
/// spread uniformly, and its normalized cumulative histogram becomes the
/// tile's mapping. Each pixel blends the mappings of the four nearest tile
/// centres bilinearly.
pub fn apply_clahe(image: ArrayView2<f32>, clip_limit: f64, tiles: (usize, usize)) -> Result<Array2<f32>> {
    if !(clip_limit > 0.0) {
        return Err(Error::Config(format!("CLAHE clip limit must be positive, got {clip_limit}")));
    }
    let (ty, tx) = tiles;
    if ty == 0 || tx == 0 {
        return Err(Error::Config("CLAHE tile grid must be positive".into()));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Ok(image.to_owned());
    }
    let (ty, tx) = (ty.min(h), tx.min(w));
    let bin = |v: f32| ((v.clamp(0.0, 1.0) * (BINS - 1) as f32).round() as usize).min(BINS - 1);
    let bounds = |n: usize, t: usize| -> Vec<usize> { (0..=t).map(|i| i * n / t).collect() };
    let (ry, rx) = (bounds(h, ty), bounds(w, tx));

    let mut luts = vec![[0f32; BINS]; ty * tx];
    for i in 0..ty {
        for j in 0..tx {
            let mut hist = [0f64; BINS];
            for y in ry[i]..ry[i + 1] {
                for x in rx[j]..rx[j + 1] {
                    hist[bin(image[[y, x]])] += 1.0;
                }
            }
            let area = ((ry[i + 1] - ry[i]) * (rx[j + 1] - rx[j])) as f64;
            let limit = (clip_limit * area / BINS as f64).max(1.0);
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let share = excess / BINS as f64;
            let mut cdf = 0.0;
            for (b, c) in hist.iter().enumerate() {
                cdf += c + share;
                luts[i * tx + j][b] = (cdf / area).min(1.0) as f32;
            }
        }
    }

    // position of a pixel relative to tile centres: (lower tile, upper tile, weight of upper)
    let interp = |pos: usize, r: &[usize], t: usize| -> (usize, usize, f32) {
        let centre = |k: usize| (r[k] + r[k + 1]) as f64 / 2.0;
        let p = pos as f64 + 0.5;
        if p <= centre(0) {
            return (0, 0, 0.0);
        }
        if p >= centre(t - 1) {
            return (t - 1, t - 1, 0.0);
        }
        let k = (0..t - 1).find(|&k| p < centre(k + 1)).unwrap_or(t - 2);
        let f = (p - centre(k)) / (centre(k + 1) - centre(k));
        (k, k + 1, f as f32)
    };
    let iy: Vec<_> = (0..h).map(|y| interp(y, &ry, ty)).collect();
    let ix: Vec<_> = (0..w).map(|x| interp(x, &rx, tx)).collect();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let b = bin(image[[y, x]]);
        let (y0, y1, fy) = iy[y];
        let (x0, x1, fx) = ix[x];
        let l = |i: usize, j: usize| luts[i * tx + j][b];
        // lerp in this form is exact when both ends agree
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let top = lerp(l(y0, x0), l(y0, x1), fx);
        let bot = lerp(l(y1, x0), l(y1, x1), fx);
        lerp(top, bot, fy).clamp(0.0, 1.0)
    }))
}
