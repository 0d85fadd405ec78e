//! Corpus ingestion, k-fold partitioning, and synthetic phantom corpora.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grayscale image with its binary lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Intensities; `[0, 1]` as loaded, standardized after preprocessing.
    pub image: Array2<f32>,
    /// 0 = background, 1 = lesion.
    pub mask: Array2<u8>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Array2<f32>, mask: Array2<u8>) -> Result<Self> {
        let id = id.into();
        if image.dim() != mask.dim() {
            return Err(Error::Sample {
                id,
                reason: format!("image is {:?} but mask is {:?}", image.dim(), mask.dim()),
            });
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Sample {
                id,
                reason: "mask must be binary".into(),
            });
        }
        Ok(Self { id, image, mask })
    }

    pub fn lesion_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusRole {
    Train,
    ExternalTest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub samples: Vec<Sample>,
    pub role: CorpusRole,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }
}

const EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

fn supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Grayscale intensities divided by the maximum of the stored bit depth.
fn read_gray(path: &Path) -> std::result::Result<Array2<f32>, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => img.to_luma32f().into_raw(),
        other => other.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
    };
    Array2::from_shape_vec((h, w), data).map_err(|e| e.to_string())
}

fn read_mask(path: &Path) -> std::result::Result<Array2<u8>, String> {
    let img = read_gray(path)?;
    Ok(img.mapv(|v| (v > 0.0) as u8))
}

fn find_mask(masks: &Path, file_name: &std::ffi::OsStr, stem: &str) -> Option<PathBuf> {
    let exact = masks.join(file_name);
    if exact.is_file() {
        return Some(exact);
    }
    EXTENSIONS
        .iter()
        .map(|e| masks.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

/// Loads `<root>/images/*` with masks of the same file name from `<root>/masks/`.
///
/// Samples are sorted by id (file stem). A missing mask is an all-zero mask.
pub fn load_corpus(root: &Path, role: CorpusRole) -> Result<Corpus> {
    let images = root.join("images");
    let masks = root.join("masks");
    if !images.is_dir() {
        return Err(Error::Ingest {
            path: images,
            reason: "missing images/ directory".into(),
        });
    }
    if !masks.is_dir() {
        return Err(Error::Ingest {
            path: masks,
            reason: "missing masks/ directory".into(),
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&images)
        .map_err(Error::io(&images))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && supported(p))
        .collect();
    files.sort();

    let mut samples = Vec::with_capacity(files.len());
    let mut seen = HashSet::new();
    for path in files {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Sample {
                id,
                reason: "more than one image file has this id".into(),
            });
        }
        let image = read_gray(&path).map_err(|reason| Error::Sample {
            id: id.clone(),
            reason: format!("unreadable image {}: {reason}", path.display()),
        })?;
        let mask = match find_mask(&masks, path.file_name().unwrap_or_default(), &id) {
            Some(mp) => read_mask(&mp).map_err(|reason| Error::Sample {
                id: id.clone(),
                reason: format!("unreadable mask {}: {reason}", mp.display()),
            })?,
            None => Array2::zeros(image.dim()),
        };
        samples.push(Sample::new(id, image, mask)?);
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let name = root
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    Ok(Corpus { name, samples, role })
}

/// Writes 16-bit grayscale images and 0/255 masks in the layout `load_corpus` reads.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(Error::io(d))?;
    }
    for s in &corpus.samples {
        let (h, w) = s.image.dim();
        let px: Vec<u16> = s
            .image
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, px)
            .ok_or_else(|| Error::Invalid(format!("sample {} has an inconsistent buffer", s.id)))?;
        img.save(images.join(format!("{}.png", s.id)))?;
        let m: Vec<u8> = s.mask.iter().map(|&v| v * 255).collect();
        let mask: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, m)
            .ok_or_else(|| Error::Invalid(format!("sample {} has an inconsistent mask", s.id)))?;
        mask.save(masks.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

/// Assignment of every sample id to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Corpus indices of the training and validation samples for `fold`.
    pub fn split(&self, corpus: &Corpus, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, s) in corpus.samples.iter().enumerate() {
            match self.fold_of(&s.id) {
                Some(f) if f == fold => val.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(Error::Invalid(format!(
                        "sample {} is missing from the fold assignment",
                        s.id
                    )))
                }
            }
        }
        Ok((train, val))
    }

    /// A short digest identifying the partition, used to check pairing validity.
    pub fn signature(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.k.to_le_bytes());
        for (id, f) in &self.assignment {
            h.update(id.as_bytes());
            h.update([0]);
            h.update(f.to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "fold"])?;
        for (id, f) in &self.assignment {
            w.write_record([id.as_str(), &f.to_string()])?;
        }
        w.flush().map_err(Error::io(path))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, k: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut assignment = BTreeMap::new();
        for row in r.records() {
            let row = row?;
            let id = row.get(0).unwrap_or_default().to_string();
            let f: usize = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .filter(|&f| f < k)
                .ok_or_else(|| Error::Invalid(format!("bad fold for `{id}` in {}", path.display())))?;
            assignment.insert(id, f);
        }
        Ok(Self { k, assignment })
    }
}

/// Shuffles ids with a seeded stream and deals them round-robin into `k` folds.
pub fn split_kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if corpus.is_empty() {
        return Err(Error::Config("cannot split an empty corpus".into()));
    }
    if k > corpus.len() {
        return Err(Error::Config(format!("k = {k} exceeds corpus size {}", corpus.len())));
    }
    let mut ids: Vec<&str> = corpus.ids().collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment = ids.iter().enumerate().map(|(i, id)| (id.to_string(), i % k)).collect();
    Ok(FoldAssignment { k, assignment })
}

/// Controls for the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Fraction of samples with no lesions; `round(n * fraction)` exactly.
    pub normal_fraction: f64,
    /// Intensity added at a lesion's center, relative to the tissue under it.
    pub lesion_contrast: f32,
    pub max_blobs: usize,
    /// Blob semi-axis range as a fraction of the image side.
    pub radius_range: (f64, f64),
    pub noise: f32,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            normal_fraction: 0.25,
            lesion_contrast: 0.35,
            max_blobs: 3,
            radius_range: (0.05, 0.09),
            noise: 0.02,
        }
    }
}

pub fn generate_phantom_corpus(n: usize, side: usize, seed: u64) -> Result<Corpus> {
    generate_phantom_corpus_with(n, side, seed, &PhantomConfig::default())
}

/// Deterministic synthetic mammogram-like images.
///
/// Each image has a bright half-ellipse of tissue against the left edge on a
/// dark background. Abnormal samples carry 1 to `max_blobs` elliptical
/// lesions inside the tissue. The mask is exactly the union of the lesion
/// supports and covers under 10% of the image.
pub fn generate_phantom_corpus_with(n: usize, side: usize, seed: u64, cfg: &PhantomConfig) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("phantom corpus needs n >= 1".into()));
    }
    if side < 64 {
        return Err(Error::Config(format!("phantom side must be >= 64, got {side}")));
    }
    if !(0.0..=1.0).contains(&cfg.normal_fraction) {
        return Err(Error::Config("normal_fraction must lie in [0, 1]".into()));
    }
    let (rmin, rmax) = cfg.radius_range;
    if !(rmin > 0.0 && rmin <= rmax && rmax < 0.2) || cfg.max_blobs == 0 {
        return Err(Error::Config("phantom radius_range must satisfy 0 < min <= max < 0.2".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_normal = (n as f64 * cfg.normal_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let normal: HashSet<usize> = order[..n_normal].iter().copied().collect();

    let width = (n.max(2) - 1).to_string().len().max(4);
    let samples = (0..n)
        .map(|i| {
            let mut srng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let blobs = if normal.contains(&i) {
                0
            } else {
                srng.random_range(1..=cfg.max_blobs)
            };
            let (image, mask) = phantom_image(side, blobs, cfg, &mut srng);
            Sample::new(format!("phantom_{i:0width$}"), image, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        name: format!("phantom-{seed}"),
        samples,
        role: CorpusRole::Train,
    })
}

fn phantom_image(side: usize, blobs: usize, cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> (Array2<f32>, Array2<u8>) {
    let s = side as f64;
    // tissue: half-ellipse centred on the left edge
    let cy = s * rng.random_range(0.45..0.55);
    let ay = s * rng.random_range(0.38..0.46);
    let ax = s * rng.random_range(0.55..0.75);
    let tissue_level = rng.random_range(0.35f64..0.5);
    let (fx, fy, phase) = (
        rng.random_range(2.0..5.0) / s,
        rng.random_range(2.0..5.0) / s,
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let inside = |y: f64, x: f64| (x / ax).powi(2) + ((y - cy) / ay).powi(2);

    let mut image = Array2::<f32>::zeros((side, side));
    for ((y, x), v) in image.indexed_iter_mut() {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let r = inside(yf, xf);
        let base = if r < 1.0 {
            let texture = 0.05 * ((xf * fx * 6.28 + phase).sin() * (yf * fy * 6.28).cos());
            tissue_level * (1.0 - 0.5 * r) + texture
        } else {
            0.04
        };
        *v = base as f32;
    }

    let mut mask = Array2::<u8>::zeros((side, side));
    let budget = 0.09 * s * s;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < blobs && attempts < 200 {
        attempts += 1;
        let ry = s * rng.random_range(cfg.radius_range.0..=cfg.radius_range.1);
        let rx = ry * rng.random_range(0.7..1.3);
        let by = rng.random_range(cy - 0.6 * ay..cy + 0.6 * ay);
        let bx = rng.random_range(0.1 * ax..0.65 * ax);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (st, ct) = theta.sin_cos();
        let area = std::f64::consts::PI * rx * ry;
        let current = mask.iter().filter(|&&m| m == 1).count() as f64;
        if current + area > budget {
            continue;
        }
        let reach = rx.max(ry).ceil() as isize + 1;
        let y0 = (by as isize - reach).max(0) as usize;
        let y1 = ((by as isize + reach) as usize).min(side - 1);
        let x0 = (bx as isize - reach).max(0) as usize;
        let x1 = ((bx as isize + reach) as usize).min(side - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dy, dx) = (y as f64 + 0.5 - by, x as f64 + 0.5 - bx);
                let u = (dx * ct + dy * st) / rx;
                let w = (-dx * st + dy * ct) / ry;
                let r2 = u * u + w * w;
                if r2 <= 1.0 {
                    mask[[y, x]] = 1;
                    image[[y, x]] += cfg.lesion_contrast * (1.0 - 0.4 * r2 as f32);
                }
            }
        }
        placed += 1;
    }

    if cfg.noise > 0.0 {
        let normal = rand_distr::Normal::new(0.0f32, cfg.noise).expect("finite noise level");
        for v in image.iter_mut() {
            *v += rng.sample(normal);
        }
    }
    image.mapv_inplace(|v| v.clamp(0.0, 1.0));
    (image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(n: usize) -> Corpus {
        Corpus {
            name: "t".into(),
            samples: (0..n)
                .map(|i| Sample::new(format!("s{i:02}"), Array2::zeros((2, 2)), Array2::zeros((2, 2))).unwrap())
                .collect(),
            role: CorpusRole::Train,
        }
    }

    #[test]
    fn kfold_is_balanced_and_deterministic() {
        let c = tiny_corpus(11);
        let a = split_kfold(&c, 5, 3).unwrap();
        let mut sizes = a.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(a, split_kfold(&c, 5, 3).unwrap());
        assert_eq!(split_kfold(&tiny_corpus(410), 5, 0).unwrap().fold_sizes(), vec![82; 5]);
        assert!(split_kfold(&c, 1, 0).is_err());
        assert!(split_kfold(&c, 12, 0).is_err());
    }

    #[test]
    fn phantom_determinism_and_normal_count() {
        let a = generate_phantom_corpus(10, 64, 7).unwrap();
        assert_eq!(a, generate_phantom_corpus(10, 64, 7).unwrap());
        let cfg = PhantomConfig {
            normal_fraction: 0.25,
            ..Default::default()
        };
        let c = generate_phantom_corpus_with(100, 64, 1, &cfg).unwrap();
        assert_eq!(c.samples.iter().filter(|s| s.lesion_pixels() == 0).count(), 25);
        for s in &c.samples {
            assert!((s.lesion_pixels() as f64) < 0.1 * 64.0 * 64.0);
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let all_normal = PhantomConfig {
            normal_fraction: 1.0,
            ..Default::default()
        };
        let c = generate_phantom_corpus_with(6, 64, 1, &all_normal).unwrap();
        assert!(c.samples.iter().all(|s| s.lesion_pixels() == 0));
        assert!(generate_phantom_corpus(3, 32, 0).is_err());
    }

    #[test]
    fn disk_round_trip_and_missing_masks() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_phantom_corpus(3, 64, 2).unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let first = &c.samples[0].id;
        std::fs::remove_file(dir.path().join("masks").join(format!("{first}.png"))).unwrap();
        let loaded = load_corpus(dir.path(), CorpusRole::ExternalTest).unwrap();
        assert_eq!(loaded, load_corpus(dir.path(), CorpusRole::ExternalTest).unwrap());
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.samples[0].lesion_pixels(), 0);
        for (a, b) in loaded.samples.iter().zip(&c.samples).skip(1) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask, b.mask);
            let err = a.image.iter().zip(&b.image).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(err < 1e-4);
        }
    }

    #[test]
    fn eight_bit_max_loads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![255, 0]).unwrap();
        img.save(dir.path().join("images/a.png")).unwrap();
        let m: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![0, 255]).unwrap();
        m.save(dir.path().join("masks/a.png")).unwrap();
        let c = load_corpus(dir.path(), CorpusRole::Train).unwrap();
        assert_eq!(c.samples[0].image[[0, 0]], 1.0);
        assert_eq!(c.samples[0].mask.as_slice().unwrap(), &[0, 1]);
        assert!(load_corpus(&dir.path().join("nope"), CorpusRole::Train).is_err());
    }

    #[test]
    fn fold_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = split_kfold(&tiny_corpus(7), 3, 9).unwrap();
        let p = dir.path().join("fold_assignment.csv");
        a.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("id,fold\n"));
        assert_eq!(FoldAssignment::read_csv(&p, 3).unwrap(), a);
    }
}
