//! Training-time augmentation: CLAHE, flips and rotation applied jointly to image and mask.
//!
//! `cargo run --example augment -- [out_dir]` writes before/after PNGs.

use image::{GrayImage, Luma};
use mammoseg::dataset::generate_phantom_corpus;
use mammoseg::preprocess::{apply_clahe, augment, sample_rng, AugmentPolicy};
use ndarray::Array2;

fn to_png(a: &Array2<f32>) -> GrayImage {
    let (h, w) = a.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(a[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0) as u8])
    })
}

fn main() -> mammoseg::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = out.unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&dir).expect("output dir");

    let corpus = generate_phantom_corpus(4, 128, 3)?;
    let s = &corpus.samples[1];
    let eq = apply_clahe(s.image.view(), 2.0, (8, 8))?;
    to_png(&s.image).save(dir.join("original.png"))?;
    to_png(&eq).save(dir.join("clahe.png"))?;

    let policy = AugmentPolicy::default();
    for epoch in 1..=4 {
        let mut rng = sample_rng(policy.seed, epoch, &s.id);
        let a = augment(s, &policy, &mut rng)?;
        println!(
            "epoch {epoch}: lesion pixels {} -> {}",
            s.lesion_pixels(),
            a.lesion_pixels()
        );
        to_png(&a.image).save(dir.join(format!("epoch{epoch}.png")))?;
    }
    println!("images in {}", dir.display());
    Ok(())
}
