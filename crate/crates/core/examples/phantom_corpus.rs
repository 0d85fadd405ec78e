//! Synthesize a phantom corpus, write it in the on-disk layout, and load it back.
//!
//! `cargo run --example phantom_corpus -- [out_dir]`

use mammoseg::dataset::{generate_phantom_corpus, load_corpus, save_corpus, CorpusRole};

fn main() -> mammoseg::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = out.unwrap_or_else(|| tmp.path().join("phantom"));

    let corpus = generate_phantom_corpus(12, 256, 42)?;
    save_corpus(&corpus, &root)?;
    let back = load_corpus(&root, CorpusRole::Train)?;

    println!("wrote {} samples to {}", corpus.len(), root.display());
    for (a, b) in corpus.samples.iter().zip(&back.samples) {
        let frac = a.lesion_pixels() as f64 / a.mask.len() as f64;
        let max_err = a
            .image
            .iter()
            .zip(b.image.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        println!(
            "{}  lesion {:>5.2}%  masks equal {}  max intensity error {:.1e}",
            a.id,
            100.0 * frac,
            a.mask == b.mask,
            max_err
        );
    }
    Ok(())
}
