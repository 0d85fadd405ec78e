//! Seeded k-fold partitioning and its on-disk form.

use mammoseg::dataset::{generate_phantom_corpus, split_kfold, FoldAssignment};

fn main() -> mammoseg::Result<()> {
    let corpus = generate_phantom_corpus(23, 64, 0)?;
    let folds = split_kfold(&corpus, 5, 1234)?;
    println!("fold sizes {:?}, signature {}", folds.fold_sizes(), folds.signature());
    for f in 0..folds.k {
        let (train, val) = folds.split(&corpus, f)?;
        let ids: Vec<&str> = val.iter().map(|&i| corpus.samples[i].id.as_str()).collect();
        println!("fold {f}: {} train, val = {}", train.len(), ids.join(" "));
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("folds.csv");
    folds.write_csv(&path)?;
    let back = FoldAssignment::read_csv(&path, 5)?;
    println!("round trip identical: {}", back == folds);
    Ok(())
}
