//! Paired Wilcoxon signed-rank tests over per-fold Dice with Bonferroni correction.

use mammoseg::stats::{bonferroni, wilcoxon_signed_rank, ZeroPolicy};

fn main() -> mammoseg::Result<()> {
    // per-fold Dice for two models over five folds
    let a = [0.61, 0.55, 0.49, 0.66, 0.57];
    let b = [0.58, 0.51, 0.50, 0.60, 0.52];
    let r = wilcoxon_signed_rank(&a, &b, ZeroPolicy::WilcoxDrop)?;
    println!(
        "W+ {} W- {} statistic {} p {:.4} ({:?}, n_eff {})",
        r.w_plus, r.w_minus, r.statistic, r.p_value, r.method, r.n_eff
    );

    // five folds, every difference positive: the smallest possible p
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], ZeroPolicy::WilcoxDrop)?;
    println!("all five folds favour one model: p = {}", r.p_value);

    // 7 models give 21 pairs
    let adjusted = bonferroni(&[r.p_value, 0.01, 0.002], 21)?;
    println!("Bonferroni over 21 comparisons: {adjusted:?}");
    Ok(())
}
