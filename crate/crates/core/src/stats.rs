//! Paired Wilcoxon signed-rank tests with Bonferroni correction.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::train::CVResult;

/// Largest effective sample size handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPolicy {
    /// Discard zero differences before ranking.
    #[default]
    WilcoxDrop,
    /// Rank zero differences, then leave them out of both rank sums.
    Pratt,
}

impl std::str::FromStr for ZeroPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wilcox-drop" | "wilcox" => Ok(Self::WilcoxDrop),
            "pratt" => Ok(Self::Pratt),
            _ => Err(Error::Config(format!("zero policy must be wilcox-drop or pratt, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n_eff: usize,
    pub method: PMethod,
    /// All differences were zero.
    pub degenerate: bool,
    /// With five or fewer non-zero pairs no two-sided p can fall below 0.05.
    pub power_warning: bool,
}

/// Midranks of `values` (ascending), doubled so ties stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share (i+1 + j+1)/2; doubled: i + j + 2
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p: the probability, over all equally likely sign
/// assignments, that the doubled positive rank sum lies at least as far from
/// its mean as the observed one.
fn exact_p(ranks2: &[u64], w2_plus: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2 * w2_plus as i64 - total as i64).abs();
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| (2 * s as i64 - total as i64).abs() >= observed)
        .map(|(_, c)| c)
        .sum();
    (hits / 2f64.powi(ranks2.len() as i32)).min(1.0)
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], zero_policy: ZeroPolicy) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Invalid("Wilcoxon test needs at least one pair".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("differences must be finite".into()));
    }
    let kept: Vec<f64> = match zero_policy {
        ZeroPolicy::WilcoxDrop => d.iter().copied().filter(|&v| v != 0.0).collect(),
        ZeroPolicy::Pratt => d.clone(),
    };
    let abs: Vec<f64> = kept.iter().map(|v| v.abs()).collect();
    let all_ranks = doubled_midranks(&abs);
    let (ranks2, signs): (Vec<u64>, Vec<bool>) = kept
        .iter()
        .zip(&all_ranks)
        .filter(|(v, _)| **v != 0.0)
        .map(|(v, &r)| (r, *v > 0.0))
        .unzip();
    let n_eff = ranks2.len();
    if n_eff == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            n_eff,
            method: PMethod::Exact,
            degenerate: true,
            power_warning: true,
        });
    }
    let w2_plus: u64 = ranks2.iter().zip(&signs).filter(|(_, &s)| s).map(|(r, _)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w_plus = w2_plus as f64 / 2.0;
    let w_minus = (total2 - w2_plus) as f64 / 2.0;

    let (p_value, method) = if n_eff <= EXACT_MAX_N {
        (exact_p(&ranks2, w2_plus), PMethod::Exact)
    } else {
        // mean Σr/2, variance Σr²/4 under random signs; continuity-corrected
        let mean = total2 as f64 / 4.0;
        let var: f64 = ranks2.iter().map(|&r| (r as f64 / 2.0).powi(2)).sum::<f64>() / 4.0;
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * (1.0 - normal.cdf(z))).min(1.0), PMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        p_value,
        n_eff,
        method,
        degenerate: false,
        power_warning: n_eff <= 5,
    })
}

/// `min(1, p * n_comparisons)` for each p.
pub fn bonferroni(raw_p: &[f64], n_comparisons: usize) -> Result<Vec<f64>> {
    if n_comparisons == 0 {
        return Err(Error::Invalid("number of comparisons must be positive".into()));
    }
    raw_p
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((p * n_comparisons as f64).min(1.0))
            } else {
                Err(Error::Invalid(format!("p-value {p} outside [0, 1]")))
            }
        })
        .collect()
}

/// Pairwise comparison of models over their per-fold best Dice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatMatrix {
    pub model_names: Vec<String>,
    /// Symmetric; the diagonal is `None`.
    pub raw_p: Vec<Vec<Option<f64>>>,
    pub adjusted_p: Vec<Vec<Option<f64>>>,
    pub n_comparisons: usize,
    pub zero_policy: ZeroPolicy,
    pub power_warning: bool,
}

impl StatMatrix {
    /// Upper-triangle entries `(a, b, raw, adjusted)` in row order.
    pub fn pairs(&self) -> Vec<(String, String, f64, f64)> {
        let m = self.model_names.len();
        let mut out = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if let (Some(r), Some(a)) = (self.raw_p[i][j], self.adjusted_p[i][j]) {
                    out.push((self.model_names[i].clone(), self.model_names[j].clone(), r, a));
                }
            }
        }
        out
    }
}

pub fn pairwise_compare(results: &[CVResult], zero_policy: ZeroPolicy) -> Result<StatMatrix> {
    if results.len() < 2 {
        return Err(Error::Invalid("pairwise comparison needs at least two models".into()));
    }
    let first = &results[0];
    for r in results {
        if r.fold_results.len() != first.fold_results.len() || r.k != first.k {
            return Err(Error::Invalid(format!(
                "{} has {} folds but {} has {}; pairing is invalid",
                r.model_name,
                r.fold_results.len(),
                first.model_name,
                first.fold_results.len()
            )));
        }
        if r.fold_signature != first.fold_signature {
            return Err(Error::Invalid(format!(
                "{} and {} were cross-validated on different fold assignments",
                r.model_name, first.model_name
            )));
        }
    }
    let m = results.len();
    let n_comparisons = m * (m - 1) / 2;
    let mut raw_p = vec![vec![None; m]; m];
    let mut adjusted_p = vec![vec![None; m]; m];
    let mut power_warning = false;
    for i in 0..m {
        for j in i + 1..m {
            let w = wilcoxon_signed_rank(&results[i].fold_dice(), &results[j].fold_dice(), zero_policy)?;
            power_warning |= w.power_warning;
            let adj = bonferroni(&[w.p_value], n_comparisons)?[0];
            raw_p[i][j] = Some(w.p_value);
            raw_p[j][i] = Some(w.p_value);
            adjusted_p[i][j] = Some(adj);
            adjusted_p[j][i] = Some(adj);
        }
    }
    if power_warning {
        log::warn!(
            "some comparisons have five or fewer non-zero paired differences; \
             the smallest attainable two-sided exact p is then at least 0.0625"
        );
    }
    Ok(StatMatrix {
        model_names: results.iter().map(|r| r.model_name.to_string()).collect(),
        raw_p,
        adjusted_p,
        n_comparisons,
        zero_policy,
        power_warning,
    })
}

/// Long-form `stats_matrix.csv`: `model_a,model_b,raw_p,adjusted_p`.
pub fn write_stats_csv(path: &Path, matrix: &StatMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model_a", "model_b", "raw_p", "adjusted_p"])?;
    for (a, b, r, adj) in matrix.pairs() {
        w.write_record([a, b, format!("{r}"), format!("{adj}")])?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: enumerate all 2^n sign flips of the ranked |d|.
    fn brute_force(d: &[f64]) -> (f64, f64) {
        let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
        let n = nz.len();
        let mut abs: Vec<(f64, usize)> = nz.iter().map(|v| v.abs()).zip(0..).collect();
        abs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut rank = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && abs[j + 1].0 == abs[i].0 {
                j += 1;
            }
            for item in &abs[i..=j] {
                rank[item.1] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        let total: f64 = rank.iter().sum();
        let w_obs: f64 = nz.iter().zip(&rank).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| rank[b]).sum();
            if (w - total / 2.0).abs() >= (w_obs - total / 2.0).abs() - 1e-9 {
                hits += 1;
            }
        }
        (w_obs.min(total - w_obs), hits as f64 / (1u64 << n) as f64)
    }

    #[test]
    fn matches_enumeration_including_ties() {
        for d in [
            vec![1.0, -1.0, 2.0, -2.0, 3.0],
            vec![0.3, 0.1, -0.2, 0.5, 0.4, -0.6, 0.7],
            vec![2.0, 2.0, -1.0, 3.0, 3.0, 3.0, -4.0, 0.0],
        ] {
            let y = vec![0.0; d.len()];
            let r = wilcoxon_signed_rank(&d, &y, ZeroPolicy::WilcoxDrop).unwrap();
            let (w, p) = brute_force(&d);
            assert_eq!(r.statistic, w);
            assert!((r.p_value - p).abs() < 1e-12, "{d:?}: {} vs {p}", r.p_value);
        }
    }

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], ZeroPolicy::WilcoxDrop).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert!(r.power_warning);
    }

    #[test]
    fn degenerate_and_symmetric() {
        let x = [0.5, 0.6, 0.7];
        let r = wilcoxon_signed_rank(&x, &x, ZeroPolicy::WilcoxDrop).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let y = [0.4, 0.9, 0.1];
        let a = wilcoxon_signed_rank(&x, &y, ZeroPolicy::Pratt).unwrap();
        let b = wilcoxon_signed_rank(&y, &x, ZeroPolicy::Pratt).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert!(wilcoxon_signed_rank(&x, &y[..2], ZeroPolicy::Pratt).is_err());
    }

    #[test]
    fn pratt_keeps_zero_ranks_out_of_sums() {
        let d = [0.0, 1.0, 2.0, -3.0];
        let r = wilcoxon_signed_rank(&d, &[0.0; 4], ZeroPolicy::Pratt).unwrap();
        // ranks 1..4 with the zero taking rank 1
        assert_eq!((r.w_plus, r.w_minus, r.n_eff), (5.0, 4.0, 3));
    }

    #[test]
    fn normal_approximation_for_large_n() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&d, &vec![0.0; 40], ZeroPolicy::WilcoxDrop).unwrap();
        assert_eq!(r.method, PMethod::Normal);
        assert_eq!(r.statistic, 273.0);
        // scipy.stats.wilcoxon(d, method="approx", correction=True)
        assert!((r.p_value - 0.066_544_654_968_581_46).abs() < 1e-9);
    }

    #[test]
    fn bonferroni_caps() {
        assert_eq!(bonferroni(&[0.01, 0.06], 21).unwrap(), vec![0.21, 1.0]);
        assert_eq!(bonferroni(&[0.3], 1).unwrap(), vec![0.3]);
        assert!(bonferroni(&[1.5], 3).is_err());
    }
}
