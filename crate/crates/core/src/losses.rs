//! Binary cross-entropy plus squared-denominator soft Dice.
//!
//! Values are accumulated in `f64`. The Dice term is batch-global: sums run
//! over every pixel of every item passed in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[DELTA, 1 - DELTA]` before taking logs.
pub const DELTA: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
    pub bce_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            bce_weight: 1.0,
            dice_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("loss epsilon must be positive, got {}", self.epsilon)));
        }
        if !self.bce_weight.is_finite() || !self.dice_weight.is_finite() {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        Ok(())
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("prediction has {a} elements, target has {b}")));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss<P, G>(pred_probs: &[P], target: &[G], reduction: Reduction) -> Result<f64>
where
    P: Copy + Into<f64>,
    G: Copy + Into<f64>,
{
    same_len(pred_probs.len(), target.len())?;
    let sum: f64 = pred_probs
        .iter()
        .zip(target)
        .map(|(&p, &g)| {
            let p = p.into().clamp(DELTA, 1.0 - DELTA);
            let g = g.into();
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / pred_probs.len().max(1) as f64,
    })
}

/// `1 - (2 Σ p g + ε) / (Σ p² + Σ g² + ε)`.
pub fn dice_loss<P, G>(pred_probs: &[P], target: &[G], epsilon: f64) -> Result<f64>
where
    P: Copy + Into<f64>,
    G: Copy + Into<f64>,
{
    same_len(pred_probs.len(), target.len())?;
    let (num, den) = dice_sums(pred_probs.iter().map(|&p| p.into()), target);
    Ok(1.0 - (2.0 * num + epsilon) / (den + epsilon))
}

/// (Σ p g, Σ p² + Σ g²)
fn dice_sums<G: Copy + Into<f64>>(probs: impl Iterator<Item = f64>, target: &[G]) -> (f64, f64) {
    probs.zip(target).fold((0.0, 0.0), |(n, d), (p, &g)| {
        let g = g.into();
        (n + p * g, d + p * p + g * g)
    })
}

/// Loss value, its two components, and the gradient with respect to each logit.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub bce: f64,
    pub dice: f64,
    pub grad: Vec<f64>,
}

/// `bce_weight · BCE(σ(z), g) + dice_weight · DiceLoss(σ(z), g)`, BCE mean-reduced.
pub fn combined_loss<Z, G>(pred_logits: &[Z], target: &[G], config: &LossConfig) -> Result<LossOutput>
where
    Z: Copy + Into<f64>,
    G: Copy + Into<f64>,
{
    same_len(pred_logits.len(), target.len())?;
    config.validate()?;
    let n = pred_logits.len().max(1) as f64;
    let probs: Vec<f64> = pred_logits.iter().map(|&z| sigmoid(z.into())).collect();
    let bce = bce_loss(&probs, target, Reduction::Mean)?;
    let (num, den) = dice_sums(probs.iter().copied(), target);
    let eps = config.epsilon;
    let numer = 2.0 * num + eps;
    let denom = den + eps;
    let dice = 1.0 - numer / denom;

    let grad = probs
        .iter()
        .zip(target)
        .map(|(&p, &g)| {
            let g: f64 = g.into();
            let slope = p * (1.0 - p);
            // the clamp flattens BCE outside [δ, 1-δ]
            let d_bce = if p > DELTA && p < 1.0 - DELTA { (p - g) / n } else { 0.0 };
            let d_dice_dp = -(2.0 * g * denom - numer * 2.0 * p) / (denom * denom);
            config.bce_weight * d_bce + config.dice_weight * d_dice_dp * slope
        })
        .collect();
    Ok(LossOutput {
        value: config.bce_weight * bce + config.dice_weight * dice,
        bce,
        dice,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        assert!((bce_loss(&[0.5f64], &[1.0f64], Reduction::Mean).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
        assert!((bce_loss(&[0.5f64], &[0.0f64], Reduction::Sum).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
        assert!(bce_loss(&[1.0f64, 0.0], &[1.0f64, 0.0], Reduction::Mean).unwrap() <= 1e-5);
        assert_eq!(dice_loss(&[1.0f64, 0.0, 1.0], &[1.0f64, 0.0, 1.0], 1e-6).unwrap(), 0.0);
        assert_eq!(dice_loss(&[0.0f64; 4], &[0.0f64; 4], 1.0).unwrap(), 0.0);
        assert!((dice_loss(&[0.5f64; 4], &[1.0f64; 4], 1e-6).unwrap() - 0.2).abs() < 1e-6);
        let c = LossConfig {
            epsilon: 1e-6,
            ..Default::default()
        };
        let out = combined_loss(&[0.0f64; 4], &[1.0f64; 4], &c).unwrap();
        assert!((out.value - 0.8931).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(dice_loss(&[0.5f32], &[1.0f32, 0.0], 1.0).is_err());
        assert!(combined_loss(&[0.5f32], &[1.0f32, 0.0], &LossConfig::default()).is_err());
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let g = [1.0f64, 0.0, 1.0, 0.0];
        let z = [40.0f64, -40.0, 40.0, -40.0];
        assert!(combined_loss(&z, &g, &LossConfig::default()).unwrap().value < 1e-6);
    }

    proptest! {
        #[test]
        fn dice_in_unit_interval_and_permutation_invariant(
            pg in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..64),
            rot in 0usize..64,
        ) {
            let p: Vec<f64> = pg.iter().map(|x| x.0).collect();
            let g: Vec<f64> = pg.iter().map(|x| x.1 as u8 as f64).collect();
            let d = dice_loss(&p, &g, 1.0).unwrap();
            prop_assert!((0.0..1.0).contains(&d));
            let k = rot % p.len();
            let (mut p2, mut g2) = (p.clone(), g.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            prop_assert!((dice_loss(&p2, &g2, 1.0).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn raising_a_foreground_logit_never_raises_loss(
            zs in prop::collection::vec(-4.0f64..4.0, 2..32),
            idx in 0usize..32,
        ) {
            let g: Vec<f64> = (0..zs.len()).map(|i| (i % 2 == 0) as u8 as f64).collect();
            let i = (idx % zs.len()) & !1;
            let base = combined_loss(&zs, &g, &LossConfig::default()).unwrap().value;
            let mut up = zs.clone();
            up[i] += 0.5;
            prop_assert!(combined_loss(&up, &g, &LossConfig::default()).unwrap().value <= base + 1e-12);
        }
    }
}
