use std::sync::Arc;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel batch statistics observed in a training-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance, as folded into running statistics.
    pub var_unbiased: Vec<f32>,
}

/// Batch normalization over (N, H, W).
///
/// In training mode the batch statistics normalize the input and are
/// returned for the caller to fold into running estimates; in eval mode the
/// supplied running statistics are used.
pub fn batch_norm(
    graph: &mut Graph,
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running: (&Tensor, &Tensor),
    eps: f32,
    training: bool,
) -> (Var, Option<BatchStats>) {
    let [n, c, h, w] = x.dims4();
    let hw = h * w;
    let m = n * hw;
    let xd = x.value().data();

    let (mean, var, stats) = if training {
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let plane = &xd[(b * c + ch) * hw..][..hw];
                mean[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for b in 0..n {
            for ch in 0..c {
                let plane = &xd[(b * c + ch) * hw..][..hw];
                let mu = mean[ch];
                var[ch] += plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let unbiased = var
            .iter()
            .map(|&v| if m > 1 { (v * m as f64 / (m - 1) as f64) as f32 } else { v as f32 })
            .collect();
        let stats = BatchStats {
            mean: mean.iter().map(|&v| v as f32).collect(),
            var_unbiased: unbiased,
        };
        (
            mean.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            var.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            Some(stats),
        )
    } else {
        (running.0.data().to_vec(), running.1.data().to_vec(), None)
    };

    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let (xh, yd) = (xhat.data_mut(), y.data_mut());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (mu, is, gm, bt) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in off..off + hw {
                    let v = (xd[i] - mu) * is;
                    xh[i] = v;
                    yd[i] = v * gm + bt;
                }
            }
        }
    }

    let xhat = Arc::new(xhat);
    let gamma_v = gamma.shared();
    let out = graph.push_op(
        y,
        &[x, gamma, beta],
        Box::new(move |gy, needs| {
            let gyd = gy.data();
            let xh = xhat.data();
            let gm = gamma_v.data();
            let mut sum_dy = vec![0.0f64; c];
            let mut sum_dy_xhat = vec![0.0f64; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        sum_dy[ch] += gyd[i] as f64;
                        sum_dy_xhat[ch] += (gyd[i] * xh[i]) as f64;
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                let gxd = gx.data_mut();
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let scale = gm[ch] * inv_std[ch];
                        if training {
                            let a = (sum_dy[ch] / m as f64) as f32;
                            let bb = (sum_dy_xhat[ch] / m as f64) as f32;
                            for i in off..off + hw {
                                gxd[i] = scale * (gyd[i] - a - xh[i] * bb);
                            }
                        } else {
                            for i in off..off + hw {
                                gxd[i] = scale * gyd[i];
                            }
                        }
                    }
                }
                gx
            });
            let ggamma = needs[1]
                .then(|| Tensor::from_vec(&[c], sum_dy_xhat.iter().map(|&v| v as f32).collect()));
            let gbeta = needs[2].then(|| Tensor::from_vec(&[c], sum_dy.iter().map(|&v| v as f32).collect()));
            vec![gx, ggamma, gbeta]
        }),
    );
    (out, stats)
}
