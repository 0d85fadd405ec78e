use std::sync::Arc;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn relu(graph: &mut Graph, x: &Var) -> Var {
    clamp(graph, x, 0.0, f32::INFINITY)
}

pub fn relu6(graph: &mut Graph, x: &Var) -> Var {
    clamp(graph, x, 0.0, 6.0)
}

fn clamp(graph: &mut Graph, x: &Var, lo: f32, hi: f32) -> Var {
    let y = x.value().map(|v| v.clamp(lo, hi));
    let xs = x.shared();
    graph.push_op(
        y,
        &[x],
        Box::new(move |gy, _| {
            let data = gy
                .data()
                .iter()
                .zip(xs.data())
                .map(|(&g, &v)| if v > lo && v < hi { g } else { 0.0 })
                .collect();
            vec![Some(Tensor::from_vec(gy.shape(), data))]
        }),
    )
}

pub fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(graph: &mut Graph, x: &Var) -> Var {
    let y = Arc::new(x.value().map(sigmoid_scalar));
    let ys = Arc::clone(&y);
    graph.push_op(
        (*y).clone(),
        &[x],
        Box::new(move |gy, _| {
            let data = gy
                .data()
                .iter()
                .zip(ys.data())
                .map(|(&g, &s)| g * s * (1.0 - s))
                .collect();
            vec![Some(Tensor::from_vec(gy.shape(), data))]
        }),
    )
}

pub fn add(graph: &mut Graph, a: &Var, b: &Var) -> Var {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let mut y = a.value().clone();
    y.add_assign(b.value());
    graph.push_op(
        y,
        &[a, b],
        Box::new(|gy, needs| {
            vec![needs[0].then(|| gy.clone()), needs[1].then(|| gy.clone())]
        }),
    )
}

/// How the second operand of [`mul`] is broadcast over NCHW.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Full,
    /// `[N, C, 1, 1]`
    Channel,
    /// `[N, 1, H, W]`
    Spatial,
}

/// Elementwise product; `b` may be `[N,C,1,1]` or `[N,1,H,W]` and is
/// broadcast over `a`.
pub fn mul(graph: &mut Graph, a: &Var, b: &Var) -> Var {
    let [n, c, h, w] = a.dims4();
    let bdims = b.dims4();
    let mode = if bdims == [n, c, h, w] {
        Broadcast::Full
    } else if bdims == [n, c, 1, 1] {
        Broadcast::Channel
    } else if bdims == [n, 1, h, w] {
        Broadcast::Spatial
    } else {
        panic!("mul: cannot broadcast {bdims:?} over {:?}", [n, c, h, w]);
    };
    let hw = h * w;
    let index = move |i: usize| -> usize {
        match mode {
            Broadcast::Full => i,
            Broadcast::Channel => i / hw,
            Broadcast::Spatial => (i / (c * hw)) * hw + i % hw,
        }
    };
    let (ad, bd) = (a.value().data(), b.value().data());
    let y: Vec<f32> = ad.iter().enumerate().map(|(i, &v)| v * bd[index(i)]).collect();
    let (as_, bs) = (a.shared(), b.shared());
    graph.push_op(
        Tensor::from_vec(&[n, c, h, w], y),
        &[a, b],
        Box::new(move |gy, needs| {
            let gyd = gy.data();
            let ga = needs[0].then(|| {
                let bd = bs.data();
                let data = gyd.iter().enumerate().map(|(i, &g)| g * bd[index(i)]).collect();
                Tensor::from_vec(&[n, c, h, w], data)
            });
            let gb = needs[1].then(|| {
                let ad = as_.data();
                let mut gb = Tensor::zeros(bs.shape());
                let gbd = gb.data_mut();
                for (i, (&g, &av)) in gyd.iter().zip(ad).enumerate() {
                    gbd[index(i)] += g * av;
                }
                gb
            });
            vec![ga, gb]
        }),
    )
}

/// Concatenates along the channel axis.
pub fn cat_channels(graph: &mut Graph, xs: &[&Var]) -> Var {
    assert!(!xs.is_empty());
    let [n, _, h, w] = xs[0].dims4();
    let hw = h * w;
    let chans: Vec<usize> = xs
        .iter()
        .map(|x| {
            let d = x.dims4();
            assert_eq!((d[0], d[2], d[3]), (n, h, w), "cat: spatial mismatch");
            d[1]
        })
        .collect();
    let total: usize = chans.iter().sum();
    let mut y = Tensor::zeros(&[n, total, h, w]);
    {
        let yd = y.data_mut();
        for b in 0..n {
            let mut c0 = 0;
            for (x, &cx) in xs.iter().zip(&chans) {
                let src = &x.value().data()[b * cx * hw..(b + 1) * cx * hw];
                yd[(b * total + c0) * hw..(b * total + c0 + cx) * hw].copy_from_slice(src);
                c0 += cx;
            }
        }
    }
    graph.push_op(
        y,
        xs,
        Box::new(move |gy, needs| {
            let gyd = gy.data();
            let mut c0 = 0;
            let mut out = Vec::with_capacity(chans.len());
            for (i, &cx) in chans.iter().enumerate() {
                if needs[i] {
                    let mut g = Tensor::zeros(&[n, cx, h, w]);
                    let gd = g.data_mut();
                    for b in 0..n {
                        gd[b * cx * hw..(b + 1) * cx * hw]
                            .copy_from_slice(&gyd[(b * total + c0) * hw..(b * total + c0 + cx) * hw]);
                    }
                    out.push(Some(g));
                } else {
                    out.push(None);
                }
                c0 += cx;
            }
            out
        }),
    )
}
