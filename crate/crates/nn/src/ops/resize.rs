use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Integer-factor nearest-neighbour upsampling.
pub fn upsample_nearest(graph: &mut Graph, x: &Var, scale: usize) -> Var {
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = (h * scale, w * scale);
    let xd = x.value().data();
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    {
        let yd = y.data_mut();
        for plane in 0..n * c {
            for oy in 0..oh {
                let src = &xd[plane * h * w + (oy / scale) * w..][..w];
                let dst = &mut yd[plane * oh * ow + oy * ow..][..ow];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / scale];
                }
            }
        }
    }
    graph.push_op(
        y,
        &[x],
        Box::new(move |gy, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            let (gxd, gyd) = (gx.data_mut(), gy.data());
            for plane in 0..n * c {
                for oy in 0..oh {
                    let src = &gyd[plane * oh * ow + oy * ow..][..ow];
                    let dst = &mut gxd[plane * h * w + (oy / scale) * w..][..w];
                    for (ox, g) in src.iter().enumerate() {
                        dst[ox / scale] += g;
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Source taps `(i0, i1, frac)` for half-pixel-centre linear interpolation.
pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize to `out_h x out_w` (half-pixel centres, no corner alignment).
pub fn resize_bilinear(graph: &mut Graph, x: &Var, out_h: usize, out_w: usize) -> Var {
    let [n, c, h, w] = x.dims4();
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let xd = x.value().data();
    let mut y = Tensor::zeros(&[n, c, out_h, out_w]);
    {
        let yd = y.data_mut();
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                let dst = &mut yd[plane * out_h * out_w + oy * out_w..][..out_w];
                for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&tx) {
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    *d = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    graph.push_op(
        y,
        &[x],
        Box::new(move |gy, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            let (gxd, gyd) = (gx.data_mut(), gy.data());
            for plane in 0..n * c {
                let dst = &mut gxd[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let grow = &gyd[plane * out_h * out_w + oy * out_w..][..out_w];
                    for (&g, &(x0, x1, fx)) in grow.iter().zip(&tx) {
                        dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += g * fy * (1.0 - fx);
                        dst[y1 * w + x1] += g * fy * fx;
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}
