use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn max_pool2d(graph: &mut Graph, x: &Var, kernel: usize, stride: usize, padding: usize) -> Var {
    let [n, c, h, w] = x.dims4();
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let xd = x.value().data();
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    {
        let yd = y.data_mut();
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    yd[o] = best;
                    argmax[o] = plane * h * w + best_i;
                }
            }
        }
    }
    let in_shape = [n, c, h, w];
    graph.push_op(
        y,
        &[x],
        Box::new(move |gy, _| {
            let mut gx = Tensor::zeros(&in_shape);
            let gxd = gx.data_mut();
            for (&g, &src) in gy.data().iter().zip(&argmax) {
                gxd[src] += g;
            }
            vec![Some(gx)]
        }),
    )
}

/// Bin `i` of `out` over an axis of length `len`: `[floor(i*len/out), ceil((i+1)*len/out))`.
fn adaptive_bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

/// Adaptive average pooling with possibly overlapping bins.
pub fn adaptive_avg_pool2d(graph: &mut Graph, x: &Var, out_h: usize, out_w: usize) -> Var {
    let [n, c, h, w] = x.dims4();
    let xd = x.value().data();
    let mut y = Tensor::zeros(&[n, c, out_h, out_w]);
    {
        let yd = y.data_mut();
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1) = adaptive_bin(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_bin(ox, out_w, w);
                    let mut acc = 0.0f64;
                    for iy in y0..y1 {
                        acc += src[iy * w + x0..iy * w + x1].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    yd[plane * out_h * out_w + oy * out_w + ox] = (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
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
                for oy in 0..out_h {
                    let (y0, y1) = adaptive_bin(oy, out_h, h);
                    for ox in 0..out_w {
                        let (x0, x1) = adaptive_bin(ox, out_w, w);
                        let g = gyd[plane * out_h * out_w + oy * out_w + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                        for iy in y0..y1 {
                            for v in &mut gxd[plane * h * w + iy * w + x0..plane * h * w + iy * w + x1] {
                                *v += g;
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_bins_cover_axis() {
        for len in 1..12 {
            for out in 1..8 {
                let (s0, _) = adaptive_bin(0, out, len);
                let (_, e_last) = adaptive_bin(out - 1, out, len);
                assert_eq!((s0, e_last), (0, len));
                for i in 0..out {
                    let (s, e) = adaptive_bin(i, out, len);
                    assert!(e > s, "empty bin len={len} out={out}");
                }
            }
        }
    }

    #[test]
    fn global_pool_is_mean() {
        let mut g = Graph::inference();
        let x = Var::constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]));
        let y = adaptive_avg_pool2d(&mut g, &x, 1, 1);
        assert_eq!(y.value().data(), &[3.0]);
    }
}
