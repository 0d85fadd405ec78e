//! 2-D convolution: im2col + SGEMM for dense/grouped kernels, direct loops
//! for depthwise kernels.

use crate::graph::{Graph, Var};
use crate::params::ConvSpec;
use crate::tensor::Tensor;

/// Upper bound on the im2col buffer, in floats. Large images are processed
/// in bands of output rows so memory stays flat at any resolution.
const COLS_BUDGET: usize = 1 << 22;

#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // bounds of the furthest element each operand touches
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the access pattern; all
    // callers derive strides from the same shapes used to size the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Output positions `o` in `[lo, hi)` with `0 <= o*stride + offset < in_len`.
fn valid_range(offset: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    k: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn new(x: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Self {
        let [n, cin, h, w] = x.dims4();
        assert_eq!(cin, spec.in_channels, "conv input channels mismatch");
        let [cout, cin_g, k, k2] = weight.dims4();
        assert_eq!(k, k2);
        assert_eq!(cout, spec.out_channels);
        assert_eq!(cin_g * spec.groups, cin);
        let (oh, ow) = spec.output_size(h, w);
        Self {
            n,
            cin,
            h,
            w,
            cout,
            oh,
            ow,
            k,
            cin_g,
            cout_g: cout / spec.groups,
        }
    }

    fn is_pointwise(&self, spec: &ConvSpec) -> bool {
        self.k == 1 && spec.stride == 1 && spec.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn rows_per_band(&self) -> usize {
        let per_row = self.cin_g * self.k * self.k * self.ow;
        (COLS_BUDGET / per_row.max(1)).clamp(1, self.oh.max(1))
    }
}

/// Fills `cols` (`[cin_g*k*k, (r1-r0)*ow]`) from one image/group slice.
fn im2col(src: &[f32], g: &Geometry, spec: &ConvSpec, r0: usize, r1: usize, cols: &mut [f32]) {
    let ncols = (r1 - r0) * g.ow;
    let k = g.k;
    cols[..g.cin_g * k * k * ncols].fill(0.0);
    for ci in 0..g.cin_g {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let xoff = (kx * spec.dilation) as isize - spec.padding as isize;
                let (xlo, xhi) = valid_range(xoff, spec.stride, g.w, g.ow);
                for oy in r0..r1 {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    if spec.stride == 1 {
                        let start = (xlo as isize + xoff) as usize;
                        drow[xlo..xhi].copy_from_slice(&src_row[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = src_row[(ox as isize * spec.stride as isize + xoff) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into one image/group gradient slice.
fn col2im(cols: &[f32], g: &Geometry, spec: &ConvSpec, r0: usize, r1: usize, dst: &mut [f32]) {
    let ncols = (r1 - r0) * g.ow;
    let k = g.k;
    for ci in 0..g.cin_g {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let xoff = (kx * spec.dilation) as isize - spec.padding as isize;
                let (xlo, xhi) = valid_range(xoff, spec.stride, g.w, g.ow);
                for oy in r0..r1 {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    for ox in xlo..xhi {
                        drow[(ox as isize * spec.stride as isize + xoff) as usize] += srow[ox];
                    }
                }
            }
        }
    }
}

fn depthwise_forward(x: &Tensor, weight: &Tensor, g: &Geometry, spec: &ConvSpec, y: &mut Tensor) {
    let (xd, wd) = (x.data(), weight.data());
    let yd = y.data_mut();
    let k = g.k;
    for n in 0..g.n {
        for c in 0..g.cin {
            let src = &xd[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let dst = &mut yd[(n * g.cout + c) * g.oh * g.ow..][..g.oh * g.ow];
            let kern = &wd[c * k * k..(c + 1) * k * k];
            for oy in 0..g.oh {
                let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let in_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for kx in 0..k {
                        let wv = kern[ky * k + kx];
                        let xoff = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (lo, hi) = valid_range(xoff, spec.stride, g.w, g.ow);
                        if spec.stride == 1 {
                            let start = (lo as isize + xoff) as usize;
                            for (o, i) in out_row[lo..hi].iter_mut().zip(&in_row[start..]) {
                                *o += wv * *i;
                            }
                        } else {
                            for ox in lo..hi {
                                out_row[ox] += wv * in_row[(ox as isize * spec.stride as isize + xoff) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    x: &Tensor,
    weight: &Tensor,
    gy: &Tensor,
    g: &Geometry,
    spec: &ConvSpec,
    mut gx: Option<&mut Tensor>,
    mut gw: Option<&mut Tensor>,
) {
    let (xd, wd, gyd) = (x.data(), weight.data(), gy.data());
    let k = g.k;
    for n in 0..g.n {
        for c in 0..g.cin {
            let src_off = (n * g.cin + c) * g.h * g.w;
            let src = &xd[src_off..src_off + g.h * g.w];
            let gout = &gyd[(n * g.cout + c) * g.oh * g.ow..][..g.oh * g.ow];
            for oy in 0..g.oh {
                let grow = &gout[oy * g.ow..(oy + 1) * g.ow];
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..k {
                        let xoff = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (lo, hi) = valid_range(xoff, spec.stride, g.w, g.ow);
                        let widx = c * k * k + ky * k + kx;
                        if let Some(gw) = gw.as_deref_mut() {
                            let in_row = &src[iy * g.w..(iy + 1) * g.w];
                            let mut acc = 0.0f32;
                            for ox in lo..hi {
                                acc += grow[ox] * in_row[(ox as isize * spec.stride as isize + xoff) as usize];
                            }
                            gw.data_mut()[widx] += acc;
                        }
                        if let Some(gx) = gx.as_deref_mut() {
                            let wv = wd[widx];
                            let gx_row = &mut gx.data_mut()[src_off + iy * g.w..src_off + (iy + 1) * g.w];
                            for ox in lo..hi {
                                gx_row[(ox as isize * spec.stride as isize + xoff) as usize] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let g = Geometry::new(x, weight, spec);
    let ohw = g.oh * g.ow;
    let mut y = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);

    if g.is_depthwise() {
        depthwise_forward(x, weight, &g, spec, &mut y);
    } else {
        let kdim = g.cin_g * g.k * g.k;
        let pointwise = g.is_pointwise(spec);
        let band = g.rows_per_band();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0f32; kdim * band * g.ow] };
        let (xd, wd) = (x.data(), weight.data());
        let yd = y.data_mut();
        for n in 0..g.n {
            for grp in 0..spec.groups {
                let src = &xd[(n * g.cin + grp * g.cin_g) * g.h * g.w..][..g.cin_g * g.h * g.w];
                let wmat = &wd[grp * g.cout_g * kdim..(grp + 1) * g.cout_g * kdim];
                let out_base = (n * g.cout + grp * g.cout_g) * ohw;
                if pointwise {
                    sgemm(g.cout_g, kdim, ohw, wmat, kdim, 1, src, ohw, 1, 0.0, &mut yd[out_base..], ohw, 1);
                    continue;
                }
                let mut r0 = 0;
                while r0 < g.oh {
                    let r1 = (r0 + band).min(g.oh);
                    let ncols = (r1 - r0) * g.ow;
                    im2col(src, &g, spec, r0, r1, &mut cols);
                    sgemm(
                        g.cout_g,
                        kdim,
                        ncols,
                        wmat,
                        kdim,
                        1,
                        &cols,
                        ncols,
                        1,
                        0.0,
                        &mut yd[out_base + r0 * g.ow..],
                        ohw,
                        1,
                    );
                    r0 = r1;
                }
            }
        }
    }

    if let Some(b) = bias {
        let bd = b.data();
        for (i, plane) in y.data_mut().chunks_mut(ohw).enumerate() {
            let bv = bd[i % g.cout];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    y
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gy: &Tensor,
    spec: &ConvSpec,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let g = Geometry::new(x, weight, spec);
    let ohw = g.oh * g.ow;
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_weight.then(|| Tensor::zeros(weight.shape()));
    let gb = need_bias.then(|| {
        let mut gb = vec![0.0f32; g.cout];
        for (i, plane) in gy.data().chunks(ohw).enumerate() {
            gb[i % g.cout] += plane.iter().sum::<f32>();
        }
        Tensor::from_vec(&[g.cout], gb)
    });

    if g.is_depthwise() {
        depthwise_backward(x, weight, gy, &g, spec, gx.as_mut(), gw.as_mut());
    } else if need_input || need_weight {
        let kdim = g.cin_g * g.k * g.k;
        let pointwise = g.is_pointwise(spec);
        let band = g.rows_per_band();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0f32; kdim * band * g.ow] };
        let mut dcols = if pointwise || !need_input { Vec::new() } else { vec![0.0f32; kdim * band * g.ow] };
        let (xd, wd, gyd) = (x.data(), weight.data(), gy.data());
        for n in 0..g.n {
            for grp in 0..spec.groups {
                let src_base = (n * g.cin + grp * g.cin_g) * g.h * g.w;
                let src = &xd[src_base..src_base + g.cin_g * g.h * g.w];
                let wmat = &wd[grp * g.cout_g * kdim..(grp + 1) * g.cout_g * kdim];
                let gy_base = (n * g.cout + grp * g.cout_g) * ohw;
                let w_range = grp * g.cout_g * kdim..(grp + 1) * g.cout_g * kdim;
                if pointwise {
                    let gyv = &gyd[gy_base..];
                    if let Some(gw) = gw.as_mut() {
                        sgemm(g.cout_g, ohw, kdim, gyv, ohw, 1, src, 1, ohw, 1.0, &mut gw.data_mut()[w_range.clone()], kdim, 1);
                    }
                    if let Some(gx) = gx.as_mut() {
                        sgemm(kdim, g.cout_g, ohw, wmat, 1, kdim, gyv, ohw, 1, 1.0, &mut gx.data_mut()[src_base..], ohw, 1);
                    }
                    continue;
                }
                let mut r0 = 0;
                while r0 < g.oh {
                    let r1 = (r0 + band).min(g.oh);
                    let ncols = (r1 - r0) * g.ow;
                    let gyv = &gyd[gy_base + r0 * g.ow..];
                    if let Some(gw) = gw.as_mut() {
                        im2col(src, &g, spec, r0, r1, &mut cols);
                        sgemm(g.cout_g, ncols, kdim, gyv, ohw, 1, &cols, 1, ncols, 1.0, &mut gw.data_mut()[w_range.clone()], kdim, 1);
                    }
                    if let Some(gx) = gx.as_mut() {
                        sgemm(kdim, g.cout_g, ncols, wmat, 1, kdim, gyv, ohw, 1, 0.0, &mut dcols, ncols, 1);
                        col2im(&dcols, &g, spec, r0, r1, &mut gx.data_mut()[src_base..src_base + g.cin_g * g.h * g.w]);
                    }
                    r0 = r1;
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// Differentiable convolution.
pub fn conv2d(graph: &mut Graph, x: &Var, weight: &Var, bias: Option<&Var>, spec: ConvSpec) -> Var {
    let y = conv2d_forward(x.value(), weight.value(), bias.map(Var::value), &spec);
    let (xs, ws) = (x.shared(), weight.shared());
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    let has_bias = bias.is_some();
    graph.push_op(
        y,
        &parents,
        Box::new(move |gy, needs| {
            let need_b = has_bias && needs[2];
            let grads = conv2d_backward(&xs, &ws, gy, &spec, needs[0], needs[1], need_b);
            let mut out = vec![grads.input, grads.weight];
            if has_bias {
                out.push(grads.bias);
            }
            out
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the oracle.
    fn naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, s: &ConvSpec) -> Tensor {
        let [n, cin, h, wd] = x.dims4();
        let [cout, cin_g, k, _] = w.dims4();
        let (oh, ow) = s.output_size(h, wd);
        let cout_g = cout / s.groups;
        let mut y = Tensor::zeros(&[n, cout, oh, ow]);
        for b_ in 0..n {
            for co in 0..cout {
                let grp = co / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for cig in 0..cin_g {
                            let ci = grp * cin_g + cig;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s.stride + ky * s.dilation) as isize - s.padding as isize;
                                    let ix = (ox * s.stride + kx * s.dilation) as isize - s.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b_ * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin_g + cig) * k + ky) * k + kx];
                                }
                            }
                        }
                        y.data_mut()[((b_ * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn pseudo(shape: &[usize], seed: u32) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let v = (i as u32).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(40503));
                (v % 1000) as f32 / 500.0 - 1.0
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn matches_naive_across_geometries() {
        let cases = [
            ConvSpec::new(3, 4, 3),
            ConvSpec::new(3, 4, 3).stride(2),
            ConvSpec::new(4, 6, 1),
            ConvSpec::new(4, 6, 1).stride(2).padding(0),
            ConvSpec::new(4, 4, 3).groups(2),
            ConvSpec::depthwise(5, 3),
            ConvSpec::depthwise(5, 5).stride(2),
            ConvSpec::depthwise(5, 3).dilation(2),
            ConvSpec::new(2, 3, 7).stride(2).padding(3),
        ];
        for (i, spec) in cases.iter().enumerate() {
            let x = pseudo(&[2, spec.in_channels, 9, 8], i as u32);
            let w = pseudo(&[spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel], 7 + i as u32);
            let b = pseudo(&[spec.out_channels], 99);
            let fast = conv2d_forward(&x, &w, Some(&b), spec);
            let slow = naive(&x, &w, Some(&b), spec);
            assert_eq!(fast.shape(), slow.shape(), "case {i}");
            assert!(fast.max_abs_diff(&slow) < 1e-4, "case {i}: {}", fast.max_abs_diff(&slow));
        }
    }

    #[test]
    fn banded_im2col_matches_naive() {
        let big = pseudo(&[1, 64, 160, 160], 5);
        let wbig = pseudo(&[2, 64, 3, 3], 6);
        let gbig = Geometry::new(&big, &wbig, &spec_with(64, 2));
        assert!(gbig.rows_per_band() < gbig.oh);
        let fast = conv2d_forward(&big, &wbig, None, &spec_with(64, 2));
        let slow = naive(&big, &wbig, None, &spec_with(64, 2));
        assert!(fast.max_abs_diff(&slow) < 1e-3);
    }

    fn spec_with(cin: usize, cout: usize) -> ConvSpec {
        ConvSpec::new(cin, cout, 3)
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(-1, 1, 5, 5), (1, 5));
        assert_eq!(valid_range(1, 1, 5, 5), (0, 4));
        assert_eq!(valid_range(-1, 2, 5, 3), (1, 3));
        assert_eq!(valid_range(10, 1, 5, 5), (0, 0));
    }
}
