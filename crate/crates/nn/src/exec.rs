//! One forward definition, several interpreters.
//!
//! Architectures implement [`Forward`] against the [`Exec`] trait. The
//! [`Session`] interpreter computes real values on the autodiff tape; the
//! [`FlopCounter`] interpreter propagates shapes only and tallies operations,
//! so complexity accounting always matches the network that actually runs.

use std::collections::HashMap;

use crate::graph::{Graph, Var};
use crate::ops::{self, BatchStats};
use crate::params::{BatchNorm2d, Conv2d, ParamId, ParamStore};
use crate::tensor::Tensor;

pub trait Exec {
    type Value: Clone;

    fn conv2d(&mut self, layer: &Conv2d, x: &Self::Value) -> Self::Value;
    fn batch_norm(&mut self, layer: &BatchNorm2d, x: &Self::Value) -> Self::Value;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn relu6(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    /// `b` may broadcast as `[N,C,1,1]` or `[N,1,H,W]`.
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn cat(&mut self, xs: &[&Self::Value]) -> Self::Value;
    fn upsample_nearest(&mut self, x: &Self::Value, scale: usize) -> Self::Value;
    fn resize_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Self::Value;
    fn max_pool(&mut self, x: &Self::Value, kernel: usize, stride: usize, padding: usize) -> Self::Value;
    fn adaptive_avg_pool(&mut self, x: &Self::Value, h: usize, w: usize) -> Self::Value;
    fn dims(&self, x: &Self::Value) -> [usize; 4];
}

pub trait Forward {
    fn forward<E: Exec>(&self, exec: &mut E, x: E::Value) -> E::Value;
}

impl Forward for Conv2d {
    fn forward<E: Exec>(&self, exec: &mut E, x: E::Value) -> E::Value {
        exec.conv2d(self, &x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    layer: BatchNorm2d,
    stats: BatchStats,
}

/// Executes a forward pass on real tensors, recording the tape when training.
pub struct Session<'a> {
    params: &'a ParamStore,
    graph: Graph,
    mode: Mode,
    bound: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Session<'a> {
    pub fn train(params: &'a ParamStore) -> Self {
        Self::with_graph(params, Graph::new(), Mode::Train)
    }

    /// Inference: nothing is recorded, activations are freed eagerly.
    pub fn eval(params: &'a ParamStore) -> Self {
        Self::with_graph(params, Graph::inference(), Mode::Eval)
    }

    /// Eval-mode normalization but with a recording tape.
    pub fn eval_recording(params: &'a ParamStore) -> Self {
        Self::with_graph(params, Graph::new(), Mode::Eval)
    }

    fn with_graph(params: &'a ParamStore, graph: Graph, mode: Mode) -> Self {
        Self {
            params,
            graph,
            mode,
            bound: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        Var::constant(t)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return v.clone();
        }
        let v = self.graph.param(id, self.params.shared(id));
        self.bound.insert(id, v.clone());
        v
    }

    /// Ends the pass, returning the tape and pending running-stat updates.
    pub fn finish(self) -> (Graph, Vec<BnUpdate>) {
        (self.graph, self.bn_updates)
    }
}

impl ParamStore {
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let m = u.layer.momentum;
            for (r, &b) in self.get_mut(u.layer.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in self
                .get_mut(u.layer.running_var)
                .data_mut()
                .iter_mut()
                .zip(&u.stats.var_unbiased)
            {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

impl Exec for Session<'_> {
    type Value = Var;

    fn conv2d(&mut self, layer: &Conv2d, x: &Var) -> Var {
        let w = self.param(layer.weight);
        let b = layer.bias.map(|id| self.param(id));
        ops::conv2d(&mut self.graph, x, &w, b.as_ref(), layer.spec)
    }

    fn batch_norm(&mut self, layer: &BatchNorm2d, x: &Var) -> Var {
        let gamma = self.param(layer.gamma);
        let beta = self.param(layer.beta);
        let training = self.mode == Mode::Train;
        let (rm, rv) = (self.params.get(layer.running_mean), self.params.get(layer.running_var));
        let (y, stats) = ops::batch_norm(&mut self.graph, x, &gamma, &beta, (rm, rv), layer.eps, training);
        if let Some(stats) = stats {
            self.bn_updates.push(BnUpdate {
                layer: layer.clone(),
                stats,
            });
        }
        y
    }

    fn relu(&mut self, x: &Var) -> Var {
        ops::relu(&mut self.graph, x)
    }

    fn relu6(&mut self, x: &Var) -> Var {
        ops::relu6(&mut self.graph, x)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        ops::sigmoid(&mut self.graph, x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        ops::add(&mut self.graph, a, b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        ops::mul(&mut self.graph, a, b)
    }

    fn cat(&mut self, xs: &[&Var]) -> Var {
        ops::cat_channels(&mut self.graph, xs)
    }

    fn upsample_nearest(&mut self, x: &Var, scale: usize) -> Var {
        ops::upsample_nearest(&mut self.graph, x, scale)
    }

    fn resize_bilinear(&mut self, x: &Var, h: usize, w: usize) -> Var {
        ops::resize_bilinear(&mut self.graph, x, h, w)
    }

    fn max_pool(&mut self, x: &Var, kernel: usize, stride: usize, padding: usize) -> Var {
        ops::max_pool2d(&mut self.graph, x, kernel, stride, padding)
    }

    fn adaptive_avg_pool(&mut self, x: &Var, h: usize, w: usize) -> Var {
        ops::adaptive_avg_pool2d(&mut self.graph, x, h, w)
    }

    fn dims(&self, x: &Var) -> [usize; 4] {
        x.dims4()
    }
}

/// Shape-only interpreter that tallies floating-point operations.
///
/// Convention: a multiply-accumulate is two FLOPs; bias adds, activations,
/// residual adds and attention products are one FLOP per output element;
/// batch norm (inference form) is two per element; bilinear resampling is
/// four per output element; pooling is one per input element visited.
#[derive(Clone, Debug, Default)]
pub struct FlopCounter {
    pub macs: u64,
    pub flops: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn numel(d: &[usize; 4]) -> u64 {
        d.iter().map(|&v| v as u64).product()
    }
}

impl Exec for FlopCounter {
    type Value = [usize; 4];

    fn conv2d(&mut self, layer: &Conv2d, x: &[usize; 4]) -> [usize; 4] {
        let s = layer.spec;
        assert_eq!(x[1], s.in_channels, "conv input channels mismatch");
        let (oh, ow) = s.output_size(x[2], x[3]);
        let out = [x[0], s.out_channels, oh, ow];
        let macs = Self::numel(&out) * (s.in_channels / s.groups * s.kernel * s.kernel) as u64;
        self.macs += macs;
        self.flops += 2 * macs;
        if layer.bias.is_some() {
            self.flops += Self::numel(&out);
        }
        out
    }

    fn batch_norm(&mut self, layer: &BatchNorm2d, x: &[usize; 4]) -> [usize; 4] {
        assert_eq!(x[1], layer.channels, "batch norm channels mismatch");
        self.flops += 2 * Self::numel(x);
        *x
    }

    fn relu(&mut self, x: &[usize; 4]) -> [usize; 4] {
        self.flops += Self::numel(x);
        *x
    }

    fn relu6(&mut self, x: &[usize; 4]) -> [usize; 4] {
        self.flops += Self::numel(x);
        *x
    }

    fn sigmoid(&mut self, x: &[usize; 4]) -> [usize; 4] {
        self.flops += Self::numel(x);
        *x
    }

    fn add(&mut self, a: &[usize; 4], b: &[usize; 4]) -> [usize; 4] {
        assert_eq!(a, b, "add: shape mismatch");
        self.flops += Self::numel(a);
        *a
    }

    fn mul(&mut self, a: &[usize; 4], b: &[usize; 4]) -> [usize; 4] {
        let ok = b == a || (b[0] == a[0] && ((b[1] == a[1] && b[2] == 1 && b[3] == 1) || (b[1] == 1 && b[2] == a[2] && b[3] == a[3])));
        assert!(ok, "mul: cannot broadcast {b:?} over {a:?}");
        self.flops += Self::numel(a);
        *a
    }

    fn cat(&mut self, xs: &[&[usize; 4]]) -> [usize; 4] {
        let mut out = *xs[0];
        out[1] = xs.iter().map(|d| d[1]).sum();
        for d in xs {
            assert_eq!((d[0], d[2], d[3]), (out[0], out[2], out[3]), "cat: spatial mismatch");
        }
        out
    }

    fn upsample_nearest(&mut self, x: &[usize; 4], scale: usize) -> [usize; 4] {
        [x[0], x[1], x[2] * scale, x[3] * scale]
    }

    fn resize_bilinear(&mut self, x: &[usize; 4], h: usize, w: usize) -> [usize; 4] {
        let out = [x[0], x[1], h, w];
        self.flops += 4 * Self::numel(&out);
        out
    }

    fn max_pool(&mut self, x: &[usize; 4], kernel: usize, stride: usize, padding: usize) -> [usize; 4] {
        let oh = (x[2] + 2 * padding - kernel) / stride + 1;
        let ow = (x[3] + 2 * padding - kernel) / stride + 1;
        let out = [x[0], x[1], oh, ow];
        self.flops += Self::numel(&out) * (kernel * kernel) as u64;
        out
    }

    fn adaptive_avg_pool(&mut self, x: &[usize; 4], h: usize, w: usize) -> [usize; 4] {
        self.flops += Self::numel(x);
        [x[0], x[1], h, w]
    }

    fn dims(&self, x: &[usize; 4]) -> [usize; 4] {
        *x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ConvSpec;
    use rand::SeedableRng;

    #[test]
    fn single_conv_flops_by_hand() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conv = store.conv2d("c", ConvSpec::new(1, 8, 3), true, &mut rng);
        assert_eq!(store.trainable_count(), 3 * 3 * 8 + 8);
        let mut fc = FlopCounter::new();
        let out = conv.forward(&mut fc, [1, 1, 16, 16]);
        assert_eq!(out, [1, 8, 16, 16]);
        assert_eq!(fc.macs, 9 * 8 * 256);
        assert_eq!(fc.flops, 36_864 + 8 * 256);
    }

    #[test]
    fn counter_shapes_match_session() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conv = store.conv2d("c", ConvSpec::new(2, 3, 3).stride(2), false, &mut rng);
        let mut fc = FlopCounter::new();
        let shape = conv.forward(&mut fc, [2, 2, 9, 7]);
        let mut s = Session::eval(&store);
        let x = s.input(Tensor::zeros(&[2, 2, 9, 7]));
        let y = conv.forward(&mut s, x);
        assert_eq!(y.dims4(), shape);
    }
}
