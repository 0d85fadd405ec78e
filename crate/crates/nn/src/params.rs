use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor>,
}

/// Flat, ordered store of every named tensor a network owns.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; names are assigned by architecture code.
    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name,
            kind,
            value: Arc::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; clones the tensor only if a live graph still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.get(id).shape(),
            value.shape(),
            "shape mismatch assigning {}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = Arc::new(value);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|id| self.entries[id.0].kind == ParamKind::Trainable)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }

    pub fn conv2d(&mut self, name: &str, spec: ConvSpec, bias: bool, rng: &mut impl Rng) -> Conv2d {
        assert!(
            spec.in_channels % spec.groups == 0 && spec.out_channels % spec.groups == 0,
            "{name}: channels not divisible by groups"
        );
        let k = spec.kernel;
        let shape = [spec.out_channels, spec.in_channels / spec.groups, k, k];
        // Kaiming normal, fan-out mode
        let fan_out = (spec.out_channels * k * k / spec.groups).max(1);
        let std = (2.0 / fan_out as f64).sqrt() as f32;
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        let weight = self.add(
            format!("{name}.weight"),
            ParamKind::Trainable,
            Tensor::from_vec(&shape, data),
        );
        let bias = bias.then(|| {
            self.add(
                format!("{name}.bias"),
                ParamKind::Trainable,
                Tensor::zeros(&[spec.out_channels]),
            )
        });
        Conv2d { weight, bias, spec }
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BatchNorm2d {
        let c = [channels];
        BatchNorm2d {
            gamma: self.add(format!("{name}.weight"), ParamKind::Trainable, Tensor::full(&c, 1.0)),
            beta: self.add(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&c)),
            running_mean: self.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&c)),
            running_var: self.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&c, 1.0)),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Geometry of a 2-D convolution with square kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1, "same" padding for odd kernels.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * (self.kernel / 2);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::new(channels, channels, kernel).groups(channels)
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let eff = self.dilation * (self.kernel - 1) + 1;
        let oh = (h + 2 * self.padding).saturating_sub(eff) / self.stride + 1;
        let ow = (w + 2 * self.padding).saturating_sub(eff) / self.stride + 1;
        (oh, ow)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
}
