//! Classification backbones truncated into five-scale feature pyramids
//! (strides 2, 4, 8, 16, 32).

use mammoseg_nn::{ConvSpec, Exec, ParamStore};
use rand::Rng;

use super::blocks::{Act, ConvBn, InvertedResidual, SeparableConv};

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    downsample: Option<ConvBn>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let conv1 = ConvBn::new(store, &format!("{name}.1"), ConvSpec::new(inp, out, 3).stride(stride), Act::Relu, rng);
        let conv2 = ConvBn::new(store, &format!("{name}.2"), ConvSpec::new(out, out, 3), Act::None, rng);
        let downsample = (stride != 1 || inp != out).then(|| {
            ConvBn::new(
                store,
                &format!("{name}.downsample"),
                ConvSpec::new(inp, out, 1).stride(stride),
                Act::None,
                rng,
            )
        });
        Self {
            conv1,
            conv2,
            downsample,
        }
    }

    fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let h = self.conv1.run(e, x);
        let h = self.conv2.run(e, &h);
        let shortcut = match &self.downsample {
            Some(d) => d.run(e, x),
            None => x.clone(),
        };
        let y = e.add(&shortcut, &h);
        e.relu(&y)
    }
}

/// torchvision-style ResNet built from basic blocks.
#[derive(Clone, Debug)]
pub(crate) struct ResNet {
    stem: ConvBn,
    layers: Vec<Vec<BasicBlock>>,
}

impl ResNet {
    pub(crate) fn new(store: &mut ParamStore, in_channels: usize, depths: [usize; 4], rng: &mut impl Rng) -> Self {
        let stem = ConvBn::new(
            store,
            "encoder.stem",
            ConvSpec::new(in_channels, 64, 7).stride(2),
            Act::Relu,
            rng,
        );
        let widths = [64, 128, 256, 512];
        let mut inp = 64;
        let mut layers = Vec::new();
        for (li, (&w, &n)) in widths.iter().zip(&depths).enumerate() {
            let blocks = (0..n)
                .map(|bi| {
                    let stride = if li > 0 && bi == 0 { 2 } else { 1 };
                    let b = BasicBlock::new(store, &format!("encoder.layer{}.{bi}", li + 1), inp, w, stride, rng);
                    inp = w;
                    b
                })
                .collect();
            layers.push(blocks);
        }
        Self { stem, layers }
    }

    pub(crate) fn out_channels(&self) -> [usize; 5] {
        [64, 64, 128, 256, 512]
    }

    pub(crate) fn first(&self) -> &ConvBn {
        &self.stem
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> Vec<E::Value> {
        let f1 = self.stem.run(e, x);
        let mut h = e.max_pool(&f1, 3, 2, 1);
        let mut feats = vec![f1];
        for layer in &self.layers {
            for b in layer {
                h = b.run(e, &h);
            }
            feats.push(h.clone());
        }
        feats
    }
}

/// MobileNetV2 feature extractor (width 1.0) including the final 1x1 to 1280.
#[derive(Clone, Debug)]
pub(crate) struct MobileNetV2 {
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
    head: ConvBn,
}

impl MobileNetV2 {
    /// (expansion, channels, repeats, first stride)
    const SETTINGS: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    /// Block index after which each of the stride-2..16 features is tapped.
    const TAPS: [usize; 4] = [0, 2, 5, 12];

    pub(crate) fn new(store: &mut ParamStore, in_channels: usize, rng: &mut impl Rng) -> Self {
        let stem = ConvBn::new(
            store,
            "encoder.stem",
            ConvSpec::new(in_channels, 32, 3).stride(2),
            Act::Relu6,
            rng,
        );
        let mut blocks = Vec::new();
        let mut inp = 32;
        for &(t, c, n, s) in &Self::SETTINGS {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                let name = format!("encoder.blocks.{}", blocks.len());
                blocks.push(InvertedResidual::new(store, &name, inp, c, 3, stride, t, Act::Relu6, rng));
                inp = c;
            }
        }
        let head = ConvBn::new(store, "encoder.head", ConvSpec::new(inp, 1280, 1), Act::Relu6, rng);
        Self { stem, blocks, head }
    }

    pub(crate) fn out_channels(&self) -> [usize; 5] {
        [16, 24, 32, 96, 1280]
    }

    pub(crate) fn first(&self) -> &ConvBn {
        &self.stem
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> Vec<E::Value> {
        let mut h = self.stem.run(e, x);
        let mut feats = Vec::with_capacity(5);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.run(e, &h);
            if Self::TAPS.contains(&i) {
                feats.push(h.clone());
            }
        }
        feats.push(self.head.run(e, &h));
        feats
    }
}

/// EfficientNet-Lite0: no squeeze-excitation, ReLU6 throughout, unscaled stem.
#[derive(Clone, Debug)]
pub(crate) struct EfficientNetLite {
    stem: ConvBn,
    first: SeparableConv,
    blocks: Vec<InvertedResidual>,
}

impl EfficientNetLite {
    /// (expansion, kernel, first stride, channels, repeats) after the first stage.
    const STAGES: [(usize, usize, usize, usize, usize); 6] = [
        (6, 3, 2, 24, 2),
        (6, 5, 2, 40, 2),
        (6, 3, 2, 80, 3),
        (6, 5, 1, 112, 3),
        (6, 5, 2, 192, 4),
        (6, 3, 1, 320, 1),
    ];
    /// Indices into `blocks` after which the stride-4/8/16 features are tapped.
    const TAPS: [usize; 3] = [1, 3, 9];

    pub(crate) fn new(store: &mut ParamStore, in_channels: usize, rng: &mut impl Rng) -> Self {
        let stem = ConvBn::new(
            store,
            "encoder.stem",
            ConvSpec::new(in_channels, 32, 3).stride(2),
            Act::Relu6,
            rng,
        );
        let first = SeparableConv::new(store, "encoder.stage0", 32, 16, 1, Act::Relu6, Act::None, rng);
        let mut blocks = Vec::new();
        let mut inp = 16;
        for &(t, k, s, c, n) in &Self::STAGES {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                let name = format!("encoder.blocks.{}", blocks.len());
                blocks.push(InvertedResidual::new(store, &name, inp, c, k, stride, t, Act::Relu6, rng));
                inp = c;
            }
        }
        Self { stem, first, blocks }
    }

    pub(crate) fn out_channels(&self) -> [usize; 5] {
        [32, 24, 40, 112, 320]
    }

    pub(crate) fn first(&self) -> &ConvBn {
        &self.stem
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> Vec<E::Value> {
        let f1 = self.stem.run(e, x);
        let mut h = self.first.run(e, &f1);
        let mut feats = vec![f1];
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.run(e, &h);
            if Self::TAPS.contains(&i) {
                feats.push(h.clone());
            }
        }
        feats.push(h);
        feats
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Encoder {
    ResNet(ResNet),
    MobileNetV2(MobileNetV2),
    EfficientNetLite(EfficientNetLite),
}

impl Encoder {
    pub(crate) fn out_channels(&self) -> [usize; 5] {
        match self {
            Encoder::ResNet(m) => m.out_channels(),
            Encoder::MobileNetV2(m) => m.out_channels(),
            Encoder::EfficientNetLite(m) => m.out_channels(),
        }
    }

    pub(crate) fn first(&self) -> &ConvBn {
        match self {
            Encoder::ResNet(m) => m.first(),
            Encoder::MobileNetV2(m) => m.first(),
            Encoder::EfficientNetLite(m) => m.first(),
        }
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> Vec<E::Value> {
        match self {
            Encoder::ResNet(m) => m.run(e, x),
            Encoder::MobileNetV2(m) => m.run(e, x),
            Encoder::EfficientNetLite(m) => m.run(e, x),
        }
    }
}
