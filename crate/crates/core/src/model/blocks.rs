//! Reusable conv/norm/activation units shared by the encoders and decoders.

use mammoseg_nn::{BatchNorm2d, Conv2d, ConvSpec, Exec, ParamStore};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Act {
    None,
    Relu,
    Relu6,
}

impl Act {
    pub(crate) fn apply<E: Exec>(self, e: &mut E, x: E::Value) -> E::Value {
        match self {
            Act::None => x,
            Act::Relu => e.relu(&x),
            Act::Relu6 => e.relu6(&x),
        }
    }
}

/// Bias-free convolution, batch norm, activation.
#[derive(Clone, Debug)]
pub(crate) struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Act,
}

impl ConvBn {
    pub(crate) fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, act: Act, rng: &mut impl Rng) -> Self {
        let conv = store.conv2d(&format!("{name}.conv"), spec, false, rng);
        let bn = store.batch_norm(&format!("{name}.bn"), spec.out_channels);
        Self { conv, bn, act }
    }

    pub(crate) fn first_conv(&self) -> &Conv2d {
        &self.conv
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let y = e.conv2d(&self.conv, x);
        let y = e.batch_norm(&self.bn, &y);
        self.act.apply(e, y)
    }
}

/// MobileNetV2 inverted residual: optional 1x1 expansion, depthwise kxk,
/// linear 1x1 projection, identity shortcut when shapes allow.
#[derive(Clone, Debug)]
pub(crate) struct InvertedResidual {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    project: ConvBn,
    residual: bool,
}

impl InvertedResidual {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        expand_ratio: usize,
        act: Act,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden = inp * expand_ratio;
        let expand = (expand_ratio != 1)
            .then(|| ConvBn::new(store, &format!("{name}.expand"), ConvSpec::new(inp, hidden, 1), act, rng));
        let depthwise = ConvBn::new(
            store,
            &format!("{name}.dw"),
            ConvSpec::depthwise(hidden, kernel).stride(stride),
            act,
            rng,
        );
        let project = ConvBn::new(store, &format!("{name}.project"), ConvSpec::new(hidden, out, 1), Act::None, rng);
        Self {
            expand,
            depthwise,
            project,
            residual: stride == 1 && inp == out,
        }
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let h = match &self.expand {
            Some(c) => c.run(e, x),
            None => x.clone(),
        };
        let h = self.depthwise.run(e, &h);
        let h = self.project.run(e, &h);
        if self.residual {
            e.add(x, &h)
        } else {
            h
        }
    }
}

/// Depthwise kxk then pointwise 1x1, each followed by batch norm.
#[derive(Clone, Debug)]
pub(crate) struct SeparableConv {
    depthwise: ConvBn,
    pointwise: ConvBn,
}

impl SeparableConv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        stride: usize,
        dw_act: Act,
        pw_act: Act,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            depthwise: ConvBn::new(store, &format!("{name}.dw"), ConvSpec::depthwise(inp, 3).stride(stride), dw_act, rng),
            pointwise: ConvBn::new(store, &format!("{name}.pw"), ConvSpec::new(inp, out, 1), pw_act, rng),
        }
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let h = self.depthwise.run(e, x);
        self.pointwise.run(e, &h)
    }
}

/// Concurrent spatial and channel squeeze-and-excitation.
///
/// `x * cSE(x) + x * sSE(x)`, where cSE is a two-layer bottleneck on the
/// globally pooled features and sSE a 1x1 projection to one gating map.
#[derive(Clone, Debug)]
pub(crate) struct Scse {
    squeeze: Conv2d,
    excite: Conv2d,
    spatial: Conv2d,
}

impl Scse {
    pub(crate) const REDUCTION: usize = 16;

    pub(crate) fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let mid = (channels / Self::REDUCTION).max(1);
        Self {
            squeeze: store.conv2d(&format!("{name}.cse.0"), ConvSpec::new(channels, mid, 1), true, rng),
            excite: store.conv2d(&format!("{name}.cse.1"), ConvSpec::new(mid, channels, 1), true, rng),
            spatial: store.conv2d(&format!("{name}.sse"), ConvSpec::new(channels, 1, 1), true, rng),
        }
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let pooled = e.adaptive_avg_pool(x, 1, 1);
        let c = e.conv2d(&self.squeeze, &pooled);
        let c = e.relu(&c);
        let c = e.conv2d(&self.excite, &c);
        let c = e.sigmoid(&c);
        let s = e.conv2d(&self.spatial, x);
        let s = e.sigmoid(&s);
        let xc = e.mul(x, &c);
        let xs = e.mul(x, &s);
        e.add(&xc, &xs)
    }
}
