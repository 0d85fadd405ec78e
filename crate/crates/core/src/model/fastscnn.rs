//! Fast-SCNN: a shallow full-resolution branch fused with a deep,
//! low-resolution context branch.

use mammoseg_nn::{Conv2d, ConvSpec, Exec, ParamStore};
use rand::Rng;

use super::blocks::{Act, ConvBn, InvertedResidual, SeparableConv};

/// Channel widths of the network.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FastScnnWidths {
    pub(crate) downsample: [usize; 3],
    pub(crate) global: [usize; 3],
    pub(crate) repeats: [usize; 3],
    pub(crate) fusion: usize,
}

pub(crate) const WIDTHS: FastScnnWidths = FastScnnWidths {
    downsample: [32, 48, 64],
    global: [96, 128, 192],
    repeats: [3, 3, 3],
    fusion: 160,
};

const PYRAMID_BINS: [usize; 4] = [1, 2, 3, 6];

#[derive(Clone, Debug)]
pub(crate) struct FastScnn {
    stem: ConvBn,
    down1: SeparableConv,
    down2: SeparableConv,
    global: Vec<InvertedResidual>,
    pyramid: Vec<ConvBn>,
    pyramid_out: ConvBn,
    lower_dw: ConvBn,
    lower_pw: ConvBn,
    higher_pw: ConvBn,
    classifier: [SeparableConv; 2],
    head: Conv2d,
}

impl FastScnn {
    pub(crate) fn new(store: &mut ParamStore, in_channels: usize, w: FastScnnWidths, rng: &mut impl Rng) -> Self {
        let [d1, d2, d3] = w.downsample;
        let stem = ConvBn::new(store, "encoder.stem", ConvSpec::new(in_channels, d1, 3).stride(2), Act::Relu, rng);
        let down1 = SeparableConv::new(store, "lds.dsconv1", d1, d2, 2, Act::Relu, Act::Relu, rng);
        let down2 = SeparableConv::new(store, "lds.dsconv2", d2, d3, 2, Act::Relu, Act::Relu, rng);

        let mut global = Vec::new();
        let mut inp = d3;
        for (stage, (&c, &n)) in w.global.iter().zip(&w.repeats).enumerate() {
            let first_stride = if stage < 2 { 2 } else { 1 };
            for i in 0..n {
                let stride = if i == 0 { first_stride } else { 1 };
                let name = format!("gfe.{}", global.len());
                global.push(InvertedResidual::new(store, &name, inp, c, 3, stride, 6, Act::Relu, rng));
                inp = c;
            }
        }
        let g = inp;
        let branch = g / 4;
        let pyramid = (0..PYRAMID_BINS.len())
            .map(|i| ConvBn::new(store, &format!("ppm.{i}"), ConvSpec::new(g, branch, 1), Act::Relu, rng))
            .collect();
        let pyramid_out = ConvBn::new(store, "ppm.out", ConvSpec::new(g + 4 * branch, g, 1), Act::Relu, rng);

        let f = w.fusion;
        let lower_dw = ConvBn::new(store, "ffm.lower_dw", ConvSpec::depthwise(g, 3), Act::Relu, rng);
        let lower_pw = ConvBn::new(store, "ffm.lower_pw", ConvSpec::new(g, f, 1), Act::None, rng);
        let higher_pw = ConvBn::new(store, "ffm.higher_pw", ConvSpec::new(d3, f, 1), Act::None, rng);
        let classifier = [
            SeparableConv::new(store, "classifier.0", f, f, 1, Act::Relu, Act::Relu, rng),
            SeparableConv::new(store, "classifier.1", f, f, 1, Act::Relu, Act::Relu, rng),
        ];
        let head = store.conv2d("head", ConvSpec::new(f, 1, 1), true, rng);
        Self {
            stem,
            down1,
            down2,
            global,
            pyramid,
            pyramid_out,
            lower_dw,
            lower_pw,
            higher_pw,
            classifier,
            head,
        }
    }

    pub(crate) fn first(&self) -> &ConvBn {
        &self.stem
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let [_, _, h, w] = e.dims(x);
        let s = self.stem.run(e, x);
        let s = self.down1.run(e, &s);
        let higher = self.down2.run(e, &s);

        let mut g = higher.clone();
        for b in &self.global {
            g = b.run(e, &g);
        }
        let [_, _, gh, gw] = e.dims(&g);
        let mut parts = vec![g.clone()];
        for (conv, &bins) in self.pyramid.iter().zip(&PYRAMID_BINS) {
            let p = e.adaptive_avg_pool(&g, bins, bins);
            let p = conv.run(e, &p);
            parts.push(e.resize_bilinear(&p, gh, gw));
        }
        let refs: Vec<&E::Value> = parts.iter().collect();
        let cat = e.cat(&refs);
        let lower = self.pyramid_out.run(e, &cat);

        let [_, _, hh, hw] = e.dims(&higher);
        let lower = e.resize_bilinear(&lower, hh, hw);
        let lower = self.lower_dw.run(e, &lower);
        let lower = self.lower_pw.run(e, &lower);
        let high = self.higher_pw.run(e, &higher);
        let fused = e.add(&lower, &high);
        let mut y = e.relu(&fused);
        for c in &self.classifier {
            y = c.run(e, &y);
        }
        let y = e.conv2d(&self.head, &y);
        e.resize_bilinear(&y, h, w)
    }
}

