//! U-Net decoder: five nearest-upsampling stages with skip concatenation.

use mammoseg_nn::{Conv2d, ConvSpec, Exec, ParamStore};
use rand::Rng;

use super::blocks::{Act, ConvBn, Scse};
use super::encoders::Encoder;

#[derive(Clone, Debug)]
struct DecoderBlock {
    attention_in: Option<Scse>,
    conv1: ConvBn,
    conv2: ConvBn,
    attention_out: Option<Scse>,
}

impl DecoderBlock {
    fn new(store: &mut ParamStore, name: &str, inp: usize, skip: usize, out: usize, scse: bool, rng: &mut impl Rng) -> Self {
        let cat = inp + skip;
        Self {
            attention_in: (scse && skip > 0).then(|| Scse::new(store, &format!("{name}.attention1"), cat, rng)),
            conv1: ConvBn::new(store, &format!("{name}.conv1"), ConvSpec::new(cat, out, 3), Act::Relu, rng),
            conv2: ConvBn::new(store, &format!("{name}.conv2"), ConvSpec::new(out, out, 3), Act::Relu, rng),
            attention_out: scse.then(|| Scse::new(store, &format!("{name}.attention2"), out, rng)),
        }
    }

    fn run<E: Exec>(&self, e: &mut E, x: &E::Value, skip: Option<&E::Value>) -> E::Value {
        let mut h = e.upsample_nearest(x, 2);
        if let Some(s) = skip {
            h = e.cat(&[&h, s]);
        }
        if let Some(a) = &self.attention_in {
            h = a.run(e, &h);
        }
        h = self.conv1.run(e, &h);
        h = self.conv2.run(e, &h);
        if let Some(a) = &self.attention_out {
            h = a.run(e, &h);
        }
        h
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Unet {
    pub(crate) encoder: Encoder,
    blocks: Vec<DecoderBlock>,
    head: Conv2d,
}

impl Unet {
    pub(crate) fn new(
        store: &mut ParamStore,
        encoder: Encoder,
        widths: [usize; 5],
        scse: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let enc = encoder.out_channels();
        let skips = [enc[3], enc[2], enc[1], enc[0], 0];
        let mut inp = enc[4];
        let mut blocks = Vec::new();
        for (i, (&skip, &out)) in skips.iter().zip(&widths).enumerate() {
            blocks.push(DecoderBlock::new(store, &format!("decoder.{i}"), inp, skip, out, scse, rng));
            inp = out;
        }
        let head = store.conv2d("head", ConvSpec::new(inp, 1, 3), true, rng);
        Self { encoder, blocks, head }
    }

    pub(crate) fn run<E: Exec>(&self, e: &mut E, x: &E::Value) -> E::Value {
        let feats = self.encoder.run(e, x);
        let mut h = feats[4].clone();
        for (i, b) in self.blocks.iter().enumerate() {
            let skip = (i < 4).then(|| &feats[3 - i]);
            h = b.run(e, &h, skip);
        }
        e.conv2d(&self.head, &h)
    }
}

