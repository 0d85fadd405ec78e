//! The seven benchmark architectures, weight adaptation, and complexity
//! accounting.

mod blocks;
mod checkpoint;
mod encoders;
mod fastscnn;
mod unet;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mammoseg_nn::{read_archive, Exec, FlopCounter, Forward, ParamId, ParamStore, Session, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use encoders::{EfficientNetLite, Encoder, MobileNetV2, ResNet};
use fastscnn::FastScnn;
use unet::Unet;

pub use checkpoint::{check_provenance, load_checkpoint, save_checkpoint, CheckpointMeta};

/// Environment variable naming a directory of ImageNet backbone archives
/// (`<backbone>.msarc`, 3-channel first layer) used for warm starts.
pub const PRETRAINED_DIR_ENV: &str = "MAMMOSEG_PRETRAINED_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "unet_resnet34")]
    UnetResnet34,
    #[serde(rename = "mobilenetv2")]
    MobileNetV2,
    #[serde(rename = "mobilenetv2_scse")]
    MobileNetV2Scse,
    #[serde(rename = "enet_resnet18")]
    EnetResnet18,
    #[serde(rename = "fastscnn")]
    FastScnn,
    #[serde(rename = "efficientnet_lite")]
    EfficientNetLite,
    #[serde(rename = "efficientnet_lite_scse")]
    EfficientNetLiteScse,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::UnetResnet34,
        ModelKind::MobileNetV2,
        ModelKind::MobileNetV2Scse,
        ModelKind::EnetResnet18,
        ModelKind::FastScnn,
        ModelKind::EfficientNetLite,
        ModelKind::EfficientNetLiteScse,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::UnetResnet34 => "unet_resnet34",
            ModelKind::MobileNetV2 => "mobilenetv2",
            ModelKind::MobileNetV2Scse => "mobilenetv2_scse",
            ModelKind::EnetResnet18 => "enet_resnet18",
            ModelKind::FastScnn => "fastscnn",
            ModelKind::EfficientNetLite => "efficientnet_lite",
            ModelKind::EfficientNetLiteScse => "efficientnet_lite_scse",
        }
    }

    /// Name of the ImageNet backbone whose weights seed the encoder.
    pub fn backbone(self) -> &'static str {
        match self {
            ModelKind::UnetResnet34 => "resnet34",
            ModelKind::MobileNetV2 | ModelKind::MobileNetV2Scse => "mobilenet_v2",
            ModelKind::EnetResnet18 => "resnet18",
            ModelKind::FastScnn => "fastscnn",
            ModelKind::EfficientNetLite | ModelKind::EfficientNetLiteScse => "efficientnet_lite0",
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::MobileNetV2Scse | ModelKind::EfficientNetLiteScse)
    }

    pub fn valid_keys() -> String {
        Self::ALL.iter().map(|k| k.key()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::UnknownModel {
                name: s.to_string(),
                valid: Self::valid_keys(),
            })
    }
}

/// Architecture configuration. Output is always a single logit channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelKind,
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "yes")]
    pub pretrained: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn new(name: ModelKind) -> Self {
        Self {
            name,
            in_channels: 1,
            pretrained: true,
        }
    }

    pub fn random_init(name: ModelKind) -> Self {
        Self {
            pretrained: false,
            ..Self::new(name)
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Unet(Box<Unet>),
    FastScnn(Box<FastScnn>),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct SegModel {
    spec: ModelSpec,
    params: ParamStore,
    net: Net,
}

/// Every architecture here reduces resolution by 2^5 before decoding.
pub const DOWNSAMPLING_FACTOR: usize = 32;

impl SegModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % DOWNSAMPLING_FACTOR != 0 || w % DOWNSAMPLING_FACTOR != 0 {
            return Err(Error::InputSize {
                model: self.spec.name.to_string(),
                h,
                w,
                multiple: DOWNSAMPLING_FACTOR,
            });
        }
        Ok(())
    }

    fn check_tensor(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1] != self.spec.in_channels {
            return Err(Error::Invalid(format!(
                "expected input [N, {}, H, W], got {:?}",
                self.spec.in_channels,
                x.shape()
            )));
        }
        self.check_input(x.shape()[2], x.shape()[3])
    }

    /// Eval-mode logits for a `[N, C, H, W]` batch.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_tensor(x)?;
        let mut s = Session::eval(&self.params);
        let input = s.input(x.clone());
        Ok(self.forward(&mut s, input).into_tensor())
    }

    pub fn predict_probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict_logits(x)?.map(mammoseg_nn::ops::sigmoid_scalar))
    }

    fn first_conv_weight(&self) -> ParamId {
        match &self.net {
            Net::Unet(u) => u.encoder.first().first_conv().weight,
            Net::FastScnn(f) => f.first().first_conv().weight,
        }
    }
}

impl Forward for SegModel {
    fn forward<E: Exec>(&self, exec: &mut E, x: E::Value) -> E::Value {
        match &self.net {
            Net::Unet(u) => u.run(exec, &x),
            Net::FastScnn(f) => f.run(exec, &x),
        }
    }
}

/// Decoder widths for the ResNet-18 model: a slimmer decoder than the
/// ResNet-34 U-Net so the network keeps its place in the complexity ranking.
const ENET_DECODER: [usize; 5] = [192, 96, 48, 24, 12];
const UNET_DECODER: [usize; 5] = [256, 128, 64, 32, 16];

fn build_random(spec: &ModelSpec, seed: u64) -> Result<SegModel> {
    if spec.in_channels == 0 {
        return Err(Error::Config("in_channels must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let c = spec.in_channels;
    let net = match spec.name {
        ModelKind::FastScnn => Net::FastScnn(Box::new(FastScnn::new(&mut store, c, fastscnn::WIDTHS, &mut rng))),
        kind => {
            let (encoder, widths) = match kind {
                ModelKind::UnetResnet34 => (
                    Encoder::ResNet(ResNet::new(&mut store, c, [3, 4, 6, 3], &mut rng)),
                    UNET_DECODER,
                ),
                ModelKind::EnetResnet18 => (
                    Encoder::ResNet(ResNet::new(&mut store, c, [2, 2, 2, 2], &mut rng)),
                    ENET_DECODER,
                ),
                ModelKind::MobileNetV2 | ModelKind::MobileNetV2Scse => {
                    (Encoder::MobileNetV2(MobileNetV2::new(&mut store, c, &mut rng)), UNET_DECODER)
                }
                _ => (
                    Encoder::EfficientNetLite(EfficientNetLite::new(&mut store, c, &mut rng)),
                    UNET_DECODER,
                ),
            };
            Net::Unet(Box::new(Unet::new(&mut store, encoder, widths, kind.has_attention(), &mut rng)))
        }
    };
    Ok(SegModel {
        spec: spec.clone(),
        params: store,
        net,
    })
}

/// Builds a model deterministically from `(spec, seed)`.
///
/// With `pretrained`, encoder weights are read from
/// `$MAMMOSEG_PRETRAINED_DIR/<backbone>.msarc` when present; otherwise a
/// warning is logged and the random initialization is kept.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<SegModel> {
    let mut model = build_random(spec, seed)?;
    if spec.pretrained {
        match std::env::var_os(PRETRAINED_DIR_ENV) {
            Some(dir) => {
                let path = PathBuf::from(dir).join(format!("{}.msarc", spec.name.backbone()));
                if path.is_file() {
                    load_pretrained(&mut model, &path)?;
                } else {
                    log::warn!(
                        "pretrained weights for {} not found at {}; using random initialization",
                        spec.name.backbone(),
                        path.display()
                    );
                }
            }
            None => log::warn!(
                "pretrained weights for {} unavailable ({PRETRAINED_DIR_ENV} unset); using random initialization",
                spec.name.backbone()
            ),
        }
    }
    Ok(model)
}

/// Copies matching `encoder.*` tensors from an archive, adapting the first
/// convolution from three input channels to the model's channel count.
pub fn load_pretrained(model: &mut SegModel, path: &std::path::Path) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let archive = read_archive(std::io::BufReader::new(file))?;
    let first = model.first_conv_weight();
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut loaded = 0;
    for id in ids {
        let name = model.params.name(id).to_string();
        if !name.starts_with("encoder.") {
            continue;
        }
        let Some(t) = archive.get(&name) else { continue };
        let t = if id == first && t.shape().get(1) != Some(&model.spec.in_channels) {
            adapt_first_layer(t, model.spec.in_channels)?
        } else {
            t.clone()
        };
        if t.shape() != model.params.get(id).shape() {
            return Err(Error::Invalid(format!(
                "pretrained tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                model.params.get(id).shape()
            )));
        }
        model.params.set(id, t);
        loaded += 1;
    }
    log::info!("loaded {loaded} pretrained encoder tensors from {}", path.display());
    Ok(loaded)
}

/// Converts a `[O, 3, k, k]` kernel to `target_channels` inputs.
///
/// For one channel the three slices are summed, so a grayscale image gives
/// exactly the response the original layer gives to `(x, x, x)`. Other
/// targets cycle through the slices, rescaled by `3 / target_channels`.
pub fn adapt_first_layer(weights: &Tensor, target_channels: usize) -> Result<Tensor> {
    let [o, c, kh, kw] = match weights.shape() {
        &[o, c, kh, kw] => [o, c, kh, kw],
        s => return Err(Error::Invalid(format!("expected a 4-d kernel, got {s:?}"))),
    };
    if target_channels == 0 {
        return Err(Error::Invalid("target_channels must be positive".into()));
    }
    let plane = kh * kw;
    let src = weights.data();
    let mut out = vec![0.0f32; o * target_channels * plane];
    for oi in 0..o {
        for ci in 0..c {
            let s = &src[(oi * c + ci) * plane..][..plane];
            if target_channels == 1 {
                let d = &mut out[oi * plane..][..plane];
                for (d, &v) in d.iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        if target_channels > 1 {
            let scale = c as f32 / target_channels as f32;
            for ti in 0..target_channels {
                let s = &src[(oi * c + ti % c) * plane..][..plane];
                let d = &mut out[(oi * target_channels + ti) * plane..][..plane];
                for (d, &v) in d.iter_mut().zip(s) {
                    *d = v * scale;
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[o, target_channels, kh, kw], out))
}

/// Trainable parameter count.
pub fn count_params(model: &SegModel) -> usize {
    model.params.trainable_count()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub name: String,
    pub params_total: usize,
    pub macs_total: u64,
    pub flops_total: u64,
    pub input_shape: (usize, usize, usize),
}

impl ComplexityReport {
    pub fn input_shape_string(&self) -> String {
        let (c, h, w) = self.input_shape;
        format!("{c}x{h}x{w}")
    }
}

/// Traces one forward pass on a `1 x c x h x w` input without computing values.
pub fn estimate_flops(model: &SegModel, input_shape: (usize, usize, usize)) -> Result<ComplexityReport> {
    let (c, h, w) = input_shape;
    if c != model.spec.in_channels {
        return Err(Error::Invalid(format!(
            "model expects {} input channels, got {c}",
            model.spec.in_channels
        )));
    }
    model.check_input(h, w)?;
    let mut counter = FlopCounter::new();
    let out = model.forward(&mut counter, [1, c, h, w]);
    debug_assert_eq!(out, [1, 1, h, w]);
    Ok(ComplexityReport {
        name: model.spec.name.to_string(),
        params_total: count_params(model),
        macs_total: counter.macs,
        flops_total: counter.flops,
        input_shape,
    })
}

/// Writes `complexity.csv` with header `name,params,flops,input_shape`.
pub fn write_complexity_csv(path: &std::path::Path, reports: &[ComplexityReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "params", "flops", "input_shape"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.params_total.to_string(),
            r.flops_total.to_string(),
            r.input_shape_string(),
        ])?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}
