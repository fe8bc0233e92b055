//! Purely convolutional basecaller: architecture, inference, CTC loss,
//! greedy decoding and training.

mod ctc;
mod decode;
mod forward;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::tensor::ConvLayerSpec;
pub use ctc::{ctc_loss, CtcOutput};
pub use decode::{greedy_decode, greedy_decode_with_quality, read_identity};
pub use forward::{
    forward, forward_samples, forward_samples_int8, macs_for_len, ForwardCache, QuantizedLayer, QuantizedWeights,
};
pub use train::{
    basecall, evaluate_identity, train, Example, TrainHyper, TrainLogEntry, TRAIN_LOG_HEADER,
};

use crate::{Error, Result};

/// Number of output classes: A, C, G, T and the CTC blank.
pub const NUM_CLASSES: usize = 5;
pub const BLANK: usize = 4;

const DEFAULT_SPEC_TOML: &str = include_str!("../../configs/cnn_default.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub layers: Vec<ConvLayerSpec>,
}

#[derive(Deserialize)]
struct SpecFile {
    version: i64,
    layers: Vec<ConvLayerSpec>,
}

impl CnnSpec {
    /// The shipped architecture (`configs/cnn_default.toml`).
    pub fn default_spec() -> CnnSpec {
        CnnSpec::from_toml(DEFAULT_SPEC_TOML).expect("shipped CNN spec is valid")
    }

    pub fn from_toml(text: &str) -> Result<CnnSpec> {
        let file: SpecFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("CNN spec: {e}")))?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "CNN spec: unsupported version {}",
                file.version
            )));
        }
        let spec = CnnSpec { layers: file.layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("CNN spec has no layers".into()))?;
        if first.c_in != 1 {
            return Err(Error::InvalidArgument(
                "first layer must take a single input channel".into(),
            ));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].c_out != w[1].c_in {
                return Err(Error::InvalidArgument(format!(
                    "layer {} emits {} channels but layer {} expects {}",
                    i,
                    w[0].c_out,
                    i + 1,
                    w[1].c_in
                )));
            }
        }
        if self.layers.last().unwrap().c_out != NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "head must emit {NUM_CLASSES} classes"
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    /// Input samples that influence one output frame.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
        }
        rf
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Number of output frames for `t` input samples.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        self.layers.iter().try_fold(t, |len, l| l.output_len(len))
    }
}

/// `Σ (c_out·c_in·kernel + c_out)` over layers.
pub fn param_count(spec: &CnnSpec) -> usize {
    spec.layers.iter().map(ConvLayerSpec::param_count).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `(c_out, c_in, kernel)` row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<LayerWeights>,
}

impl Weights {
    /// He-uniform initialisation for ReLU layers, zero biases.
    pub fn init(spec: &CnnSpec, seed: u64) -> Weights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.layers.len();
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let fan_in = (l.c_in * l.kernel) as f32;
                let gain = if i + 1 == n { 1.0 } else { 2.0 };
                let bound = (3.0 * gain / fan_in).sqrt();
                LayerWeights {
                    weight: (0..l.weight_count())
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; l.c_out],
                }
            })
            .collect();
        Weights { layers }
    }

    pub fn zeros(spec: &CnnSpec) -> Weights {
        Weights {
            layers: spec
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weight: vec![0.0; l.weight_count()],
                    bias: vec![0.0; l.c_out],
                })
                .collect(),
        }
    }

    pub fn check(&self, spec: &CnnSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "weights have {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (w, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            if w.weight.len() != l.weight_count() || w.bias.len() != l.c_out {
                return Err(Error::Shape(format!("layer {i} weights do not match {l:?}")));
            }
            if let Some(j) = w.weight.iter().chain(&w.bias).position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(j));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters in layer order (weights then bias per layer).
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten_from(&mut self, flat: &[f32]) {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len());
    }
}

/// `T' × 5` unnormalised class scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFrame {
    pub frames: usize,
    pub data: Vec<f32>,
}

impl LogitFrame {
    pub fn new(frames: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || data.len() != frames * NUM_CLASSES {
            return Err(Error::Shape(format!(
                "logit frame needs {frames}x{NUM_CLASSES} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(LogitFrame { frames, data })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * NUM_CLASSES..(t + 1) * NUM_CLASSES]
    }
}
