use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Width of the prediction head: mean (2), log σ (2), pre-correlation (1).
pub const HEAD_WIDTH: usize = 5;

/// Weight matrix (`inputs × outputs`) and bias of one affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array,
    pub bias: Array,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weight: Array::zeros(&[inputs, outputs]),
            bias: Array::zeros(&[outputs]),
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Layer {
            weight: Array::from_parts(vec![inputs, outputs], draw(inputs * outputs)),
            bias: Array::from_parts(vec![outputs], draw(outputs)),
        }
    }
}

/// All learnable weights.
///
/// Recurrent cells use one affine layer over `[input | hidden]` producing the
/// four gate pre-activations `[input | forget | candidate | output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub interact: Layer,
    pub self_loop: Layer,
    pub embed: Layer,
    pub attn: Layer,
    pub pred: Layer,
    pub g_interact: Layer,
    pub g_self: Layer,
    pub g_pred: Layer,
}

const NAMES: [&str; 16] = [
    "interact.weight",
    "interact.bias",
    "self_loop.weight",
    "self_loop.bias",
    "embed.weight",
    "embed.bias",
    "attn.weight",
    "attn.bias",
    "pred.weight",
    "pred.bias",
    "g_interact.weight",
    "g_interact.bias",
    "g_self.weight",
    "g_self.bias",
    "g_pred.weight",
    "g_pred.bias",
];

fn shapes(config: &ModelConfig) -> [(usize, usize); 8] {
    let (e, h, a) = (config.embed_dim, config.hidden_dim, config.attn_dim);
    [
        (4, e),
        (4, e),
        (2, e),
        (h, a),
        (h, HEAD_WIDTH),
        (e + h, 4 * h),
        (e + h, 4 * h),
        (e + 2 * h + h, 4 * h),
    ]
}

impl ModelParams {
    fn from_layers(layers: Vec<Layer>) -> Self {
        let mut it = layers.into_iter();
        let mut next = || it.next().expect("eight layers");
        ModelParams {
            interact: next(),
            self_loop: next(),
            embed: next(),
            attn: next(),
            pred: next(),
            g_interact: next(),
            g_self: next(),
            g_pred: next(),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams::from_layers(shapes(config).iter().map(|&(i, o)| Layer::zeros(i, o)).collect())
    }

    /// Uniform `±1/√fan_in` initialization; forget-gate biases start at one.
    /// The output head starts at zero, so an untrained model forecasts its
    /// mean anchor with unit spread.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::from_layers(
            shapes(config)
                .iter()
                .map(|&(i, o)| Layer::uniform(i, o, &mut rng))
                .collect(),
        );
        let h = config.hidden_dim;
        for cell in [&mut params.g_interact, &mut params.g_self, &mut params.g_pred] {
            cell.bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        }
        params.pred.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        params.pred.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        params
    }

    pub fn names() -> &'static [&'static str] {
        &NAMES
    }

    pub fn arrays(&self) -> [&Array; 16] {
        [
            &self.interact.weight,
            &self.interact.bias,
            &self.self_loop.weight,
            &self.self_loop.bias,
            &self.embed.weight,
            &self.embed.bias,
            &self.attn.weight,
            &self.attn.bias,
            &self.pred.weight,
            &self.pred.bias,
            &self.g_interact.weight,
            &self.g_interact.bias,
            &self.g_self.weight,
            &self.g_self.bias,
            &self.g_pred.weight,
            &self.g_pred.bias,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array; 16] {
        [
            &mut self.interact.weight,
            &mut self.interact.bias,
            &mut self.self_loop.weight,
            &mut self.self_loop.bias,
            &mut self.embed.weight,
            &mut self.embed.bias,
            &mut self.attn.weight,
            &mut self.attn.bias,
            &mut self.pred.weight,
            &mut self.pred.bias,
            &mut self.g_interact.weight,
            &mut self.g_interact.bias,
            &mut self.g_self.weight,
            &mut self.g_self.bias,
            &mut self.g_pred.weight,
            &mut self.g_pred.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// Checks every array against the shapes implied by `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(config);
        for ((name, have), want) in NAMES.iter().zip(self.arrays()).zip(expected.arrays()) {
            if have.shape() != want.shape() {
                return Err(Error::invalid(format!(
                    "{name}: shape {:?} does not match config ({:?})",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

/// On-disk model: configuration plus every named weight array.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

const CHECKPOINT_FORMAT: &str = "smoothattn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: NAMES
                .iter()
                .zip(self.params.arrays())
                .map(|(name, a)| TensorRecord {
                    name: (*name).into(),
                    shape: a.shape().to_vec(),
                    data: a.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Checkpoint> {
        let fail = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(fail(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        file.config.validate()?;
        let mut params = ModelParams::zeros(&file.config);
        let mut tensors = file.tensors.into_iter();
        for (name, slot) in NAMES.iter().zip(params.arrays_mut()) {
            let record = tensors
                .next()
                .ok_or_else(|| fail(format!("missing tensor {name}")))?;
            if record.name != *name {
                return Err(fail(format!("expected tensor {name}, found {}", record.name)));
            }
            if record.shape != slot.shape() {
                return Err(fail(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    record.shape,
                    slot.shape()
                )));
            }
            *slot = Array::new(record.shape, record.data).map_err(|e| fail(e.to_string()))?;
        }
        if tensors.next().is_some() {
            return Err(fail("unexpected extra tensors".into()));
        }
        Ok(Checkpoint {
            config: file.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}
