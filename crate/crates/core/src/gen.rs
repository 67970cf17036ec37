//! Seeded model generation: the reference architecture, layer-spec strings,
//! and random architectures for equivalence campaigns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{output_count, Activation, PoolKind};
use crate::modelio::{
    ConvSpec, DenseSpec, FlattenSpec, InputSpec, LayerSpec, ModelSpec, PoolSpec, SoftmaxSpec,
    FORMAT_VERSION,
};

/// 460×3 input, four conv(8 filters, kernel 8, stride 1) + maxpool(3) blocks,
/// two dense(16) layers and a 2-class softmax. 2338 parameters.
pub const REFERENCE_LAYERS: &str = "input:460x3,\
    conv:8:8:1,maxpool:3,conv:8:8:1,maxpool:3,conv:8:8:1,maxpool:3,conv:8:8:1,maxpool:3,\
    dense:16,dense:16,softmax:2";

/// The reference stack without pooling, used for step-cost class analysis.
pub const POOL_FREE_LAYERS: &str =
    "input:460x3,conv:8:8:1,conv:8:8:1,conv:8:8:1,conv:8:8:1,dense:16,dense:16,softmax:2";

/// Architecture without weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: InputSpec,
    pub layers: Vec<LayerDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDecl {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    Pool {
        kind: PoolKind,
        window: usize,
        stride: Option<usize>,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Softmax {
        classes: usize,
    },
}

fn bad_spec(token: &str, why: &str) -> Error {
    Error::Validation(format!("layer spec token {token:?}: {why}"))
}

fn parse_num(token: &str, field: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| bad_spec(token, &format!("{field:?} is not a non-negative integer")))
}

fn parse_activation(token: &str, field: &str) -> Result<Activation> {
    match field {
        "relu" => Ok(Activation::Relu),
        "identity" | "linear" => Ok(Activation::Identity),
        _ => Err(bad_spec(token, &format!("unknown activation {field:?}"))),
    }
}

impl Architecture {
    /// Parses a comma-separated layer spec, e.g.
    /// `input:460x3,conv:8:8:1,maxpool:3,dense:16,softmax:2`.
    ///
    /// Tokens: `input:LENxCH`, `conv:FILTERS:KERNEL[:STRIDE[:ACT]]`,
    /// `maxpool:WINDOW[:STRIDE]`, `avgpool:WINDOW[:STRIDE]`, `flatten`,
    /// `dense:UNITS[:ACT]`, `softmax:CLASSES`. `reference` expands to the
    /// reference architecture. Flatten is implied when omitted.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = match spec.trim() {
            "reference" => REFERENCE_LAYERS,
            "reference-poolfree" => POOL_FREE_LAYERS,
            other => other,
        };
        let mut tokens = spec.split(',').map(str::trim).filter(|t| !t.is_empty());
        let first = tokens
            .next()
            .ok_or_else(|| Error::Validation("empty layer spec".into()))?;
        let input = match first.split_once(':') {
            Some(("input", dims)) => {
                let (len, ch) = dims
                    .split_once('x')
                    .ok_or_else(|| bad_spec(first, "expected input:LENxCHANNELS"))?;
                InputSpec {
                    length: parse_num(first, len)?,
                    channels: parse_num(first, ch)?,
                }
            }
            _ => return Err(bad_spec(first, "spec must start with input:LENxCHANNELS")),
        };

        let mut layers = Vec::new();
        for token in tokens {
            let mut parts = token.split(':');
            let kind = parts.next().unwrap_or_default();
            let args: Vec<&str> = parts.collect();
            let arity = |min: usize, max: usize| {
                if args.len() < min || args.len() > max {
                    Err(bad_spec(token, &format!("expected {min} to {max} arguments")))
                } else {
                    Ok(())
                }
            };
            let decl = match kind {
                "conv" => {
                    arity(2, 4)?;
                    LayerDecl::Conv {
                        filters: parse_num(token, args[0])?,
                        kernel: parse_num(token, args[1])?,
                        stride: args.get(2).map_or(Ok(1), |s| parse_num(token, s))?,
                        activation: args
                            .get(3)
                            .map_or(Ok(Activation::Relu), |a| parse_activation(token, a))?,
                    }
                }
                "maxpool" | "avgpool" => {
                    arity(1, 2)?;
                    LayerDecl::Pool {
                        kind: if kind == "maxpool" {
                            PoolKind::Max
                        } else {
                            PoolKind::Average
                        },
                        window: parse_num(token, args[0])?,
                        stride: args.get(1).map(|s| parse_num(token, s)).transpose()?,
                    }
                }
                "flatten" => {
                    arity(0, 0)?;
                    continue;
                }
                "dense" => {
                    arity(1, 2)?;
                    LayerDecl::Dense {
                        units: parse_num(token, args[0])?,
                        activation: args
                            .get(1)
                            .map_or(Ok(Activation::Relu), |a| parse_activation(token, a))?,
                    }
                }
                "softmax" => {
                    arity(1, 1)?;
                    LayerDecl::Softmax {
                        classes: parse_num(token, args[0])?,
                    }
                }
                _ => return Err(bad_spec(token, "unknown layer kind")),
            };
            layers.push(decl);
        }
        Ok(Self { input, layers })
    }

    /// Fills the architecture with seeded Glorot-uniform weights and small
    /// uniform biases, then validates the result.
    pub fn instantiate(&self, rng: &mut impl Rng) -> Result<ModelSpec> {
        let mut len = self.input.length;
        let mut channels = self.input.channels;
        let mut width = None;
        let mut layers = Vec::with_capacity(self.layers.len() + 1);

        for decl in &self.layers {
            match *decl {
                LayerDecl::Conv {
                    filters,
                    kernel,
                    stride,
                    activation,
                } => {
                    if width.is_some() {
                        return Err(Error::Validation("conv layer after dense layers".into()));
                    }
                    let limit = glorot_limit(channels * kernel, filters * kernel);
                    layers.push(LayerSpec::Conv1d(ConvSpec {
                        filters,
                        kernel,
                        stride,
                        activation,
                        padding: "valid".into(),
                        weights: (0..filters)
                            .map(|_| (0..channels).map(|_| uniform(rng, limit, kernel)).collect())
                            .collect(),
                        bias: uniform(rng, 0.1, filters),
                    }));
                    len = output_count(len, kernel, stride.max(1));
                    channels = filters;
                }
                LayerDecl::Pool {
                    kind,
                    window,
                    stride,
                } => {
                    if width.is_some() {
                        return Err(Error::Validation("pool layer after dense layers".into()));
                    }
                    let spec = PoolSpec { window, stride };
                    len = output_count(len, window, spec.effective_stride().max(1));
                    layers.push(match kind {
                        PoolKind::Max => LayerSpec::Maxpool(spec),
                        PoolKind::Average => LayerSpec::Avgpool(spec),
                    });
                }
                LayerDecl::Dense { units, activation } => {
                    let input = flatten_once(&mut layers, &mut width, len * channels);
                    layers.push(LayerSpec::Dense(DenseSpec {
                        units,
                        activation,
                        weights: matrix(rng, units, input),
                        bias: uniform(rng, 0.1, units),
                    }));
                    width = Some(units);
                }
                LayerDecl::Softmax { classes } => {
                    let input = flatten_once(&mut layers, &mut width, len * channels);
                    layers.push(LayerSpec::Softmax(SoftmaxSpec {
                        classes,
                        weights: matrix(rng, classes, input),
                        bias: uniform(rng, 0.1, classes),
                    }));
                    width = Some(classes);
                }
            }
        }
        let model = ModelSpec {
            format_version: FORMAT_VERSION,
            input: self.input,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Shortest input that leaves at least one output after every stage.
    pub fn min_input_length(&self) -> usize {
        self.layers.iter().rev().fold(1, |out, decl| match *decl {
            LayerDecl::Conv { kernel, stride, .. } => (out - 1) * stride + kernel,
            LayerDecl::Pool { window, stride, .. } => (out - 1) * stride.unwrap_or(window) + window,
            _ => out,
        })
    }
}

/// Inserts the flatten layer before the first dense layer and returns the
/// current head width.
fn flatten_once(layers: &mut Vec<LayerSpec>, width: &mut Option<usize>, dim: usize) -> usize {
    *width.get_or_insert_with(|| {
        layers.push(LayerSpec::Flatten(FlattenSpec { dim }));
        dim
    })
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out).max(1) as f32).sqrt()
}

fn uniform(rng: &mut impl Rng, limit: f32, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f32>> {
    let limit = glorot_limit(cols, rows);
    (0..rows).map(|_| uniform(rng, limit, cols)).collect()
}

/// Builds a seeded model from a layer spec string.
pub fn generate(spec: &str, seed: u64) -> Result<ModelSpec> {
    Architecture::parse(spec)?.instantiate(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn reference_model(seed: u64) -> ModelSpec {
    generate(REFERENCE_LAYERS, seed).expect("reference architecture is valid")
}

pub fn pool_free_model(seed: u64) -> ModelSpec {
    generate(POOL_FREE_LAYERS, seed).expect("pool-free architecture is valid")
}

/// Bounds for [`random_architecture`].
#[derive(Debug, Clone)]
pub struct RandomModelConfig {
    pub conv_stages: (usize, usize),
    pub kernel: (usize, usize),
    pub channels: (usize, usize),
    pub pool_probability: f64,
    pub pool_window: (usize, usize),
    pub dense_layers: (usize, usize),
    pub dense_units: (usize, usize),
    pub classes: (usize, usize),
    /// Samples added beyond the minimum valid input length.
    pub extra_length: (usize, usize),
    /// Architectures needing longer inputs are redrawn.
    pub max_min_length: usize,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self {
            conv_stages: (1, 4),
            kernel: (2, 16),
            channels: (1, 8),
            pool_probability: 0.5,
            pool_window: (2, 4),
            dense_layers: (0, 2),
            dense_units: (1, 16),
            classes: (2, 5),
            extra_length: (0, 64),
            max_min_length: 2048,
        }
    }
}

pub fn random_architecture(rng: &mut impl Rng, cfg: &RandomModelConfig) -> Architecture {
    let range = |rng: &mut _, (lo, hi): (usize, usize)| -> usize { Rng::random_range(rng, lo..=hi) };
    loop {
        let mut layers = Vec::new();
        for _ in 0..range(rng, cfg.conv_stages) {
            let kernel = range(rng, cfg.kernel);
            layers.push(LayerDecl::Conv {
                filters: range(rng, cfg.channels),
                kernel,
                stride: range(rng, (1, kernel)),
                activation: if rng.random_bool(0.7) {
                    Activation::Relu
                } else {
                    Activation::Identity
                },
            });
            if rng.random_bool(cfg.pool_probability) {
                let window = range(rng, cfg.pool_window);
                layers.push(LayerDecl::Pool {
                    kind: if rng.random_bool(0.5) {
                        PoolKind::Max
                    } else {
                        PoolKind::Average
                    },
                    window,
                    stride: rng.random_bool(0.5).then(|| range(rng, (1, window))),
                });
            }
        }
        for _ in 0..range(rng, cfg.dense_layers) {
            layers.push(LayerDecl::Dense {
                units: range(rng, cfg.dense_units),
                activation: Activation::Relu,
            });
        }
        layers.push(LayerDecl::Softmax {
            classes: range(rng, cfg.classes),
        });
        let mut arch = Architecture {
            input: InputSpec {
                length: 0,
                channels: range(rng, cfg.channels),
            },
            layers,
        };
        let min_len = arch.min_input_length();
        if min_len > cfg.max_min_length {
            continue;
        }
        arch.input.length = min_len + range(rng, cfg.extra_length);
        return arch;
    }
}

pub fn random_model(rng: &mut impl Rng, cfg: &RandomModelConfig) -> ModelSpec {
    random_architecture(rng, cfg)
        .instantiate(rng)
        .expect("random architectures satisfy the shape chain")
}

/// Uniform random input sequence, `rows × channels`.
pub fn random_input(rng: &mut impl Rng, rows: usize, channels: usize) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|_| (0..channels).map(|_| rng.random_range(-2.0f32..2.0)).collect())
        .collect()
}
