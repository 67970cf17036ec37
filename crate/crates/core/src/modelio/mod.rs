//! Model document format, validation, and static accounting.
//!
//! A model is a JSON document:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "input": { "length": 460, "channels": 3 },
//!   "layers": [
//!     { "type": "conv1d", "filters": 8, "kernel": 8, "stride": 1,
//!       "activation": "relu", "weights": [[[...]]], "bias": [...] },
//!     { "type": "maxpool", "window": 3 },
//!     { "type": "flatten", "dim": 16 },
//!     { "type": "dense", "units": 16, "activation": "relu", "weights": [[...]], "bias": [...] },
//!     { "type": "softmax", "classes": 2, "weights": [[...]], "bias": [...] }
//!   ]
//! }
//! ```
//!
//! Conv weights nest as `[filter][channel][tap]`, dense and softmax weights as
//! `[out][in]`. Layers must appear as conv/pool stages, one `flatten`, any
//! number of `dense` layers, then a final `softmax`.

mod plan;

pub use plan::{plan_memory, plan_memory_at, BufferEntry, MemoryPlan, PlanMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{output_count, Activation, PoolKind};

pub const FORMAT_VERSION: u32 = 1;
pub const BYTES_PER_SCALAR: usize = std::mem::size_of::<f32>();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub format_version: u32,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub length: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv1d(ConvSpec),
    Maxpool(PoolSpec),
    Avgpool(PoolSpec),
    Flatten(FlattenSpec),
    Dense(DenseSpec),
    Softmax(SoftmaxSpec),
}

fn default_stride() -> usize {
    1
}

fn default_padding() -> String {
    "valid".to_owned()
}

fn is_valid_padding(p: &str) -> bool {
    p == "valid"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub activation: Activation,
    #[serde(default = "default_padding", skip_serializing_if = "is_valid_padding")]
    pub padding: String,
    pub weights: Vec<Vec<Vec<f32>>>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub window: usize,
    /// Defaults to `window` (non-overlapping).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

impl PoolSpec {
    pub fn effective_stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlattenSpec {
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub units: usize,
    pub activation: Activation,
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxSpec {
    pub classes: usize,
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Conv,
    Pool(PoolKind),
}

/// Propagated shape of one conv/pool stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub name: String,
    pub kind: StageKind,
    pub in_len: usize,
    pub out_len: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub window: usize,
    pub stride: usize,
}

impl StageShape {
    pub fn macs_per_fire(&self) -> u64 {
        (self.out_channels_factor() * self.in_channels * self.window) as u64
    }

    fn out_channels_factor(&self) -> usize {
        match self.kind {
            StageKind::Conv => self.out_channels,
            StageKind::Pool(_) => 1,
        }
    }
}

/// Shapes of every layer after validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    pub input: InputSpec,
    pub stages: Vec<StageShape>,
    pub feature_dim: usize,
    /// `(in, out)` of each dense layer, softmax last.
    pub head: Vec<(usize, usize)>,
}

impl Topology {
    pub fn classes(&self) -> usize {
        self.head.last().map_or(0, |&(_, out)| out)
    }

    /// Width of each sample entering the feature collector.
    pub fn final_channels(&self) -> usize {
        self.stages
            .last()
            .map_or(self.input.channels, |s| s.out_channels)
    }
}

/// Parses and validates a model document.
pub fn load_model(bytes: &[u8]) -> Result<ModelSpec> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let model: ModelSpec =
        serde_json::from_value(value).map_err(|e| Error::Validation(e.to_string()))?;
    model.topology()?;
    Ok(model)
}

pub fn load_model_file(path: impl AsRef<std::path::Path>) -> Result<ModelSpec> {
    load_model(&std::fs::read(path)?)
}

impl ModelSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology().map(|_| ())
    }

    /// Same model with a different sequence length. The result may not validate.
    pub fn with_input_length(&self, length: usize) -> ModelSpec {
        let mut model = self.clone();
        model.input.length = length;
        model
    }

    /// Validates the layer chain and propagates shapes through it.
    pub fn topology(&self) -> Result<Topology> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported format_version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        if self.input.length == 0 || self.input.channels == 0 {
            return Err(Error::validation("input length and channels must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::validation("model has no layers"));
        }

        let (stages, consumed) = self.stage_shapes(self.input.length)?;
        let (len, channels) = stages
            .last()
            .map_or((self.input.length, self.input.channels), |s| (s.out_len, s.out_channels));
        let mut layers = self.layers.iter().enumerate().skip(consumed);

        let feature_dim = len * channels;
        match layers.next() {
            Some((_, LayerSpec::Flatten(f))) if f.dim == feature_dim => {}
            Some((i, LayerSpec::Flatten(f))) => {
                return Err(Error::validation(format!(
                    "layer {i}: flatten declares {} but propagated shape is {len}x{channels} = {feature_dim}",
                    f.dim
                )))
            }
            Some((i, _)) => {
                return Err(Error::validation(format!(
                    "layer {i}: expected flatten after the conv/pool stages"
                )))
            }
            None => return Err(Error::validation("missing flatten layer")),
        }

        let mut head = Vec::new();
        let mut width = feature_dim;
        let mut seen_softmax = false;
        for (i, layer) in layers {
            if seen_softmax {
                return Err(Error::validation(format!(
                    "layer {i}: softmax must be the final layer"
                )));
            }
            let (units, weights, bias) = match layer {
                LayerSpec::Dense(d) => (d.units, &d.weights, &d.bias),
                LayerSpec::Softmax(s) => {
                    seen_softmax = true;
                    (s.classes, &s.weights, &s.bias)
                }
                other => {
                    return Err(Error::validation(format!(
                        "layer {i}: {} is not allowed after flatten",
                        kind_name(other)
                    )))
                }
            };
            check_matrix(i, units, width, weights, bias)?;
            head.push((width, units));
            width = units;
        }
        if !seen_softmax {
            return Err(Error::validation("model must end with a softmax layer"));
        }

        Ok(Topology {
            input: self.input,
            stages,
            feature_dim,
            head,
        })
    }
}

impl ModelSpec {
    /// Propagates the leading conv/pool stages over a sequence of `length`
    /// samples. Returns the shapes and the number of layers consumed.
    pub fn stage_shapes(&self, length: usize) -> Result<(Vec<StageShape>, usize)> {
        let mut len = length;
        let mut channels = self.input.channels;
        let mut stages = Vec::new();
        let (mut convs, mut pools) = (0, 0);

        for (i, layer) in self.layers.iter().enumerate().take_while(|(_, l)| is_stage(l)) {
            let (name, kind, window, stride, out_channels) = match layer {
                LayerSpec::Conv1d(c) => {
                    check_conv(i, c, channels)?;
                    convs += 1;
                    (format!("conv{convs}"), StageKind::Conv, c.kernel, c.stride, c.filters)
                }
                LayerSpec::Maxpool(p) | LayerSpec::Avgpool(p) => {
                    let kind = if matches!(layer, LayerSpec::Maxpool(_)) {
                        PoolKind::Max
                    } else {
                        PoolKind::Average
                    };
                    let stride = p.effective_stride();
                    if p.window == 0 || stride == 0 {
                        return Err(Error::validation(format!(
                            "layer {i}: pool window and stride must be positive"
                        )));
                    }
                    if stride > p.window {
                        return Err(Error::validation(format!(
                            "layer {i}: pool stride {stride} exceeds window {}",
                            p.window
                        )));
                    }
                    pools += 1;
                    let prefix = if kind == PoolKind::Max { "maxpool" } else { "avgpool" };
                    (format!("{prefix}{pools}"), StageKind::Pool(kind), p.window, stride, channels)
                }
                _ => unreachable!(),
            };
            let out_len = output_count(len, window, stride);
            if out_len == 0 {
                return Err(Error::validation(format!(
                    "layer {i} ({name}): input length {len} is shorter than window {window}"
                )));
            }
            stages.push(StageShape {
                name,
                kind,
                in_len: len,
                out_len,
                in_channels: channels,
                out_channels,
                window,
                stride,
            });
            len = out_len;
            channels = out_channels;
        }
        let consumed = stages.len();
        Ok((stages, consumed))
    }
}

fn is_stage(layer: &LayerSpec) -> bool {
    matches!(
        layer,
        LayerSpec::Conv1d(_) | LayerSpec::Maxpool(_) | LayerSpec::Avgpool(_)
    )
}

fn kind_name(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Conv1d(_) => "conv1d",
        LayerSpec::Maxpool(_) => "maxpool",
        LayerSpec::Avgpool(_) => "avgpool",
        LayerSpec::Flatten(_) => "flatten",
        LayerSpec::Dense(_) => "dense",
        LayerSpec::Softmax(_) => "softmax",
    }
}

fn check_conv(i: usize, c: &ConvSpec, channels: usize) -> Result<()> {
    if c.padding != "valid" {
        return Err(Error::validation(format!(
            "layer {i}: padding {:?} is unsupported, only \"valid\"",
            c.padding
        )));
    }
    if c.filters == 0 || c.kernel == 0 || c.stride == 0 {
        return Err(Error::validation(format!(
            "layer {i}: conv filters, kernel and stride must be positive"
        )));
    }
    if c.stride > c.kernel {
        return Err(Error::validation(format!(
            "layer {i}: conv stride {} exceeds kernel {}",
            c.stride, c.kernel
        )));
    }
    if c.weights.len() != c.filters {
        return Err(Error::validation(format!(
            "layer {i}: conv weights have {} filters, expected {}",
            c.weights.len(),
            c.filters
        )));
    }
    for (f, per_filter) in c.weights.iter().enumerate() {
        if per_filter.len() != channels {
            return Err(Error::validation(format!(
                "layer {i}: conv filter {f} has {} channels, expected {channels}",
                per_filter.len()
            )));
        }
        if let Some((ch, taps)) = per_filter.iter().enumerate().find(|(_, t)| t.len() != c.kernel) {
            return Err(Error::validation(format!(
                "layer {i}: conv filter {f} channel {ch} has {} taps, expected {}",
                taps.len(),
                c.kernel
            )));
        }
    }
    if c.bias.len() != c.filters {
        return Err(Error::validation(format!(
            "layer {i}: conv bias has {} entries, expected {}",
            c.bias.len(),
            c.filters
        )));
    }
    Ok(())
}

fn check_matrix(
    i: usize,
    units: usize,
    width: usize,
    weights: &[Vec<f32>],
    bias: &[f32],
) -> Result<()> {
    if units == 0 {
        return Err(Error::validation(format!("layer {i}: zero output units")));
    }
    if weights.len() != units {
        return Err(Error::validation(format!(
            "layer {i}: weights have {} rows, expected {units}",
            weights.len()
        )));
    }
    if let Some((r, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::validation(format!(
            "layer {i}: weight row {r} has {} entries, expected {width}",
            row.len()
        )));
    }
    if bias.len() != units {
        return Err(Error::validation(format!(
            "layer {i}: bias has {} entries, expected {units}",
            bias.len()
        )));
    }
    Ok(())
}

/// Trainable parameters: conv and dense weights plus biases.
pub fn param_count(model: &ModelSpec) -> usize {
    let mut channels = model.input.channels;
    let mut width = 0;
    let mut total = 0;
    for layer in &model.layers {
        match layer {
            LayerSpec::Conv1d(c) => {
                total += c.filters * channels * c.kernel + c.filters;
                channels = c.filters;
            }
            LayerSpec::Flatten(f) => width = f.dim,
            LayerSpec::Dense(d) => {
                total += d.units * width + d.units;
                width = d.units;
            }
            LayerSpec::Softmax(s) => {
                total += s.classes * width + s.classes;
                width = s.classes;
            }
            LayerSpec::Maxpool(_) | LayerSpec::Avgpool(_) => {}
        }
    }
    total
}

pub fn weight_storage_bytes(model: &ModelSpec) -> usize {
    param_count(model) * BYTES_PER_SCALAR
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCost {
    pub name: String,
    pub macs_per_fire: u64,
    pub fires: usize,
    pub total_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MacCost {
    pub stages: Vec<StageCost>,
    /// Conv and pool work over one sequence.
    pub stage_total: u64,
    /// Dense and softmax work run once at end of sequence.
    pub head_total: u64,
}

pub fn mac_cost_model(model: &ModelSpec) -> Result<MacCost> {
    let topo = model.topology()?;
    let stages: Vec<StageCost> = topo
        .stages
        .iter()
        .map(|s| StageCost {
            name: s.name.clone(),
            macs_per_fire: s.macs_per_fire(),
            fires: s.out_len,
            total_macs: s.macs_per_fire() * s.out_len as u64,
        })
        .collect();
    Ok(MacCost {
        stage_total: stages.iter().map(|s| s.total_macs).sum(),
        head_total: topo.head.iter().map(|&(i, o)| (i * o) as u64).sum(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_model, reference_model, RandomModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_conv() -> ModelSpec {
        ModelSpec {
            format_version: 1,
            input: InputSpec {
                length: 6,
                channels: 1,
            },
            layers: vec![
                LayerSpec::Conv1d(ConvSpec {
                    filters: 1,
                    kernel: 4,
                    stride: 2,
                    activation: Activation::Identity,
                    padding: default_padding(),
                    weights: vec![vec![vec![1.0, 0.0, 0.0, 1.0]]],
                    bias: vec![0.0],
                }),
                LayerSpec::Flatten(FlattenSpec { dim: 2 }),
                LayerSpec::Softmax(SoftmaxSpec {
                    classes: 2,
                    weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    bias: vec![0.0, 0.0],
                }),
            ],
        }
    }

    /// Counts every number stored in the layer arrays.
    fn stored_scalars(model: &ModelSpec) -> usize {
        model
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv1d(c) => {
                    c.weights.iter().flatten().map(Vec::len).sum::<usize>() + c.bias.len()
                }
                LayerSpec::Dense(d) => d.weights.iter().map(Vec::len).sum::<usize>() + d.bias.len(),
                LayerSpec::Softmax(s) => {
                    s.weights.iter().map(Vec::len).sum::<usize>() + s.bias.len()
                }
                _ => 0,
            })
            .sum()
    }

    #[test]
    fn reference_model_accounting() {
        let model = reference_model(0);
        let topo = model.topology().unwrap();
        assert_eq!(topo.stages.len(), 8);
        assert_eq!(topo.feature_dim, 16);
        assert_eq!(param_count(&model), 2338);
        assert_eq!(weight_storage_bytes(&model), 9352);
        assert_eq!(stored_scalars(&model), 2338);
    }

    #[test]
    fn reference_mac_costs() {
        let cost = mac_cost_model(&reference_model(0)).unwrap();
        assert_eq!(cost.stages[0].macs_per_fire, 192);
        assert_eq!(cost.stages[0].total_macs, 86976);
        let per_seq: Vec<usize> = cost.stages.iter().map(|s| s.fires).collect();
        assert_eq!(per_seq, vec![453, 151, 144, 48, 41, 13, 6, 2]);
    }

    #[test]
    fn single_conv_param_count() {
        let mut model = tiny_conv();
        // drop the head's contribution for the bare-conv count
        let conv_only = match &model.layers[0] {
            LayerSpec::Conv1d(c) => c.filters * c.kernel + c.filters,
            _ => unreachable!(),
        };
        assert_eq!(conv_only, 5);
        assert_eq!(param_count(&model), 5 + 6);
        model.layers.truncate(2);
        assert_eq!(param_count(&model), 5);
    }

    #[test]
    fn head_only_storage() {
        let model = ModelSpec {
            format_version: 1,
            input: InputSpec {
                length: 16,
                channels: 1,
            },
            layers: vec![
                LayerSpec::Flatten(FlattenSpec { dim: 16 }),
                LayerSpec::Softmax(SoftmaxSpec {
                    classes: 2,
                    weights: vec![vec![0.0; 16]; 2],
                    bias: vec![0.0; 2],
                }),
            ],
        };
        model.validate().unwrap();
        assert_eq!(weight_storage_bytes(&model), 136);
    }

    #[test]
    fn rejects_bad_documents() {
        let mut model = tiny_conv();
        if let LayerSpec::Conv1d(c) = &mut model.layers[0] {
            c.stride = 9;
        }
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        let mut model = tiny_conv();
        if let LayerSpec::Conv1d(c) = &mut model.layers[0] {
            c.weights[0][0].pop();
        }
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        let mut model = tiny_conv();
        if let LayerSpec::Conv1d(c) = &mut model.layers[0] {
            c.padding = "same".into();
        }
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        let mut model = tiny_conv();
        model.layers.clear();
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        let mut model = tiny_conv();
        model.layers[1] = LayerSpec::Flatten(FlattenSpec { dim: 3 });
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        let mut model = tiny_conv();
        model.layers.pop();
        assert!(matches!(model.validate(), Err(Error::Validation(_))));

        // window longer than the sequence
        let model = tiny_conv().with_input_length(3);
        assert!(matches!(model.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_and_schema_errors_are_distinct() {
        assert!(matches!(load_model(b"{\"format_version\": 1,"), Err(Error::Parse(_))));

        let mut doc: serde_json::Value = serde_json::from_str(&tiny_conv().to_json()).unwrap();
        doc["layers"][0]["dilation"] = 2.into();
        let err = load_model(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");

        let mut doc: serde_json::Value = serde_json::from_str(&tiny_conv().to_json()).unwrap();
        doc["extra"] = true.into();
        assert!(matches!(load_model(doc.to_string().as_bytes()), Err(Error::Validation(_))));

        let mut doc: serde_json::Value = serde_json::from_str(&tiny_conv().to_json()).unwrap();
        doc["layers"][1]["type"] = "lstm".into();
        assert!(matches!(load_model(doc.to_string().as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn pool_stride_defaults_to_window() {
        let doc = r#"{"format_version":1,"input":{"length":9,"channels":1},"layers":[
            {"type":"maxpool","window":3},
            {"type":"flatten","dim":3},
            {"type":"softmax","classes":1,"weights":[[1,1,1]],"bias":[0]}]}"#;
        let model = load_model(doc.as_bytes()).unwrap();
        let topo = model.topology().unwrap();
        assert_eq!((topo.stages[0].stride, topo.stages[0].out_len), (3, 3));
    }

    #[test]
    fn random_models_round_trip_and_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let model = random_model(&mut rng, &RandomModelConfig::default());
            let back = load_model(model.to_json().as_bytes()).unwrap();
            assert_eq!(back, model);
            assert_eq!(param_count(&model), stored_scalars(&model));
        }
    }
}
