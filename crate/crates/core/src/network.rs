//! Streaming network: a cascade of conv/pool stages driven one sample at a
//! time, a feature collector, and a dense/softmax head run once the sequence
//! is complete. [`batch_forward`] is the whole-sequence baseline used as the
//! equivalence oracle.

use crate::error::{Error, Result};
use crate::layers::{output_count, Activation, ConvStage, PoolKind, PoolStage, Stage};
use crate::modelio::{LayerSpec, ModelSpec, Topology};

#[derive(Debug, Clone)]
struct DenseLayer {
    inputs: usize,
    /// Flat `[out][in]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

impl DenseLayer {
    fn new(weights: &[Vec<f32>], bias: &[f32], activation: Activation) -> Self {
        Self {
            inputs: weights.first().map_or(0, Vec::len),
            weights: weights.concat(),
            bias: bias.to_vec(),
            activation,
        }
    }

    fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| {
                let mut acc = 0.0f32;
                for (xi, wi) in x.iter().zip(row) {
                    acc += xi * wi;
                }
                self.activation.apply(acc + b)
            })
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Hidden dense layers followed by the softmax classifier.
#[derive(Debug, Clone)]
pub struct DenseHead {
    hidden: Vec<DenseLayer>,
    classifier: DenseLayer,
}

impl DenseHead {
    fn from_layers<'a>(layers: impl Iterator<Item = &'a LayerSpec>) -> Result<Self> {
        let mut hidden = Vec::new();
        for layer in layers {
            match layer {
                LayerSpec::Dense(d) => hidden.push(DenseLayer::new(&d.weights, &d.bias, d.activation)),
                LayerSpec::Softmax(s) => {
                    return Ok(Self {
                        hidden,
                        classifier: DenseLayer::new(&s.weights, &s.bias, Activation::Identity),
                    })
                }
                _ => {}
            }
        }
        Err(Error::validation("model must end with a softmax layer"))
    }

    pub fn classes(&self) -> usize {
        self.classifier.bias.len()
    }

    pub fn forward(&self, features: &[f32]) -> Vec<f32> {
        let mut x = features.to_vec();
        for layer in &self.hidden {
            x = layer.forward(&x);
        }
        softmax(&self.classifier.forward(&x))
    }
}

/// What one call to [`StreamingNetwork::step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepReport {
    /// Length of the prefix of stages that fired.
    pub stages_fired: usize,
    pub total_macs: u64,
}

#[derive(Debug, Clone)]
pub struct StreamingNetwork {
    stages: Vec<Stage>,
    collector: Vec<f32>,
    feature_dim: usize,
    input_channels: usize,
    head: DenseHead,
    samples_seen: usize,
    expected_len: usize,
}

impl StreamingNetwork {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let topo = model.topology()?;
        let mut stages = Vec::with_capacity(topo.stages.len());
        let mut channels = model.input.channels;
        for layer in &model.layers {
            match layer {
                LayerSpec::Conv1d(c) => {
                    stages.push(Stage::Conv(ConvStage::new(
                        channels,
                        c.filters,
                        c.kernel,
                        c.stride,
                        c.weights.iter().flatten().flatten().copied().collect(),
                        c.bias.clone(),
                        c.activation,
                    )?));
                    channels = c.filters;
                }
                LayerSpec::Maxpool(p) => stages.push(Stage::Pool(PoolStage::new(
                    channels,
                    p.window,
                    p.effective_stride(),
                    PoolKind::Max,
                )?)),
                LayerSpec::Avgpool(p) => stages.push(Stage::Pool(PoolStage::new(
                    channels,
                    p.window,
                    p.effective_stride(),
                    PoolKind::Average,
                )?)),
                _ => break,
            }
        }
        Ok(Self {
            stages,
            collector: Vec::with_capacity(topo.feature_dim),
            feature_dim: topo.feature_dim,
            input_channels: model.input.channels,
            head: DenseHead::from_layers(model.layers.iter())?,
            samples_seen: 0,
            expected_len: model.input.length,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn features(&self) -> &[f32] {
        &self.collector
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn expected_len(&self) -> usize {
        self.expected_len
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// Pushes one sample through the cascade. Stage `i + 1` only runs when
    /// stage `i` fired; the last stage's outputs go to the feature collector.
    pub fn step(&mut self, sample: &[f32]) -> Result<StepReport> {
        if sample.len() != self.input_channels {
            return Err(Error::shape(format!(
                "sample has {} channels, network expects {}",
                sample.len(),
                self.input_channels
            )));
        }
        if self.samples_seen >= self.expected_len {
            return Err(Error::SequenceOverrun {
                expected: self.expected_len,
            });
        }
        self.samples_seen += 1;

        let mut report = StepReport::default();
        let mut carried: Option<Vec<f32>> = None;
        for stage in &mut self.stages {
            let input = carried.as_deref().unwrap_or(sample);
            let outcome = stage.step(input)?;
            report.total_macs += outcome.mac_count;
            match outcome.output {
                Some(y) => {
                    report.stages_fired += 1;
                    carried = Some(y);
                }
                None => return Ok(report),
            }
        }
        let out = carried.as_deref().unwrap_or(sample);
        debug_assert!(self.collector.len() + out.len() <= self.feature_dim);
        self.collector.extend_from_slice(out);
        Ok(report)
    }

    /// Runs the head on the collected features.
    pub fn finalize(&self) -> Result<Vec<f32>> {
        if self.samples_seen < self.expected_len {
            return Err(Error::IncompleteSequence {
                seen: self.samples_seen,
                expected: self.expected_len,
            });
        }
        debug_assert_eq!(self.collector.len(), self.feature_dim);
        Ok(self.head.forward(&self.collector))
    }

    pub fn reset(&mut self) {
        self.stages.iter_mut().for_each(Stage::reset);
        self.collector.clear();
        self.samples_seen = 0;
    }

    /// Steps through a whole sequence and finalizes. Resets first.
    pub fn run(&mut self, input: &[Vec<f32>]) -> Result<StreamRun> {
        self.reset();
        if input.len() != self.expected_len {
            return Err(Error::shape(format!(
                "expected {} samples, got {}",
                self.expected_len,
                input.len()
            )));
        }
        let steps = input
            .iter()
            .map(|sample| self.step(sample))
            .collect::<Result<Vec<_>>>()?;
        Ok(StreamRun {
            probabilities: self.finalize()?,
            features: self.collector.clone(),
            steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRun {
    pub probabilities: Vec<f32>,
    pub features: Vec<f32>,
    pub steps: Vec<StepReport>,
}

impl StreamRun {
    pub fn total_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.total_macs).sum()
    }
}

/// Whole-sequence evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub features: Vec<f32>,
    pub probabilities: Vec<f32>,
    /// Conv and pool work, counted like the streaming stages.
    pub stage_macs: u64,
    /// Number of outputs each stage produced.
    pub stage_outputs: Vec<usize>,
}

/// Evaluates every layer over the fully materialized sequence with plain
/// nested loops. `input` is `rows × channels`.
pub fn batch_forward(model: &ModelSpec, input: &[Vec<f32>]) -> Result<BatchOutput> {
    let topo: Topology = model.topology()?;
    if input.len() != model.input.length {
        return Err(Error::shape(format!(
            "expected {} samples, got {}",
            model.input.length,
            input.len()
        )));
    }
    if let Some((row, r)) = input
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != model.input.channels)
    {
        return Err(Error::shape(format!(
            "row {row} has {} channels, expected {}",
            r.len(),
            model.input.channels
        )));
    }

    // seq[t][c]
    let mut seq: Vec<Vec<f32>> = input.to_vec();
    let mut stage_macs = 0u64;
    let mut stage_outputs = Vec::new();
    let mut head_start = 0;
    for (i, layer) in model.layers.iter().enumerate() {
        let channels = seq.first().map_or(0, Vec::len);
        seq = match layer {
            LayerSpec::Conv1d(c) => {
                let n_out = output_count(seq.len(), c.kernel, c.stride);
                let mut out = vec![vec![0.0f32; c.filters]; n_out];
                for (t, row) in out.iter_mut().enumerate() {
                    let start = t * c.stride;
                    for f in 0..c.filters {
                        let mut acc = 0.0f32;
                        for ch in 0..channels {
                            for j in 0..c.kernel {
                                acc += seq[start + j][ch] * c.weights[f][ch][j];
                            }
                        }
                        row[f] = c.activation.apply(acc + c.bias[f]);
                    }
                }
                stage_macs += (n_out * c.filters * channels * c.kernel) as u64;
                stage_outputs.push(n_out);
                out
            }
            LayerSpec::Maxpool(p) | LayerSpec::Avgpool(p) => {
                let stride = p.effective_stride();
                let n_out = output_count(seq.len(), p.window, stride);
                let mut out = vec![vec![0.0f32; channels]; n_out];
                for (t, row) in out.iter_mut().enumerate() {
                    let window = &seq[t * stride..t * stride + p.window];
                    for (ch, v) in row.iter_mut().enumerate() {
                        *v = if matches!(layer, LayerSpec::Maxpool(_)) {
                            window.iter().map(|x| x[ch]).fold(f32::NEG_INFINITY, f32::max)
                        } else {
                            let mut sum = 0.0f32;
                            for x in window {
                                sum += x[ch];
                            }
                            sum / p.window as f32
                        };
                    }
                }
                stage_macs += (n_out * channels * p.window) as u64;
                stage_outputs.push(n_out);
                out
            }
            _ => {
                head_start = i;
                break;
            }
        };
    }

    let features: Vec<f32> = seq.concat();
    debug_assert_eq!(features.len(), topo.feature_dim);

    let mut x = features.clone();
    let mut logits = Vec::new();
    for layer in &model.layers[head_start..] {
        let (weights, bias, act) = match layer {
            LayerSpec::Dense(d) => (&d.weights, &d.bias, Some(d.activation)),
            LayerSpec::Softmax(s) => (&s.weights, &s.bias, None),
            _ => continue,
        };
        let mut y = vec![0.0f32; bias.len()];
        for (o, yo) in y.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (k, xk) in x.iter().enumerate() {
                acc += xk * weights[o][k];
            }
            let z = acc + bias[o];
            *yo = act.map_or(z, |a| a.apply(z));
        }
        match act {
            Some(_) => x = y,
            None => logits = y,
        }
    }

    Ok(BatchOutput {
        features,
        probabilities: softmax(&logits),
        stage_macs,
        stage_outputs,
    })
}

pub fn batch_infer(model: &ModelSpec, input: &[Vec<f32>]) -> Result<Vec<f32>> {
    batch_forward(model, input).map(|out| out.probabilities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate, pool_free_model, random_input, reference_model};
    use crate::modelio::{FlattenSpec, InputSpec, SoftmaxSpec, FORMAT_VERSION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_model() -> ModelSpec {
        let mut model = generate("input:6x1,conv:1:4:2:identity,softmax:2", 0).unwrap();
        if let LayerSpec::Conv1d(c) = &mut model.layers[0] {
            c.weights = vec![vec![vec![1.0, 0.0, 0.0, 1.0]]];
            c.bias = vec![0.0];
        }
        if let LayerSpec::Softmax(s) = &mut model.layers[2] {
            s.weights = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            s.bias = vec![0.0, 0.0];
        }
        model
    }

    fn ramp(n: usize) -> Vec<Vec<f32>> {
        (1..=n).map(|v| vec![v as f32]).collect()
    }

    #[test]
    fn hand_computed_features() {
        let model = hand_model();
        let batch = batch_forward(&model, &ramp(6)).unwrap();
        assert_eq!(batch.features, vec![5.0, 9.0]);
        // identity head: probabilities are the softmax of the features
        assert_eq!(batch.probabilities, softmax(&[5.0, 9.0]));

        let mut net = StreamingNetwork::new(&model).unwrap();
        let run = net.run(&ramp(6)).unwrap();
        assert_eq!(run.features, vec![5.0, 9.0]);
        assert_eq!(run.probabilities, batch.probabilities);
    }

    #[test]
    fn warmup_steps_do_no_work() {
        let model = reference_model(5);
        let mut net = StreamingNetwork::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sample in random_input(&mut rng, 7, 3) {
            assert_eq!(net.step(&sample).unwrap(), StepReport::default());
        }
    }

    #[test]
    fn pool_free_staircase() {
        let model = pool_free_model(2);
        let mut net = StreamingNetwork::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run = net.run(&random_input(&mut rng, 460, 3)).unwrap();
        let fired: Vec<usize> = run.steps.iter().map(|s| s.stages_fired).collect();
        assert!(fired.windows(2).all(|w| w[0] <= w[1]));
        // stage k first fires at sample 8 + 7k
        for (k, &first) in [8usize, 15, 22, 29].iter().enumerate() {
            assert_eq!(fired[first - 2], k);
            assert_eq!(fired[first - 1], k + 1);
        }
        assert!(fired[28..].iter().all(|&f| f == 4));
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let model = ModelSpec {
            format_version: FORMAT_VERSION,
            input: InputSpec {
                length: 4,
                channels: 2,
            },
            layers: vec![
                LayerSpec::Flatten(FlattenSpec { dim: 8 }),
                LayerSpec::Softmax(SoftmaxSpec {
                    classes: 2,
                    weights: vec![vec![0.0; 8]; 2],
                    bias: vec![0.0; 2],
                }),
            ],
        };
        let mut net = StreamingNetwork::new(&model).unwrap();
        let input = vec![vec![1.0, -1.0]; 4];
        assert_eq!(net.run(&input).unwrap().probabilities, vec![0.5, 0.5]);
        assert_eq!(batch_infer(&model, &input).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn lifecycle_errors() {
        let model = hand_model();
        let mut net = StreamingNetwork::new(&model).unwrap();
        assert!(matches!(net.step(&[1.0, 2.0]), Err(Error::Shape(_))));
        assert_eq!(net.samples_seen(), 0);
        net.step(&[1.0]).unwrap();
        assert!(matches!(
            net.finalize(),
            Err(Error::IncompleteSequence { seen: 1, expected: 6 })
        ));
        for v in 2..=6 {
            net.step(&[v as f32]).unwrap();
        }
        assert!(net.finalize().is_ok());
        assert!(matches!(
            net.step(&[7.0]),
            Err(Error::SequenceOverrun { expected: 6 })
        ));
        assert!(matches!(batch_infer(&model, &ramp(5)), Err(Error::Shape(_))));
    }

    #[test]
    fn reset_makes_runs_independent() {
        let model = reference_model(9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_input(&mut rng, 460, 3);
        let b = random_input(&mut rng, 460, 3);

        let mut fresh = StreamingNetwork::new(&model).unwrap();
        fresh.reset();
        let first = fresh.run(&a).unwrap();

        let mut net = StreamingNetwork::new(&model).unwrap();
        for _ in 0..3 {
            assert_eq!(net.run(&a).unwrap(), first);
        }
        let alone_b = StreamingNetwork::new(&model).unwrap().run(&b).unwrap();
        // part of a, then reset, then b
        net.reset();
        for sample in &a[..200] {
            net.step(sample).unwrap();
        }
        net.reset();
        for sample in &b {
            net.step(sample).unwrap();
        }
        assert_eq!(net.finalize().unwrap(), alone_b.probabilities);
    }

    #[test]
    fn reference_streaming_matches_batch() {
        let model = reference_model(13);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let input = random_input(&mut rng, 460, 3);
        let run = StreamingNetwork::new(&model).unwrap().run(&input).unwrap();
        let batch = batch_forward(&model, &input).unwrap();
        assert_eq!(run.features, batch.features);
        assert_eq!(run.total_macs(), batch.stage_macs);
        let sum: f32 = run.probabilities.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
        for (p, q) in run.probabilities.iter().zip(&batch.probabilities) {
            assert!((p - q).abs() <= 1e-5 * q.abs().max(1e-30) || (p - q).abs() <= 1e-7);
        }
    }
}
