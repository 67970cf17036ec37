//! Streaming convolution and pooling stages.
//!
//! Each stage owns one ring buffer per input channel, sized to its window.
//! A sample is pushed to every channel at once; when the buffers fill the
//! stage evaluates one output vector and strides all buffers together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ringbuf::StridedRingBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[serde(alias = "linear")]
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Average,
}

/// Result of pushing one sample into a stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    pub output: Option<Vec<f32>>,
    /// Multiply-accumulates performed; pooling reports one op per window element.
    pub mac_count: u64,
}

impl StepOutcome {
    #[inline]
    pub fn fired(&self) -> bool {
        self.output.is_some()
    }

    fn idle() -> Self {
        Self::default()
    }
}

/// Number of valid windows of length `window` stepping by `stride` over `len` samples.
pub fn output_count(len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

fn channel_buffers(channels: usize, capacity: usize) -> Vec<StridedRingBuffer> {
    (0..channels)
        .map(|_| StridedRingBuffer::new(capacity))
        .collect()
}

/// Pushes one multi-channel sample; returns whether the window is now full.
fn push_sample(buffers: &mut [StridedRingBuffer], sample: &[f32], stage: &str) -> Result<bool> {
    if sample.len() != buffers.len() {
        return Err(Error::shape(format!(
            "{stage} expects {} channels, sample has {}",
            buffers.len(),
            sample.len()
        )));
    }
    for (buf, &v) in buffers.iter_mut().zip(sample) {
        buf.write(v)?;
    }
    Ok(buffers[0].is_full())
}

fn stride_all(buffers: &mut [StridedRingBuffer], stride: usize) -> Result<()> {
    for buf in buffers {
        buf.stride(stride)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConvStage {
    in_channels: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    /// Flat `[filter][in_channel][tap]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
    buffers: Vec<StridedRingBuffer>,
}

impl ConvStage {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
            return Err(Error::validation(
                "conv channels, filters, kernel and stride must be positive",
            ));
        }
        if stride > kernel {
            return Err(Error::validation(format!(
                "conv stride {stride} exceeds kernel {kernel}"
            )));
        }
        if weights.len() != filters * in_channels * kernel {
            return Err(Error::validation(format!(
                "conv weights hold {} values, expected {filters}x{in_channels}x{kernel}",
                weights.len()
            )));
        }
        if bias.len() != filters {
            return Err(Error::validation(format!(
                "conv bias holds {} values, expected {filters}",
                bias.len()
            )));
        }
        Ok(Self {
            in_channels,
            filters,
            kernel,
            stride,
            weights,
            bias,
            activation,
            buffers: channel_buffers(in_channels, kernel),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn buffers(&self) -> &[StridedRingBuffer] {
        &self.buffers
    }

    pub fn macs_per_fire(&self) -> u64 {
        (self.filters * self.in_channels * self.kernel) as u64
    }

    pub fn step(&mut self, sample: &[f32]) -> Result<StepOutcome> {
        if !push_sample(&mut self.buffers, sample, "conv stage")? {
            return Ok(StepOutcome::idle());
        }
        let output = self.convolve();
        stride_all(&mut self.buffers, self.stride)?;
        Ok(StepOutcome {
            output: Some(output),
            mac_count: self.macs_per_fire(),
        })
    }

    fn convolve(&self) -> Vec<f32> {
        let per_filter = self.in_channels * self.kernel;
        self.weights
            .chunks_exact(per_filter)
            .zip(&self.bias)
            .map(|(filter, &b)| {
                let mut acc = 0.0f32;
                for (buf, taps) in self.buffers.iter().zip(filter.chunks_exact(self.kernel)) {
                    for (x, &w) in buf.iter().zip(taps) {
                        acc += x * w;
                    }
                }
                self.activation.apply(acc + b)
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.buffers.iter_mut().for_each(StridedRingBuffer::clear);
    }
}

#[derive(Debug, Clone)]
pub struct PoolStage {
    channels: usize,
    window: usize,
    stride: usize,
    kind: PoolKind,
    buffers: Vec<StridedRingBuffer>,
}

impl PoolStage {
    pub fn new(channels: usize, window: usize, stride: usize, kind: PoolKind) -> Result<Self> {
        if channels == 0 || window == 0 || stride == 0 {
            return Err(Error::validation(
                "pool channels, window and stride must be positive",
            ));
        }
        if stride > window {
            return Err(Error::validation(format!(
                "pool stride {stride} exceeds window {window}"
            )));
        }
        Ok(Self {
            channels,
            window,
            stride,
            kind,
            buffers: channel_buffers(channels, window),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn kind(&self) -> PoolKind {
        self.kind
    }

    pub fn buffers(&self) -> &[StridedRingBuffer] {
        &self.buffers
    }

    pub fn macs_per_fire(&self) -> u64 {
        (self.channels * self.window) as u64
    }

    pub fn step(&mut self, sample: &[f32]) -> Result<StepOutcome> {
        if !push_sample(&mut self.buffers, sample, "pool stage")? {
            return Ok(StepOutcome::idle());
        }
        let output = self.buffers.iter().map(|buf| self.pool(buf)).collect();
        stride_all(&mut self.buffers, self.stride)?;
        Ok(StepOutcome {
            output: Some(output),
            mac_count: self.macs_per_fire(),
        })
    }

    fn pool(&self, buf: &StridedRingBuffer) -> f32 {
        match self.kind {
            PoolKind::Max => buf.iter().fold(f32::NEG_INFINITY, f32::max),
            PoolKind::Average => {
                let mut sum = 0.0f32;
                for x in buf.iter() {
                    sum += x;
                }
                sum / self.window as f32
            }
        }
    }

    pub fn reset(&mut self) {
        self.buffers.iter_mut().for_each(StridedRingBuffer::clear);
    }
}

/// One stage of the streaming cascade.
#[derive(Debug, Clone)]
pub enum Stage {
    Conv(ConvStage),
    Pool(PoolStage),
}

impl Stage {
    pub fn step(&mut self, sample: &[f32]) -> Result<StepOutcome> {
        match self {
            Stage::Conv(c) => c.step(sample),
            Stage::Pool(p) => p.step(sample),
        }
    }

    pub fn reset(&mut self) {
        match self {
            Stage::Conv(c) => c.reset(),
            Stage::Pool(p) => p.reset(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Stage::Conv(c) => c.in_channels,
            Stage::Pool(p) => p.channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Stage::Conv(c) => c.filters,
            Stage::Pool(p) => p.channels,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Stage::Conv(c) => c.kernel,
            Stage::Pool(p) => p.window,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Stage::Conv(c) => c.stride,
            Stage::Pool(p) => p.stride,
        }
    }

    pub fn macs_per_fire(&self) -> u64 {
        match self {
            Stage::Conv(c) => c.macs_per_fire(),
            Stage::Pool(p) => p.macs_per_fire(),
        }
    }

    pub fn buffers(&self) -> &[StridedRingBuffer] {
        match self {
            Stage::Conv(c) => &c.buffers,
            Stage::Pool(p) => &p.buffers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct sliding-window evaluation over a fully stored sequence,
    /// `input[t][c]`, returning `out[t][f]`.
    fn direct_conv(
        input: &[Vec<f32>],
        filters: usize,
        kernel: usize,
        stride: usize,
        weights: &[f32],
        bias: &[f32],
        act: Activation,
    ) -> Vec<Vec<f32>> {
        let channels = input[0].len();
        let mut out = Vec::new();
        let mut start = 0;
        while start + kernel <= input.len() {
            let mut row = Vec::with_capacity(filters);
            for f in 0..filters {
                let mut acc = 0.0f32;
                for c in 0..channels {
                    for j in 0..kernel {
                        acc += input[start + j][c] * weights[(f * channels + c) * kernel + j];
                    }
                }
                row.push(act.apply(acc + bias[f]));
            }
            out.push(row);
            start += stride;
        }
        out
    }

    fn run(stage: &mut Stage, input: &[Vec<f32>]) -> (Vec<(usize, Vec<f32>)>, u64) {
        let mut fires = Vec::new();
        let mut macs = 0;
        for (n, x) in input.iter().enumerate() {
            let out = stage.step(x).unwrap();
            assert_eq!(out.fired(), out.output.is_some());
            if !out.fired() {
                assert_eq!(out.mac_count, 0);
            }
            macs += out.mac_count;
            let occ = stage.buffers()[0].len();
            assert!(stage.buffers().iter().all(|b| b.len() == occ));
            if let Some(y) = out.output {
                fires.push((n + 1, y));
            }
        }
        (fires, macs)
    }

    fn scalar_seq(values: impl IntoIterator<Item = f32>) -> Vec<Vec<f32>> {
        values.into_iter().map(|v| vec![v]).collect()
    }

    #[test]
    fn conv_fires_on_full_windows() {
        let mut stage = Stage::Conv(
            ConvStage::new(1, 1, 4, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0], Activation::Identity)
                .unwrap(),
        );
        // x0..x5 = 1..6
        let (fires, macs) = run(&mut stage, &scalar_seq((1..=6).map(|v| v as f32)));
        assert_eq!(fires, vec![(4, vec![5.0]), (6, vec![9.0])]);
        assert_eq!(macs, 8);
    }

    #[test]
    fn zero_kernel_emits_bias() {
        let mut stage = Stage::Conv(
            ConvStage::new(2, 1, 3, 1, vec![0.0; 6], vec![0.5], Activation::Relu).unwrap(),
        );
        let input: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, -(i as f32)]).collect();
        let (fires, _) = run(&mut stage, &input);
        assert_eq!(fires.len(), 8);
        assert!(fires.iter().all(|(_, y)| y == &vec![0.5]));
    }

    #[test]
    fn max_pool_window() {
        let mut pool = PoolStage::new(1, 3, 3, PoolKind::Max).unwrap();
        pool.step(&[1.0]).unwrap();
        pool.step(&[5.0]).unwrap();
        assert_eq!(pool.step(&[2.0]).unwrap().output, Some(vec![5.0]));
    }

    #[test]
    fn average_pool_window() {
        let mut pool = PoolStage::new(1, 2, 2, PoolKind::Average).unwrap();
        pool.step(&[1.0]).unwrap();
        assert_eq!(pool.step(&[3.0]).unwrap().output, Some(vec![2.0]));
    }

    #[test]
    fn non_overlapping_max_pool() {
        let mut stage = Stage::Pool(PoolStage::new(1, 3, 3, PoolKind::Max).unwrap());
        let (fires, macs) = run(&mut stage, &scalar_seq((1..=9).map(|v| v as f32)));
        assert_eq!(
            fires,
            vec![(3, vec![3.0]), (6, vec![6.0]), (9, vec![9.0])]
        );
        assert_eq!(macs, 9);
    }

    #[test]
    fn output_count_cases() {
        assert_eq!(output_count(460, 8, 1), 453);
        assert_eq!(output_count(6, 4, 2), 2);
        assert_eq!(output_count(3, 4, 1), 0);
    }

    #[test]
    fn sample_width_mismatch() {
        let mut conv =
            ConvStage::new(3, 1, 2, 1, vec![0.0; 6], vec![0.0], Activation::Relu).unwrap();
        assert!(matches!(conv.step(&[1.0, 2.0]), Err(Error::Shape(_))));
        // nothing was written
        assert!(conv.buffers().iter().all(|b| b.is_empty()));
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        assert!(ConvStage::new(1, 1, 8, 9, vec![0.0; 8], vec![0.0], Activation::Relu).is_err());
        assert!(ConvStage::new(1, 1, 4, 1, vec![0.0; 3], vec![0.0], Activation::Relu).is_err());
        assert!(ConvStage::new(1, 2, 4, 1, vec![0.0; 8], vec![0.0], Activation::Relu).is_err());
        assert!(PoolStage::new(1, 2, 3, PoolKind::Max).is_err());
    }

    fn conv_case() -> impl Strategy<
        Value = (usize, usize, usize, usize, Vec<f32>, Vec<f32>, Vec<Vec<f32>>, bool),
    > {
        (1usize..5, 1usize..5, 1usize..9)
            .prop_flat_map(|(c, f, m)| (Just(c), Just(f), Just(m), 1..=m, 0usize..40))
            .prop_flat_map(|(c, f, m, s, extra)| {
                (
                    Just(c),
                    Just(f),
                    Just(m),
                    Just(s),
                    prop::collection::vec(-1.0f32..1.0, f * c * m),
                    prop::collection::vec(-1.0f32..1.0, f),
                    prop::collection::vec(prop::collection::vec(-3.0f32..3.0, c), m + extra),
                    any::<bool>(),
                )
            })
    }

    proptest! {
        #[test]
        fn streaming_conv_matches_direct((c, f, m, s, w, b, x, relu) in conv_case()) {
            let act = if relu { Activation::Relu } else { Activation::Identity };
            let mut stage = Stage::Conv(ConvStage::new(c, f, m, s, w.clone(), b.clone(), act).unwrap());
            let (fires, macs) = run(&mut stage, &x);
            let expected = direct_conv(&x, f, m, s, &w, &b, act);
            let n = x.len();
            prop_assert_eq!(fires.len(), output_count(n, m, s));
            prop_assert_eq!(macs, (f * c * m * output_count(n, m, s)) as u64);
            for (k, (at, y)) in fires.iter().enumerate() {
                prop_assert_eq!(*at, m + k * s);
                for (a, e) in y.iter().zip(&expected[k]) {
                    prop_assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0));
                }
                if relu {
                    prop_assert!(y.iter().all(|&v| v >= 0.0));
                }
            }
        }

        #[test]
        fn pooling_matches_direct(c in 1usize..4, p in 1usize..6, s_seed in 0usize..6, avg in any::<bool>(),
                                  x in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 0..40)) {
            let s = s_seed % p + 1;
            let kind = if avg { PoolKind::Average } else { PoolKind::Max };
            let input: Vec<Vec<f32>> = x.iter().map(|r| r[..c].to_vec()).collect();
            let mut stage = Stage::Pool(PoolStage::new(c, p, s, kind).unwrap());
            let (fires, _) = run(&mut stage, &input);
            prop_assert_eq!(fires.len(), output_count(input.len(), p, s));
            for (k, (_, y)) in fires.iter().enumerate() {
                for ch in 0..c {
                    let window = (0..p).map(|j| input[k * s + j][ch]);
                    let e = if avg {
                        window.sum::<f32>() / p as f32
                    } else {
                        window.fold(f32::NEG_INFINITY, f32::max)
                    };
                    prop_assert!((y[ch] - e).abs() <= 1e-5);
                }
            }
        }
    }
}
