use serde::{Deserialize, Serialize};

use super::{ModelSpec, Topology, BYTES_PER_SCALAR};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Streaming,
    Batch,
}

/// One statically allocated buffer: `channels × capacity` scalars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferEntry {
    pub owner: String,
    pub channels: usize,
    pub capacity: usize,
    pub bytes: usize,
}

impl BufferEntry {
    fn new(owner: impl Into<String>, channels: usize, capacity: usize) -> Self {
        Self {
            owner: owner.into(),
            channels,
            capacity,
            bytes: channels * capacity * BYTES_PER_SCALAR,
        }
    }
}

/// Inference working memory. Weights are reported but excluded from totals.
///
/// Streaming mode holds one ring buffer per stage input channel, the feature
/// collector and the head scratch. Batch mode holds the whole input sequence
/// plus two ping-pong activation buffers sized for the largest adjacent pair
/// of stage outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryPlan {
    pub mode: PlanMode,
    /// Ring buffers (streaming) or full stage activations (batch).
    pub buffers: Vec<BufferEntry>,
    pub input_bytes: usize,
    pub ping_pong_bytes: usize,
    pub collector_bytes: usize,
    pub head_bytes: usize,
    pub weight_bytes: usize,
    pub total_bytes: usize,
}

pub fn plan_memory(model: &ModelSpec, mode: PlanMode) -> Result<MemoryPlan> {
    plan_memory_at(model, mode, model.input.length)
}

/// Plans for sequences of `length` samples instead of the declared length.
///
/// Ring buffers, the collector and the head are sized from the model's
/// declared layers, so the streaming plan never reads `length`. The batch
/// plan materializes every stage output at `length`.
pub fn plan_memory_at(model: &ModelSpec, mode: PlanMode, length: usize) -> Result<MemoryPlan> {
    let mut topo = model.topology()?;
    let plan = match mode {
        PlanMode::Streaming => streaming_plan(&topo),
        PlanMode::Batch => {
            topo.input.length = length;
            topo.stages = model.stage_shapes(length)?.0;
            batch_plan(&topo)
        }
    };
    Ok(plan.with_weights(super::weight_storage_bytes(model)))
}

impl MemoryPlan {
    fn with_weights(mut self, weight_bytes: usize) -> Self {
        self.weight_bytes = weight_bytes;
        self
    }
}

fn head_bytes(topo: &Topology) -> usize {
    topo.head.iter().map(|&(_, out)| out).sum::<usize>() * BYTES_PER_SCALAR
}

fn streaming_plan(topo: &Topology) -> MemoryPlan {
    let buffers: Vec<BufferEntry> = topo
        .stages
        .iter()
        .map(|s| BufferEntry::new(s.name.clone(), s.in_channels, s.window))
        .collect();
    let collector_bytes = topo.feature_dim * BYTES_PER_SCALAR;
    let head_bytes = head_bytes(topo);
    MemoryPlan {
        mode: PlanMode::Streaming,
        total_bytes: buffers.iter().map(|b| b.bytes).sum::<usize>() + collector_bytes + head_bytes,
        buffers,
        input_bytes: 0,
        ping_pong_bytes: 0,
        collector_bytes,
        head_bytes,
        weight_bytes: 0,
    }
}

fn batch_plan(topo: &Topology) -> MemoryPlan {
    let input_bytes = topo.input.length * topo.input.channels * BYTES_PER_SCALAR;
    let buffers: Vec<BufferEntry> = topo
        .stages
        .iter()
        .map(|s| BufferEntry::new(s.name.clone(), s.out_channels, s.out_len))
        .collect();
    // The first stage reads from the input buffer, so a lone output also counts.
    let ping_pong_bytes = buffers
        .iter()
        .map(|b| b.bytes)
        .chain(buffers.windows(2).map(|w| w[0].bytes + w[1].bytes))
        .max()
        .unwrap_or(0);
    let head_bytes = head_bytes(topo);
    MemoryPlan {
        mode: PlanMode::Batch,
        buffers,
        input_bytes,
        ping_pong_bytes,
        collector_bytes: 0,
        head_bytes,
        weight_bytes: 0,
        total_bytes: input_bytes + ping_pong_bytes + head_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::reference_model;

    #[test]
    fn reference_streaming_plan() {
        let plan = plan_memory(&reference_model(1), PlanMode::Streaming).unwrap();
        // conv1 3x8, conv2-4 8x8, four pools 8x3
        let floats: Vec<usize> = plan.buffers.iter().map(|b| b.bytes / 4).collect();
        assert_eq!(floats, vec![24, 24, 64, 24, 64, 24, 64, 24]);
        assert_eq!(plan.collector_bytes, 16 * 4);
        assert_eq!(plan.head_bytes, 34 * 4);
        assert_eq!(plan.total_bytes, 362 * 4);
        assert_eq!(plan.weight_bytes, 9352);
    }

    #[test]
    fn reference_batch_plan() {
        let plan = plan_memory(&reference_model(1), PlanMode::Batch).unwrap();
        assert_eq!(plan.input_bytes, 5520);
        // conv1 453x8 next to pool1 151x8
        assert_eq!(plan.ping_pong_bytes, (453 + 151) * 8 * 4);
        assert_eq!(plan.total_bytes, 5520 + plan.ping_pong_bytes + 136);
    }

    #[test]
    fn streaming_is_independent_of_length() {
        let model = reference_model(1);
        let a = plan_memory(&model, PlanMode::Streaming).unwrap();
        let b = plan_memory_at(&model, PlanMode::Streaming, 920).unwrap();
        assert_eq!(a, b);
        let a = plan_memory(&model, PlanMode::Batch).unwrap();
        let b = plan_memory_at(&model, PlanMode::Batch, 920).unwrap();
        assert!(b.total_bytes > a.total_bytes);
        assert_eq!(b.input_bytes, 920 * 3 * 4);
    }
}
