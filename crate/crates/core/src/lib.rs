//! Streaming inference for 1D convolutional networks.
//!
//! Samples are pushed one at a time into per-channel [`ringbuf::StridedRingBuffer`]s;
//! each conv or pool stage fires as soon as its window is full, so the
//! convolution work is spread across sampling intervals instead of running
//! after the whole sequence has been collected. Only the dense head runs at
//! end of sequence.
//!
//! Alongside the engine: a JSON model format ([`modelio`]), a static memory
//! planner, a schedule simulator ([`sim`]) and the `ringconv` CLI ([`cli`]).

pub mod cli;
pub mod error;
pub mod gen;
pub mod layers;
pub mod modelio;
pub mod network;
pub mod ringbuf;
pub mod sim;

pub use error::{Error, Result};
pub use layers::{output_count, Activation, PoolKind, StepOutcome};
pub use modelio::{
    load_model, load_model_file, mac_cost_model, param_count, plan_memory, plan_memory_at,
    weight_storage_bytes, MemoryPlan, ModelSpec, PlanMode,
};
pub use network::{batch_forward, batch_infer, StepReport, StreamingNetwork};
pub use ringbuf::{RingError, StridedRingBuffer};
pub use sim::{simulate, ScheduleMode, ScheduleTrace, TaskProfile};
