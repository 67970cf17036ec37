//! Discrete-event model of the acquisition/inference schedule.
//!
//! Samples arrive at a fixed rate. In batch mode the whole sequence is
//! buffered and the convolution stage runs after the last sample; in
//! streaming mode each interval also carries that sample's cascade work,
//! costed as `macs × mac_ns`. Both modes end with the feedforward and
//! communication tasks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelio::{mac_cost_model, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Batch,
    Streaming,
}

/// Per-task costs in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub sample_ms: f64,
    /// Whole-sequence convolution in batch mode.
    pub conv_ms: f64,
    pub feedforward_ms: f64,
    pub communication_ms: f64,
    /// Cost of one multiply-accumulate when synthesizing streaming steps.
    pub mac_ns: f64,
    /// Fitted slack per sampling interval not covered by the other tasks.
    pub per_interval_overhead_ms: f64,
    pub sampling_rate_hz: f64,
}

/// Sequence length the measured profile was taken at.
pub const REFERENCE_SAMPLES: usize = 460;
pub const REFERENCE_LATENCY_MS: f64 = 4452.83;

impl TaskProfile {
    /// Measured task costs for the reference model at 119 Hz.
    ///
    /// The overhead term is fitted so the batch latency over 460 samples is
    /// 4452.83 ms, and `mac_ns` is calibrated so the reference model's stage
    /// work over 460 samples totals `conv_ms`.
    pub fn reference() -> Self {
        let mut profile = Self {
            sample_ms: 1.02,
            conv_ms: 502.59,
            feedforward_ms: 1.31,
            communication_ms: 0.01,
            mac_ns: 0.0,
            per_interval_overhead_ms: 0.0,
            sampling_rate_hz: 119.0,
        };
        profile.per_interval_overhead_ms =
            profile.fit_overhead(REFERENCE_LATENCY_MS, REFERENCE_SAMPLES);
        profile.mac_ns = profile
            .calibrated_mac_ns(&crate::gen::reference_model(0))
            .expect("reference model is valid");
        profile
    }

    pub fn interval_ms(&self) -> f64 {
        1000.0 / self.sampling_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sampling_rate_hz must be positive, got {}",
                self.sampling_rate_hz
            )));
        }
        let fields = [
            ("sample_ms", self.sample_ms),
            ("conv_ms", self.conv_ms),
            ("feedforward_ms", self.feedforward_ms),
            ("communication_ms", self.communication_ms),
            ("mac_ns", self.mac_ns),
            ("per_interval_overhead_ms", self.per_interval_overhead_ms),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-interval overhead that makes the batch latency over `samples`
    /// equal `latency_ms`.
    pub fn fit_overhead(&self, latency_ms: f64, samples: usize) -> f64 {
        let n = samples as f64;
        let accounted = n * self.interval_ms()
            + self.conv_ms
            + self.feedforward_ms
            + self.communication_ms;
        ((latency_ms - accounted) / n).max(0.0)
    }

    /// `mac_ns` at which the model's conv/pool work over its declared
    /// sequence takes exactly `conv_ms`.
    pub fn calibrated_mac_ns(&self, model: &ModelSpec) -> Result<f64> {
        let macs = mac_cost_model(model)?.stage_total;
        if macs == 0 {
            return Err(Error::Config("model has no conv/pool work to calibrate against".into()));
        }
        Ok(self.conv_ms * 1e6 / macs as f64)
    }

    pub fn macs_to_ms(&self, macs: u64) -> f64 {
        macs as f64 * self.mac_ns / 1e6
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let profile: Self =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("profile: {e}")))?;
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalRecord {
    pub index: usize,
    pub macs: u64,
    pub sample_cost_ms: f64,
    pub step_cost_ms: f64,
    /// `interval - sample - step`; negative on a deadline miss.
    pub slack_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleTrace {
    pub mode: ScheduleMode,
    pub interval_ms: f64,
    pub intervals: Vec<IntervalRecord>,
    /// Batch mode only.
    pub conv_cost_ms: Option<f64>,
    pub feedforward_cost_ms: f64,
    pub communication_cost_ms: f64,
    /// Completion time of the communication task.
    pub latency_ms: f64,
    pub deadline_misses: Vec<usize>,
}

/// MACs performed at each of `samples` steps, from stage shapes alone.
///
/// Each stage is an occupancy counter: it fires when it holds `window`
/// samples, then drops `stride`. A fire feeds one sample to the next stage.
pub fn step_macs(model: &ModelSpec, samples: usize) -> Result<Vec<u64>> {
    let (stages, _) = model.stage_shapes(samples)?;
    let mut occupancy = vec![0usize; stages.len()];
    let per_fire: Vec<u64> = stages.iter().map(|s| s.macs_per_fire()).collect();
    Ok((0..samples)
        .map(|_| {
            let mut macs = 0;
            for (i, s) in stages.iter().enumerate() {
                occupancy[i] += 1;
                if occupancy[i] < s.window {
                    break;
                }
                occupancy[i] -= s.stride;
                macs += per_fire[i];
            }
            macs
        })
        .collect())
}

/// Simulates one sequence of `samples` samples.
pub fn simulate(
    model: &ModelSpec,
    profile: &TaskProfile,
    mode: ScheduleMode,
    samples: usize,
) -> Result<ScheduleTrace> {
    profile.validate()?;
    if samples == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    model.topology()?;
    let interval = profile.interval_ms();
    let macs = match mode {
        ScheduleMode::Streaming => step_macs(model, samples)?,
        ScheduleMode::Batch => vec![0; samples],
    };

    let mut deadline_misses = Vec::new();
    let intervals: Vec<IntervalRecord> = macs
        .into_iter()
        .enumerate()
        .map(|(index, macs)| {
            let step_cost_ms = profile.macs_to_ms(macs);
            let slack_ms = interval - profile.sample_ms - step_cost_ms;
            if slack_ms < 0.0 {
                deadline_misses.push(index);
            }
            IntervalRecord {
                index,
                macs,
                sample_cost_ms: profile.sample_ms,
                step_cost_ms,
                slack_ms,
            }
        })
        .collect();

    let conv_cost_ms = (mode == ScheduleMode::Batch).then_some(profile.conv_ms);
    let acquisition_ms = samples as f64 * (interval + profile.per_interval_overhead_ms);
    let latency_ms = acquisition_ms
        + conv_cost_ms.unwrap_or(0.0)
        + profile.feedforward_ms
        + profile.communication_ms;

    Ok(ScheduleTrace {
        mode,
        interval_ms: interval,
        intervals,
        conv_cost_ms,
        feedforward_cost_ms: profile.feedforward_ms,
        communication_cost_ms: profile.communication_ms,
        latency_ms,
        deadline_misses,
    })
}

/// Fraction of batch latency saved by streaming.
pub fn latency_reduction(batch: &ScheduleTrace, streaming: &ScheduleTrace) -> f64 {
    (batch.latency_ms - streaming.latency_ms) / batch.latency_ms
}

/// A distinct per-step cost level and how often it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostClass {
    pub macs: u64,
    pub cost_ms: f64,
    pub count: usize,
}

/// Distinct step costs in ascending order.
pub fn step_cost_histogram(trace: &ScheduleTrace) -> Result<Vec<CostClass>> {
    if trace.intervals.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut classes: Vec<CostClass> = Vec::new();
    let mut sorted: Vec<&IntervalRecord> = trace.intervals.iter().collect();
    sorted.sort_by_key(|r| r.macs);
    for r in sorted {
        match classes.last_mut() {
            Some(c) if c.macs == r.macs => c.count += 1,
            _ => classes.push(CostClass {
                macs: r.macs,
                cost_ms: r.step_cost_ms,
                count: 1,
            }),
        }
    }
    Ok(classes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealtimeReport {
    pub max_step_ms: f64,
    /// Largest sample + step cost in one interval.
    pub max_busy_ms: f64,
    pub budget_ms: f64,
    pub misses: Vec<usize>,
    pub feasible: bool,
}

pub fn check_realtime(trace: &ScheduleTrace, profile: &TaskProfile) -> RealtimeReport {
    let max_step_ms = trace
        .intervals
        .iter()
        .map(|r| r.step_cost_ms)
        .fold(0.0, f64::max);
    let max_busy_ms = trace
        .intervals
        .iter()
        .map(|r| r.sample_cost_ms + r.step_cost_ms)
        .fold(0.0, f64::max);
    RealtimeReport {
        max_step_ms,
        max_busy_ms,
        budget_ms: profile.interval_ms(),
        misses: trace.deadline_misses.clone(),
        feasible: trace.deadline_misses.is_empty(),
    }
}

/// `interval,step_cost_ms,slack_ms`
pub fn write_timeline_csv(trace: &ScheduleTrace, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["interval", "step_cost_ms", "slack_ms"])
        .map_err(csv_io)?;
    for r in &trace.intervals {
        w.write_record([
            r.index.to_string(),
            r.step_cost_ms.to_string(),
            r.slack_ms.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// `macs,count`
pub fn write_histogram_csv(classes: &[CostClass], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["macs", "count"]).map_err(csv_io)?;
    for c in classes {
        w.write_record([c.macs.to_string(), c.count.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
