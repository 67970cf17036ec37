//! `ringconv` command-line front end.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 data or shape
//! error. Every command writes machine-readable output to stdout.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::gen;
use crate::modelio::{self, plan_memory_at, MemoryPlan, ModelSpec, PlanMode};
use crate::network::{batch_infer, StreamingNetwork};
use crate::sim::{self, ScheduleMode, TaskProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ringconv", version, about = "Streaming 1D-CNN inference over ring buffers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one CSV sequence.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "streaming")]
        mode: PlanMode,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Simulate the acquisition/inference schedule.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Task profile JSON; the measured reference profile when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "streaming")]
        mode: ScheduleMode,
        /// Sequence length; defaults to the model's input length.
        #[arg(long)]
        samples: Option<usize>,
        /// Step-cost histogram CSV (`macs,count`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Per-interval timeline CSV (`interval,step_cost_ms,slack_ms`).
        #[arg(long)]
        timeline: Option<PathBuf>,
    },
    /// Print the static memory plan for both modes.
    Plan {
        #[arg(long)]
        model: PathBuf,
        /// Plan for this sequence length instead of the declared one.
        #[arg(long)]
        samples: Option<usize>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate a model with seeded random weights.
    Gen {
        /// Layer spec, e.g. `input:460x3,conv:8:8:1,maxpool:3,dense:16,softmax:2`, or `reference`.
        #[arg(long)]
        layers: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Shape(_)
            | Error::Ring(_)
            | Error::SequenceOverrun { .. }
            | Error::IncompleteSequence { .. } => EXIT_DATA,
            Error::Parse(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::EmptyTrace
            | Error::Io(_) => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Run {
            model,
            input,
            mode,
            report,
        } => {
            let report_doc = cmd_run(&model, &input, mode)?;
            let text = to_json(&report_doc);
            if let Some(path) = report {
                write_file(&path, text.as_bytes())?;
            }
            emit(out, &text)
        }
        Command::Simulate {
            model,
            profile,
            mode,
            samples,
            csv,
            timeline,
        } => {
            let summary = cmd_simulate(
                &model,
                profile.as_deref(),
                mode,
                samples,
                csv.as_deref(),
                timeline.as_deref(),
            )?;
            emit(out, &to_json(&summary))
        }
        Command::Plan {
            model,
            samples,
            json,
        } => {
            let plans = cmd_plan(&model, samples)?;
            if json {
                emit(out, &to_json(&plans))
            } else {
                emit(out, &plans.table())
            }
        }
        Command::Gen { layers, seed, out: path } => {
            let model = cmd_gen(&layers, seed, &path)?;
            emit(
                out,
                &format!(
                    "wrote {} ({} parameters)",
                    path.display(),
                    modelio::param_count(&model)
                ),
            )
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    writeln!(out, "{text}").map_err(|e| CliError::input(format!("writing output: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> CliResult<ModelSpec> {
    let bytes =
        fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    modelio::load_model(&bytes)
        .map_err(|e| CliError::input(format!("{}: {}", path.display(), CliError::from(e).message)))
}

/// Reads a sensor CSV: optional header row, `#` comment lines, one column per
/// channel.
pub fn read_csv(path: &Path, channels: usize) -> CliResult<Vec<Vec<f32>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && record.iter().all(|f| f.parse::<f32>().is_err()) {
            // header row
            continue;
        }
        if record.len() != channels {
            return Err(CliError::data(format!(
                "{} line {line}: {} columns, model expects {channels} channels",
                path.display(),
                record.len()
            )));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f32>().map_err(|_| {
                    CliError::input(format!(
                        "{} line {line}, field {}: cannot parse {field:?} as a number",
                        path.display(),
                        col + 1
                    ))
                })
            })
            .collect::<CliResult<Vec<f32>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub params: usize,
    pub weight_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryTotals {
    pub streaming_bytes: usize,
    pub batch_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub min_macs: u64,
    pub mean_macs: f64,
    pub max_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub model: ModelSummary,
    pub mode: PlanMode,
    pub probabilities: Vec<f32>,
    pub label: usize,
    pub feature_dim: usize,
    pub memory: MemoryTotals,
    /// Streaming mode only.
    pub step_stats: Option<StepStats>,
    pub exit_status: i32,
}

fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn cmd_run(model_path: &Path, input_path: &Path, mode: PlanMode) -> CliResult<RunReport> {
    let model = read_model(model_path)?;
    let n = model.input.length;
    let mut rows = read_csv(input_path, model.input.channels)?;
    if rows.len() < n {
        return Err(CliError::data(format!(
            "expected {n} samples, {} has {}",
            input_path.display(),
            rows.len()
        )));
    }
    rows.truncate(n);

    let (probabilities, step_stats) = match mode {
        PlanMode::Streaming => {
            let run = StreamingNetwork::new(&model)?.run(&rows)?;
            let macs = run.steps.iter().map(|s| s.total_macs);
            let stats = StepStats {
                min_macs: macs.clone().min().unwrap_or(0),
                mean_macs: run.total_macs() as f64 / run.steps.len() as f64,
                max_macs: macs.max().unwrap_or(0),
            };
            (run.probabilities, Some(stats))
        }
        PlanMode::Batch => (batch_infer(&model, &rows)?, None),
    };

    let topo = model.topology()?;
    Ok(RunReport {
        model: ModelSummary {
            params: modelio::param_count(&model),
            weight_bytes: modelio::weight_storage_bytes(&model),
        },
        mode,
        label: argmax(&probabilities),
        probabilities,
        feature_dim: topo.feature_dim,
        memory: MemoryTotals {
            streaming_bytes: modelio::plan_memory(&model, PlanMode::Streaming)?.total_bytes,
            batch_bytes: modelio::plan_memory(&model, PlanMode::Batch)?.total_bytes,
        },
        step_stats,
        exit_status: EXIT_OK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub mode: ScheduleMode,
    pub samples: usize,
    pub interval_ms: f64,
    pub latency_ms: f64,
    pub batch_latency_ms: f64,
    pub streaming_latency_ms: f64,
    /// Batch latency saved by streaming, in percent.
    pub reduction_pct: f64,
    pub max_step_ms: f64,
    pub feasible: bool,
    pub deadline_misses: usize,
    pub histogram: Vec<sim::CostClass>,
}

pub fn cmd_simulate(
    model_path: &Path,
    profile_path: Option<&Path>,
    mode: ScheduleMode,
    samples: Option<usize>,
    csv_path: Option<&Path>,
    timeline_path: Option<&Path>,
) -> CliResult<SimulationSummary> {
    let model = read_model(model_path)?;
    let profile = match profile_path {
        Some(path) => {
            let bytes =
                fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            TaskProfile::from_json(&bytes)?
        }
        None => TaskProfile::reference(),
    };
    let n = samples.unwrap_or(model.input.length);

    let batch = sim::simulate(&model, &profile, ScheduleMode::Batch, n)?;
    let streaming = sim::simulate(&model, &profile, ScheduleMode::Streaming, n)?;
    let trace = match mode {
        ScheduleMode::Batch => &batch,
        ScheduleMode::Streaming => &streaming,
    };
    let histogram = sim::step_cost_histogram(trace)?;
    let realtime = sim::check_realtime(trace, &profile);

    if let Some(path) = csv_path {
        let file = fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        sim::write_histogram_csv(&histogram, file)?;
    }
    if let Some(path) = timeline_path {
        let file = fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        sim::write_timeline_csv(trace, file)?;
    }

    Ok(SimulationSummary {
        mode,
        samples: n,
        interval_ms: profile.interval_ms(),
        latency_ms: trace.latency_ms,
        batch_latency_ms: batch.latency_ms,
        streaming_latency_ms: streaming.latency_ms,
        reduction_pct: 100.0 * sim::latency_reduction(&batch, &streaming),
        max_step_ms: realtime.max_step_ms,
        feasible: realtime.feasible,
        deadline_misses: realtime.misses.len(),
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub samples: usize,
    pub streaming: MemoryPlan,
    pub batch: MemoryPlan,
}

impl PlanReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let mut line = |text: String| {
            s.push_str(&text);
            s.push('\n');
        };
        line(format!("samples {}", self.samples));
        line(format!(
            "{:<10} {:<10} {:>8} {:>9} {:>8}",
            "mode", "buffer", "channels", "capacity", "bytes"
        ));
        for (mode, plan) in [("streaming", &self.streaming), ("batch", &self.batch)] {
            if plan.input_bytes > 0 {
                line(format!(
                    "{mode:<10} {:<10} {:>8} {:>9} {:>8}",
                    "input", "", "", plan.input_bytes
                ));
            }
            for b in &plan.buffers {
                line(format!(
                    "{mode:<10} {:<10} {:>8} {:>9} {:>8}",
                    b.owner, b.channels, b.capacity, b.bytes
                ));
            }
            for (name, bytes) in [
                ("pingpong", plan.ping_pong_bytes),
                ("collector", plan.collector_bytes),
                ("head", plan.head_bytes),
            ] {
                if bytes > 0 {
                    line(format!("{mode:<10} {name:<10} {:>8} {:>9} {bytes:>8}", "", ""));
                }
            }
        }
        line(format!("weights {} bytes", self.streaming.weight_bytes));
        line(format!(
            "total streaming {} bytes, batch {} bytes",
            self.streaming.total_bytes, self.batch.total_bytes
        ));
        s.truncate(s.trim_end().len());
        s
    }
}

pub fn cmd_plan(model_path: &Path, samples: Option<usize>) -> CliResult<PlanReport> {
    let model = read_model(model_path)?;
    let n = samples.unwrap_or(model.input.length);
    if n == 0 {
        return Err(CliError::input("sequence length must be positive"));
    }
    Ok(PlanReport {
        samples: n,
        streaming: plan_memory_at(&model, PlanMode::Streaming, n)?,
        batch: plan_memory_at(&model, PlanMode::Batch, n)?,
    })
}

pub fn cmd_gen(layers: &str, seed: u64, out: &Path) -> CliResult<ModelSpec> {
    let model = gen::generate(layers, seed)?;
    write_file(out, model.to_json().as_bytes())?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Shape("x".into())).code, EXIT_DATA);
        assert_eq!(CliError::from(Error::Validation("x".into())).code, EXIT_INPUT);
        assert_eq!(CliError::from(Error::Config("x".into())).code, EXIT_INPUT);
    }
}
