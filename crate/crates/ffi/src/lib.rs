//! C ABI for the `ringconv` streaming inference engine.
//!
//! Models and networks are opaque heap handles created by `rc_*_new`/`load`
//! functions and released with the matching `rc_*_free`. Every fallible call
//! returns an [`RcStatus`]; on failure a description is available from
//! [`rc_last_error_message`] on the same thread.
//!
//! ```c
//! RcModel *model = NULL;
//! RcNetwork *net = NULL;
//! if (rc_model_load_file("model.json", &model) != RC_STATUS_OK) {
//!     fprintf(stderr, "%s\n", rc_last_error_message());
//! }
//! rc_network_new(model, &net);
//! for (size_t t = 0; t < length; t++) {
//!     rc_network_step(net, &samples[t * channels], channels, NULL);
//! }
//! float probs[2];
//! size_t n = 0;
//! rc_network_finalize(net, probs, 2, &n);
//! rc_network_free(net);
//! rc_model_free(model);
//! ```

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ringconv::modelio::{self, ModelSpec, PlanMode};
use ringconv::network::{batch_infer, StreamingNetwork};
use ringconv::sim::{self, ScheduleMode, TaskProfile};
use ringconv::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Shape = 6,
    SequenceOverrun = 7,
    IncompleteSequence = 8,
    Config = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcMode {
    Streaming = 0,
    Batch = 1,
}

/// Work done by one `rc_network_step`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RcStepReport {
    pub stages_fired: usize,
    pub total_macs: u64,
}

/// Task costs in milliseconds; see `rc_profile_reference`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcTaskProfile {
    pub sample_ms: f64,
    pub conv_ms: f64,
    pub feedforward_ms: f64,
    pub communication_ms: f64,
    pub mac_ns: f64,
    pub per_interval_overhead_ms: f64,
    pub sampling_rate_hz: f64,
}

/// Simulated schedule summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcScheduleSummary {
    pub latency_ms: f64,
    pub max_step_ms: f64,
    pub deadline_misses: usize,
}

/// Validated model document.
pub struct RcModel {
    spec: ModelSpec,
}

/// Streaming network state for one sequence at a time.
pub struct RcNetwork {
    net: StreamingNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RcStatus {
    match e {
        Error::Ring(_) | Error::Shape(_) => RcStatus::Shape,
        Error::SequenceOverrun { .. } => RcStatus::SequenceOverrun,
        Error::IncompleteSequence { .. } => RcStatus::IncompleteSequence,
        Error::Parse(_) => RcStatus::Parse,
        Error::Validation(_) => RcStatus::Validation,
        Error::Config(_) | Error::EmptyTrace => RcStatus::Config,
        Error::Io(_) => RcStatus::Io,
    }
}

struct Failure(RcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RcStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            RcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn copy_probabilities(
    probs: &[f32],
    out: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> Result<(), Failure> {
    if !written.is_null() {
        written.write(probs.len());
    }
    if capacity < probs.len() {
        return Err(Failure(
            RcStatus::BufferTooSmall,
            format!("{} classes, buffer holds {capacity}", probs.len()),
        ));
    }
    if out.is_null() {
        return Err(null("probability buffer"));
    }
    ptr::copy_nonoverlapping(probs.as_ptr(), out, probs.len());
    Ok(())
}

/// Description of the most recent failure on this thread, or NULL.
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn rc_status_name(status: RcStatus) -> *const c_char {
    let name: &'static CStr = match status {
        RcStatus::Ok => c"ok",
        RcStatus::NullPointer => c"null pointer",
        RcStatus::InvalidUtf8 => c"invalid utf-8",
        RcStatus::Io => c"io error",
        RcStatus::Parse => c"parse error",
        RcStatus::Validation => c"validation error",
        RcStatus::Shape => c"shape mismatch",
        RcStatus::SequenceOverrun => c"sequence overrun",
        RcStatus::IncompleteSequence => c"incomplete sequence",
        RcStatus::Config => c"config error",
        RcStatus::BufferTooSmall => c"buffer too small",
        RcStatus::Panic => c"internal panic",
    };
    name.as_ptr()
}

/// Parses and validates a NUL-terminated JSON model document.
#[no_mangle]
pub unsafe extern "C" fn rc_model_load_json(json: *const c_char, out: *mut *mut RcModel) -> RcStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let spec = modelio::load_model(text.as_bytes())?;
        write_out(out, Box::into_raw(Box::new(RcModel { spec })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_model_load_file(path: *const c_char, out: *mut *mut RcModel) -> RcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let spec = modelio::load_model_file(path)?;
        write_out(out, Box::into_raw(Box::new(RcModel { spec })), "out")
    })
}

/// Releases a model. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn rc_model_free(model: *mut RcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn rc_model_input_shape(
    model: *const RcModel,
    length: *mut usize,
    channels: *mut usize,
) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        write_out(length, m.spec.input.length, "length")?;
        write_out(channels, m.spec.input.channels, "channels")
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_model_num_classes(model: *const RcModel, classes: *mut usize) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        write_out(classes, m.spec.topology()?.classes(), "classes")
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_model_param_count(model: *const RcModel, count: *mut usize) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        write_out(count, modelio::param_count(&m.spec), "count")
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_model_weight_bytes(model: *const RcModel, bytes: *mut usize) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        write_out(bytes, modelio::weight_storage_bytes(&m.spec), "bytes")
    })
}

/// Working-memory total for `mode`. `samples == 0` plans for the declared length.
#[no_mangle]
pub unsafe extern "C" fn rc_model_memory_bytes(
    model: *const RcModel,
    mode: RcMode,
    samples: usize,
    bytes: *mut usize,
) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let n = if samples == 0 { m.spec.input.length } else { samples };
        let mode = match mode {
            RcMode::Streaming => PlanMode::Streaming,
            RcMode::Batch => PlanMode::Batch,
        };
        let plan = modelio::plan_memory_at(&m.spec, mode, n)?;
        write_out(bytes, plan.total_bytes, "bytes")
    })
}

/// Creates a network for `model`. The network copies what it needs, so the
/// model may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_network_new(model: *const RcModel, out: *mut *mut RcNetwork) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let net = StreamingNetwork::new(&m.spec)?;
        write_out(out, Box::into_raw(Box::new(RcNetwork { net })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_network_free(net: *mut RcNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Pushes one sample of `channels` values. `report` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rc_network_step(
    net: *mut RcNetwork,
    sample: *const f32,
    channels: usize,
    report: *mut RcStepReport,
) -> RcStatus {
    guard(|| {
        let n = mut_arg(net, "network")?;
        if sample.is_null() {
            return Err(null("sample"));
        }
        let r = n.net.step(slice::from_raw_parts(sample, channels))?;
        if !report.is_null() {
            report.write(RcStepReport {
                stages_fired: r.stages_fired,
                total_macs: r.total_macs,
            });
        }
        Ok(())
    })
}

/// Writes class probabilities once the full sequence has been stepped.
/// `written` receives the class count even when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn rc_network_finalize(
    net: *const RcNetwork,
    probs: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> RcStatus {
    guard(|| {
        let n = ref_arg(net, "network")?;
        copy_probabilities(&n.net.finalize()?, probs, capacity, written)
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_network_reset(net: *mut RcNetwork) -> RcStatus {
    guard(|| {
        mut_arg(net, "network")?.net.reset();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rc_network_samples_seen(net: *const RcNetwork, seen: *mut usize) -> RcStatus {
    guard(|| {
        let n = ref_arg(net, "network")?;
        write_out(seen, n.net.samples_seen(), "seen")
    })
}

/// Whole-sequence inference over a row-major `rows × channels` matrix.
#[no_mangle]
pub unsafe extern "C" fn rc_batch_infer(
    model: *const RcModel,
    input: *const f32,
    rows: usize,
    channels: usize,
    probs: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if input.is_null() {
            return Err(null("input"));
        }
        let flat = slice::from_raw_parts(input, rows * channels);
        let matrix: Vec<Vec<f32>> = if channels == 0 {
            vec![Vec::new(); rows]
        } else {
            flat.chunks_exact(channels).map(<[f32]>::to_vec).collect()
        };
        copy_probabilities(&batch_infer(&m.spec, &matrix)?, probs, capacity, written)
    })
}

impl From<TaskProfile> for RcTaskProfile {
    fn from(p: TaskProfile) -> Self {
        Self {
            sample_ms: p.sample_ms,
            conv_ms: p.conv_ms,
            feedforward_ms: p.feedforward_ms,
            communication_ms: p.communication_ms,
            mac_ns: p.mac_ns,
            per_interval_overhead_ms: p.per_interval_overhead_ms,
            sampling_rate_hz: p.sampling_rate_hz,
        }
    }
}

impl From<RcTaskProfile> for TaskProfile {
    fn from(p: RcTaskProfile) -> Self {
        Self {
            sample_ms: p.sample_ms,
            conv_ms: p.conv_ms,
            feedforward_ms: p.feedforward_ms,
            communication_ms: p.communication_ms,
            mac_ns: p.mac_ns,
            per_interval_overhead_ms: p.per_interval_overhead_ms,
            sampling_rate_hz: p.sampling_rate_hz,
        }
    }
}

/// The measured 119 Hz reference profile.
#[no_mangle]
pub unsafe extern "C" fn rc_profile_reference(out: *mut RcTaskProfile) -> RcStatus {
    guard(|| write_out(out, TaskProfile::reference().into(), "out"))
}

/// Simulates one sequence of `samples` samples (0 = declared length).
#[no_mangle]
pub unsafe extern "C" fn rc_simulate(
    model: *const RcModel,
    profile: *const RcTaskProfile,
    mode: RcMode,
    samples: usize,
    out: *mut RcScheduleSummary,
) -> RcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let profile: TaskProfile = (*ref_arg(profile, "profile")?).into();
        let n = if samples == 0 { m.spec.input.length } else { samples };
        let mode = match mode {
            RcMode::Streaming => ScheduleMode::Streaming,
            RcMode::Batch => ScheduleMode::Batch,
        };
        let trace = sim::simulate(&m.spec, &profile, mode, n)?;
        let realtime = sim::check_realtime(&trace, &profile);
        write_out(
            out,
            RcScheduleSummary {
                latency_ms: trace.latency_ms,
                max_step_ms: realtime.max_step_ms,
                deadline_misses: realtime.misses.len(),
            },
            "out",
        )
    })
}
