//! C ABI over the `ntl-change` pipeline.
//!
//! Every fallible call returns an [`NtlStatus`]; on failure the message is
//! available from [`ntl_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `*_free` function.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::NaiveDate;
use serde::Deserialize;

use ntl_change::detect::{ChangeReport, DetectConfig};
use ntl_change::eval::{evaluate, parse_ground_truth};
use ntl_change::forecast::EnsembleWeights;
use ntl_change::models::{ArchitectureId, ForecastModel, TrainConfig};
use ntl_change::{ingest, pipeline, synth, Error};

/// Status codes. Values 2–13 mirror the library's error kinds and the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtlStatus {
    Ok = 0,
    Domain = 2,
    Input = 3,
    Parse = 4,
    Validation = 5,
    Shape = 6,
    State = 7,
    Config = 8,
    InsufficientData = 9,
    Alignment = 10,
    Checkpoint = 11,
    Io = 12,
    Json = 13,
    NullPointer = 20,
    InvalidUtf8 = 21,
    OutOfRange = 22,
    Panic = 23,
}

impl NtlStatus {
    fn from_error(e: &Error) -> Self {
        match e.code() {
            2 => NtlStatus::Domain,
            3 => NtlStatus::Input,
            4 => NtlStatus::Parse,
            5 => NtlStatus::Validation,
            6 => NtlStatus::Shape,
            7 => NtlStatus::State,
            8 => NtlStatus::Config,
            9 => NtlStatus::InsufficientData,
            10 => NtlStatus::Alignment,
            11 => NtlStatus::Checkpoint,
            12 => NtlStatus::Io,
            _ => NtlStatus::Json,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtlArchitecture {
    Fcnn = 0,
    Cnn = 1,
    Lstm = 2,
}

impl From<NtlArchitecture> for ArchitectureId {
    fn from(a: NtlArchitecture) -> Self {
        match a {
            NtlArchitecture::Fcnn => ArchitectureId::Fcnn,
            NtlArchitecture::Cnn => ArchitectureId::Cnn,
            NtlArchitecture::Lstm => ArchitectureId::Lstm,
        }
    }
}

/// A daily zone series.
pub struct NtlSeries(ingest::NtlSeries);

/// Trained forecasters, at most one per architecture.
pub struct NtlModelSet(Vec<ForecastModel>);

/// A change report.
pub struct NtlReport(ChangeReport);

/// One persistent change segment; days are counted from the first monitored day.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NtlSegment {
    pub start: i64,
    pub inflection: i64,
    pub end: i64,
    pub open: bool,
    pub lambda_s: f64,
    pub lambda_e: f64,
    pub mean_severity: f64,
    pub direction: i8,
}

/// Evaluation result. Undefined metrics are NaN; `has_delay` guards `delay`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NtlEval {
    pub recall: f64,
    pub precision: f64,
    pub f_beta: f64,
    pub has_delay: bool,
    pub delay: i64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(NtlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(NtlStatus::from_error(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NtlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NtlStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            NtlStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(NtlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives this call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(NtlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn optional_string<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        // SAFETY: forwarded caller contract.
        unsafe { string(p, what) }.map(Some)
    }
}

unsafe fn date(p: *const c_char, what: &str) -> Result<NaiveDate, Fail> {
    // SAFETY: forwarded caller contract.
    let s = unsafe { string(p, what) }?;
    s.parse()
        .map_err(|e| Fail(NtlStatus::Parse, format!("{what} `{s}` is not a YYYY-MM-DD date: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` is a valid, writable pointer slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn json_err(e: serde_json::Error) -> Fail {
    Fail(NtlStatus::Config, e.to_string())
}

/// Last error message on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ntl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn ntl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntl_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Builds a series from `len` values; `gap_mask` may be null (nothing masked).
///
/// # Safety
/// Strings are NUL-terminated; `values` (and `gap_mask` if non-null) hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_from_values(
    zone_id: *const c_char,
    start_date: *const c_char,
    values: *const f64,
    gap_mask: *const u8,
    len: usize,
    out: *mut *mut NtlSeries,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let zone = unsafe { string(zone_id, "zone_id") }?;
        let start = unsafe { date(start_date, "start_date") }?;
        if values.is_null() {
            return Err(null("values"));
        }
        let values = unsafe { std::slice::from_raw_parts(values, len) }.to_vec();
        let mask = if gap_mask.is_null() {
            vec![false; len]
        } else {
            unsafe { std::slice::from_raw_parts(gap_mask, len) }.iter().map(|&g| g != 0).collect()
        };
        let values = values.iter().zip(&mask).map(|(&v, &m)| if m { f64::NAN } else { v }).collect();
        let s = ingest::NtlSeries::new(zone, start, values, mask)?;
        unsafe { put(out, NtlSeries(s)) }
    })
}

/// Reads a pixel or zone CSV and smooths it over `smoothing_window` days.
///
/// # Safety
/// Strings are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_load(
    path: *const c_char,
    zone_id: *const c_char,
    smoothing_window: usize,
    out: *mut *mut NtlSeries,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let path = unsafe { string(path, "path") }?;
        let zone = unsafe { string(zone_id, "zone_id") }?;
        let s = ingest::ingest_file(Path::new(path), zone, smoothing_window)?;
        unsafe { put(out, NtlSeries(s)) }
    })
}

/// Generates a preset scenario (`disaster`, `conflict`, `urbanization`, `none`).
///
/// # Safety
/// `preset` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_simulate(preset: *const c_char, seed: u64, out: *mut *mut NtlSeries) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let name = unsafe { string(preset, "preset") }?;
        let sc = synth::generate(&synth::presets::by_name(name, seed)?)?;
        unsafe { put(out, NtlSeries(sc.series)) }
    })
}

/// Number of days in the series (0 for null).
///
/// # Safety
/// `series` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_len(series: *const NtlSeries) -> usize {
    // SAFETY: caller contract above.
    unsafe { series.as_ref() }.map_or(0, |s| s.0.len())
}

/// Copies up to `len` values into `out`; masked days are NaN.
///
/// # Safety
/// `series` is a live handle; `out` holds `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_values(series: *const NtlSeries, out: *mut f64, len: usize) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let s = unsafe { handle(series, "series") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = len.min(s.0.len());
        unsafe { std::slice::from_raw_parts_mut(out, n) }.copy_from_slice(&s.0.values[..n]);
        Ok(())
    })
}

/// # Safety
/// `series` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ntl_series_free(series: *mut NtlSeries) {
    if !series.is_null() {
        // SAFETY: produced by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(series) });
    }
}

/// Trains FCNN, CNN and LSTM on the series up to `training_end`.
/// `train_config_json` may be null for defaults.
///
/// # Safety
/// Handles are live; strings are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_train(
    series: *const NtlSeries,
    training_end: *const c_char,
    train_config_json: *const c_char,
    out: *mut *mut NtlModelSet,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let s = unsafe { handle(series, "series") }?;
        let end = unsafe { date(training_end, "training_end") }?;
        let cfg: TrainConfig = match unsafe { optional_string(train_config_json, "train_config_json") }? {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => TrainConfig::default(),
        };
        let models = pipeline::train_models(&s.0, end, &cfg)?.into_iter().map(|(m, _)| m).collect();
        unsafe { put(out, NtlModelSet(models)) }
    })
}

fn checkpoint_file(dir: &Path, id: ArchitectureId) -> std::path::PathBuf {
    dir.join(format!("{}.json", id.as_str().to_lowercase()))
}

/// Loads `fcnn.json`, `cnn.json` and `lstm.json` from `dir`, skipping absent files.
///
/// # Safety
/// `dir` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_load(dir: *const c_char, out: *mut *mut NtlModelSet) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let dir = Path::new(unsafe { string(dir, "dir") }?);
        let mut models = Vec::new();
        for id in ArchitectureId::ALL {
            let p = checkpoint_file(dir, id);
            if p.exists() {
                models.push(ForecastModel::load(&p)?);
            }
        }
        if models.is_empty() {
            return Err(Fail(NtlStatus::Checkpoint, format!("no checkpoints in {}", dir.display())));
        }
        unsafe { put(out, NtlModelSet(models)) }
    })
}

/// Writes one checkpoint per model into the existing directory `dir`.
///
/// # Safety
/// `models` is live; `dir` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_save(models: *const NtlModelSet, dir: *const c_char) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let m = unsafe { handle(models, "models") }?;
        let dir = Path::new(unsafe { string(dir, "dir") }?);
        for model in &m.0 {
            model.save(&checkpoint_file(dir, model.architecture))?;
        }
        Ok(())
    })
}

/// Number of models in the set (0 for null).
///
/// # Safety
/// `models` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_count(models: *const NtlModelSet) -> usize {
    // SAFETY: caller contract above.
    unsafe { models.as_ref() }.map_or(0, |m| m.0.len())
}

/// One forecast of `output_len` (= w_o) values from `input_len` (= w_i) inputs.
///
/// # Safety
/// `models` is live; `input` and `output` hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_predict(
    models: *const NtlModelSet,
    architecture: NtlArchitecture,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let m = unsafe { handle(models, "models") }?;
        let id = ArchitectureId::from(architecture);
        let model = m
            .0
            .iter()
            .find(|x| x.architecture == id)
            .ok_or_else(|| Fail(NtlStatus::Validation, format!("no {id} model in the set")))?;
        if input.is_null() || output.is_null() {
            return Err(null("input/output"));
        }
        if output_len != model.output_window() {
            return Err(Fail(
                NtlStatus::Shape,
                format!("output buffer holds {output_len} values, model emits {}", model.output_window()),
            ));
        }
        let x = unsafe { std::slice::from_raw_parts(input, input_len) };
        let y = model.predict(x)?;
        unsafe { std::slice::from_raw_parts_mut(output, output_len) }.copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `models` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ntl_models_free(models: *mut NtlModelSet) {
    if !models.is_null() {
        // SAFETY: produced by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(models) });
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DetectOptions {
    weights: EnsembleWeights,
    detect: DetectConfig,
}

/// Forecasts and detects. `options_json` may be null, or `{"weights": {...}, "detect": {...}}`.
///
/// # Safety
/// Handles are live; strings are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_detect(
    models: *const NtlModelSet,
    series: *const NtlSeries,
    training_end: *const c_char,
    options_json: *const c_char,
    out: *mut *mut NtlReport,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let m = unsafe { handle(models, "models") }?;
        let s = unsafe { handle(series, "series") }?;
        let end = unsafe { date(training_end, "training_end") }?;
        let opts: DetectOptions = match unsafe { optional_string(options_json, "options_json") }? {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => DetectOptions::default(),
        };
        let weights = opts.weights.normalized()?;
        let members: Vec<ForecastModel> = m
            .0
            .iter()
            .filter(|x| weights.get(x.architecture).is_some())
            .cloned()
            .collect();
        let (_, report) = pipeline::run_detection(&members, &s.0, end, &weights, &opts.detect)?;
        unsafe { put(out, NtlReport(report)) }
    })
}

/// The report as JSON; free with [`ntl_string_free`].
///
/// # Safety
/// `report` is live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_json(report: *const NtlReport, out: *mut *mut c_char) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let r = unsafe { handle(report, "report") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(&r.0).map_err(|e| Fail(NtlStatus::Json, e.to_string()))?;
        let c = CString::new(text).map_err(|e| Fail(NtlStatus::Json, e.to_string()))?;
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// Number of monitored steps in the report (0 for null).
///
/// # Safety
/// `report` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_step_count(report: *const NtlReport) -> usize {
    // SAFETY: caller contract above.
    unsafe { report.as_ref() }.map_or(0, |r| r.0.steps.len())
}

/// Writes 1 for each persistent flagged step, else 0, for the first `len` monitored steps.
///
/// # Safety
/// `report` is live; `out` holds `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_persistent_flags(report: *const NtlReport, out: *mut u8, len: usize) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let r = unsafe { handle(report, "report") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = len.min(r.0.steps.len());
        let dst = unsafe { std::slice::from_raw_parts_mut(out, n) };
        for (d, s) in dst.iter_mut().zip(&r.0.steps) {
            *d = u8::from(s.persistent);
        }
        Ok(())
    })
}

/// Number of persistent segments (0 for null).
///
/// # Safety
/// `report` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_segment_count(report: *const NtlReport) -> usize {
    // SAFETY: caller contract above.
    unsafe { report.as_ref() }.map_or(0, |r| r.0.segments.len())
}

/// Segment `index`, with days counted from the first monitored step.
///
/// # Safety
/// `report` is live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_segment(report: *const NtlReport, index: usize, out: *mut NtlSegment) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let r = unsafe { handle(report, "report") }?;
        let seg = r.0.segments.get(index).ok_or_else(|| {
            Fail(NtlStatus::OutOfRange, format!("segment {index} of {}", r.0.segments.len()))
        })?;
        let origin = r.0.steps.first().map_or(seg.s, |s| s.date);
        let day = |d: NaiveDate| (d - origin).num_days();
        let value = NtlSegment {
            start: day(seg.s),
            inflection: day(seg.i),
            end: day(seg.e),
            open: seg.open,
            lambda_s: seg.lambda_s,
            lambda_e: seg.lambda_e,
            mean_severity: seg.mean_severity,
            direction: seg.direction,
        };
        // SAFETY: caller contract above.
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = value;
        Ok(())
    })
}

/// Scores the report against ground-truth CSV text (`zone_id,start,end,change_type,unit`).
///
/// # Safety
/// `report` is live; `truth_csv` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_evaluate(
    report: *const NtlReport,
    truth_csv: *const c_char,
    beta: f64,
    out: *mut NtlEval,
) -> NtlStatus {
    guard(|| {
        // SAFETY: caller contract above.
        let r = unsafe { handle(report, "report") }?;
        let truth = parse_ground_truth(unsafe { string(truth_csv, "truth_csv") }?)?;
        let e = evaluate(&r.0, &truth, beta)?;
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = NtlEval {
            recall: e.recall.unwrap_or(f64::NAN),
            precision: e.precision.unwrap_or(f64::NAN),
            f_beta: e.f_beta.unwrap_or(f64::NAN),
            has_delay: e.delay.is_some(),
            delay: e.delay.unwrap_or(0),
            tp: e.tp,
            fp: e.fp,
            fn_: e.fn_,
        };
        Ok(())
    })
}

/// # Safety
/// `report` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ntl_report_free(report: *mut NtlReport) {
    if !report.is_null() {
        // SAFETY: produced by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// F-β of precision `p` and recall `r`, both in [0, 1].
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ntl_f_beta(p: f64, r: f64, beta: f64, out: *mut f64) -> NtlStatus {
    guard(|| {
        let v = ntl_change::eval::f_beta(p, r, beta)?;
        // SAFETY: caller contract above.
        let slot = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *slot = v;
        Ok(())
    })
}
