//! C interface to `ensemble-var`.
//!
//! Every fallible function returns an [`EvStatus`]; on failure the message
//! is available from [`ev_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned to
//! the caller are released with [`ev_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ensemble_var::detection::{detect_on_series, DetectionConfig};
use ensemble_var::experiment::{run_experiment, ExperimentConfig, ScenarioConfig};
use ensemble_var::order_selection::{select_order, BicCurve, Criterion, CriterionConfig};
use ensemble_var::panel::{extract_panel, EnsemblePanel, PeriEventWindow, RefSource, ReferencePointList, TimeSeries};
use ensemble_var::{io, Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvCriterion {
    EnsembleBic = 0,
    EnsembleBicFull = 1,
    EnsembleAic = 2,
    ClassicalBicT1 = 3,
}

/// One row of a BIC curve. Scores are negated log-evidences (smaller is better).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvOrderScore {
    pub p: usize,
    pub log_likelihood: f64,
    pub penalty_approx: f64,
    pub score_approx: f64,
    pub score_full: f64,
    pub score_aic: f64,
}

pub struct EvSeries(TimeSeries);
pub struct EvRefs(ReferencePointList);
pub struct EvPanel(EnsemblePanel);
pub struct EvCurve(BicCurve);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> EvStatus {
    match e.kind() {
        ErrorKind::Config => EvStatus::InvalidArgument,
        ErrorKind::Numerical => EvStatus::Numerical,
        ErrorKind::Io => EvStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            EvStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            EvStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            EvStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

/// Optional JSON: a null pointer yields the default value.
unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &'static str) -> Result<T, Fail> {
    if p.is_null() {
        return Ok(T::default());
    }
    serde_json::from_str(string(p, what)?).map_err(|e| Fail::Arg(format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn ev_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ev_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ev_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `len × channels` row-major samples into a new series.
///
/// # Safety
/// `data` must point to `len * channels` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ev_series_new(
    data: *const f64,
    len: usize,
    channels: usize,
    sample_rate: f64,
    out: *mut *mut EvSeries,
) -> EvStatus {
    guard(|| {
        let n = len.checked_mul(channels).ok_or(Fail::Arg("size overflow".into()))?;
        let data = slice(data, n, "data")?.to_vec();
        put(out, EvSeries(TimeSeries::from_rows(data, channels, sample_rate)?))
    })
}

/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_series_free(series: *mut EvSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_series_shape(series: *const EvSeries, len: *mut usize, channels: *mut usize) -> EvStatus {
    guard(|| {
        let s = &as_ref(series, "series")?.0;
        if !len.is_null() {
            *len = s.len();
        }
        if !channels.is_null() {
            *channels = s.channels();
        }
        Ok(())
    })
}

/// Copies the samples into `buf` (`capacity` doubles, row-major).
///
/// # Safety
/// `buf` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ev_series_copy(series: *const EvSeries, buf: *mut f64, capacity: usize) -> EvStatus {
    guard(|| {
        let data = as_ref(series, "series")?.0.data();
        copy_out(data, buf, capacity)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, capacity: usize) -> Result<(), Fail> {
    if capacity < src.len() {
        return Err(Fail::Arg(format!("buffer holds {capacity}, need {}", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Fail::Null("buf"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Simulates a scenario. `scenario_json` may be null for the default bivariate VAR(4).
///
/// # Safety
/// Pointers must be valid; both outputs receive new handles.
#[no_mangle]
pub unsafe extern "C" fn ev_simulate(
    scenario_json: *const c_char,
    out_series: *mut *mut EvSeries,
    out_refs: *mut *mut EvRefs,
) -> EvStatus {
    guard(|| {
        if out_series.is_null() || out_refs.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg: ScenarioConfig = json_or_default(scenario_json, "scenario_json")?;
        cfg.validate()?;
        let (series, refs) = cfg.simulate()?;
        put(out_series, EvSeries(series))?;
        put(out_refs, EvRefs(refs))
    })
}

/// # Safety
/// `points` must hold `len` strictly increasing indices.
#[no_mangle]
pub unsafe extern "C" fn ev_refs_new(points: *const usize, len: usize, out: *mut *mut EvRefs) -> EvStatus {
    guard(|| {
        let points = slice(points, len, "points")?.to_vec();
        put(out, EvRefs(ReferencePointList::new(points, RefSource::GroundTruth)?))
    })
}

/// # Safety
/// `refs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_refs_free(refs: *mut EvRefs) {
    if !refs.is_null() {
        drop(Box::from_raw(refs));
    }
}

/// # Safety
/// `refs` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_refs_len(refs: *const EvRefs) -> usize {
    refs.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `buf` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn ev_refs_copy(refs: *const EvRefs, buf: *mut usize, capacity: usize) -> EvStatus {
    guard(|| copy_out(as_ref(refs, "refs")?.0.points(), buf, capacity))
}

/// Filters and thresholds one channel. `config_json` may be null for defaults.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ev_detect(
    series: *const EvSeries,
    config_json: *const c_char,
    out: *mut *mut EvRefs,
) -> EvStatus {
    guard(|| {
        let s = &as_ref(series, "series")?.0;
        let cfg: DetectionConfig = json_or_default(config_json, "config_json")?;
        cfg.validate(s.sample_rate())?;
        if cfg.channel >= s.channels() {
            return Err(Fail::Arg(format!("channel {} out of range", cfg.channel)));
        }
        put(out, EvRefs(detect_on_series(s, &cfg)?.refs))
    })
}

/// Window is `[start_offset, end_offset)` samples around each reference.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_extract(
    series: *const EvSeries,
    refs: *const EvRefs,
    start_offset: i64,
    end_offset: i64,
    out: *mut *mut EvPanel,
) -> EvStatus {
    guard(|| {
        let s = &as_ref(series, "series")?.0;
        let r = &as_ref(refs, "refs")?.0;
        let window = PeriEventWindow::new(start_offset, end_offset)?;
        put(out, EvPanel(extract_panel(s, r, window)?))
    })
}

/// Copies an `n_trials × n_times × channels` array (trial-major) into a panel.
///
/// # Safety
/// `data` must hold `n_trials * n_times * channels` doubles.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_new(
    data: *const f64,
    n_trials: usize,
    n_times: usize,
    channels: usize,
    sample_rate: f64,
    out: *mut *mut EvPanel,
) -> EvStatus {
    guard(|| {
        let n = n_trials
            .checked_mul(n_times)
            .and_then(|v| v.checked_mul(channels))
            .ok_or(Fail::Arg("size overflow".into()))?;
        let data = slice(data, n, "data")?.to_vec();
        let names = (0..channels).map(|c| format!("ch{c}")).collect();
        let panel = EnsemblePanel::new(
            data,
            n_trials,
            n_times,
            channels,
            sample_rate,
            PeriEventWindow::centered(n_times),
            "external",
            names,
        )?;
        put(out, EvPanel(panel))
    })
}

/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_free(panel: *mut EvPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; null outputs are skipped.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_shape(
    panel: *const EvPanel,
    n_trials: *mut usize,
    n_times: *mut usize,
    channels: *mut usize,
) -> EvStatus {
    guard(|| {
        let p = &as_ref(panel, "panel")?.0;
        for (slot, v) in [(n_trials, p.n_trials()), (n_times, p.n_times()), (channels, p.channels())] {
            if !slot.is_null() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Reads a panel from its JSON sidecar path.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_read(path: *const c_char, out: *mut *mut EvPanel) -> EvStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, EvPanel(io::read_panel(Path::new(path))?))
    })
}

/// Writes the JSON sidecar at `path` and the `.bin` blob next to it.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ev_panel_write(panel: *const EvPanel, path: *const c_char) -> EvStatus {
    guard(|| {
        let p = &as_ref(panel, "panel")?.0;
        Ok(io::write_panel(Path::new(string(path, "path")?), p)?)
    })
}

/// Scans orders `p_min..=p_max` on the panel.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ev_select_order(
    panel: *const EvPanel,
    criterion: EvCriterion,
    p_min: usize,
    p_max: usize,
    ridge: f64,
    out: *mut *mut EvCurve,
) -> EvStatus {
    guard(|| {
        let p = &as_ref(panel, "panel")?.0;
        let cfg = CriterionConfig {
            criterion: match criterion {
                EvCriterion::EnsembleBic => Criterion::EnsembleBic,
                EvCriterion::EnsembleBicFull => Criterion::EnsembleBicFull,
                EvCriterion::EnsembleAic => Criterion::EnsembleAic,
                EvCriterion::ClassicalBicT1 => Criterion::ClassicalBicT1,
            },
            p_min,
            p_max,
            ridge,
            ..CriterionConfig::default()
        };
        put(out, EvCurve(select_order(p, &cfg)?))
    })
}

/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_curve_free(curve: *mut EvCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Number of orders scored.
///
/// # Safety
/// `curve` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_curve_len(curve: *const EvCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.scores.len())
}

/// Selected orders for the configured criterion and both BIC forms.
///
/// # Safety
/// `curve` must be a live handle; null outputs are skipped.
#[no_mangle]
pub unsafe extern "C" fn ev_curve_selected(
    curve: *const EvCurve,
    selected: *mut usize,
    selected_approx: *mut usize,
    selected_full: *mut usize,
) -> EvStatus {
    guard(|| {
        let c = &as_ref(curve, "curve")?.0;
        for (slot, v) in [
            (selected, c.selected_p),
            (selected_approx, c.selected_p_approx),
            (selected_full, c.selected_p_full),
        ] {
            if !slot.is_null() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `curve` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ev_curve_score(curve: *const EvCurve, index: usize, out: *mut EvOrderScore) -> EvStatus {
    guard(|| {
        let c = &as_ref(curve, "curve")?.0;
        let s = c
            .scores
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("index {index} out of range for {} orders", c.scores.len())))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = EvOrderScore {
            p: s.p,
            log_likelihood: s.log_likelihood,
            penalty_approx: s.penalty_approx,
            score_approx: s.score_approx,
            score_full: s.score_full,
            score_aic: s.score_aic,
        };
        Ok(())
    })
}

/// The whole curve as JSON; free with [`ev_string_free`].
///
/// # Safety
/// `curve` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ev_curve_to_json(curve: *const EvCurve, out: *mut *mut c_char) -> EvStatus {
    guard(|| {
        let c = &as_ref(curve, "curve")?.0;
        let text = serde_json::to_string(c).map_err(|e| Fail::Arg(e.to_string()))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = to_c_string(text);
        Ok(())
    })
}

/// Runs the three-alignment experiment and returns the report as JSON.
/// `config_json` may be null for the default configuration.
///
/// # Safety
/// Pointers must be valid; free the report with [`ev_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ev_run_experiment(config_json: *const c_char, out_report_json: *mut *mut c_char) -> EvStatus {
    guard(|| {
        if out_report_json.is_null() {
            return Err(Fail::Null("out_report_json"));
        }
        let cfg: ExperimentConfig = json_or_default(config_json, "config_json")?;
        let report = run_experiment(&cfg)?;
        let text = serde_json::to_string(&report).map_err(|e| Fail::Arg(e.to_string()))?;
        *out_report_json = to_c_string(text);
        Ok(())
    })
}
