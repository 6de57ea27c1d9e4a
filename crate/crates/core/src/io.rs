//! On-disk formats.
//!
//! Binary containers are a JSON sidecar plus a raw little-endian `f64`
//! blob next to it (same stem, `.bin` extension). CSV files always carry a
//! header row.
//!
//! | artifact        | binary layout                          | CSV columns                                   |
//! |-----------------|----------------------------------------|-----------------------------------------------|
//! | panel           | trial, then time, then channel         | `trial,time,<channels...>`                    |
//! | time series     | sample, then channel                   | `sample,time_s,<channels...>`                 |
//! | reference list  | –                                      | `sample_index,time_s`                         |
//! | fitted model    | per t: `A_t` (row-major), `k_t`, `Σ_t` | –                                             |
//! | fit summary     | –                                      | `t,log_det_sigma,log_det_sigma_xp`            |
//! | BIC curve       | JSON                                   | `p,loglik,penalty_approx,score_approx,...`    |
//! | panel stats     | –                                      | `t,offset,mean_<ch>...,var_<ch>...`           |
//! | FIR filter      | –                                      | `index,coefficient`                           |

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionResult, FirFilter};
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, FitSummary, TimeVaryingVarModel};
use crate::order_selection::BicCurve;
use crate::panel::{EnsemblePanel, PanelStats, PeriEventWindow, RefSource, ReferencePointList, TimeSeries};

pub const BYTE_ORDER: &str = "little";
pub const DTYPE: &str = "f64";

fn blob_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

fn blob_name(sidecar: &Path) -> String {
    blob_path(sidecar)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f64_le(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    create_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e))
}

fn write_row<I, S>(w: &mut csv::Writer<File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::format(path, e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_records(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = r.headers().map_err(|e| Error::format(path, e))?.clone();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e))?;
    Ok((header, rows))
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, i: usize) -> Result<T> {
    row.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad value in column {i} of row {row:?}")))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelHeader {
    pub format: String,
    pub version: u32,
    pub n_trials: usize,
    pub n_times: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub window: PeriEventWindow,
    pub alignment_label: String,
    pub channel_names: Vec<String>,
    pub reference_points: Vec<usize>,
    pub dropped: usize,
    pub data_file: String,
    pub byte_order: String,
    pub dtype: String,
    pub layout: String,
}

/// Writes `path` (JSON sidecar) and the sibling `.bin` blob.
pub fn write_panel(path: &Path, panel: &EnsemblePanel) -> Result<()> {
    let header = PanelHeader {
        format: "ensemble-panel".into(),
        version: 1,
        n_trials: panel.n_trials(),
        n_times: panel.n_times(),
        channels: panel.channels(),
        sample_rate: panel.sample_rate(),
        window: panel.window(),
        alignment_label: panel.alignment_label().to_string(),
        channel_names: panel.channel_names().to_vec(),
        reference_points: panel.reference_points().to_vec(),
        dropped: panel.dropped(),
        data_file: blob_name(path),
        byte_order: BYTE_ORDER.into(),
        dtype: DTYPE.into(),
        layout: "trial,time,channel".into(),
    };
    write_json(path, &header)?;
    write_f64_le(&blob_path(path), panel.data())
}

pub fn read_panel(path: &Path) -> Result<EnsemblePanel> {
    let header: PanelHeader = read_json(path)?;
    if header.format != "ensemble-panel" {
        return Err(Error::format(path, format!("not a panel file (format `{}`)", header.format)));
    }
    let blob = path.with_file_name(&header.data_file);
    let data = read_f64_le(&blob, header.n_trials * header.n_times * header.channels)?;
    let panel = EnsemblePanel::new(
        data,
        header.n_trials,
        header.n_times,
        header.channels,
        header.sample_rate,
        header.window,
        header.alignment_label,
        header.channel_names,
    )?;
    Ok(panel.with_provenance(header.reference_points, header.dropped))
}

/// One row per `(trial, time)`: `trial,time,<channels...>`.
pub fn write_panel_csv(path: &Path, panel: &EnsemblePanel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["trial".to_string(), "time".to_string()];
    header.extend(panel.channel_names().iter().cloned());
    write_row(&mut w, path, &header)?;
    for n in 0..panel.n_trials() {
        for t in 0..panel.n_times() {
            let mut row = vec![n.to_string(), t.to_string()];
            row.extend(panel.sample(n, t).iter().map(|v| fmt(*v)));
            write_row(&mut w, path, &row)?;
        }
    }
    finish(w, path)
}

/// Reads a panel CSV. Rows must be sorted by trial then time; the window
/// defaults to the centered one when `window` is `None`.
pub fn read_panel_csv(path: &Path, sample_rate: f64, window: Option<PeriEventWindow>) -> Result<EnsemblePanel> {
    let (header, rows) = csv_records(path)?;
    if header.len() < 3 || &header[0] != "trial" || &header[1] != "time" {
        return Err(Error::format(path, "expected header `trial,time,<channels...>`"));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let d = names.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    let (mut n_trials, mut n_times) = (0usize, 0usize);
    for row in &rows {
        let trial: usize = parse_field(path, row, 0)?;
        let t: usize = parse_field(path, row, 1)?;
        if t == 0 && trial != n_trials {
            return Err(Error::format(path, format!("trial {trial} out of order")));
        }
        if t == 0 {
            n_trials += 1;
        }
        n_times = n_times.max(t + 1);
        for c in 0..d {
            data.push(parse_field(path, row, c + 2)?);
        }
    }
    if n_trials * n_times != rows.len() {
        return Err(Error::format(path, "trials have unequal lengths"));
    }
    let window = window.unwrap_or_else(|| PeriEventWindow::centered(n_times));
    EnsemblePanel::new(data, n_trials, n_times, d, sample_rate, window, "csv", names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHeader {
    pub format: String,
    pub version: u32,
    pub len: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub data_file: String,
    pub byte_order: String,
    pub dtype: String,
    pub layout: String,
    /// Free-form provenance (generator, seed, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Writes a series as JSON sidecar + blob, or as CSV when `path` ends in `.csv`.
pub fn write_series(path: &Path, series: &TimeSeries, metadata: serde_json::Value) -> Result<()> {
    if is_csv(path) {
        return write_series_csv(path, series);
    }
    let header = SeriesHeader {
        format: "time-series".into(),
        version: 1,
        len: series.len(),
        channels: series.channels(),
        sample_rate: series.sample_rate(),
        channel_names: series.channel_names().to_vec(),
        data_file: blob_name(path),
        byte_order: BYTE_ORDER.into(),
        dtype: DTYPE.into(),
        layout: "sample,channel".into(),
        metadata,
    };
    write_json(path, &header)?;
    write_f64_le(&blob_path(path), series.data())
}

/// Reads either format; CSV needs `sample_rate` unless it can be recovered
/// from the `time_s` column.
pub fn read_series(path: &Path, sample_rate: Option<f64>) -> Result<TimeSeries> {
    if is_csv(path) {
        return read_series_csv(path, sample_rate);
    }
    let header: SeriesHeader = read_json(path)?;
    if header.format != "time-series" {
        return Err(Error::format(path, format!("not a series file (format `{}`)", header.format)));
    }
    let data = read_f64_le(&path.with_file_name(&header.data_file), header.len * header.channels)?;
    TimeSeries::new(data, header.channels, header.sample_rate, header.channel_names)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample".to_string(), "time_s".to_string()];
    header.extend(series.channel_names().iter().cloned());
    write_row(&mut w, path, &header)?;
    for t in 0..series.len() {
        let mut row = vec![t.to_string(), fmt(t as f64 / series.sample_rate())];
        row.extend(series.row(t).iter().map(|v| fmt(*v)));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

fn read_series_csv(path: &Path, sample_rate: Option<f64>) -> Result<TimeSeries> {
    let (header, rows) = csv_records(path)?;
    if header.len() < 3 || &header[0] != "sample" || &header[1] != "time_s" {
        return Err(Error::format(path, "expected header `sample,time_s,<channels...>`"));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let d = names.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for row in &rows {
        for c in 0..d {
            data.push(parse_field(path, row, c + 2)?);
        }
    }
    let rate = match sample_rate {
        Some(r) => r,
        None if rows.len() >= 2 => {
            let dt: f64 = parse_field::<f64>(path, &rows[1], 1)? - parse_field::<f64>(path, &rows[0], 1)?;
            1.0 / dt
        }
        None => return Err(Error::format(path, "cannot infer the sample rate from one row")),
    };
    TimeSeries::new(data, d, rate, names)
}

/// `sample_index,time_s`.
pub fn write_refs_csv(path: &Path, refs: &ReferencePointList, sample_rate: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, ["sample_index", "time_s"])?;
    for &r in refs.points() {
        write_row(&mut w, path, [r.to_string(), fmt(r as f64 / sample_rate)])?;
    }
    finish(w, path)
}

pub fn read_refs_csv(path: &Path, source: RefSource) -> Result<ReferencePointList> {
    let (header, rows) = csv_records(path)?;
    if header.is_empty() || &header[0] != "sample_index" {
        return Err(Error::format(path, "expected header `sample_index,time_s`"));
    }
    let points = rows
        .iter()
        .map(|row| parse_field(path, row, 0))
        .collect::<Result<Vec<usize>>>()?;
    ReferencePointList::new(points, source)
}

pub fn write_filter_csv(path: &Path, filter: &FirFilter) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, ["index", "coefficient"])?;
    for (i, c) in filter.coefficients.iter().enumerate() {
        write_row(&mut w, path, [i.to_string(), fmt(*c)])?;
    }
    finish(w, path)
}

/// Detection metadata echoed next to the reference CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetadata {
    pub n_refs: usize,
    pub source: RefSource,
    pub threshold: f64,
    pub trace_mean: f64,
    pub trace_std: f64,
    pub sample_rate: f64,
    pub config: crate::detection::DetectionConfig,
}

impl DetectionMetadata {
    pub fn from_result(r: &DetectionResult) -> Self {
        Self {
            n_refs: r.refs.len(),
            source: r.refs.source().clone(),
            threshold: r.threshold,
            trace_mean: r.trace_mean,
            trace_std: r.trace_std,
            sample_rate: r.filtered.sample_rate(),
            config: r.config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub channels: usize,
    pub eval_start: usize,
    pub eval_end: usize,
    pub n_trials: usize,
    pub options: FitOptions,
    pub data_file: String,
    pub byte_order: String,
    pub dtype: String,
    pub layout: String,
}

/// JSON header plus, for each `t`, `A_t` (row-major `d × pd`), `k_t`, `Σ_t` (row-major).
pub fn write_model(path: &Path, model: &TimeVaryingVarModel) -> Result<()> {
    let header = ModelHeader {
        format: "tv-var-model".into(),
        version: 1,
        order: model.order,
        channels: model.channels,
        eval_start: model.eval_range.start,
        eval_end: model.eval_range.end,
        n_trials: model.n_trials,
        options: model.options,
        data_file: blob_name(path),
        byte_order: BYTE_ORDER.into(),
        dtype: DTYPE.into(),
        layout: "per t: A_t row-major [d x pd], k_t [d], Sigma_t row-major [d x d]".into(),
    };
    let mut flat = Vec::new();
    for i in 0..model.t_eff() {
        let a = &model.coefficients[i];
        for r in 0..a.nrows() {
            flat.extend(a.row(r).iter());
        }
        flat.extend(model.innovation_means[i].iter());
        let s = &model.innovation_covariances[i];
        for r in 0..s.nrows() {
            flat.extend(s.row(r).iter());
        }
    }
    write_json(path, &header)?;
    write_f64_le(&blob_path(path), &flat)
}

pub fn read_model(path: &Path) -> Result<TimeVaryingVarModel> {
    let h: ModelHeader = read_json(path)?;
    if h.format != "tv-var-model" || h.eval_end < h.eval_start {
        return Err(Error::format(path, "not a model file"));
    }
    let (d, p) = (h.channels, h.order);
    let per_t = d * p * d + d + d * d;
    let t_eff = h.eval_end - h.eval_start;
    let flat = read_f64_le(&path.with_file_name(&h.data_file), per_t * t_eff)?;
    let mut model = TimeVaryingVarModel {
        order: p,
        channels: d,
        n_trials: h.n_trials,
        eval_range: h.eval_start..h.eval_end,
        options: h.options,
        coefficients: Vec::with_capacity(t_eff),
        innovation_means: Vec::with_capacity(t_eff),
        innovation_covariances: Vec::with_capacity(t_eff),
    };
    for chunk in flat.chunks_exact(per_t) {
        let (a, rest) = chunk.split_at(d * p * d);
        let (k, s) = rest.split_at(d);
        model.coefficients.push(DMatrix::from_row_slice(d, p * d, a));
        model.innovation_means.push(DVector::from_column_slice(k));
        model.innovation_covariances.push(DMatrix::from_row_slice(d, d, s));
    }
    Ok(model)
}

pub fn write_fit_summary_csv(path: &Path, summary: &FitSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, ["t", "log_det_sigma", "log_det_sigma_xp"])?;
    for (i, t) in summary.eval_range().enumerate() {
        write_row(
            &mut w,
            path,
            [t.to_string(), fmt(summary.log_det_sigma[i]), fmt(summary.log_det_sigma_xp[i])],
        )?;
    }
    finish(w, path)
}

/// `p,loglik,penalty_approx,score_approx,score_full,score_aic[,score_classical],selected_approx,selected_full,selected`.
pub fn write_bic_curve_csv(path: &Path, curve: &BicCurve) -> Result<()> {
    let classical = curve.scores.iter().any(|s| s.score_classical.is_some());
    let mut w = csv_writer(path)?;
    let mut header = vec!["p", "loglik", "penalty_approx", "score_approx", "score_full", "score_aic"];
    if classical {
        header.push("score_classical");
    }
    header.extend(["selected_approx", "selected_full", "selected"]);
    write_row(&mut w, path, &header)?;
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for s in &curve.scores {
        let mut row = vec![
            s.p.to_string(),
            fmt(s.log_likelihood),
            fmt(s.penalty_approx),
            fmt(s.score_approx),
            fmt(s.score_full),
            fmt(s.score_aic),
        ];
        if let Some(c) = s.score_classical {
            row.push(fmt(c));
        }
        row.push(flag(s.p == curve.selected_p_approx));
        row.push(flag(s.p == curve.selected_p_full));
        row.push(flag(s.p == curve.selected_p));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// `t,offset,mean_<ch>...,var_<ch>...`; `offset` is relative to the reference point.
pub fn write_panel_stats_csv(path: &Path, stats: &PanelStats, panel: &EnsemblePanel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string(), "offset".to_string()];
    header.extend(panel.channel_names().iter().map(|c| format!("mean_{c}")));
    header.extend(panel.channel_names().iter().map(|c| format!("var_{c}")));
    write_row(&mut w, path, &header)?;
    let start = panel.window().start_offset;
    for t in 0..stats.n_times {
        let mut row = vec![t.to_string(), (start + t as i64).to_string()];
        row.extend((0..stats.channels).map(|c| fmt(stats.mean_at(t, c))));
        row.extend((0..stats.channels).map(|c| fmt(stats.variance_at(t, c))));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}
