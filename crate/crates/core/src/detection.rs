//! Event detection: FIR bandpass, zero-phase filtering, thresholding and
//! reference-point extraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{extract_panel, EnsemblePanel, PeriEventWindow, RefSource, ReferencePointList, TimeSeries};

/// Linear-phase FIR bandpass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub coefficients: Vec<f64>,
    pub band: (f64, f64),
    pub design_order: usize,
    pub sample_rate: f64,
}

impl FirFilter {
    /// `|H(f)|` of the coefficients.
    pub fn gain(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        let (re, im) = self
            .coefficients
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (k, c)| {
                (re + c * (w * k as f64).cos(), im - c * (w * k as f64).sin())
            });
        re.hypot(im)
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc bandpass with `order + 1` taps, scaled to unit gain
/// at the band center.
pub fn design_fir_bandpass(order: usize, f_lo: f64, f_hi: f64, sample_rate: f64) -> Result<FirFilter> {
    let nyquist = sample_rate / 2.0;
    if order == 0 {
        return Err(Error::Config("filter order must be at least 1".into()));
    }
    if !(sample_rate > 0.0 && f_lo > 0.0 && f_lo < f_hi && f_hi < nyquist) {
        return Err(Error::Config(format!(
            "band [{f_lo}, {f_hi}] Hz must satisfy 0 < lo < hi < Nyquist ({nyquist} Hz)"
        )));
    }
    let taps = order + 1;
    let alpha = order as f64 / 2.0;
    let (lo, hi) = (f_lo / nyquist, f_hi / nyquist);
    let mut h = vec![0.0; taps];
    for i in 0..=order / 2 {
        let m = i as f64 - alpha;
        let ideal = hi * sinc(hi * m) - lo * sinc(lo * m);
        let window = 0.54 - 0.46 * (2.0 * PI * i as f64 / order as f64).cos();
        h[i] = ideal * window;
        h[order - i] = h[i];
    }
    let center = 0.5 * (f_lo + f_hi) / sample_rate;
    let scale: f64 = h
        .iter()
        .enumerate()
        .map(|(i, c)| c * (2.0 * PI * center * (i as f64 - alpha)).cos())
        .sum();
    h.iter_mut().for_each(|c| *c /= scale);
    Ok(FirFilter {
        coefficients: h,
        band: (f_lo, f_hi),
        design_order: order,
        sample_rate,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Forward-backward: squared magnitude response, no delay.
    #[default]
    ZeroPhase,
    /// One causal pass, shifted back by `order / 2` samples.
    SinglePass,
}

fn convolve_causal(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            h.iter()
                .take(n + 1)
                .enumerate()
                .map(|(k, c)| c * x[n - k])
                .sum()
        })
        .collect()
}

/// Odd (point) reflection about both end samples.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
    out
}

/// Filters one channel; the output has the input's length and sample rate.
pub fn filter_signal(series: &TimeSeries, filter: &FirFilter, channel: usize, mode: FilterMode) -> Result<TimeSeries> {
    if channel >= series.channels() {
        return Err(Error::Config(format!(
            "channel {channel} out of range for {} channels",
            series.channels()
        )));
    }
    let taps = filter.len();
    if series.len() < 3 * taps {
        return Err(Error::InvalidSeries(format!(
            "series of {} samples is shorter than 3x the filter length ({taps})",
            series.len()
        )));
    }
    let x = series.channel(channel);
    let pad = taps;
    let ext = reflect_pad(&x, pad);
    let out = match mode {
        FilterMode::ZeroPhase => {
            let mut y = convolve_causal(&ext, &filter.coefficients);
            y.reverse();
            let mut y = convolve_causal(&y, &filter.coefficients);
            y.reverse();
            y[pad..pad + x.len()].to_vec()
        }
        FilterMode::SinglePass => {
            let y = convolve_causal(&ext, &filter.coefficients);
            let delay = filter.design_order / 2;
            y[pad + delay..pad + delay + x.len()].to_vec()
        }
    };
    let name = format!("{}_filtered", series.channel_names()[channel]);
    TimeSeries::new(out, 1, series.sample_rate(), vec![name])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefPolicy {
    /// Every suprathreshold sample.
    AllPoints,
    /// First sample of each (merged) suprathreshold run.
    SegmentOnset,
    /// Largest sample of each (merged) suprathreshold run.
    #[default]
    SegmentPeak,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Raw,
    /// Threshold `|y|` instead of `y`.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub channel: usize,
    pub band_lo: f64,
    pub band_hi: f64,
    pub filter_order: usize,
    /// Threshold is `mean + k · std`; `f64::INFINITY` disables detection.
    pub threshold_k: f64,
    pub ref_policy: RefPolicy,
    /// Runs whose gap is below this many samples are merged.
    pub min_separation: usize,
    pub threshold_mode: ThresholdMode,
    pub filter_mode: FilterMode,
    /// Panel label such as `cause` or `effect`; defaults to the channel name.
    pub label: Option<String>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            channel: 0,
            band_lo: 50.0,
            band_hi: 70.0,
            filter_order: 49,
            threshold_k: 3.0,
            ref_policy: RefPolicy::SegmentPeak,
            min_separation: 200,
            threshold_mode: ThresholdMode::Raw,
            filter_mode: FilterMode::ZeroPhase,
            label: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        if !(self.band_lo > 0.0 && self.band_lo < self.band_hi && self.band_hi < nyquist) {
            return Err(Error::Config(format!(
                "band [{}, {}] Hz must satisfy 0 < lo < hi < Nyquist ({nyquist} Hz)",
                self.band_lo, self.band_hi
            )));
        }
        if !(self.threshold_k > 0.0) {
            return Err(Error::Config(format!(
                "threshold multiplier must be positive, got {}",
                self.threshold_k
            )));
        }
        if self.filter_order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub refs: ReferencePointList,
    pub filtered: TimeSeries,
    pub threshold: f64,
    pub trace_mean: f64,
    pub trace_std: f64,
    pub config: DetectionConfig,
}

/// Thresholds a single-channel filtered trace and emits reference points.
pub fn detect_events(filtered: &TimeSeries, config: &DetectionConfig) -> Result<DetectionResult> {
    if filtered.channels() != 1 {
        return Err(Error::Config(format!(
            "detection expects a single-channel trace, got {} channels",
            filtered.channels()
        )));
    }
    if !(config.threshold_k > 0.0) {
        return Err(Error::Config("threshold multiplier must be positive".into()));
    }
    let values: Vec<f64> = match config.threshold_mode {
        ThresholdMode::Raw => filtered.data().to_vec(),
        ThresholdMode::Absolute => filtered.data().iter().map(|v| v.abs()).collect(),
    };
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Filtering a constant leaves roundoff-level wiggle, not a usable spread.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(std > 1e-12 * scale) {
        return Err(Error::ZeroVariance);
    }
    let threshold = mean + config.threshold_k * std;

    let mut points = Vec::new();
    if threshold.is_finite() {
        let above: Vec<usize> = (0..values.len()).filter(|&i| values[i] > threshold).collect();
        match config.ref_policy {
            RefPolicy::AllPoints => points = above,
            RefPolicy::SegmentOnset | RefPolicy::SegmentPeak => {
                for (start, end) in merged_runs(&above, config.min_separation) {
                    let p = match config.ref_policy {
                        RefPolicy::SegmentOnset => start,
                        _ => (start..=end)
                            .filter(|&i| values[i] > threshold)
                            .fold(start, |best, i| if values[i] > values[best] { i } else { best }),
                    };
                    points.push(p);
                }
            }
        }
    }
    Ok(DetectionResult {
        refs: ReferencePointList::new(points, RefSource::Channel(config.channel))?,
        filtered: filtered.clone(),
        threshold,
        trace_mean: mean,
        trace_std: std,
        config: config.clone(),
    })
}

/// Groups sorted suprathreshold indices into `(first, last)` runs, merging
/// runs separated by fewer than `min_separation` samples.
fn merged_runs(above: &[usize], min_separation: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &i in above {
        match runs.last_mut() {
            Some((_, end)) if i == *end + 1 || i - *end < min_separation => *end = i,
            _ => runs.push((i, i)),
        }
    }
    runs
}

/// Design, filter and threshold one channel of `series`.
pub fn detect_on_series(series: &TimeSeries, config: &DetectionConfig) -> Result<DetectionResult> {
    config.validate(series.sample_rate())?;
    let filter = design_fir_bandpass(config.filter_order, config.band_lo, config.band_hi, series.sample_rate())?;
    let filtered = filter_signal(series, &filter, config.channel, config.filter_mode)?;
    detect_events(&filtered, config)
}

/// How trials are anchored.
#[derive(Debug, Clone, PartialEq)]
pub enum Alignment {
    GroundTruth(ReferencePointList),
    Detected(DetectionConfig),
}

#[derive(Debug, Clone)]
pub struct AlignedPanel {
    pub panel: EnsemblePanel,
    pub detection: Option<DetectionResult>,
}

/// Detection (unless ground truth is given) followed by panel extraction.
pub fn align_and_extract(series: &TimeSeries, alignment: &Alignment, window: PeriEventWindow) -> Result<AlignedPanel> {
    match alignment {
        Alignment::GroundTruth(refs) => Ok(AlignedPanel {
            panel: extract_panel(series, refs, window)?,
            detection: None,
        }),
        Alignment::Detected(config) => {
            if config.channel >= series.channels() {
                return Err(Error::Config(format!(
                    "alignment channel {} out of range for {} channels",
                    config.channel,
                    series.channels()
                )));
            }
            let detection = detect_on_series(series, config)?;
            let mut panel = extract_panel(series, &detection.refs, window)?;
            let label = config
                .label
                .clone()
                .unwrap_or_else(|| series.channel_names()[config.channel].clone());
            panel.set_alignment_label(label);
            Ok(AlignedPanel {
                panel,
                detection: Some(detection),
            })
        }
    }
}
