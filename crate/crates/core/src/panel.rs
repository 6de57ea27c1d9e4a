//! Multi-trial ensemble panels built from a long series and a list of
//! reference points.
//!
//! Storage is dense and trial-major: sample `(n, t, c)` lives at
//! `(n * T + t) * d + c`, so a fixed-`t` scan over trials touches `N`
//! short contiguous runs of `d` values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A long multichannel observation series, row-major `[len × channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Vec<f64>,
    channels: usize,
    sample_rate: f64,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(
        data: Vec<f64>,
        channels: usize,
        sample_rate: f64,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidSeries("at least one channel required".into()));
        }
        if data.is_empty() || data.len() % channels != 0 {
            return Err(Error::InvalidSeries(format!(
                "data length {} is not a positive multiple of {channels} channels",
                data.len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidSeries(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if channel_names.len() != channels {
            return Err(Error::InvalidSeries(format!(
                "{} channel names for {channels} channels",
                channel_names.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at sample {}, channel {}",
                i / channels,
                i % channels
            )));
        }
        Ok(Self {
            data,
            channels,
            sample_rate,
            channel_names,
        })
    }

    /// Builds a series with generated channel names `ch0, ch1, ...`.
    pub fn from_rows(data: Vec<f64>, channels: usize, sample_rate: f64) -> Result<Self> {
        let names = (0..channels).map(|c| format!("ch{c}")).collect();
        Self::new(data, channels, sample_rate, names)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

/// Where a list of reference points came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSource {
    GroundTruth,
    Channel(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePointList {
    points: Vec<usize>,
    source: RefSource,
}

impl ReferencePointList {
    pub fn new(points: Vec<usize>, source: RefSource) -> Result<Self> {
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "reference points must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points, source })
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn source(&self) -> &RefSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks every point lies inside a series of `len` samples.
    pub fn check_bounds(&self, len: usize) -> Result<()> {
        match self.points.last() {
            Some(&last) if last >= len => Err(Error::Config(format!(
                "reference point {last} outside series of length {len}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Half-open window `[start_offset, end_offset)` relative to a reference point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriEventWindow {
    pub start_offset: i64,
    pub end_offset: i64,
}

impl PeriEventWindow {
    pub fn new(start_offset: i64, end_offset: i64) -> Result<Self> {
        if end_offset <= start_offset {
            return Err(Error::Config(format!(
                "window end {end_offset} must exceed start {start_offset}"
            )));
        }
        Ok(Self {
            start_offset,
            end_offset,
        })
    }

    /// `[-T/2, T - T/2)`; for even `T` this is `[-T/2, T/2 - 1]` inclusive.
    /// Odd lengths put the extra sample after the reference point.
    pub fn centered(len: usize) -> Self {
        let half = (len / 2) as i64;
        Self {
            start_offset: -half,
            end_offset: len as i64 - half,
        }
    }

    /// Window given in milliseconds, converted at `sample_rate` by rounding.
    pub fn from_millis(start_ms: f64, end_ms: f64, sample_rate: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate / 1000.0).round() as i64;
        Self::new(to_samples(start_ms), to_samples(end_ms))
    }

    pub fn len(&self) -> usize {
        (self.end_offset - self.start_offset) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end_offset <= self.start_offset
    }
}

/// `N` trials × `T` time points × `d` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePanel {
    data: Vec<f64>,
    n_trials: usize,
    n_times: usize,
    channels: usize,
    sample_rate: f64,
    window: PeriEventWindow,
    alignment_label: String,
    channel_names: Vec<String>,
    reference_points: Vec<usize>,
    dropped: usize,
}

impl EnsemblePanel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: Vec<f64>,
        n_trials: usize,
        n_times: usize,
        channels: usize,
        sample_rate: f64,
        window: PeriEventWindow,
        alignment_label: impl Into<String>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if n_trials == 0 {
            return Err(Error::InvalidPanel("panel has no trials".into()));
        }
        if n_times < 2 {
            return Err(Error::InvalidPanel(format!(
                "panel needs at least 2 time points, got {n_times}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidPanel("panel has no channels".into()));
        }
        if data.len() != n_trials * n_times * channels {
            return Err(Error::InvalidPanel(format!(
                "data length {} != {n_trials} x {n_times} x {channels}",
                data.len()
            )));
        }
        if window.len() != n_times {
            return Err(Error::InvalidPanel(format!(
                "window length {} != panel length {n_times}",
                window.len()
            )));
        }
        if channel_names.len() != channels {
            return Err(Error::InvalidPanel(format!(
                "{} channel names for {channels} channels",
                channel_names.len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidPanel(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("panel contains non-finite values".into()));
        }
        Ok(Self {
            data,
            n_trials,
            n_times,
            channels,
            sample_rate,
            window,
            alignment_label: alignment_label.into(),
            channel_names,
            reference_points: Vec::new(),
            dropped: 0,
        })
    }

    /// Attaches the reference points that produced the trials and the drop count.
    pub fn with_provenance(mut self, reference_points: Vec<usize>, dropped: usize) -> Self {
        self.reference_points = reference_points;
        self.dropped = dropped;
        self
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn window(&self) -> PeriEventWindow {
        self.window
    }

    pub fn alignment_label(&self) -> &str {
        &self.alignment_label
    }

    pub fn set_alignment_label(&mut self, label: impl Into<String>) {
        self.alignment_label = label.into();
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Reference points that produced the retained trials, in trial order.
    /// Empty for panels not built by [`extract_panel`].
    pub fn reference_points(&self) -> &[usize] {
        &self.reference_points
    }

    /// Number of reference points dropped because their window left the series.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn sample(&self, n: usize, t: usize) -> &[f64] {
        let start = (n * self.n_times + t) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn value(&self, n: usize, t: usize, c: usize) -> f64 {
        self.data[(n * self.n_times + t) * self.channels + c]
    }

    pub fn trial(&self, n: usize) -> &[f64] {
        let len = self.n_times * self.channels;
        &self.data[n * len..(n + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelStats {
    pub n_times: usize,
    pub channels: usize,
    /// `[T × d]`, row-major.
    pub mean: Vec<f64>,
    /// Unbiased across-trial variance, `[T × d]`, row-major.
    pub variance: Vec<f64>,
    /// Set when the panel has a single trial and the variance is reported as zero.
    pub single_trial: bool,
}

impl PanelStats {
    pub fn mean_at(&self, t: usize, c: usize) -> f64 {
        self.mean[t * self.channels + c]
    }

    pub fn variance_at(&self, t: usize, c: usize) -> f64 {
        self.variance[t * self.channels + c]
    }
}

/// Cuts one trial per reference point. References whose window leaves the
/// series are dropped and counted in [`EnsemblePanel::dropped`].
pub fn extract_panel(
    series: &TimeSeries,
    refs: &ReferencePointList,
    window: PeriEventWindow,
) -> Result<EnsemblePanel> {
    if series.is_empty() {
        return Err(Error::InvalidSeries("series is empty".into()));
    }
    if series.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries("series contains non-finite values".into()));
    }
    if window.is_empty() || window.len() < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2, got {}",
            window.len()
        )));
    }
    let len = series.len() as i64;
    let d = series.channels();
    let t_len = window.len();

    let mut data = Vec::with_capacity(refs.len() * t_len * d);
    let mut kept = Vec::with_capacity(refs.len());
    for &r in refs.points() {
        let start = r as i64 + window.start_offset;
        let end = r as i64 + window.end_offset;
        if start < 0 || end > len {
            continue;
        }
        let (start, end) = (start as usize, end as usize);
        data.extend_from_slice(&series.data()[start * d..end * d]);
        kept.push(r);
    }
    if kept.is_empty() {
        return Err(Error::EmptyPanel { total: refs.len() });
    }
    let label = match refs.source() {
        RefSource::GroundTruth => "ground-truth".to_string(),
        RefSource::Channel(c) => series
            .channel_names()
            .get(*c)
            .cloned()
            .unwrap_or_else(|| format!("ch{c}")),
    };
    let mut panel = EnsemblePanel::new(
        data,
        kept.len(),
        t_len,
        d,
        series.sample_rate(),
        window,
        label,
        series.channel_names().to_vec(),
    )?;
    panel.dropped = refs.len() - kept.len();
    panel.reference_points = kept;
    Ok(panel)
}

/// Per-time, per-channel mean and unbiased variance across trials.
pub fn panel_stats(panel: &EnsemblePanel) -> PanelStats {
    let (n, t_len, d) = (panel.n_trials(), panel.n_times(), panel.channels());
    let mut mean = vec![0.0; t_len * d];
    for trial in 0..n {
        for (m, v) in mean.iter_mut().zip(panel.trial(trial)) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let mut variance = vec![0.0; t_len * d];
    if n > 1 {
        for trial in 0..n {
            for ((s, v), m) in variance.iter_mut().zip(panel.trial(trial)).zip(&mean) {
                let dev = v - m;
                *s += dev * dev;
            }
        }
        let inv = 1.0 / (n - 1) as f64;
        variance.iter_mut().for_each(|s| *s *= inv);
    }
    PanelStats {
        n_times: t_len,
        channels: d,
        mean,
        variance,
        single_trial: n == 1,
    }
}

/// Stacked lags `[X_{t-1}; ...; X_{t-p}]` for every trial, as an `N × pd` matrix.
pub fn lagged_state(panel: &EnsemblePanel, t: usize, p: usize) -> Result<DMatrix<f64>> {
    if t < p || t >= panel.n_times() {
        return Err(Error::InsufficientHistory { t, p });
    }
    let d = panel.channels();
    Ok(DMatrix::from_fn(panel.n_trials(), p * d, |n, col| {
        let lag = col / d + 1;
        panel.value(n, t - lag, col % d)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_series(len: usize, d: usize) -> TimeSeries {
        let data = (0..len * d).map(|i| i as f64).collect();
        TimeSeries::from_rows(data, d, 1000.0).unwrap()
    }

    #[test]
    fn extract_single_trial_matches_slice() {
        let s = ramp_series(10, 1);
        let refs = ReferencePointList::new(vec![5], RefSource::GroundTruth).unwrap();
        let p = extract_panel(&s, &refs, PeriEventWindow::new(-2, 2).unwrap()).unwrap();
        assert_eq!(p.n_trials(), 1);
        assert_eq!(p.n_times(), 4);
        assert_eq!(p.trial(0), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.dropped(), 0);
    }

    #[test]
    fn extract_drops_out_of_bounds() {
        let s = ramp_series(10, 1);
        let refs = ReferencePointList::new(vec![1, 5], RefSource::GroundTruth).unwrap();
        let p = extract_panel(&s, &refs, PeriEventWindow::new(-2, 2).unwrap()).unwrap();
        assert_eq!(p.n_trials(), 1);
        assert_eq!(p.dropped(), 1);
        assert_eq!(p.reference_points(), &[5]);
    }

    #[test]
    fn extract_all_out_of_bounds_is_empty_panel() {
        let s = ramp_series(10, 1);
        let refs = ReferencePointList::new(vec![0, 9], RefSource::GroundTruth).unwrap();
        let err = extract_panel(&s, &refs, PeriEventWindow::new(-2, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyPanel { total: 2 }));
    }

    #[test]
    fn non_finite_series_rejected() {
        let err = TimeSeries::from_rows(vec![0.0, f64::NAN], 1, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidSeries(_)));
    }

    #[test]
    fn references_must_increase() {
        assert!(ReferencePointList::new(vec![3, 3], RefSource::GroundTruth).is_err());
        assert!(ReferencePointList::new(vec![4, 3], RefSource::GroundTruth).is_err());
    }

    #[test]
    fn centered_window_even_and_odd() {
        assert_eq!(PeriEventWindow::centered(200), PeriEventWindow::new(-100, 100).unwrap());
        assert_eq!(PeriEventWindow::centered(5), PeriEventWindow::new(-2, 3).unwrap());
        let w = PeriEventWindow::from_millis(-400.0, 200.0, 1252.0).unwrap();
        assert_eq!(w.start_offset, -501);
        assert_eq!(w.end_offset, 250);
    }

    fn two_trial_panel() -> EnsemblePanel {
        let data = vec![0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0];
        EnsemblePanel::new(
            data,
            2,
            2,
            2,
            1.0,
            PeriEventWindow::centered(2),
            "test",
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn stats_two_point_formula() {
        let s = panel_stats(&two_trial_panel());
        assert!(s.mean.iter().all(|&m| m == 1.0));
        assert!(s.variance.iter().all(|&v| v == 2.0));
        assert!(!s.single_trial);
    }

    #[test]
    fn stats_identical_trials_zero_variance() {
        let trial = [1.0, -3.0, 0.5, 7.0];
        let data: Vec<f64> = trial.iter().cycle().take(12).copied().collect();
        let p = EnsemblePanel::new(
            data,
            3,
            4,
            1,
            1.0,
            PeriEventWindow::centered(4),
            "x",
            vec!["a".into()],
        )
        .unwrap();
        assert!(panel_stats(&p).variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_single_trial_flags_warning() {
        let p = EnsemblePanel::new(
            vec![1.0, 2.0],
            1,
            2,
            1,
            1.0,
            PeriEventWindow::centered(2),
            "x",
            vec!["a".into()],
        )
        .unwrap();
        let s = panel_stats(&p);
        assert!(s.single_trial);
        assert_eq!(s.variance, vec![0.0, 0.0]);
    }

    #[test]
    fn lagged_state_ordering() {
        let data: Vec<f64> = (0..2 * 3 * 2).map(|i| i as f64).collect();
        let p = EnsemblePanel::new(
            data,
            2,
            3,
            2,
            1.0,
            PeriEventWindow::centered(3),
            "x",
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let single = lagged_state(&p, 1, 1).unwrap();
        assert_eq!(single.row(0).iter().copied().collect::<Vec<_>>(), p.sample(0, 0));
        let z = lagged_state(&p, 2, 2).unwrap();
        assert_eq!(z.ncols(), 4);
        for n in 0..2 {
            let row: Vec<f64> = z.row(n).iter().copied().collect();
            assert_eq!(&row[0..2], p.sample(n, 1));
            assert_eq!(&row[2..4], p.sample(n, 0));
        }
        assert!(matches!(
            lagged_state(&p, 1, 2),
            Err(Error::InsufficientHistory { t: 1, p: 2 })
        ));
    }
}
