//! Ground-truth generators: VAR(p) series driven by Gaussian innovations
//! whose mean carries Morlet-shaped perturbation events.
//!
//! Draws come from ChaCha8 seeded with the run seed. Innovation noise uses
//! stream 0 and event scheduling uses stream 1, so the noise sequence of a
//! perturbed run is identical to that of a plain [`simulate_var`] call with
//! the same seed.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{RefSource, ReferencePointList, TimeSeries};

pub const GENERATOR_NAME: &str = "chacha8/standard-normal-ziggurat";

const NOISE_STREAM: u64 = 0;
const SCHEDULE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarProcessSpec {
    pub channels: usize,
    pub order: usize,
    /// `d × pd`, row-major, lag blocks ordered `A_1 | A_2 | ... | A_p`.
    pub coefficients: Vec<f64>,
    /// `d × d`, row-major.
    pub covariance: Vec<f64>,
    pub baseline_mean: Vec<f64>,
}

impl VarProcessSpec {
    /// Bivariate VAR(4) where channel 1 drives channel 0 and never the reverse.
    pub fn coupled_bivariate_var4() -> Self {
        #[rustfmt::skip]
        let coefficients = vec![
            -0.55, 1.4, -0.45, -0.3, -0.55, 1.5, -0.85, 1.7,
             0.0,  0.9,  0.0,  -0.25, 0.0,  0.0,  0.0,  0.25,
        ];
        Self {
            channels: 2,
            order: 4,
            coefficients,
            covariance: vec![1.0, 0.0, 0.0, 1.0],
            baseline_mean: vec![0.0, 0.0],
        }
    }

    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.channels, self.channels * self.order, &self.coefficients)
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.channels, self.channels, &self.covariance)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.channels;
        if d == 0 || self.order == 0 {
            return Err(Error::Config("process needs d >= 1 and p >= 1".into()));
        }
        if self.coefficients.len() != d * d * self.order {
            return Err(Error::Config(format!(
                "coefficient matrix has {} entries, expected {}",
                self.coefficients.len(),
                d * d * self.order
            )));
        }
        if self.covariance.len() != d * d || self.baseline_mean.len() != d {
            return Err(Error::Config("covariance or baseline mean has the wrong size".into()));
        }
        if self
            .coefficients
            .iter()
            .chain(&self.covariance)
            .chain(&self.baseline_mean)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("process parameters must be finite".into()));
        }
        let cov = self.covariance_matrix();
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::Config("innovation covariance must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -1e-12 * cov.amax().max(1.0) {
            return Err(Error::Config("innovation covariance must be positive semidefinite".into()));
        }
        Ok(())
    }

    /// Companion matrix `[A_1 ... A_p; I 0]` of size `pd × pd`.
    pub fn companion(&self) -> DMatrix<f64> {
        let (d, p) = (self.channels, self.order);
        let mut c = DMatrix::zeros(p * d, p * d);
        c.view_mut((0, 0), (d, p * d)).copy_from(&self.coefficient_matrix());
        for i in d..p * d {
            c[(i, i - d)] = 1.0;
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Lower-triangular-ish factor `L` with `L Lᵀ = Σ`; works for singular `Σ`.
    fn noise_factor(&self) -> DMatrix<f64> {
        let cov = self.covariance_matrix();
        if let Some(ch) = Cholesky::new(cov.clone()) {
            return ch.l();
        }
        let eig = SymmetricEigen::new(cov);
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    /// Channel whose innovation mean carries the waveform (the cause).
    pub target_channel: usize,
    /// Envelope peak of the waveform.
    pub amplitude: f64,
    pub duration_s: f64,
    pub center_frequency_hz: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            target_channel: 1,
            amplitude: 5.0,
            duration_s: 0.2,
            center_frequency_hz: 60.0,
        }
    }
}

impl PerturbationSpec {
    pub fn waveform(&self, sample_rate: f64) -> Result<Vec<f64>> {
        morlet_waveform(self.duration_s, self.center_frequency_hz, self.amplitude, sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventScheduleSpec {
    pub n_events: usize,
    /// Quiet interval between the end of one perturbation and the start of
    /// the next, uniform on `[interval_lo, interval_hi]` samples.
    pub interval_lo: usize,
    pub interval_hi: usize,
    /// Samples discarded before the output starts; `None` means `10 p`.
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl Default for EventScheduleSpec {
    fn default() -> Self {
        Self {
            n_events: 5000,
            interval_lo: 200,
            interval_hi: 800,
            burn_in: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub sample_rate: f64,
    pub burn_in: Option<usize>,
    pub allow_unstable: bool,
    pub channel_names: Option<Vec<String>>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            sample_rate: 1000.0,
            burn_in: None,
            allow_unstable: false,
            channel_names: None,
        }
    }
}

/// `amplitude · cos(2π f_c (t − t_mid)) · exp(−(t − t_mid)² / 2σ²)` with
/// `σ = duration / 6`, sampled at `round(duration · rate)` points.
///
/// `t_mid` falls on sample `len / 2`, so that sample equals `amplitude`.
pub fn morlet_waveform(
    duration_s: f64,
    center_freq_hz: f64,
    amplitude: f64,
    sample_rate_hz: f64,
) -> Result<Vec<f64>> {
    if !(duration_s > 0.0 && center_freq_hz > 0.0 && sample_rate_hz > 0.0) {
        return Err(Error::Config(
            "duration, center frequency and sample rate must be positive".into(),
        ));
    }
    if !amplitude.is_finite() {
        return Err(Error::Config("amplitude must be finite".into()));
    }
    if center_freq_hz >= sample_rate_hz / 2.0 {
        return Err(Error::Config(format!(
            "center frequency {center_freq_hz} Hz is not below Nyquist ({} Hz)",
            sample_rate_hz / 2.0
        )));
    }
    let len = (duration_s * sample_rate_hz).round() as usize;
    if len == 0 {
        return Err(Error::Config("waveform shorter than one sample".into()));
    }
    let mid = (len / 2) as f64;
    let sigma = duration_s / 6.0;
    Ok((0..len)
        .map(|i| {
            let dt = (i as f64 - mid) / sample_rate_hz;
            amplitude * (2.0 * PI * center_freq_hz * dt).cos() * (-dt * dt / (2.0 * sigma * sigma)).exp()
        })
        .collect())
}

/// Simulates `X_t = A X_{p,t} + η_t`, `η_t ~ N(mean_t, Σ)`.
///
/// `mean_schedule`, when given, is row-major `[length × d]` and indexes the
/// output samples; burn-in steps use the baseline mean. The recursion
/// starts from `p` zero states.
pub fn simulate_var(
    spec: &VarProcessSpec,
    mean_schedule: Option<&[f64]>,
    length: usize,
    seed: u64,
    options: &SimulationOptions,
) -> Result<TimeSeries> {
    spec.validate()?;
    let (d, p) = (spec.channels, spec.order);
    if length == 0 {
        return Err(Error::Config("simulation length must be positive".into()));
    }
    if let Some(m) = mean_schedule {
        if m.len() != length * d {
            return Err(Error::Config(format!(
                "mean schedule has {} entries, expected {}",
                m.len(),
                length * d
            )));
        }
    }
    let radius = spec.spectral_radius();
    if radius >= 1.0 {
        if options.allow_unstable {
            log::warn!("simulating an unstable process (spectral radius {radius:.4})");
        } else {
            return Err(Error::UnstableProcess { radius });
        }
    }
    let burn_in = options.burn_in.unwrap_or(10 * p);
    let a = spec.coefficient_matrix();
    let l = spec.noise_factor();
    let total = p + burn_in + length;
    let mut x = vec![0.0; total * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let mut z = DVector::<f64>::zeros(d);
    let mut eta = DVector::<f64>::zeros(d);

    for step in p..total {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        eta.gemv(1.0, &l, &z, 0.0);
        let out = step as isize - (p + burn_in) as isize;
        for i in 0..d {
            let mean = match (mean_schedule, out >= 0) {
                (Some(m), true) => m[out as usize * d + i],
                _ => spec.baseline_mean[i],
            };
            let mut v = mean + eta[i];
            for lag in 1..=p {
                let prev = &x[(step - lag) * d..(step - lag + 1) * d];
                for (j, xv) in prev.iter().enumerate() {
                    v += a[(i, (lag - 1) * d + j)] * xv;
                }
            }
            x[step * d + i] = v;
        }
    }
    let data = x.split_off((p + burn_in) * d);
    let names = options
        .channel_names
        .clone()
        .unwrap_or_else(|| (1..=d).map(|c| format!("X{c}")).collect());
    TimeSeries::new(data, d, options.sample_rate, names)
}

/// Lays out `n_events` perturbation windows separated by random quiet
/// intervals, injects the waveform into the target channel's innovation
/// mean, and returns the series with the exact event centers.
pub fn generate_perturbation_events(
    process: &VarProcessSpec,
    perturbation: &PerturbationSpec,
    schedule: &EventScheduleSpec,
    options: &SimulationOptions,
) -> Result<(TimeSeries, ReferencePointList)> {
    process.validate()?;
    let d = process.channels;
    if perturbation.target_channel >= d {
        return Err(Error::Config(format!(
            "target channel {} out of range for {d} channels",
            perturbation.target_channel
        )));
    }
    if schedule.n_events == 0 {
        return Err(Error::Config("at least one event is required".into()));
    }
    if schedule.interval_lo > schedule.interval_hi {
        return Err(Error::Config(format!(
            "interval range [{}, {}] is empty",
            schedule.interval_lo, schedule.interval_hi
        )));
    }
    let wave = perturbation.waveform(options.sample_rate)?;
    let w_len = wave.len();
    let half = w_len / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(SCHEDULE_STREAM);
    let mut gap = || rng.random_range(schedule.interval_lo..=schedule.interval_hi);

    let mut centers = Vec::with_capacity(schedule.n_events);
    let mut window_start = gap();
    for _ in 0..schedule.n_events {
        centers.push(window_start + half);
        window_start += w_len + gap();
    }
    let length = window_start;
    // Guaranteed by construction; kept as a guard on the layout arithmetic.
    if centers.windows(2).any(|c| c[1] - c[0] < w_len) {
        return Err(Error::Config("perturbation windows overlap".into()));
    }

    let mut mean: Vec<f64> = process.baseline_mean.iter().copied().cycle().take(length * d).collect();
    let target = perturbation.target_channel;
    for &c in &centers {
        let start = c - half;
        for (j, w) in wave.iter().enumerate() {
            mean[(start + j) * d + target] += w;
        }
    }
    let sim_options = SimulationOptions {
        burn_in: schedule.burn_in.or(options.burn_in),
        ..options.clone()
    };
    let series = simulate_var(process, Some(&mean), length, schedule.seed, &sim_options)?;
    let refs = ReferencePointList::new(centers, RefSource::GroundTruth)?;
    Ok((series, refs))
}
