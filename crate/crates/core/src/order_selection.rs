//! Ensemble information criteria and model-order selection.
//!
//! Every score here is oriented so that smaller is better, i.e. it is a
//! negative log-evidence (or a penalised negative log-likelihood). The
//! `ensemble_bic*` functions return the log-evidence itself; the curve
//! stores its negation.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{summarize, FitOptions, FitSummary, LagMoments, SigmaMode, TimeFit};
use crate::linalg::{diag_log_det, sym_log_det, symmetrize};
use crate::panel::EnsemblePanel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    EnsembleBic,
    EnsembleBicFull,
    EnsembleAic,
    ClassicalBicT1,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble_bic" => Ok(Self::EnsembleBic),
            "ensemble_bic_full" => Ok(Self::EnsembleBicFull),
            "ensemble_aic" => Ok(Self::EnsembleAic),
            "classical_bic_t1" => Ok(Self::ClassicalBicT1),
            other => Err(Error::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriterionConfig {
    pub criterion: Criterion,
    pub p_min: usize,
    pub p_max: usize,
    pub ridge: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::EnsembleBic,
            p_min: 1,
            p_max: 10,
            ridge: 0.0,
            sigma_mode: SigmaMode::Full,
        }
    }
}

impl CriterionConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            ridge: self.ridge,
            sigma_mode: self.sigma_mode,
        }
    }

    pub fn validate(&self, panel: &EnsemblePanel) -> Result<()> {
        if self.p_min < 1 || self.p_min > self.p_max {
            return Err(Error::Config(format!(
                "order range must satisfy 1 <= p_min <= p_max, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        let (n, d) = (panel.n_trials(), panel.channels());
        if self.p_max * d >= n {
            return Err(Error::Config(format!(
                "p_max * d = {} must be below the trial count N = {n}",
                self.p_max * d
            )));
        }
        if self.p_max >= panel.n_times() {
            return Err(Error::Config(format!(
                "p_max = {} leaves no time points in a panel of length {}",
                self.p_max,
                panel.n_times()
            )));
        }
        self.fit_options().validate()
    }
}

/// `½ · params · log(sample_size)`: shared by every BIC-type penalty so the
/// one-point-window case reproduces the classical penalty bit for bit.
pub fn bic_penalty(params: f64, sample_size: f64) -> f64 {
    0.5 * params * sample_size.ln()
}

/// `½ p d² T_eff log N`.
pub fn ensemble_bic_penalty(summary: &FitSummary) -> f64 {
    let params = (summary.order * summary.channels * summary.channels * summary.t_eff) as f64;
    bic_penalty(params, summary.n_trials as f64)
}

/// `(p d² / 2) log(N T)` for a time-invariant fit pooled over `N` trials of `T` points.
pub fn classical_bic_penalty(fit: &PooledFit) -> f64 {
    let params = (fit.order * fit.channels * fit.channels) as f64;
    bic_penalty(params, (fit.n_trials * fit.t_len) as f64)
}

/// Log-likelihood at the ML plug-in, with the in-sample quadratic term
/// fixed at `N T_eff d`.
pub fn ensemble_log_likelihood(summary: &FitSummary) -> f64 {
    let ntd = (summary.n_trials * summary.t_eff * summary.channels) as f64;
    -0.5 * ntd * (2.0 * PI).ln() - 0.5 * summary.n_trials as f64 * summary.sum_log_det_sigma() - 0.5 * ntd
}

fn warn_degenerate(summary: &FitSummary) {
    if summary.n_trials == 1 {
        log::warn!("degenerate penalty: a single trial makes log N = 0");
    }
}

/// Approximate ensemble log-evidence (larger is better).
pub fn ensemble_bic(summary: &FitSummary) -> f64 {
    warn_degenerate(summary);
    ensemble_log_likelihood(summary) - ensemble_bic_penalty(summary)
}

/// Ensemble log-evidence keeping every Hessian log-determinant term.
pub fn ensemble_bic_full(summary: &FitSummary) -> f64 {
    warn_degenerate(summary);
    let (n, p, d) = (summary.n_trials as f64, summary.order as f64, summary.channels as f64);
    let ntd = n * summary.t_eff as f64 * d;
    -0.5 * ntd * (2.0 * PI).ln() + 0.5 * (p * d - n) * summary.sum_log_det_sigma()
        - 0.5 * ntd
        - ensemble_bic_penalty(summary)
        - 0.5 * d * summary.sum_log_det_sigma_xp()
}

/// `−log L + p d² T_eff` (a score: smaller is better).
pub fn ensemble_aic(summary: &FitSummary) -> f64 {
    let params = (summary.order * summary.channels * summary.channels * summary.t_eff) as f64;
    -ensemble_log_likelihood(summary) + params
}

/// Time-invariant VAR(p) fitted to every `(trial, t)` sample of the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFit {
    pub n_trials: usize,
    /// Time points per trial entering the pool.
    pub t_len: usize,
    pub channels: usize,
    pub order: usize,
    pub log_det_sigma: f64,
    pub log_det_sigma_xp: f64,
}

impl PooledFit {
    pub fn n_samples(&self) -> usize {
        self.n_trials * self.t_len
    }

    pub fn log_likelihood(&self) -> f64 {
        let m = self.n_samples() as f64;
        let d = self.channels as f64;
        -0.5 * m * d * (2.0 * PI).ln() - 0.5 * m * self.log_det_sigma - 0.5 * m * d
    }
}

/// Fits one `(A, k, Σ)` shared by all time points in `eval_range`.
pub fn fit_pooled(
    panel: &EnsemblePanel,
    p: usize,
    eval_range: Range<usize>,
    options: FitOptions,
) -> Result<PooledFit> {
    options.validate()?;
    if p == 0 || eval_range.is_empty() || eval_range.start < p || eval_range.end > panel.n_times() {
        return Err(Error::Config(format!(
            "evaluation range {eval_range:?} must be a non-empty subset of [{p}, {})",
            panel.n_times()
        )));
    }
    let (n, d) = (panel.n_trials(), panel.channels());
    let dim = (p + 1) * d;
    let rows = n * eval_range.len();
    let mut z = DMatrix::<f64>::zeros(rows, dim);
    let mut row = 0;
    for trial in 0..n {
        for t in eval_range.clone() {
            for lag in 0..=p {
                let x = panel.sample(trial, t - lag);
                for c in 0..d {
                    z[(row, lag * d + c)] = x[c];
                }
            }
            row += 1;
        }
    }
    let mean = z.row_mean();
    for mut r in z.row_iter_mut() {
        r -= &mean;
    }
    let mut cov = z.tr_mul(&z) / rows as f64;
    symmetrize(&mut cov);
    let t_ref = eval_range.start;
    let sxx = cov.view((0, 0), (d, d)).into_owned();
    let sxy = cov.view((0, d), (d, p * d)).into_owned();
    let syy_raw = cov.view((d, d), (p * d, p * d)).into_owned();
    let mut syy = syy_raw.clone();
    for i in 0..p * d {
        syy[(i, i)] += options.ridge;
    }
    let log_det_xp = sym_log_det(&syy).ok_or(Error::SingularLaggedCovariance { t: t_ref, p })?;
    let chol = nalgebra::Cholesky::new(syy).ok_or(Error::SingularLaggedCovariance { t: t_ref, p })?;
    let a = chol.solve(&sxy.transpose()).transpose();
    let a_sxy_t = &a * sxy.transpose();
    let mut resid = sxx - &a_sxy_t - a_sxy_t.transpose() + &a * syy_raw * a.transpose();
    symmetrize(&mut resid);
    let log_det_sigma = match options.sigma_mode {
        SigmaMode::Full => sym_log_det(&resid),
        SigmaMode::Diagonal => diag_log_det(&resid),
    }
    .ok_or(Error::DegenerateResidualCovariance { t: t_ref, p })?;
    Ok(PooledFit {
        n_trials: n,
        t_len: eval_range.len(),
        channels: d,
        order: p,
        log_det_sigma,
        log_det_sigma_xp: log_det_xp,
    })
}

/// Classical (time-invariant) BIC log-evidence of a pooled fit.
pub fn classical_bic_t1(fit: &PooledFit) -> f64 {
    fit.log_likelihood() - classical_bic_penalty(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderScore {
    pub p: usize,
    pub log_likelihood: f64,
    pub penalty_approx: f64,
    /// Negated ensemble BIC log-evidence.
    pub score_approx: f64,
    /// Negated full ensemble BIC log-evidence.
    pub score_full: f64,
    pub score_aic: f64,
    /// Only computed when the configured criterion is `classical_bic_t1`.
    pub score_classical: Option<f64>,
}

impl OrderScore {
    pub fn score(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::EnsembleBic => self.score_approx,
            Criterion::EnsembleBicFull => self.score_full,
            Criterion::EnsembleAic => self.score_aic,
            Criterion::ClassicalBicT1 => self.score_classical.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicCurve {
    pub criterion: Criterion,
    pub scores: Vec<OrderScore>,
    pub selected_p_approx: usize,
    pub selected_p_full: usize,
    /// Argmin of the configured criterion.
    pub selected_p: usize,
    pub n_trials: usize,
    pub t_eff: usize,
    pub channels: usize,
    pub eval_start: usize,
    pub eval_end: usize,
    pub ridge: f64,
    pub sigma_mode: SigmaMode,
    pub warnings: Vec<String>,
}

impl BicCurve {
    pub fn orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.scores.iter().map(|s| s.p)
    }

    pub fn agree(&self) -> bool {
        self.selected_p_approx == self.selected_p_full
    }
}

/// First minimiser; ties go to the smaller order.
fn argmin_order(scores: &[OrderScore], f: impl Fn(&OrderScore) -> f64) -> usize {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if f(s) < f(best) {
            best = s;
        }
    }
    best.p
}

/// Fits every order in `orders` on one shared evaluation range.
///
/// The lagged moments at each time point are computed once for the largest
/// order and sliced for the smaller ones.
pub fn fit_orders(
    panel: &EnsemblePanel,
    orders: Range<usize>,
    eval_range: Range<usize>,
    options: FitOptions,
) -> Result<Vec<FitSummary>> {
    options.validate()?;
    let max_order = orders.end - 1;
    if orders.is_empty() || orders.start == 0 {
        return Err(Error::Config(format!("invalid order range {orders:?}")));
    }
    if eval_range.is_empty() || eval_range.start < max_order || eval_range.end > panel.n_times() {
        return Err(Error::Config(format!(
            "evaluation range {eval_range:?} must be a non-empty subset of [{max_order}, {})",
            panel.n_times()
        )));
    }
    if panel.n_trials() < 2 {
        return Err(Error::InvalidPanel("at least 2 trials are needed".into()));
    }
    let per_time: Vec<Vec<TimeFit>> = eval_range
        .clone()
        .into_par_iter()
        .map(|t| {
            let moments = LagMoments::compute(panel, t, max_order)?;
            orders
                .clone()
                .map(|p| {
                    moments.fit(p, &options).map_err(|e| Error::OrderFit {
                        p,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    Ok(orders
        .clone()
        .enumerate()
        .map(|(i, p)| {
            let fits: Vec<TimeFit> = per_time.iter().map(|fits| fits[i].clone()).collect();
            summarize(panel, p, eval_range.clone(), options, &fits)
        })
        .collect())
}

/// Scans `[p_min, p_max]` on the common range `[p_max, T)` and picks the
/// minimiser of each criterion.
pub fn select_order(panel: &EnsemblePanel, config: &CriterionConfig) -> Result<BicCurve> {
    config.validate(panel)?;
    let eval_range = config.p_max..panel.n_times();
    let options = config.fit_options();
    let summaries = fit_orders(panel, config.p_min..config.p_max + 1, eval_range.clone(), options)?;

    let pooled: Option<Vec<PooledFit>> = match config.criterion {
        Criterion::ClassicalBicT1 => Some(
            (config.p_min..=config.p_max)
                .into_par_iter()
                .map(|p| {
                    fit_pooled(panel, p, eval_range.clone(), options).map_err(|e| Error::OrderFit {
                        p,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };

    let mut warnings = Vec::new();
    let n = panel.n_trials();
    let mut scores = Vec::with_capacity(summaries.len());
    for (i, s) in summaries.iter().enumerate() {
        if 2 * s.order * s.channels >= n {
            warnings.push(format!(
                "p = {}: p*d = {} >= N/2 = {}; the full form's (pd - N) coefficient is unreliable",
                s.order,
                s.order * s.channels,
                n as f64 / 2.0
            ));
        }
        let ll = {
            let ntd = (s.n_trials * s.t_eff * s.channels) as f64;
            -0.5 * ntd * (2.0 * PI).ln() - 0.5 * n as f64 * s.sum_log_det_sigma() - 0.5 * s.quadratic_term
        };
        scores.push(OrderScore {
            p: s.order,
            log_likelihood: ll,
            penalty_approx: ensemble_bic_penalty(s),
            score_approx: -ensemble_bic(s),
            score_full: -ensemble_bic_full(s),
            score_aic: ensemble_aic(s),
            score_classical: pooled.as_ref().map(|f| -classical_bic_t1(&f[i])),
        });
    }
    let selected_p_approx = argmin_order(&scores, |s| s.score_approx);
    let selected_p_full = argmin_order(&scores, |s| s.score_full);
    let selected_p = argmin_order(&scores, |s| s.score(config.criterion));
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BicCurve {
        criterion: config.criterion,
        scores,
        selected_p_approx,
        selected_p_full,
        selected_p,
        n_trials: n,
        t_eff: eval_range.len(),
        channels: panel.channels(),
        eval_start: eval_range.start,
        eval_end: eval_range.end,
        ridge: config.ridge,
        sigma_mode: config.sigma_mode,
        warnings,
    })
}
