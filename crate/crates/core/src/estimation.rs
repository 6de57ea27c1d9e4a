//! Per-time-point maximum-likelihood fits of a time-inhomogeneous VAR(p)
//! model on an ensemble panel.
//!
//! At every time point `t` the `N` trials are treated as i.i.d. draws of
//! `X_t = A_t X_{p,t} + η_t`, `η_t ~ N(k_t, Σ_t)`, where `X_{p,t}` stacks the
//! previous `p` samples. All moments are taken across trials at fixed `t`
//! after demeaning with the per-time empirical means.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{diag_log_det, sym_log_det, symmetrize};
use crate::panel::EnsemblePanel;

/// How the innovation covariance enters the likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    Full,
    /// Off-diagonal entries of `Σ_t` are zeroed before any likelihood term.
    Diagonal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Added to the lagged-state covariance only, never to `Σ_t`.
    pub ridge: f64,
    pub sigma_mode: SigmaMode,
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Config(format!(
                "ridge must be a non-negative finite number, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingVarModel {
    pub order: usize,
    pub channels: usize,
    pub n_trials: usize,
    pub eval_range: Range<usize>,
    pub options: FitOptions,
    /// `A_t`, each `d × pd`, blocks ordered by lag `1..=p`.
    pub coefficients: Vec<DMatrix<f64>>,
    pub innovation_means: Vec<DVector<f64>>,
    /// As used by the likelihood: already diagonalised in [`SigmaMode::Diagonal`].
    pub innovation_covariances: Vec<DMatrix<f64>>,
}

impl TimeVaryingVarModel {
    pub fn t_eff(&self) -> usize {
        self.eval_range.len()
    }

    fn index_of(&self, t: usize) -> Option<usize> {
        self.eval_range.contains(&t).then(|| t - self.eval_range.start)
    }

    pub fn coefficient_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.index_of(t).map(|i| &self.coefficients[i])
    }

    pub fn innovation_mean_at(&self, t: usize) -> Option<&DVector<f64>> {
        self.index_of(t).map(|i| &self.innovation_means[i])
    }

    pub fn innovation_covariance_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.index_of(t).map(|i| &self.innovation_covariances[i])
    }
}

/// Everything the ensemble BIC needs from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_trials: usize,
    pub t_eff: usize,
    pub channels: usize,
    pub order: usize,
    pub eval_start: usize,
    pub options: FitOptions,
    /// `log|Σ̂_t|` for `t` in the evaluation range.
    pub log_det_sigma: Vec<f64>,
    /// `log|Σ̂_{X_p}|` (lagged-state covariance, ridge included) per `t`.
    pub log_det_sigma_xp: Vec<f64>,
    /// `Σ_t Σ_n r_{t,n}ᵀ Σ̂_t⁻¹ r_{t,n}` evaluated from the fitted moments.
    pub quadratic_term: f64,
}

impl FitSummary {
    pub fn eval_range(&self) -> Range<usize> {
        self.eval_start..self.eval_start + self.t_eff
    }

    pub fn sum_log_det_sigma(&self) -> f64 {
        self.log_det_sigma.iter().sum()
    }

    pub fn sum_log_det_sigma_xp(&self) -> f64 {
        self.log_det_sigma_xp.iter().sum()
    }
}

/// Across-trial moments of the stacked vector `[X_t; X_{t-1}; ...; X_{t-q}]`.
///
/// Every order `p ≤ q` reads its covariances as sub-blocks, so a scan over
/// candidate orders pays for one pass over the trials per time point.
#[derive(Debug, Clone)]
pub(crate) struct LagMoments {
    t: usize,
    d: usize,
    n: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl LagMoments {
    pub(crate) fn compute(panel: &EnsemblePanel, t: usize, max_order: usize) -> Result<Self> {
        if t < max_order || t >= panel.n_times() {
            return Err(Error::InsufficientHistory { t, p: max_order });
        }
        let (n, d) = (panel.n_trials(), panel.channels());
        let dim = (max_order + 1) * d;
        let mut z = DMatrix::<f64>::zeros(n, dim);
        for trial in 0..n {
            for lag in 0..=max_order {
                let x = panel.sample(trial, t - lag);
                for c in 0..d {
                    z[(trial, lag * d + c)] = x[c];
                }
            }
        }
        let mean = z.row_mean().transpose();
        for mut row in z.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = z.tr_mul(&z) / n as f64;
        symmetrize(&mut cov);
        Ok(Self { t, d, n, mean, cov })
    }

    fn cov_xt(&self) -> DMatrix<f64> {
        self.cov.view((0, 0), (self.d, self.d)).into_owned()
    }

    fn cov_xt_xp(&self, p: usize) -> DMatrix<f64> {
        self.cov.view((0, self.d), (self.d, p * self.d)).into_owned()
    }

    fn cov_xp(&self, p: usize) -> DMatrix<f64> {
        self.cov.view((self.d, self.d), (p * self.d, p * self.d)).into_owned()
    }

    fn mean_xt(&self) -> DVector<f64> {
        self.mean.rows(0, self.d).into_owned()
    }

    fn mean_xp(&self, p: usize) -> DVector<f64> {
        self.mean.rows(self.d, p * self.d).into_owned()
    }

    /// Full per-time fit at order `p`.
    pub(crate) fn fit(&self, p: usize, options: &FitOptions) -> Result<TimeFit> {
        let (t, d) = (self.t, self.d);
        let sxp_raw = self.cov_xp(p);
        let mut sxp = sxp_raw.clone();
        if options.ridge > 0.0 {
            for i in 0..p * d {
                sxp[(i, i)] += options.ridge;
            }
        }
        let log_det_xp = sym_log_det(&sxp).ok_or(Error::SingularLaggedCovariance { t, p })?;
        let a = solve_coefficients(&self.cov_xt_xp(p), &sxp, t, p)?;
        let k = self.mean_xt() - &a * self.mean_xp(p);

        // Covariance of X_t - A X_{p,t}; equals the sample residual covariance
        // because k absorbs the residual mean.
        let sxt_xp = self.cov_xt_xp(p);
        let a_sxp_t = &a * sxt_xp.transpose();
        let mut resid = self.cov_xt() - &a_sxp_t - a_sxp_t.transpose() + &a * &sxp_raw * a.transpose();
        symmetrize(&mut resid);

        let (sigma, log_det_sigma) = match options.sigma_mode {
            SigmaMode::Full => {
                let ld = sym_log_det(&resid).ok_or(Error::DegenerateResidualCovariance { t, p })?;
                (resid.clone(), ld)
            }
            SigmaMode::Diagonal => {
                let diag = DMatrix::from_diagonal(&resid.diagonal());
                let ld = diag_log_det(&diag).ok_or(Error::DegenerateResidualCovariance { t, p })?;
                (diag, ld)
            }
        };
        // Σ_n r_nᵀ Σ⁻¹ r_n = N · tr(Σ⁻¹ Σ̂_resid).
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::DegenerateResidualCovariance { t, p })?;
        let quadratic = self.n as f64 * chol.solve(&resid).trace();

        Ok(TimeFit {
            coefficients: a,
            innovation_mean: k,
            innovation_covariance: sigma,
            log_det_sigma,
            log_det_sigma_xp: log_det_xp,
            quadratic,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TimeFit {
    pub coefficients: DMatrix<f64>,
    pub innovation_mean: DVector<f64>,
    pub innovation_covariance: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub log_det_sigma_xp: f64,
    pub quadratic: f64,
}

/// `A = S_{X_t X_p} S_{X_p}⁻¹` via a Cholesky solve of `S_{X_p} Aᵀ = S_{X_p X_t}`.
fn solve_coefficients(
    sxt_xp: &DMatrix<f64>,
    sxp: &DMatrix<f64>,
    t: usize,
    p: usize,
) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(sxp.clone()).ok_or(Error::SingularLaggedCovariance { t, p })?;
    let at = chol.solve(&sxt_xp.transpose());
    if at.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularLaggedCovariance { t, p });
    }
    Ok(at.transpose())
}

fn check_panel_for(panel: &EnsemblePanel, t: usize, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::Config("model order must be at least 1".into()));
    }
    if t < p || t >= panel.n_times() {
        return Err(Error::InsufficientHistory { t, p });
    }
    if panel.n_trials() < 2 {
        return Err(Error::InvalidPanel(
            "at least 2 trials are needed for across-trial covariances".into(),
        ));
    }
    Ok(())
}

/// `Σ̂_{X_t X_p}`: `d × pd` cross-covariance between `X_t` and its lags.
pub fn covariance_xt_xp(panel: &EnsemblePanel, t: usize, p: usize) -> Result<DMatrix<f64>> {
    check_panel_for(panel, t, p)?;
    Ok(LagMoments::compute(panel, t, p)?.cov_xt_xp(p))
}

/// `Σ̂_{X_p}`: `pd × pd` covariance of the lagged state at `t`.
pub fn covariance_xp(panel: &EnsemblePanel, t: usize, p: usize) -> Result<DMatrix<f64>> {
    check_panel_for(panel, t, p)?;
    Ok(LagMoments::compute(panel, t, p)?.cov_xp(p))
}

/// `Â_t = Σ̂_{X_t X_p} (Σ̂_{X_p} + ridge·I)⁻¹`.
pub fn estimate_coefficients(
    panel: &EnsemblePanel,
    t: usize,
    p: usize,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    check_panel_for(panel, t, p)?;
    FitOptions {
        ridge,
        ..Default::default()
    }
    .validate()?;
    let m = LagMoments::compute(panel, t, p)?;
    let mut sxp = m.cov_xp(p);
    for i in 0..sxp.nrows() {
        sxp[(i, i)] += ridge;
    }
    if sym_log_det(&sxp).is_none() {
        return Err(Error::SingularLaggedCovariance { t, p });
    }
    solve_coefficients(&m.cov_xt_xp(p), &sxp, t, p)
}

fn check_coefficient_shape(panel: &EnsemblePanel, p: usize, a: &DMatrix<f64>) -> Result<()> {
    let d = panel.channels();
    if a.nrows() != d || a.ncols() != p * d {
        return Err(Error::Config(format!(
            "coefficient matrix is {}x{}, expected {d}x{}",
            a.nrows(),
            a.ncols(),
            p * d
        )));
    }
    Ok(())
}

/// `k̂_t = Ê[X_t] − Â_t Ê[X_{p,t}]`.
pub fn estimate_innovation_mean(
    panel: &EnsemblePanel,
    t: usize,
    p: usize,
    a: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_coefficient_shape(panel, p, a)?;
    if t < p || t >= panel.n_times() {
        return Err(Error::InsufficientHistory { t, p });
    }
    let d = panel.channels();
    let n = panel.n_trials() as f64;
    let mut mean = DVector::<f64>::zeros((p + 1) * d);
    for trial in 0..panel.n_trials() {
        for lag in 0..=p {
            let x = panel.sample(trial, t - lag);
            for c in 0..d {
                mean[lag * d + c] += x[c];
            }
        }
    }
    mean /= n;
    Ok(mean.rows(0, d) - a * mean.rows(d, p * d))
}

/// `Σ̂_t = (1/N) Σ_n r_n r_nᵀ`, `r_n = X_t − Â_t X_{p,t} − k̂_t`, from the samples.
pub fn estimate_innovation_covariance(
    panel: &EnsemblePanel,
    t: usize,
    p: usize,
    a: &DMatrix<f64>,
    k: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_coefficient_shape(panel, p, a)?;
    if t < p || t >= panel.n_times() {
        return Err(Error::InsufficientHistory { t, p });
    }
    let d = panel.channels();
    if k.len() != d {
        return Err(Error::Config(format!("innovation mean has length {}, expected {d}", k.len())));
    }
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for trial in 0..panel.n_trials() {
        let r = residual(panel, trial, t, p, a, k);
        sigma.ger(1.0, &r, &r, 1.0);
    }
    sigma /= panel.n_trials() as f64;
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// `X_t − A X_{p,t} − k` for one trial.
pub fn residual(
    panel: &EnsemblePanel,
    trial: usize,
    t: usize,
    p: usize,
    a: &DMatrix<f64>,
    k: &DVector<f64>,
) -> DVector<f64> {
    let d = panel.channels();
    let mut r = DVector::from_column_slice(panel.sample(trial, t)) - k;
    for lag in 1..=p {
        let x = panel.sample(trial, t - lag);
        for c in 0..d {
            let col = a.column((lag - 1) * d + c);
            r.axpy(-x[c], &col, 1.0);
        }
    }
    r
}

fn check_eval_range(panel: &EnsemblePanel, p: usize, eval_range: &Range<usize>) -> Result<()> {
    if p == 0 {
        return Err(Error::Config("model order must be at least 1".into()));
    }
    if eval_range.is_empty() || eval_range.start < p || eval_range.end > panel.n_times() {
        return Err(Error::Config(format!(
            "evaluation range {:?} must be a non-empty subset of [{p}, {})",
            eval_range,
            panel.n_times()
        )));
    }
    if panel.n_trials() < 2 {
        return Err(Error::InvalidPanel(
            "at least 2 trials are needed for across-trial covariances".into(),
        ));
    }
    Ok(())
}

/// Fits `(A_t, k_t, Σ_t)` at every `t` in `eval_range`.
///
/// Per-time fits run in parallel and are merged in time order, so the
/// result does not depend on scheduling.
pub fn fit_var(
    panel: &EnsemblePanel,
    p: usize,
    eval_range: Range<usize>,
    options: FitOptions,
) -> Result<(TimeVaryingVarModel, FitSummary)> {
    options.validate()?;
    check_eval_range(panel, p, &eval_range)?;
    let fits: Vec<TimeFit> = eval_range
        .clone()
        .into_par_iter()
        .map(|t| LagMoments::compute(panel, t, p)?.fit(p, &options))
        .collect::<Result<_>>()?;
    Ok(assemble(panel, p, eval_range, options, fits))
}

pub(crate) fn assemble(
    panel: &EnsemblePanel,
    p: usize,
    eval_range: Range<usize>,
    options: FitOptions,
    fits: Vec<TimeFit>,
) -> (TimeVaryingVarModel, FitSummary) {
    let summary = summarize(panel, p, eval_range.clone(), options, &fits);
    let mut model = TimeVaryingVarModel {
        order: p,
        channels: panel.channels(),
        n_trials: panel.n_trials(),
        eval_range,
        options,
        coefficients: Vec::with_capacity(fits.len()),
        innovation_means: Vec::with_capacity(fits.len()),
        innovation_covariances: Vec::with_capacity(fits.len()),
    };
    for f in fits {
        model.coefficients.push(f.coefficients);
        model.innovation_means.push(f.innovation_mean);
        model.innovation_covariances.push(f.innovation_covariance);
    }
    (model, summary)
}

pub(crate) fn summarize(
    panel: &EnsemblePanel,
    p: usize,
    eval_range: Range<usize>,
    options: FitOptions,
    fits: &[TimeFit],
) -> FitSummary {
    FitSummary {
        n_trials: panel.n_trials(),
        t_eff: eval_range.len(),
        channels: panel.channels(),
        order: p,
        eval_start: eval_range.start,
        options,
        log_det_sigma: fits.iter().map(|f| f.log_det_sigma).collect(),
        log_det_sigma_xp: fits.iter().map(|f| f.log_det_sigma_xp).collect(),
        quadratic_term: fits.iter().map(|f| f.quadratic).sum(),
    }
}

/// The three pieces of the Gaussian log-likelihood, evaluated sample by sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodTerms {
    /// `−(N T_eff d / 2) log 2π`
    pub constant: f64,
    /// `Σ_t log|Σ̂_t|`
    pub log_det_sum: f64,
    /// `Σ_t Σ_n r_{t,n}ᵀ Σ̂_t⁻¹ r_{t,n}`
    pub quadratic: f64,
    pub n_trials: usize,
}

impl LikelihoodTerms {
    pub fn total(&self) -> f64 {
        self.constant - 0.5 * self.n_trials as f64 * self.log_det_sum - 0.5 * self.quadratic
    }
}

pub fn likelihood_terms(panel: &EnsemblePanel, model: &TimeVaryingVarModel) -> Result<LikelihoodTerms> {
    let (n, d, p) = (panel.n_trials(), panel.channels(), model.order);
    if model.channels != d || model.eval_range.end > panel.n_times() || model.eval_range.start < p {
        return Err(Error::Config(
            "model shape does not match the panel it is evaluated on".into(),
        ));
    }
    let mut log_det_sum = 0.0;
    let mut quadratic = 0.0;
    for (i, t) in model.eval_range.clone().enumerate() {
        let sigma = &model.innovation_covariances[i];
        let ld = sym_log_det(sigma).ok_or(Error::DegenerateResidualCovariance { t, p })?;
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::DegenerateResidualCovariance { t, p })?;
        log_det_sum += ld;
        let (a, k) = (&model.coefficients[i], &model.innovation_means[i]);
        for trial in 0..n {
            let r = residual(panel, trial, t, p, a, k);
            quadratic += r.dot(&chol.solve(&r));
        }
    }
    let constant = -0.5 * (n * model.t_eff() * d) as f64 * (2.0 * PI).ln();
    Ok(LikelihoodTerms {
        constant,
        log_det_sum,
        quadratic,
        n_trials: n,
    })
}

/// Gaussian log-likelihood of the panel under `model` over its evaluation range.
pub fn log_likelihood(panel: &EnsemblePanel, model: &TimeVaryingVarModel) -> Result<f64> {
    Ok(likelihood_terms(panel, model)?.total())
}

/// `log|H_t| = p d² log N + d log|Σ̂_{X_p}| − p d log|Σ̂_t|`, the Hessian of
/// the log-likelihood in `A_t` being `−(N Σ̂_{X_p}) ⊗ Σ̂_t⁻¹` up to sign.
pub fn hessian_log_det(summary: &FitSummary, t: usize) -> Result<f64> {
    let range = summary.eval_range();
    if !range.contains(&t) {
        return Err(Error::Config(format!("t = {t} outside evaluation range {range:?}")));
    }
    let i = t - range.start;
    let (lds, ldx) = (summary.log_det_sigma[i], summary.log_det_sigma_xp[i]);
    if !lds.is_finite() || !ldx.is_finite() {
        return Err(Error::NonFiniteLogDet { t });
    }
    let (p, d) = (summary.order as f64, summary.channels as f64);
    Ok(p * d * d * (summary.n_trials as f64).ln() + d * ldx - p * d * lds)
}

/// Smallest eigenvalue relative to the largest, for diagnostics.
pub fn relative_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.max();
    if max <= 0.0 {
        return if eig.min() == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    eig.min() / max
}
