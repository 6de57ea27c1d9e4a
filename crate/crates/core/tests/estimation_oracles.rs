mod common;

use std::f64::consts::PI;

use common::*;
use ensemble_var::estimation::{
    covariance_xp, estimate_coefficients, estimate_innovation_covariance, estimate_innovation_mean, fit_var,
    hessian_log_det, likelihood_terms, log_likelihood, relative_min_eigenvalue, residual, FitOptions,
};
use ensemble_var::order_selection::{ensemble_bic_penalty, ensemble_log_likelihood, select_order, CriterionConfig};
use ensemble_var::panel::lagged_state;
use ensemble_var::simulation::VarProcessSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random coupled panel so that fits are far from degenerate.
fn coupled_panel(n: usize, t_len: usize, d: usize, p: usize, seed: u64) -> ensemble_var::panel::EnsemblePanel {
    let mut r = rng(seed ^ 0xA5A5);
    let a = DMatrix::from_fn(d, p * d, |_, _| r.random_range(-0.3..0.3) / p as f64);
    let chol = DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => 0.4,
        std::cmp::Ordering::Less => 0.0,
    });
    var_trials(n, t_len, &a, |t| DVector::from_element(d, (t as f64 * 0.3).sin()), &chol, seed)
}

#[test]
fn hessian_log_det_matches_dense_kronecker() {
    for seed in 0..20 {
        let (p, d) = (2, 2);
        let panel = coupled_panel(40, 6, d, p, seed);
        let (model, summary) = fit_var(&panel, p, p..6, FitOptions::default()).unwrap();
        for t in p..6 {
            let c = covariance_xp(&panel, t, p).unwrap() * panel.n_trials() as f64;
            let sigma_inv = model.innovation_covariance_at(t).unwrap().clone().try_inverse().unwrap();
            let h = kron(&c, &sigma_inv);
            assert_eq!(h.nrows(), p * d * d);
            let oracle = log_abs_det(&h);
            let got = hessian_log_det(&summary, t).unwrap();
            assert!((got - oracle).abs() <= 1e-8 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }
}

fn mvn_log_density_2d(r: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let inv = DMatrix::from_row_slice(2, 2, &[s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]]) / det;
    -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * (r.transpose() * inv * r)[(0, 0)]
}

#[test]
fn log_likelihood_matches_brute_force_density() {
    for seed in 0..10 {
        // N = 8, T_eff = 3, d = 2
        let panel = coupled_panel(8, 4, 2, 1, 100 + seed);
        let (model, summary) = fit_var(&panel, 1, 1..4, FitOptions::default()).unwrap();
        let mut oracle = 0.0;
        for t in 1..4 {
            let (a, k, s) = (
                model.coefficient_at(t).unwrap(),
                model.innovation_mean_at(t).unwrap(),
                model.innovation_covariance_at(t).unwrap(),
            );
            for n in 0..8 {
                oracle += mvn_log_density_2d(&residual(&panel, n, t, 1, a, k), s);
            }
        }
        let got = log_likelihood(&panel, &model).unwrap();
        assert!((got - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{got} vs {oracle}");
        let closed = ensemble_log_likelihood(&summary);
        assert!((closed - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{closed} vs {oracle}");
    }
}

#[test]
fn in_sample_quadratic_term_is_ntd() {
    for (seed, (p, d)) in [(1, 1), (2, 1), (2, 3), (3, 2)].into_iter().enumerate() {
        let panel = coupled_panel(60, 10, d, p, seed as u64);
        let (model, summary) = fit_var(&panel, p, p..10, FitOptions::default()).unwrap();
        let ntd = (60 * (10 - p) * d) as f64;
        assert!((summary.quadratic_term - ntd).abs() <= 1e-9 * ntd);
        let sampled = likelihood_terms(&panel, &model).unwrap().quadratic;
        assert!((sampled - ntd).abs() <= 1e-9 * ntd, "{sampled} vs {ntd}");
    }
}

#[test]
fn normal_equations_are_orthogonal() {
    let panel = coupled_panel(50, 8, 2, 3, 7);
    let (p, d, n) = (3, 2, 50);
    for t in p..8 {
        let a = estimate_coefficients(&panel, t, p, 0.0).unwrap();
        let xp = lagged_state(&panel, t, p).unwrap();
        let xp_mean = DVector::from_fn(p * d, |i, _| xp.column(i).mean());
        let xt_mean = DVector::from_fn(d, |c, _| (0..n).map(|m| panel.value(m, t, c)).sum::<f64>() / n as f64);
        let mut g = DMatrix::<f64>::zeros(d, p * d);
        let mut scale = 0.0f64;
        for m in 0..n {
            let xbar_p = xp.row(m).transpose() - &xp_mean;
            let xbar_t = DVector::from_column_slice(panel.sample(m, t)) - &xt_mean;
            let r = &xbar_t - &a * &xbar_p;
            g += &r * xbar_p.transpose();
            scale += xbar_t.norm() * xbar_p.norm();
        }
        assert!(g.norm() <= 1e-8 * scale, "t = {t}: |g| = {}", g.norm());
    }
}

#[test]
fn log_likelihood_nondecreasing_in_order() {
    let spec = VarProcessSpec::coupled_bivariate_var4();
    let panels = [
        stationary_panel(&spec, 400, 30, 50, 3),
        normal_panel(300, 30, 2, 4),
        coupled_panel(200, 30, 3, 2, 5),
    ];
    for panel in &panels {
        let mut prev = f64::NEG_INFINITY;
        for p in 1..=7 {
            let (_, s) = fit_var(panel, p, 7..30, FitOptions::default()).unwrap();
            let ll = ensemble_log_likelihood(&s);
            assert!(ll >= prev - 1e-9 * ll.abs(), "p = {p}: {ll} < {prev}");
            prev = ll;
        }
    }
}

#[test]
fn under_ordered_residual_determinant_is_larger() {
    let spec = VarProcessSpec::coupled_bivariate_var4();
    let panel = stationary_panel(&spec, 2000, 30, 50, 9);
    let (_, truth) = fit_var(&panel, 4, 4..30, FitOptions::default()).unwrap();
    for p in 1..4 {
        let (_, s) = fit_var(&panel, p, 4..30, FitOptions::default()).unwrap();
        for (lo, hi) in s.log_det_sigma.iter().zip(&truth.log_det_sigma) {
            assert!(lo >= hi, "p = {p}: {lo} < {hi}");
        }
    }
}

#[test]
fn constant_shift_leaves_coefficients_and_moves_intercept() {
    let panel = coupled_panel(80, 8, 2, 2, 13);
    let c = [2.5, -4.0];
    let shifted = panel_from(80, 8, 2, |n, t, ch| panel.value(n, t, ch) + c[ch]);
    let cv = DVector::from_column_slice(&c);
    for t in 2..8 {
        let a = estimate_coefficients(&panel, t, 2, 0.0).unwrap();
        let a2 = estimate_coefficients(&shifted, t, 2, 0.0).unwrap();
        assert!(max_abs(&(&a2 - &a)) <= 1e-10, "{}", max_abs(&(&a2 - &a)));
        let k = estimate_innovation_mean(&panel, t, 2, &a).unwrap();
        let k2 = estimate_innovation_mean(&shifted, t, 2, &a).unwrap();
        let sum_a = a.columns(0, 2) + a.columns(2, 2);
        let expected = &k + (DMatrix::<f64>::identity(2, 2) - sum_a) * &cv;
        assert!((k2 - expected).amax() <= 1e-10);
    }
}

#[test]
fn innovation_covariance_is_symmetric_psd() {
    for seed in 0..10 {
        let panel = coupled_panel(12, 6, 3, 1, 200 + seed);
        for t in 1..6 {
            let a = estimate_coefficients(&panel, t, 1, 0.0).unwrap();
            let k = estimate_innovation_mean(&panel, t, 1, &a).unwrap();
            let s = estimate_innovation_covariance(&panel, t, 1, &a, &k).unwrap();
            assert_eq!(s, s.transpose());
            assert!(relative_min_eigenvalue(&s) >= -1e-10);
        }
    }
}

#[test]
fn score_decomposes_into_likelihood_and_penalty() {
    let panel = coupled_panel(120, 20, 2, 2, 17);
    let cfg = CriterionConfig {
        p_max: 5,
        ..CriterionConfig::default()
    };
    let curve = select_order(&panel, &cfg).unwrap();
    for s in &curve.scores {
        let (model, summary) = fit_var(&panel, s.p, 5..20, FitOptions::default()).unwrap();
        let ll = log_likelihood(&panel, &model).unwrap();
        let expected = -ll + ensemble_bic_penalty(&summary);
        assert!((s.score_approx - expected).abs() <= 1e-9 * expected.abs(), "{} vs {expected}", s.score_approx);
        assert!((s.log_likelihood - ll).abs() <= 1e-9 * ll.abs());
    }
    assert_eq!(select_order(&panel, &cfg).unwrap(), curve);
}
