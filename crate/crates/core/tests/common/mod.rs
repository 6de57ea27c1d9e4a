#![allow(dead_code)]

use ensemble_var::panel::{extract_panel, EnsemblePanel, PeriEventWindow, RefSource, ReferencePointList};
use ensemble_var::simulation::{simulate_var, SimulationOptions, VarProcessSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn panel_from(n: usize, t_len: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> EnsemblePanel {
    let mut data = Vec::with_capacity(n * t_len * d);
    for trial in 0..n {
        for t in 0..t_len {
            for c in 0..d {
                data.push(f(trial, t, c));
            }
        }
    }
    let names = (0..d).map(|c| format!("ch{c}")).collect();
    EnsemblePanel::new(data, n, t_len, d, 1000.0, PeriEventWindow::centered(t_len), "test", names).unwrap()
}

pub fn normal_panel(n: usize, t_len: usize, d: usize, seed: u64) -> EnsemblePanel {
    let mut r = rng(seed);
    let data: Vec<f64> = (0..n * t_len * d).map(|_| r.sample(StandardNormal)).collect();
    let names = (0..d).map(|c| format!("ch{c}")).collect();
    EnsemblePanel::new(data, n, t_len, d, 1000.0, PeriEventWindow::centered(t_len), "noise", names).unwrap()
}

/// Independent trials of `x_t = A x_{p,t} + k(t) + L z_t`; the first `p`
/// samples of every trial are standard normal.
pub fn var_trials(
    n: usize,
    t_len: usize,
    a: &DMatrix<f64>,
    k: impl Fn(usize) -> DVector<f64>,
    chol: &DMatrix<f64>,
    seed: u64,
) -> EnsemblePanel {
    let d = a.nrows();
    let p = a.ncols() / d;
    let mut r = rng(seed);
    let mut data = vec![0.0; n * t_len * d];
    for trial in 0..n {
        let base = trial * t_len * d;
        for t in 0..t_len {
            let z = DVector::<f64>::from_fn(d, |_, _| r.sample(StandardNormal));
            let x = if t < p {
                z
            } else {
                let mut lagged = DVector::<f64>::zeros(p * d);
                for lag in 1..=p {
                    for c in 0..d {
                        lagged[(lag - 1) * d + c] = data[base + (t - lag) * d + c];
                    }
                }
                a * lagged + k(t) + chol * z
            };
            data[base + t * d..base + (t + 1) * d].copy_from_slice(x.as_slice());
        }
    }
    let names = (0..d).map(|c| format!("ch{c}")).collect();
    EnsemblePanel::new(data, n, t_len, d, 1000.0, PeriEventWindow::centered(t_len), "var", names).unwrap()
}

/// `n` windows of length `t_len` cut from one long stationary simulation,
/// spaced `t_len + gap` apart.
pub fn stationary_panel(spec: &VarProcessSpec, n: usize, t_len: usize, gap: usize, seed: u64) -> EnsemblePanel {
    let stride = t_len + gap;
    let opts = SimulationOptions {
        burn_in: Some(2000),
        ..SimulationOptions::default()
    };
    let series = simulate_var(spec, None, n * stride + t_len, seed, &opts).unwrap();
    let refs: Vec<usize> = (0..n).map(|i| i * stride + t_len / 2 + gap).collect();
    let refs = ReferencePointList::new(refs, RefSource::GroundTruth).unwrap();
    let panel = extract_panel(&series, &refs, PeriEventWindow::centered(t_len)).unwrap();
    assert_eq!(panel.n_trials(), n);
    panel
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// `log|det M|` through an LU factorisation.
pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    (0..u.nrows()).map(|i| u[(i, i)].abs().ln()).sum()
}

pub fn stable_var2() -> VarProcessSpec {
    VarProcessSpec {
        channels: 2,
        order: 2,
        #[rustfmt::skip]
        coefficients: vec![
            0.5, 0.2, -0.3, 0.0,
            0.0, 0.4, 0.25, -0.2,
        ],
        covariance: vec![1.0, 0.3, 0.3, 1.0],
        baseline_mean: vec![0.0, 0.0],
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
