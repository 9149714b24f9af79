use log::warn;

use super::{
    lower2, pair_observations, pointwise_report, single_observations, EstimatorReport, MonteCarloPlan,
};
use crate::coefficients::ModelSpec;
use crate::coupling::CouplingMode;
use crate::error::Result;
use crate::parallel::parallel_map;
use crate::spectral::{dist_sq, validate_h1, StateVector};
use crate::stats::EstimateSeries;

fn pair_values(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    plan: &MonteCarloPlan,
    mode: CouplingMode,
    sub: usize,
    value: impl Fn(&super::PairObs) -> f64 + Sync,
) -> Result<Vec<Vec<f64>>> {
    plan.validate()?;
    let steps = plan.grid_steps()?;
    parallel_map(plan.n_paths, plan.workers, |j| {
        let obs = pair_observations(model, x, y, plan.stepper, &steps, mode, plan.base_seed, plan.path_index(sub, j))?;
        Ok(obs.iter().map(&value).collect())
    })
}

/// `exp((4 C_1 - 3 lambda_{N+1} / 4) t) |x - y|^2`.
pub fn weighted_contraction_bound(model: &ModelSpec, gap_sq: f64, t: f64) -> f64 {
    ((4.0 * model.lipschitz_c1() - 0.75 * model.lambda_next()) * t).exp() * gap_sq
}

/// `E[exp(-4 int ||X||^2) |X(t) - Y(t)|^2]` for the drift-coupled pair,
/// passing where `mean - 2 stderr` stays below the exponential bound.
pub fn weighted_contraction_estimate(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    plan: &MonteCarloPlan,
) -> Result<EstimatorReport> {
    let h1 = validate_h1(model, model.coupling_n())?;
    if !h1.passed {
        warn!("spectral gap condition fails; the weighted contraction bound is not expected to hold");
    }
    let values = pair_values(model, x, y, plan, CouplingMode::Girsanov, 0, |o| {
        (-4.0 * o.energy_int).exp() * o.gap_sq
    })?;
    let series = EstimateSeries::from_samples(&plan.t_grid, &values);
    let gap_sq = dist_sq(x.coeffs(), y.coeffs());
    let bound = plan.t_grid.iter().map(|t| weighted_contraction_bound(model, gap_sq, *t)).collect();
    let mut r = pointwise_report(
        "weighted_contraction",
        "E[exp(-4 int ||X||^2) |X-Y|^2] <= exp((4 C_1 - 3 lambda_{N+1}/4) t) |x-y|^2",
        series,
        bound,
        lower2,
    );
    r.notes.push(format!(
        "exponent {:.6}; the alternative exponent 5 C_1 - 4 lambda_(N+1)/5 = {:.6}",
        4.0 * model.lipschitz_c1() - 0.75 * model.lambda_next(),
        5.0 * model.lipschitz_c1() - 0.8 * model.lambda_next()
    ));
    Ok(r)
}

/// `E[exp(-8 int ||X||^2) |X(t) - Y(t)|^4]`; passes when no grid value
/// exceeds ten times the value at the first grid point.
pub fn fourth_moment_estimate(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    plan: &MonteCarloPlan,
) -> Result<EstimatorReport> {
    let values = pair_values(model, x, y, plan, CouplingMode::Girsanov, 0, |o| {
        (-8.0 * o.energy_int).exp() * o.gap_sq * o.gap_sq
    })?;
    let series = EstimateSeries::from_samples(&plan.t_grid, &values);
    let cap = 10.0 * series.mean[0];
    let bound = vec![cap; series.len()];
    let mut r = pointwise_report(
        "fourth_moment",
        "E[exp(-8 int ||X||^2) |X-Y|^4] <= 10 x value at first grid time",
        series,
        bound,
        |m, _| m,
    );
    let q = dist_sq(x.coeffs(), y.coeffs()).powi(2);
    if q > 0.0 {
        let worst = r.series.mean.iter().fold(0.0f64, |a, b| a.max(*b)) / q;
        r.notes.push(format!("max ratio to |x-y|^4 = {worst:e}"));
    }
    Ok(r)
}

/// `exp{4 delta + (8 delta f0^2 + (8 delta + 64 delta^2)(s0^2 + C_1)) t}`.
pub fn exp_integrability_bound(model: &ModelSpec, delta: f64, t: f64) -> f64 {
    let f0 = model.f0_vstar_sq();
    let s0 = model.sigma0_hs_sq();
    let c1 = model.lipschitz_c1();
    let q = 8.0 * delta + 64.0 * delta * delta;
    (4.0 * delta + (8.0 * delta * f0 + q * s0 + q * c1) * t).exp()
}

/// `E[exp(4 delta int_0^t ||X||^2)]` against its explicit bound; passes where
/// `mean <= bound (1 + 2 stderr / mean)`.
pub fn exp_integrability_estimate(
    model: &ModelSpec,
    x: &StateVector,
    delta: f64,
    plan: &MonteCarloPlan,
) -> Result<EstimatorReport> {
    plan.validate()?;
    let steps = plan.grid_steps()?;
    let values = parallel_map(plan.n_paths, plan.workers, |j| {
        let obs = single_observations(model, x, plan.stepper, &steps, plan.base_seed, plan.path_index(0, j))?;
        Ok(obs.iter().map(|o| (4.0 * delta * o.energy_int).exp()).collect::<Vec<f64>>())
    })?;
    let overflow = values.iter().flatten().any(|v| !v.is_finite());
    let series = EstimateSeries::from_samples(&plan.t_grid, &values);
    let bound = plan.t_grid.iter().map(|t| exp_integrability_bound(model, delta, *t)).collect();
    let mut r = pointwise_report(
        "exp_integrability",
        "E[exp(4 delta int ||X||^2)] <= exp{4 delta + (8 delta f0^2 + (8 delta + 64 delta^2)(s0^2 + C_1)) t}",
        series,
        bound,
        |m, se| if m.is_finite() { m / (1.0 + 2.0 * se / m) } else { f64::INFINITY },
    );
    if overflow {
        r.passed = false;
        r.notes.push("exponential overflowed on some path".into());
    }
    r.notes.push(format!("delta = {delta}"));
    Ok(r)
}

/// Lyapunov condition for `V = |.|^2`: the per-path quantity
/// `|X(t)|^2 + lambda_1 int_0^t |X|^2` must satisfy
/// `mean - 2 stderr <= 1.05 (|x|^2 + K t)`.
pub fn lyapunov_check(model: &ModelSpec, x: &StateVector, plan: &MonteCarloPlan) -> Result<EstimatorReport> {
    plan.validate()?;
    let steps = plan.grid_steps()?;
    let lam1 = model.basis().lambda_1();
    let values = parallel_map(plan.n_paths, plan.workers, |j| {
        let obs = single_observations(model, x, plan.stepper, &steps, plan.base_seed, plan.path_index(0, j))?;
        Ok(obs
            .iter()
            .map(|o| o.state.iter().map(|v| v * v).sum::<f64>() + lam1 * o.h_int)
            .collect::<Vec<f64>>())
    })?;
    let series = EstimateSeries::from_samples(&plan.t_grid, &values);
    let x2 = x.h_norm().powi(2);
    let k = model.lyapunov_k();
    let bound = plan.t_grid.iter().map(|t| 1.05 * (x2 + k * t)).collect();
    let mut r = pointwise_report(
        "lyapunov",
        "E|X(t)|^2 + lambda_1 int E|X|^2 <= |x|^2 + K t (5% slack)",
        series,
        bound,
        lower2,
    );
    r.notes.push(format!("gamma = lambda_1 = {lam1}, K = {k}"));
    Ok(r)
}

/// Stability of the Feller modulus across two decades of `|v - v'|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FellerReport {
    pub scales: Vec<f64>,
    /// `E[sup h |X^v - X^v'|^2] / |v - v'|^2` per scale and grid time.
    pub ratios: Vec<Vec<f64>>,
    pub report: EstimatorReport,
}

/// Runs the synchronous pair from `v` and `v + s (v' - v)` for
/// `s in {1, 0.1, 0.01}` with common noise; passes when at every grid time
/// the largest ratio is within a factor 4 of the smallest.
pub fn feller_modulus_estimate(
    model: &ModelSpec,
    v: &StateVector,
    v_prime: &StateVector,
    plan: &MonteCarloPlan,
) -> Result<FellerReport> {
    let scales = vec![1.0, 0.1, 0.01];
    let mut ratios = Vec::with_capacity(scales.len());
    let mut first_series = None;
    for &s in &scales {
        let w = StateVector::new(v.coeffs().iter().zip(v_prime.coeffs()).map(|(a, b)| a + s * (b - a)).collect());
        let d2 = dist_sq(v.coeffs(), w.coeffs());
        let values = pair_values(model, v, &w, plan, CouplingMode::Synchronous, 0, |o| {
            if d2 > 0.0 {
                o.sup_h_gap_sq / d2
            } else {
                0.0
            }
        })?;
        let series = EstimateSeries::from_samples(&plan.t_grid, &values);
        ratios.push(series.mean.clone());
        first_series.get_or_insert(series);
    }
    let series = first_series.expect("at least one scale");
    let n = plan.t_grid.len();
    let mut pass = Vec::with_capacity(n);
    let mut bound = Vec::with_capacity(n);
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let hi = ratios.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
        let lo = ratios.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
        bound.push(4.0 * lo);
        pass.push(hi <= 4.0 * lo);
        margin = margin.min(4.0 * lo - hi);
    }
    let passed = pass.iter().all(|p| *p);
    let report = EstimatorReport {
        name: "feller_modulus".into(),
        inequality: "E[sup h |X^v - X^v'|^2] / |v-v'|^2 stable within factor 4 over |v-v'| in {1, 0.1, 0.01}".into(),
        series,
        bound,
        pass,
        passed,
        margin,
        notes: Vec::new(),
    };
    Ok(FellerReport { scales, ratios, report })
}
