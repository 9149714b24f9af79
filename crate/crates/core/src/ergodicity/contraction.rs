use rand::Rng;

use super::{pair_observations, upper2, MonteCarloPlan};
use crate::coefficients::ModelSpec;
use crate::coupling::{CouplingMode, DistanceParams};
use crate::error::Result;
use crate::parallel::parallel_map;
use crate::rng::{auxiliary_rng, random_ball_point, random_direction};
use crate::spectral::{dist_sq, h_norm_slice, StateVector};
use crate::stats::{fit_exponential_rate, EstimateSeries, RateFit};

fn coupled_distance_series(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    plan: &MonteCarloPlan,
    p: &DistanceParams,
    sub: usize,
) -> Result<EstimateSeries> {
    plan.validate()?;
    let steps = plan.grid_steps()?;
    let values = parallel_map(plan.n_paths, plan.workers, |j| {
        let obs = pair_observations(
            model,
            x,
            y,
            plan.stepper,
            &steps,
            CouplingMode::Girsanov,
            plan.base_seed,
            plan.path_index(sub, j),
        )?;
        Ok(obs.iter().map(|o| p.of_gap(o.gap_sq.sqrt())).collect::<Vec<f64>>())
    })?;
    Ok(EstimateSeries::from_samples(&plan.t_grid, &values))
}

/// `E d_N(X^x(t), Y^y(t))` over the drift-coupled pair: the distance of one
/// particular coupling, hence an upper bound for the coupling distance of
/// the two laws (up to the neglected coupling-failure term).
pub fn wasserstein_upper(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    plan: &MonteCarloPlan,
    p: &DistanceParams,
) -> Result<EstimateSeries> {
    coupled_distance_series(model, x, y, plan, p, 0)
}

/// Random pairs in the ball with `0 < d_N(x, y) < 1`.
pub fn sample_close_pairs(dim: usize, n_pairs: usize, p: &DistanceParams, seed: u64) -> Vec<(StateVector, StateVector)> {
    let mut rng = auxiliary_rng(seed, "close-pairs");
    // Largest gap with d_N < 1.
    let gap_cap = p.n_tilde.powf(-1.0 / p.exponent()).min(2.0);
    let mut out = Vec::with_capacity(n_pairs);
    while out.len() < n_pairs {
        let x = random_ball_point(&mut rng, dim, 1.0, 0.2);
        let g = gap_cap * (0.05 + 0.9 * rng.random::<f64>());
        let dir = random_direction(&mut rng, dim);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + g * d).collect();
        if h_norm_slice(&y) > 1.0 {
            continue;
        }
        let (x, y) = (StateVector::new(x), StateVector::new(y));
        let d = p.of_gap(dist_sq(x.coeffs(), y.coeffs()).sqrt());
        if d > 0.0 && d < 1.0 {
            out.push((x, y));
        }
    }
    out
}

/// `n` points drawn uniformly from the unit sphere of `H`.
pub fn sphere_points(dim: usize, n: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = auxiliary_rng(seed, "sphere-points");
    (0..n).map(|_| StateVector::new(random_direction(&mut rng, dim))).collect()
}

/// Outcome of the contraction search.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// First grid time where every pair satisfies the target.
    pub t0: Option<f64>,
    /// Worst `(mean + 2 stderr) / d_N(x, y)` at `t0` (or at the last grid
    /// time when no `t0` was found).
    pub alpha: f64,
    pub target: f64,
    /// Per pair and grid time, `(mean + 2 stderr) / d_N(x, y)`.
    pub ratios: Vec<Vec<f64>>,
    /// Pairs skipped because `d_N(x, y) = 0`.
    pub skipped: usize,
    pub passed: bool,
}

/// Searches `plan.t_grid` for the first time `t0` at which
/// `E d_N(X^x(t0), Y^y(t0)) <= (2/3) d_N(x, y)` (upper 2-stderr bound) for
/// every pair with `d_N(x, y) < 1`.
pub fn contraction_check(
    model: &ModelSpec,
    plan: &MonteCarloPlan,
    p: &DistanceParams,
    pairs: &[(StateVector, StateVector)],
) -> Result<ContractionReport> {
    let target = 2.0 / 3.0;
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for (i, (x, y)) in pairs.iter().enumerate() {
        let d0 = p.of_gap(dist_sq(x.coeffs(), y.coeffs()).sqrt());
        if d0 == 0.0 || d0 >= 1.0 {
            skipped += 1;
            continue;
        }
        let s = coupled_distance_series(model, x, y, plan, p, i)?;
        ratios.push(s.mean.iter().zip(&s.stderr).map(|(m, e)| upper2(*m, *e) / d0).collect::<Vec<f64>>());
    }
    let n = plan.t_grid.len();
    let worst: Vec<f64> = (0..n)
        .map(|i| ratios.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let found = (0..n).find(|&i| worst[i] <= target);
    let (t0, alpha) = match found {
        Some(i) => (Some(plan.t_grid[i]), worst[i]),
        None => (None, worst.last().copied().unwrap_or(f64::NAN)),
    };
    let passed = t0.is_some() && !ratios.is_empty();
    Ok(ContractionReport { t0, alpha, target, ratios, skipped, passed })
}

/// Outcome of the d-smallness check on a level set of `|.|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DSmallReport {
    pub level: f64,
    pub t: f64,
    pub pairs: usize,
    /// Largest `mean + 2 stderr` of `E d_N` over the sampled pairs.
    pub max_upper: f64,
    pub epsilon: f64,
    pub passed: bool,
}

/// Samples `n_pairs` pairs from `{|x|^2 <= level}` (the first one antipodal)
/// and estimates `epsilon = 1 - sup E d_N(X^x(t), Y^y(t))`; passes when
/// `epsilon >= 0.05`.
pub fn d_small_check(
    model: &ModelSpec,
    plan: &MonteCarloPlan,
    p: &DistanceParams,
    level: f64,
    t: f64,
    n_pairs: usize,
) -> Result<DSmallReport> {
    let plan = plan.with_grid(vec![t]);
    plan.validate()?;
    let dim = model.dim();
    let r = level.max(0.0).sqrt().min(1.0);
    let mut rng = auxiliary_rng(plan.base_seed, "d-small-pairs");
    let mut max_upper = 0.0f64;
    for i in 0..n_pairs {
        let (x, y) = if i == 0 {
            let mut x = vec![0.0; dim];
            x[0] = r;
            let y: Vec<f64> = x.iter().map(|v| -v).collect();
            (StateVector::new(x), StateVector::new(y))
        } else {
            (
                StateVector::new(random_ball_point(&mut rng, dim, r, 0.5)),
                StateVector::new(random_ball_point(&mut rng, dim, r, 0.5)),
            )
        };
        if x == y {
            continue;
        }
        let s = coupled_distance_series(model, &x, &y, &plan, p, i)?;
        max_upper = max_upper.max(upper2(s.mean[0], s.stderr[0]));
    }
    let epsilon = 1.0 - max_upper;
    Ok(DSmallReport { level, t, pairs: n_pairs, max_upper, epsilon, passed: epsilon >= 0.05 })
}

/// Dependence of the fitted decay of `E d_N` on the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDependenceReport {
    pub series_a: EstimateSeries,
    pub series_b: EstimateSeries,
    pub fit_a: RateFit,
    pub fit_b: RateFit,
    /// `|r_b - r_a| / r_a`.
    pub rate_rel_diff: f64,
    /// `C_b / C_a`.
    pub constant_ratio: f64,
    /// `(1 + |x_b|^2) / (1 + |x_a|^2)`.
    pub weight_ratio: f64,
    /// Two-stderr band of `C_b / C_a` from the fits.
    pub constant_ratio_band: (f64, f64),
    pub passed: bool,
}

/// Fits `E d_N(X^{x}(t), Y^{y}(t)) ~ C e^{-r t}` for two starting points
/// `x_a`, `x_b`, with partners `y` cycled from `ys` and common noise.
///
/// Passes when both fits decay (`r > 0`, `r^2 >= 0.9`), the rates agree
/// within 10%, and the prefactor ratio `C_b / C_a` lies, within its 2-stderr
/// band, between 1 and the weight ratio `(1 + |x_b|^2) / (1 + |x_a|^2)`.
pub fn rate_dependence_check(
    model: &ModelSpec,
    x_a: &StateVector,
    x_b: &StateVector,
    ys: &[StateVector],
    plan: &MonteCarloPlan,
    p: &DistanceParams,
) -> Result<RateDependenceReport> {
    plan.validate()?;
    if ys.is_empty() {
        return Err(crate::error::Error::InvalidParameter("no partner states".into()));
    }
    let steps = plan.grid_steps()?;
    let series_for = |x: &StateVector| -> Result<EstimateSeries> {
        let values = parallel_map(plan.n_paths, plan.workers, |j| {
            let obs = pair_observations(
                model,
                x,
                &ys[j % ys.len()],
                plan.stepper,
                &steps,
                CouplingMode::Girsanov,
                plan.base_seed,
                plan.path_index(0, j),
            )?;
            Ok(obs.iter().map(|o| p.of_gap(o.gap_sq.sqrt())).collect::<Vec<f64>>())
        })?;
        Ok(EstimateSeries::from_samples(&plan.t_grid, &values))
    };
    let series_a = series_for(x_a)?;
    let series_b = series_for(x_b)?;
    let fit_a = fit_exponential_rate(&series_a.times, &series_a.mean)?;
    let fit_b = fit_exponential_rate(&series_b.times, &series_b.mean)?;
    let rate_rel_diff = (fit_b.rate - fit_a.rate).abs() / fit_a.rate.abs();
    let constant_ratio = fit_b.constant / fit_a.constant;
    let weight_ratio = (1.0 + x_b.h_norm().powi(2)) / (1.0 + x_a.h_norm().powi(2));
    let se = (fit_a.log_constant_stderr.powi(2) + fit_b.log_constant_stderr.powi(2)).sqrt();
    let band = (constant_ratio * (-2.0 * se).exp(), constant_ratio * (2.0 * se).exp());
    let lo_target = weight_ratio.min(1.0);
    let hi_target = weight_ratio.max(1.0);
    let passed = fit_a.rate > 0.0
        && fit_b.rate > 0.0
        && fit_a.r_squared >= 0.9
        && fit_b.r_squared >= 0.9
        && rate_rel_diff <= 0.1
        && band.1 >= lo_target
        && band.0 <= hi_target;
    Ok(RateDependenceReport {
        series_a,
        series_b,
        fit_a,
        fit_b,
        rate_rel_diff,
        constant_ratio,
        weight_ratio,
        constant_ratio_band: band,
        passed,
    })
}
