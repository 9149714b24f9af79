//! Monte Carlo estimators and verdicts for the quantitative ergodicity
//! claims: weighted moment bounds, the Lyapunov condition, the Feller
//! modulus, contraction and d-smallness of `d_N`, occupation measures and
//! exponential rate extraction.
//!
//! Every estimator is a deterministic function of the model and the plan:
//! path `j` of sub-experiment `p` draws its noise from
//! `(plan.base_seed, p * plan.n_paths + j)` and aggregation runs in path order.

mod contraction;
mod moments;
mod occupation;

use std::fmt::Write as _;
use std::io::{self, Write};

pub use contraction::{
    contraction_check, d_small_check, rate_dependence_check, sample_close_pairs, sphere_points, wasserstein_upper,
    ContractionReport, DSmallReport, RateDependenceReport,
};
pub use moments::{
    exp_integrability_bound, exp_integrability_estimate, feller_modulus_estimate, fourth_moment_estimate,
    lyapunov_check, weighted_contraction_bound, weighted_contraction_estimate, FellerReport,
};
pub use occupation::{
    default_test_functions, invariance_residual, occupation_sampler, summaries_agree, AgreementReport,
    OccupationConfig, OccupationMeasure, ResidualReport, TestFunction,
};

use crate::coefficients::ModelSpec;
use crate::coupling::{CoupledStepper, CouplingMode, DistanceParams};
use crate::dynamics::{PathStepper, StepperConfig};
use crate::error::{Error, Result};
use crate::spectral::{dist_sq, StateVector};
use crate::stats::{EstimateSeries, RateFit};

/// Number of paths, observation grid and noise seed of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloPlan {
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    pub base_seed: u64,
    pub stepper: StepperConfig,
    pub workers: usize,
}

impl MonteCarloPlan {
    pub fn new(n_paths: usize, t_grid: Vec<f64>, base_seed: u64, stepper: StepperConfig) -> Self {
        Self { n_paths, t_grid, base_seed, stepper, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_grid(&self, t_grid: Vec<f64>) -> Self {
        Self { t_grid, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidParameter(format!("n_paths must be at least 2 (got {})", self.n_paths)));
        }
        if self.t_grid.is_empty() {
            return Err(Error::InvalidParameter("t_grid must not be empty".into()));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("t_grid must be strictly increasing".into()));
        }
        self.grid_steps().map(|_| ())
    }

    /// Step index of each grid time.
    pub fn grid_steps(&self) -> Result<Vec<usize>> {
        self.t_grid.iter().map(|t| self.stepper.steps_for(*t)).collect()
    }

    pub(crate) fn path_index(&self, sub: usize, j: usize) -> u64 {
        (sub * self.n_paths + j) as u64
    }
}

/// An estimated series checked pointwise against an explicit bound.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub name: String,
    /// The inequality being tested, in words.
    pub inequality: String,
    pub series: EstimateSeries,
    pub bound: Vec<f64>,
    pub pass: Vec<bool>,
    pub passed: bool,
    /// Smallest `bound - statistic` over the grid (negative when failing).
    pub margin: f64,
    pub notes: Vec<String>,
}

impl EstimatorReport {
    /// CSV with header `t,mean,stderr,bound,pass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mean,stderr,bound,pass")?;
        for i in 0..self.series.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{}",
                self.series.times[i], self.series.mean[i], self.series.stderr[i], self.bound[i], self.pass[i]
            )?;
        }
        Ok(())
    }

    pub fn verdict(&self) -> Verdict {
        Verdict {
            name: self.name.clone(),
            inequality: self.inequality.clone(),
            passed: self.passed,
            margin: self.margin,
            detail: self.notes.join("; "),
        }
    }
}

/// Pass/fail outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub inequality: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

/// Collected verdicts and constants of an ergodicity run.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityReport {
    pub fit: Option<RateFit>,
    pub verdicts: Vec<Verdict>,
    /// Drift rate `gamma = lambda_1` and constant `K` of the Lyapunov condition.
    pub lyapunov_gamma: f64,
    pub lyapunov_k: f64,
    pub distance: DistanceParams,
    /// `epsilon` of the d-smallness check, when run.
    pub d_small_epsilon: Option<f64>,
    /// Contraction time `t0` and factor `alpha`, when found.
    pub contraction: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

impl ErgodicityReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lyapunov: gamma = {:e}, K = {:e}", self.lyapunov_gamma, self.lyapunov_k);
        let _ = writeln!(s, "distance: n_tilde = {}, delta = {}", self.distance.n_tilde, self.distance.delta);
        match &self.fit {
            Some(f) => {
                let _ = writeln!(
                    s,
                    "fit: r = {:e} (stderr {:e}), C = {:e}, r_squared = {:.6}",
                    f.rate, f.rate_stderr, f.constant, f.r_squared
                );
            }
            None => {
                let _ = writeln!(s, "fit: none");
            }
        }
        if let Some((t0, alpha)) = self.contraction {
            let _ = writeln!(s, "contraction: t0 = {t0}, alpha = {alpha:e}");
        }
        if let Some(e) = self.d_small_epsilon {
            let _ = writeln!(s, "d_small: epsilon = {e:e}");
        }
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "verdict {}: {} (margin {:e}) [{}]{}",
                v.name,
                if v.passed { "PASS" } else { "FAIL" },
                v.margin,
                v.inequality,
                if v.detail.is_empty() { String::new() } else { format!(" {}", v.detail) }
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Per-grid-point observation of a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PairObs {
    pub gap_sq: f64,
    /// Trapezoidal `int_0^t ||X(s)||^2 ds` of the first trajectory.
    pub energy_int: f64,
    /// `sup_{s <= t} h(s) |X(s) - Y(s)|^2` with `h(s) = exp(-4 int_0^s ||X||^2)`.
    pub sup_h_gap_sq: f64,
    pub shift_cost: f64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_observations(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    stepper: StepperConfig,
    grid_steps: &[usize],
    mode: CouplingMode,
    seed: u64,
    path_index: u64,
) -> Result<Vec<PairObs>> {
    let basis = model.basis();
    let mut st = CoupledStepper::new(model, x, y, stepper, mode, seed, path_index)?;
    let dt = stepper.dt;
    let mut out = Vec::with_capacity(grid_steps.len());
    let mut v_prev = basis.v_norm_sq(st.x());
    let mut energy = 0.0;
    let mut gap_sq = dist_sq(st.x(), st.y());
    let mut sup = gap_sq;
    let mut next = 0;
    let last = grid_steps.last().copied().unwrap_or(0);
    for k in 0..=last {
        if k > 0 {
            st.advance()?;
            let v = basis.v_norm_sq(st.x());
            energy += 0.5 * dt * (v_prev + v);
            v_prev = v;
            gap_sq = dist_sq(st.x(), st.y());
            sup = sup.max((-4.0 * energy).exp() * gap_sq);
        }
        while next < grid_steps.len() && grid_steps[next] == k {
            out.push(PairObs { gap_sq, energy_int: energy, sup_h_gap_sq: sup, shift_cost: st.shift_cost() });
            next += 1;
        }
    }
    Ok(out)
}

/// Per-grid-point observation of a single trajectory.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SingleObs {
    pub state: Vec<f64>,
    /// Trapezoidal `int_0^t ||X(s)||^2 ds`.
    pub energy_int: f64,
    /// Trapezoidal `int_0^t |X(s)|_H^2 ds`.
    pub h_int: f64,
}

pub(crate) fn single_observations(
    model: &ModelSpec,
    x: &StateVector,
    stepper: StepperConfig,
    grid_steps: &[usize],
    seed: u64,
    path_index: u64,
) -> Result<Vec<SingleObs>> {
    let basis = model.basis();
    let mut st = PathStepper::new(model, x, stepper, seed, path_index)?;
    let dt = stepper.dt;
    let mut out = Vec::with_capacity(grid_steps.len());
    let h_sq = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    let (mut v_prev, mut h_prev) = (basis.v_norm_sq(st.state()), h_sq(st.state()));
    let (mut energy, mut h_int) = (0.0, 0.0);
    let mut next = 0;
    let last = grid_steps.last().copied().unwrap_or(0);
    for k in 0..=last {
        if k > 0 {
            st.advance()?;
            let (v, h) = (basis.v_norm_sq(st.state()), h_sq(st.state()));
            energy += 0.5 * dt * (v_prev + v);
            h_int += 0.5 * dt * (h_prev + h);
            v_prev = v;
            h_prev = h;
        }
        while next < grid_steps.len() && grid_steps[next] == k {
            out.push(SingleObs { state: st.state().to_vec(), energy_int: energy, h_int });
            next += 1;
        }
    }
    Ok(out)
}

/// Builds a pointwise report from per-path values and a bound, with the
/// pass rule `stat(mean, stderr) <= bound`.
pub(crate) fn pointwise_report(
    name: &str,
    inequality: &str,
    series: EstimateSeries,
    bound: Vec<f64>,
    statistic: impl Fn(f64, f64) -> f64,
) -> EstimatorReport {
    let mut pass = Vec::with_capacity(bound.len());
    let mut margin = f64::INFINITY;
    for i in 0..series.len() {
        let s = statistic(series.mean[i], series.stderr[i]);
        let ok = s <= bound[i];
        pass.push(ok);
        let m = bound[i] - s;
        margin = margin.min(if m.is_nan() { f64::NEG_INFINITY } else { m });
    }
    let passed = pass.iter().all(|p| *p);
    EstimatorReport {
        name: name.to_string(),
        inequality: inequality.to_string(),
        series,
        bound,
        pass,
        passed,
        margin,
        notes: Vec::new(),
    }
}

/// Upper end of a 2-stderr confidence interval.
pub(crate) fn upper2(mean: f64, stderr: f64) -> f64 {
    mean + 2.0 * stderr
}

pub(crate) fn lower2(mean: f64, stderr: f64) -> f64 {
    mean - 2.0 * stderr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralBasis;

    fn zero_model() -> ModelSpec {
        ModelSpec::builder(SpectralBasis::new(vec![1.0, 2.0, 3.0]).unwrap())
            .coupling_n(1)
            .build()
            .unwrap()
    }

    #[test]
    fn plan_validation() {
        let cfg = StepperConfig::projected(0.01);
        assert!(MonteCarloPlan::new(1, vec![0.1], 0, cfg).validate().is_err());
        assert!(MonteCarloPlan::new(2, vec![], 0, cfg).validate().is_err());
        assert!(MonteCarloPlan::new(2, vec![0.2, 0.1], 0, cfg).validate().is_err());
        assert!(MonteCarloPlan::new(2, vec![0.105], 0, cfg).validate().is_err());
        let p = MonteCarloPlan::new(2, vec![0.0, 0.1, 0.5], 0, cfg);
        assert_eq!(p.grid_steps().unwrap(), vec![0, 10, 50]);
    }

    #[test]
    fn observations_on_grid() {
        let m = zero_model();
        let x = StateVector::new(vec![0.5, 0.0, 0.0]);
        let obs = single_observations(&m, &x, StepperConfig::projected(0.01), &[0, 0, 3], 1, 0).unwrap();
        assert_eq!(obs.len(), 3);
        assert_eq!(obs[0].state, x.coeffs());
        assert_eq!(obs[0].energy_int, 0.0);
        assert!((obs[2].state[0] - 0.5 / 1.01f64.powi(3)).abs() < 1e-15);
        let pair = pair_observations(
            &m,
            &x,
            &x,
            StepperConfig::projected(0.01),
            &[0, 5],
            CouplingMode::Synchronous,
            1,
            0,
        )
        .unwrap();
        assert_eq!(pair[1].gap_sq, 0.0);
    }

    #[test]
    fn csv_layout() {
        let series = EstimateSeries { times: vec![0.0, 1.0], mean: vec![1.0, 0.5], stderr: vec![0.0, 0.1], n_effective: 4 };
        let r = pointwise_report("x", "mean <= bound", series, vec![1.0, 0.4], |m, _| m);
        assert_eq!(r.pass, vec![true, false]);
        assert!(!r.passed);
        assert!((r.margin + 0.1).abs() < 1e-15);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,mean,stderr,bound,pass\n0,1e0,0e0,1e0,true\n"));
    }
}
