use std::f64::consts::PI;

use super::{single_observations, MonteCarloPlan};
use crate::coefficients::ModelSpec;
use crate::dynamics::{PathStepper, StepperConfig};
use crate::error::{Error, Result};
use crate::parallel::parallel_map;
use crate::spectral::StateVector;
use crate::stats::MeanStderr;

/// Burn-in, averaging window and thinning of an occupation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupationConfig {
    pub t_burn: f64,
    pub t_avg: f64,
    /// Steps between snapshots.
    pub thin: usize,
    pub stepper: StepperConfig,
    pub seed: u64,
    pub path_index: u64,
}

/// Equal-weight snapshots of one long trajectory, with summary moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub samples: Vec<StateVector>,
    pub weights: Vec<f64>,
    pub mean_coeffs: Vec<f64>,
    pub second_moments: Vec<f64>,
    /// Mean of `|X|_H^2` over the snapshots, with a batch-means stderr.
    pub total_second_moment: MeanStderr,
    /// Mean of `||X||^2` over the snapshots, with a batch-means stderr.
    pub mean_v_energy: MeanStderr,
    /// `(1/t) int_0^t ||X(s)||^2 ds` over the whole run.
    pub time_averaged_energy: f64,
    /// `|x|^2 / t + K`, the bound on the time-averaged energy.
    pub energy_bound: f64,
}

impl OccupationMeasure {
    pub fn energy_bound_holds(&self) -> bool {
        self.time_averaged_energy <= self.energy_bound
    }
}

/// Batch-means estimate for a correlated sequence.
fn batch_means(xs: &[f64]) -> MeanStderr {
    let batches = (xs.len() / 2).clamp(1, 50);
    if batches < 2 {
        return MeanStderr::of(xs);
    }
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = MeanStderr::of(&means);
    MeanStderr { mean: MeanStderr::of(xs).mean, stderr: m.stderr, n: xs.len() }
}

/// Runs one trajectory from `x`, discards `[0, t_burn]` and snapshots every
/// `thin` steps over the following `t_avg`.
pub fn occupation_sampler(model: &ModelSpec, x: &StateVector, cfg: &OccupationConfig) -> Result<OccupationMeasure> {
    if cfg.thin == 0 {
        return Err(Error::InvalidParameter("thin must be positive".into()));
    }
    let burn = cfg.stepper.steps_for(cfg.t_burn)?;
    let avg = cfg.stepper.steps_for(cfg.t_avg)?;
    if avg < cfg.thin {
        return Err(Error::InvalidParameter("averaging window shorter than one thinning interval".into()));
    }
    let basis = model.basis();
    let dt = cfg.stepper.dt;
    let mut st = PathStepper::new(model, x, cfg.stepper, cfg.seed, cfg.path_index)?;
    let mut v_prev = basis.v_norm_sq(st.state());
    let mut energy = 0.0;
    let mut samples = Vec::with_capacity(avg / cfg.thin);
    for k in 1..=burn + avg {
        st.advance()?;
        let v = basis.v_norm_sq(st.state());
        energy += 0.5 * dt * (v_prev + v);
        v_prev = v;
        if k > burn && (k - burn) % cfg.thin == 0 {
            samples.push(StateVector::new(st.state().to_vec()));
        }
    }
    let n = samples.len();
    let dim = model.dim();
    let mut mean_coeffs = vec![0.0; dim];
    let mut second_moments = vec![0.0; dim];
    for s in &samples {
        for (i, v) in s.coeffs().iter().enumerate() {
            mean_coeffs[i] += v;
            second_moments[i] += v * v;
        }
    }
    mean_coeffs.iter_mut().for_each(|m| *m /= n as f64);
    second_moments.iter_mut().for_each(|m| *m /= n as f64);
    let h2: Vec<f64> = samples.iter().map(|s| s.h_norm().powi(2)).collect();
    let v2: Vec<f64> = samples.iter().map(|s| basis.v_norm_sq(s.coeffs())).collect();
    let t_total = (burn + avg) as f64 * dt;
    Ok(OccupationMeasure {
        weights: vec![1.0 / n as f64; n],
        samples,
        mean_coeffs,
        second_moments,
        total_second_moment: batch_means(&h2),
        mean_v_energy: batch_means(&v2),
        time_averaged_energy: energy / t_total,
        energy_bound: x.h_norm().powi(2) / t_total + model.lyapunov_k(),
    })
}

/// Comparison of two occupation summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementReport {
    pub second_moment_diff: f64,
    pub second_moment_joint_stderr: f64,
    pub energy_diff: f64,
    pub energy_joint_stderr: f64,
    pub passed: bool,
}

/// The total second moment and the mean V-energy agree within three joint
/// standard errors.
pub fn summaries_agree(a: &OccupationMeasure, b: &OccupationMeasure) -> AgreementReport {
    let joint = |x: &MeanStderr, y: &MeanStderr| (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
    let second_moment_diff = (a.total_second_moment.mean - b.total_second_moment.mean).abs();
    let second_moment_joint_stderr = joint(&a.total_second_moment, &b.total_second_moment);
    let energy_diff = (a.mean_v_energy.mean - b.mean_v_energy.mean).abs();
    let energy_joint_stderr = joint(&a.mean_v_energy, &b.mean_v_energy);
    AgreementReport {
        second_moment_diff,
        second_moment_joint_stderr,
        energy_diff,
        energy_joint_stderr,
        passed: second_moment_diff <= 3.0 * second_moment_joint_stderr && energy_diff <= 3.0 * energy_joint_stderr,
    }
}

/// Bounded Lipschitz test functions on the state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `sin(freq * x_mode)` (0-based mode).
    Sin { mode: usize, freq: f64 },
    Cos { mode: usize, freq: f64 },
    /// `min(|x|_H^2, cap)`.
    TruncatedEnergy { cap: f64 },
    Constant(f64),
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::Sin { mode, freq } => (freq * x[mode]).sin(),
            TestFunction::Cos { mode, freq } => (freq * x[mode]).cos(),
            TestFunction::TruncatedEnergy { cap } => x.iter().map(|v| v * v).sum::<f64>().min(cap),
            TestFunction::Constant(c) => c,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TestFunction::Sin { mode, freq } => format!("sin({freq}*x_{})", mode + 1),
            TestFunction::Cos { mode, freq } => format!("cos({freq}*x_{})", mode + 1),
            TestFunction::TruncatedEnergy { cap } => format!("min(|x|^2,{cap})"),
            TestFunction::Constant(c) => format!("const({c})"),
        }
    }
}

/// `n` test functions: sinusoids of the leading coordinates at a few
/// frequencies, interleaved with truncated energies.
pub fn default_test_functions(n: usize, dim: usize) -> Vec<TestFunction> {
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    while out.len() < n {
        let mode = (i / 2) % dim.min(4);
        let freq = [PI, 2.0 * PI, 5.0][(i / 8) % 3];
        let f = match i % 5 {
            4 => TestFunction::TruncatedEnergy { cap: [0.5, 0.05, 0.005][(i / 5) % 3] },
            k if k % 2 == 0 => TestFunction::Sin { mode, freq },
            _ => TestFunction::Cos { mode, freq },
        };
        out.push(f);
        i += 1;
    }
    out
}

/// One invariance residual `E_occ[T_delta phi] - E_occ[phi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub name: String,
    pub residual: f64,
    pub stderr: f64,
    pub passed: bool,
}

/// Restarts `plan.n_paths` paths from the occupation samples (cycled) for a
/// time `delta_t` and compares the test functions before and after; each
/// residual passes when it is within three standard errors of zero.
pub fn invariance_residual(
    model: &ModelSpec,
    occ: &OccupationMeasure,
    delta_t: f64,
    test_fns: &[TestFunction],
    plan: &MonteCarloPlan,
) -> Result<Vec<ResidualReport>> {
    if occ.samples.is_empty() {
        return Err(Error::InvalidParameter("empty occupation measure".into()));
    }
    let steps = plan.stepper.steps_for(delta_t)?;
    let diffs = parallel_map(plan.n_paths, plan.workers, |j| {
        let start = &occ.samples[j % occ.samples.len()];
        let obs = single_observations(model, start, plan.stepper, &[steps], plan.base_seed, plan.path_index(0, j))?;
        Ok(test_fns
            .iter()
            .map(|f| f.eval(&obs[0].state) - f.eval(start.coeffs()))
            .collect::<Vec<f64>>())
    })?;
    Ok(test_fns
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let col: Vec<f64> = diffs.iter().map(|d| d[i]).collect();
            let m = MeanStderr::of(&col);
            ResidualReport {
                name: f.name(),
                residual: m.mean,
                stderr: m.stderr,
                passed: m.mean.abs() <= 3.0 * m.stderr,
            }
        })
        .collect())
}
