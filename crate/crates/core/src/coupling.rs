//! Two trajectories driven by the same noise, the second one pulled toward
//! the first on the low modes, together with the Girsanov shift that makes
//! the pull a change of measure and the distance-like function `d_N`.

use log::warn;

use crate::coefficients::ModelSpec;
use crate::dynamics::{constrain, semi_implicit_update, LocalTimeLedger, PathSample, StepperConfig, Workspace};
use crate::error::{check_dim, Error, Result};
use crate::rng::NoiseStream;
use crate::spectral::{dist_sq, h_norm_slice, validate_h1, StateVector, TOL_BALL};

/// Parameters of `d_N(x, y) = min(N |x - y|_H^{2 delta / (1 + delta)}, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceParams {
    pub n_tilde: f64,
    pub delta: f64,
}

/// Grid searched for `delta`.
pub const DELTA_GRID: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

impl DistanceParams {
    pub fn new(n_tilde: f64, delta: f64) -> Result<Self> {
        if !(n_tilde > 0.0 && n_tilde.is_finite()) {
            return Err(Error::InvalidParameter(format!("n_tilde must be positive (got {n_tilde})")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1) (got {delta})")));
        }
        Ok(Self { n_tilde, delta })
    }

    /// `N = 1` and `delta` from [`select_delta`].
    pub fn auto(model: &ModelSpec) -> Self {
        Self { n_tilde: 1.0, delta: select_delta(model) }
    }

    /// The power `2 delta / (1 + delta)` applied to `|x - y|_H`.
    pub fn exponent(&self) -> f64 {
        2.0 * self.delta / (1.0 + self.delta)
    }

    /// `d_N` as a function of the gap `|x - y|_H`.
    pub fn of_gap(&self, gap: f64) -> f64 {
        if gap == 0.0 {
            0.0
        } else {
            (self.n_tilde * gap.powf(self.exponent())).min(1.0)
        }
    }
}

pub fn d_distance(x: &StateVector, y: &StateVector, p: &DistanceParams) -> f64 {
    p.of_gap(dist_sq(x.coeffs(), y.coeffs()).sqrt())
}

/// Exponent `8 delta f0^2 + (8 delta + 64 delta^2) s0^2 + (64 delta^2 + 12 delta) C_1 - (3/4) delta lambda_{N+1}`
/// whose minimum over [`DELTA_GRID`] selects `delta` (ties go to the smaller value).
pub fn combined_exponent(model: &ModelSpec, delta: f64) -> f64 {
    let f0 = model.f0_vstar_sq();
    let s0 = model.sigma0_hs_sq();
    let c1 = model.lipschitz_c1();
    8.0 * delta * f0 + (8.0 * delta + 64.0 * delta * delta) * s0 + (64.0 * delta * delta + 12.0 * delta) * c1
        - 0.75 * delta * model.lambda_next()
}

pub fn select_delta(model: &ModelSpec) -> f64 {
    let mut best = DELTA_GRID[0];
    let mut best_val = combined_exponent(model, best);
    for &d in &DELTA_GRID[1..] {
        let v = combined_exponent(model, d);
        if v < best_val {
            best = d;
            best_val = v;
        }
    }
    best
}

/// Writes the low-mode correction `(lambda_{N+1}/2) P_N (x - y)` into `out`.
fn correction_into(model: &ModelSpec, x: &[f64], y: &[f64], out: &mut [f64]) {
    let half = model.lambda_next() / 2.0;
    let n = model.coupling_n();
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i < n { half * (x[i] - y[i]) } else { 0.0 };
    }
}

fn shift_into(model: &ModelSpec, x: &[f64], y: &[f64], corr: &mut [f64], out: &mut [f64]) -> Result<()> {
    correction_into(model, x, y, corr);
    model
        .noise()
        .pseudo_inverse_apply(h_norm_slice(y), corr, model.coupling_n(), out)
}

/// `beta = (lambda_{N+1}/2) sigma(y)^{-1} P_N (x - y)` in noise space.
pub fn girsanov_shift(model: &ModelSpec, x: &StateVector, y: &StateVector) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.dim())?;
    check_dim(model.dim(), y.dim())?;
    let mut corr = vec![0.0; model.dim()];
    let mut out = vec![0.0; model.noise().noise_dim()];
    shift_into(model, x.coeffs(), y.coeffs(), &mut corr, &mut out)?;
    Ok(out)
}

/// Constant `C` in `|beta|_{l2} <= C |x - y|_H`, i.e.
/// `lambda_{N+1} / (2 c_min g_lo)` for diagonal noise.
pub fn shift_bound_constant(model: &ModelSpec) -> Option<f64> {
    model
        .noise()
        .pseudo_inverse_bound(model.coupling_n())
        .map(|b| model.lambda_next() / 2.0 * b)
}

/// Which pair dynamics to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// `Y` receives the low-mode correction; the Girsanov cost is tracked.
    Girsanov,
    /// Plain synchronous coupling: same noise, no correction.
    Synchronous,
}

/// Relative gap below which a coupled pair is merged.
const MERGE_TOL: f64 = 16.0 * f64::EPSILON;

/// Streaming integrator for a coupled pair.
///
/// Once `|X - Y|_H <= 16 eps |X|_H` the pair is treated as coalesced and `Y`
/// is set to `X`.
#[derive(Debug, Clone)]
pub struct CoupledStepper<'a> {
    model: &'a ModelSpec,
    cfg: StepperConfig,
    mode: CouplingMode,
    noise: NoiseStream,
    step: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    next: Vec<f64>,
    dl_x: Vec<f64>,
    dl_y: Vec<f64>,
    corr: Vec<f64>,
    beta: Vec<f64>,
    beta_sq: f64,
    shift_cost: f64,
    ws: Workspace,
}

impl<'a> CoupledStepper<'a> {
    pub fn new(
        model: &'a ModelSpec,
        x: &StateVector,
        y: &StateVector,
        cfg: StepperConfig,
        mode: CouplingMode,
        seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        for s in [x, y] {
            check_dim(model.dim(), s.dim())?;
            let norm = s.h_norm();
            if norm > 1.0 + TOL_BALL {
                return Err(Error::OutsideBall { norm });
            }
        }
        let mut st = Self {
            model,
            cfg,
            mode,
            noise: NoiseStream::new(seed, path_index),
            step: 0,
            x: x.coeffs().to_vec(),
            y: y.coeffs().to_vec(),
            next: vec![0.0; model.dim()],
            dl_x: vec![0.0; model.dim()],
            dl_y: vec![0.0; model.dim()],
            corr: vec![0.0; model.dim()],
            beta: vec![0.0; model.noise().noise_dim()],
            beta_sq: 0.0,
            shift_cost: 0.0,
            ws: Workspace::new(model),
        };
        if mode == CouplingMode::Girsanov {
            st.beta_sq = st.current_beta_sq()?;
        }
        Ok(st)
    }

    fn current_beta_sq(&mut self) -> Result<f64> {
        shift_into(self.model, &self.x, &self.y, &mut self.corr, &mut self.beta)?;
        Ok(self.beta.iter().map(|b| b * b).sum())
    }

    /// Advances both trajectories one step; returns whether each was
    /// constrained.
    pub fn advance(&mut self) -> Result<(bool, bool)> {
        let dt = self.cfg.dt;
        self.noise.fill(self.step as u64, dt, &mut self.ws.dw);

        semi_implicit_update(self.model, &self.x, dt, None, &mut self.ws, &mut self.next);
        let ax = constrain(self.cfg.scheme, dt, &mut self.next, &mut self.dl_x);
        if !self.next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: self.step });
        }
        let extra = match self.mode {
            CouplingMode::Girsanov => {
                correction_into(self.model, &self.x, &self.y, &mut self.corr);
                Some(&self.corr[..])
            }
            CouplingMode::Synchronous => None,
        };
        std::mem::swap(&mut self.x, &mut self.next);
        semi_implicit_update(self.model, &self.y, dt, extra, &mut self.ws, &mut self.next);
        let ay = constrain(self.cfg.scheme, dt, &mut self.next, &mut self.dl_y);
        if !self.next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: self.step });
        }
        std::mem::swap(&mut self.y, &mut self.next);
        self.step += 1;
        // Below a few ulps the gap is rounding noise; merging makes the
        // coalescence exact, and from then on both sides compute the same.
        let scale: f64 = self.x.iter().map(|v| v * v).sum();
        if dist_sq(&self.x, &self.y) <= MERGE_TOL * MERGE_TOL * scale {
            self.y.copy_from_slice(&self.x);
        }

        if self.mode == CouplingMode::Girsanov {
            let b = self.current_beta_sq()?;
            self.shift_cost += 0.5 * dt * (self.beta_sq + b);
            self.beta_sq = b;
        }
        Ok((ax, ay))
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `|X - Y|_H`.
    pub fn gap(&self) -> f64 {
        dist_sq(&self.x, &self.y).sqrt()
    }

    /// Current shift in noise space (zero in synchronous mode).
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Trapezoidal `int_0^t |beta|^2 ds` so far.
    pub fn shift_cost(&self) -> f64 {
        self.shift_cost
    }

    pub fn last_increments(&self) -> (&[f64], &[f64]) {
        (&self.dl_x, &self.dl_y)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }
}

/// A fully stored coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub x_path: PathSample,
    pub y_path: PathSample,
    /// `beta(t_k)` at every grid point.
    pub shift_record: Vec<Vec<f64>>,
    /// Cumulative trapezoidal shift cost at every grid point.
    pub shift_cost_cumulative: Vec<f64>,
    pub shift_cost: f64,
}

impl CoupledPath {
    /// `|X(t_k) - Y(t_k)|_H` on the grid.
    pub fn gaps(&self) -> Vec<f64> {
        self.x_path
            .states
            .iter()
            .zip(&self.y_path.states)
            .map(|(a, b)| dist_sq(a.coeffs(), b.coeffs()).sqrt())
            .collect()
    }
}

/// Runs the pair `(X^x, Y^y)` on `[0, t_end]` with shared noise.
///
/// Fails if the noise has no pseudo-inverse on the coupled modes; a model
/// failing the spectral-gap condition only triggers a warning.
pub fn simulate_coupled(
    model: &ModelSpec,
    x: &StateVector,
    y: &StateVector,
    t_end: f64,
    cfg: &StepperConfig,
    seed: u64,
    path_index: u64,
) -> Result<CoupledPath> {
    let steps = cfg.steps_for(t_end)?;
    if !model.noise().low_mode_range_condition(model.coupling_n()) {
        return Err(Error::PseudoInverseUnavailable);
    }
    if let Ok(r) = validate_h1(model, model.coupling_n()) {
        if !r.passed {
            warn!(
                "spectral gap condition fails: lambda_(N+1) = {} <= threshold {}",
                r.lambda_next, r.threshold
            );
        }
    }
    let mut st = CoupledStepper::new(model, x, y, *cfg, CouplingMode::Girsanov, seed, path_index)?;
    let mut times = vec![0.0];
    let mut xs = vec![x.clone()];
    let mut ys = vec![y.clone()];
    let (mut lx, mut ly) = (LocalTimeLedger::new(), LocalTimeLedger::new());
    let mut shift_record = vec![st.beta().to_vec()];
    let mut cum = vec![0.0];
    for k in 0..steps {
        let (ax, ay) = st.advance()?;
        let (dx, dy) = st.last_increments();
        if ax {
            lx.record(k, dx);
        }
        if ay {
            ly.record(k, dy);
        }
        times.push((k + 1) as f64 * cfg.dt);
        xs.push(StateVector::new(st.x().to_vec()));
        ys.push(StateVector::new(st.y().to_vec()));
        shift_record.push(st.beta().to_vec());
        cum.push(st.shift_cost());
    }
    let sample = |states, ledger| PathSample {
        times: times.clone(),
        states,
        ledger,
        noise_seed: seed,
        path_index,
        scheme: cfg.scheme,
    };
    Ok(CoupledPath {
        x_path: sample(xs, lx),
        y_path: sample(ys, ly),
        shift_record,
        shift_cost: st.shift_cost(),
        shift_cost_cumulative: cum,
    })
}
