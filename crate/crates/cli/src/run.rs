//! Experiment orchestration: each subcommand computes its result files and
//! verdicts in memory, then the coordinator writes them and the manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use see_lab_core::coefficients::{check_form_bounds, form_identity_check, lipschitz_probe};
use see_lab_core::coupling::{select_delta, shift_bound_constant, simulate_coupled};
use see_lab_core::dynamics::{
    discrete_obstacle_inequality, ledger_diagnostics, penalization_convergence_study, simulate_path,
};
use see_lab_core::ergodicity::{
    contraction_check, d_small_check, default_test_functions, exp_integrability_estimate, feller_modulus_estimate,
    fourth_moment_estimate, invariance_residual, lyapunov_check, occupation_sampler, rate_dependence_check,
    sample_close_pairs, sphere_points, summaries_agree, wasserstein_upper, weighted_contraction_estimate,
    ErgodicityReport, EstimatorReport, MonteCarloPlan, OccupationConfig, Verdict,
};
use see_lab_core::nse::{energy_check, verify_nse_model};
use see_lab_core::parallel::{parallel_map, resolve_workers};
use see_lab_core::spectral::{h_norm_slice, validate_h1};
use see_lab_core::stats::fit_exponential_rate;
use see_lab_core::{DistanceParams, H1Variant, ModelSpec, PathSample, Scheme};

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::output::{sha256_hex, write_atomic, OutputFile, RunManifest};

/// The six experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Couple,
    VerifyModel,
    Ergodicity,
    Nse,
    Convergence,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Couple => "couple",
            Subcommand::VerifyModel => "verify-model",
            Subcommand::Ergodicity => "ergodicity",
            Subcommand::Nse => "nse",
            Subcommand::Convergence => "convergence",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Experiment of the `nse` subcommand.
    pub kind: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(ConfigError),
    #[error(transparent)]
    Core(#[from] see_lab_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Files, verdicts and warnings of one experiment, before anything is written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub files: Vec<OutputFile>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    fn verdict(&mut self, name: &str, inequality: &str, passed: bool, margin: f64, detail: String) {
        self.verdicts.push(Verdict { name: name.into(), inequality: inequality.into(), passed, margin, detail });
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Seed, path count and worker count after overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective {
    pub seed: u64,
    pub n_paths: usize,
    pub workers: usize,
}

impl Effective {
    pub fn resolve(cfg: &ExperimentConfig, ov: &Overrides) -> Self {
        Self {
            seed: ov.seed.unwrap_or(cfg.plan.base_seed),
            n_paths: ov.paths.unwrap_or(cfg.plan.n_paths),
            workers: resolve_workers(ov.workers),
        }
    }
}

/// Runs one experiment without touching the file system.
pub fn execute(sub: Subcommand, cfg: &ExperimentConfig, ov: &Overrides) -> Result<RunOutput, RunError> {
    let eff = Effective::resolve(cfg, ov);
    match sub {
        Subcommand::Simulate => simulate(cfg, &cfg.model, &eff),
        Subcommand::Couple => couple(cfg, &eff),
        Subcommand::VerifyModel => verify_model(cfg, &eff),
        Subcommand::Ergodicity => ergodicity(cfg, &cfg.model, &eff),
        Subcommand::Convergence => convergence(cfg, &eff),
        Subcommand::Nse => {
            let Some(nse) = &cfg.nse else {
                return Err(ConfigError::single("the nse subcommand needs an [nse] section").into());
            };
            let kind = ov.kind.clone().unwrap_or_else(|| nse.experiment.clone());
            match kind.as_str() {
                "verify-model" => verify_model(cfg, &eff),
                "simulate" => {
                    let mut out = simulate(cfg, &cfg.model, &eff)?;
                    if nse.unforced {
                        let st = &cfg.stepper;
                        let r = energy_check(&cfg.model, &st.x0, st.t_end, &st.config, eff.seed, nse.energy_slack)?;
                        out.verdict(
                            "energy_nonincreasing",
                            "|X(t_k+1)|^2 <= |X(t_k)|^2 (1 + slack) without forcing and noise",
                            r.passed,
                            nse.energy_slack - r.max_relative_increase,
                            format!("initial {:e}, final {:e}", r.initial, r.last),
                        );
                    }
                    Ok(out)
                }
                "ergodicity" => ergodicity(cfg, &cfg.model, &eff),
                other => Err(ConfigError::single(format!(
                    "unknown nse experiment `{other}` (expected verify-model, simulate or ergodicity)"
                ))
                .into()),
            }
        }
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunSummary {
    /// 0 when every verdict passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.passed() {
            0
        } else {
            1
        }
    }
}

/// Parses the config, runs the experiment, and writes the result files and
/// `manifest.txt` under the output directory.
pub fn run(sub: Subcommand, config_path: &Path, ov: &Overrides) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    let text = std::fs::read(config_path)
        .map_err(|e| ConfigError::single(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg = parse_config(config_path)?;
    if let Some(k) = &ov.kind {
        if sub != Subcommand::Nse {
            return Err(ConfigError::single(format!("--kind {k} only applies to the nse subcommand")).into());
        }
    }
    let eff = Effective::resolve(&cfg, ov);
    let out = execute(sub, &cfg, ov)?;
    let out_dir = ov
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("see-lab-out"));
    std::fs::create_dir_all(&out_dir)?;
    let mut files = Vec::with_capacity(out.files.len());
    for f in &out.files {
        write_atomic(&out_dir.join(&f.name), &f.bytes)?;
        files.push((f.name.clone(), sha256_hex(&f.bytes)));
    }
    let manifest = RunManifest {
        subcommand: sub.name().into(),
        config_path: config_path.display().to_string(),
        config_sha256: sha256_hex(&text),
        version: env!("CARGO_PKG_VERSION").into(),
        base_seed: eff.seed,
        n_paths: eff.n_paths,
        workers: eff.workers,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files,
        verdicts: out.verdicts,
        warnings: out.warnings,
    };
    write_atomic(&out_dir.join("manifest.txt"), manifest.render().as_bytes())?;
    Ok(RunSummary { out_dir, manifest })
}

/// `t,mode_1,...,mode_M,dl_norm`, every `thin`-th grid point; `dl_norm` sums
/// `|dL_k|_H` over the steps since the previous row.
pub fn trajectory_csv(path: &PathSample, thin: usize) -> String {
    let dim = path.states[0].dim();
    let mut s = String::from("t");
    for i in 1..=dim {
        let _ = write!(s, ",mode_{i}");
    }
    s.push_str(",dl_norm\n");
    let dl = path.increment_norms();
    let mut acc = 0.0;
    for (k, state) in path.states.iter().enumerate() {
        if k > 0 {
            acc += dl[k - 1];
        }
        if k % thin.max(1) != 0 && k != path.steps() {
            continue;
        }
        let _ = write!(s, "{}", path.times[k]);
        for v in state.coeffs() {
            let _ = write!(s, ",{v:e}");
        }
        let _ = writeln!(s, ",{acc:e}");
        acc = 0.0;
    }
    s
}

struct PathSummary {
    index: usize,
    max_norm: f64,
    contacts: usize,
    total_variation: f64,
    max_angle: f64,
    obstacle_min: f64,
    obstacle_passed: bool,
    csv: Option<String>,
}

fn simulate(cfg: &ExperimentConfig, model: &ModelSpec, eff: &Effective) -> Result<RunOutput, RunError> {
    let st = &cfg.stepper;
    let trials = cfg.plan.obstacle_trials;
    let summaries = parallel_map(eff.n_paths, eff.workers, |j| {
        let path = simulate_path(model, &st.x0, st.t_end, &st.config, eff.seed, j as u64)?;
        let max_norm = path.states.iter().map(|s| s.h_norm()).fold(0.0, f64::max);
        let diag = ledger_diagnostics(&path);
        let obs = discrete_obstacle_inequality(&path, trials, eff.seed);
        Ok(PathSummary {
            index: j,
            max_norm,
            contacts: diag.contacts,
            total_variation: path.ledger.total_variation(),
            max_angle: diag.max_angle,
            obstacle_min: obs.min_sum.min(obs.zero_phi_sum).min(obs.normal_phi_sum),
            obstacle_passed: obs.passed,
            csv: (j < cfg.output.dump_paths).then(|| trajectory_csv(&path, cfg.output.thin)),
        })
    })?;
    let mut out = RunOutput::default();
    let mut table = String::from("path_index,max_norm,contacts,total_variation,max_angle,obstacle_min_sum,obstacle_pass\n");
    for p in &summaries {
        let _ = writeln!(
            table,
            "{},{:e},{},{:e},{:e},{:e},{}",
            p.index, p.max_norm, p.contacts, p.total_variation, p.max_angle, p.obstacle_min, p.obstacle_passed
        );
    }
    for p in &summaries {
        if let Some(csv) = &p.csv {
            out.files.push(OutputFile::new(format!("path_{}_{}.csv", eff.seed, p.index), csv.as_bytes()));
        }
    }
    out.files.push(OutputFile::new("paths_summary.csv", table));

    let max_norm = summaries.iter().map(|p| p.max_norm).fold(0.0, f64::max);
    let (limit, what) = match st.config.scheme {
        Scheme::Projected => (1.0, "|X|_H <= 1 at every grid point"),
        Scheme::Penalized { .. } => (1.0 + st.ball_tolerance, "|X|_H <= 1 + ball_tolerance at every grid point"),
    };
    out.verdict("ball_invariance", what, max_norm <= limit, limit - max_norm, format!("max |X|_H = {max_norm:e}"));
    let max_angle = summaries.iter().map(|p| p.max_angle).fold(0.0, f64::max);
    out.verdict(
        "local_time_direction",
        "every nonzero dL_k is antiparallel to X_k+1 within 1e-8 rad",
        max_angle <= 1e-8,
        1e-8 - max_angle,
        format!("{} contacts", summaries.iter().map(|p| p.contacts).sum::<usize>()),
    );
    let failing = summaries.iter().filter(|p| !p.obstacle_passed).count();
    let tv_floor = summaries
        .iter()
        .map(|p| p.obstacle_min + 1e-10 * p.total_variation)
        .fold(f64::INFINITY, f64::min);
    out.verdict(
        "obstacle_inequality",
        "sum_k (phi_k - X_k+1, dL_k) >= -1e-10 TV(L) for random ball-valued phi",
        failing == 0,
        if tv_floor.is_finite() { tv_floor } else { 0.0 },
        format!("{failing} failing paths, {trials} test paths each"),
    );
    Ok(out)
}

fn distance_params(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<DistanceParams, RunError> {
    let delta = cfg.distance.delta.unwrap_or_else(|| select_delta(model));
    Ok(DistanceParams::new(cfg.distance.n_tilde, delta)?)
}

struct CoupleSummary {
    index: usize,
    final_gap: f64,
    final_d: f64,
    shift_cost: f64,
    max_norm: f64,
    max_shift_ratio: f64,
    csv: Option<String>,
}

fn couple(cfg: &ExperimentConfig, eff: &Effective) -> Result<RunOutput, RunError> {
    let model = &cfg.model;
    let st = &cfg.stepper;
    let p = distance_params(cfg, model)?;
    let c_shift = shift_bound_constant(model);
    let summaries = parallel_map(eff.n_paths, eff.workers, |j| {
        let cp = simulate_coupled(model, &st.x0, &st.y0, st.t_end, &st.config, eff.seed, j as u64)?;
        let gaps = cp.gaps();
        let max_norm = cp
            .x_path
            .states
            .iter()
            .chain(&cp.y_path.states)
            .map(|s| s.h_norm())
            .fold(0.0, f64::max);
        let mut max_shift_ratio = 0.0f64;
        if let Some(c) = c_shift {
            for (beta, g) in cp.shift_record.iter().zip(&gaps) {
                let b = h_norm_slice(beta);
                if *g > 0.0 {
                    max_shift_ratio = max_shift_ratio.max(b / (c * g));
                } else if b > 0.0 {
                    max_shift_ratio = f64::INFINITY;
                }
            }
        }
        let csv = (j < cfg.output.dump_paths).then(|| {
            let mut s = String::from("t,|x-y|_H,d_N,shift_cost_cum\n");
            let thin = cfg.output.thin.max(1);
            let last = gaps.len() - 1;
            for (k, g) in gaps.iter().enumerate() {
                if k % thin == 0 || k == last {
                    let _ = writeln!(
                        s,
                        "{},{:e},{:e},{:e}",
                        cp.x_path.times[k],
                        g,
                        p.of_gap(*g),
                        cp.shift_cost_cumulative[k]
                    );
                }
            }
            s
        });
        let final_gap = *gaps.last().expect("nonempty path");
        Ok(CoupleSummary {
            index: j,
            final_gap,
            final_d: p.of_gap(final_gap),
            shift_cost: cp.shift_cost,
            max_norm,
            max_shift_ratio,
            csv,
        })
    })?;
    let mut out = RunOutput::default();
    let mut table = String::from("path_index,final_gap,final_d_n,shift_cost,max_shift_ratio\n");
    for s in &summaries {
        let _ = writeln!(
            table,
            "{},{:e},{:e},{:e},{:e}",
            s.index, s.final_gap, s.final_d, s.shift_cost, s.max_shift_ratio
        );
        if let Some(csv) = &s.csv {
            out.files.push(OutputFile::new(format!("coupled_{}_{}.csv", eff.seed, s.index), csv.as_bytes()));
        }
    }
    out.files.push(OutputFile::new("coupled_summary.csv", table));
    let max_norm = summaries.iter().map(|s| s.max_norm).fold(0.0, f64::max);
    let limit = match st.config.scheme {
        Scheme::Projected => 1.0,
        Scheme::Penalized { .. } => 1.0 + st.ball_tolerance,
    };
    out.verdict(
        "ball_invariance",
        "both coupled trajectories stay in the ball",
        max_norm <= limit,
        limit - max_norm,
        format!("max |X|_H, |Y|_H = {max_norm:e}"),
    );
    match c_shift {
        Some(c) => {
            let worst = summaries.iter().map(|s| s.max_shift_ratio).fold(0.0, f64::max);
            out.verdict(
                "shift_bound",
                "|beta|_l2 <= lambda_N+1 / (2 c_min g_lo) |X - Y|_H",
                worst <= 1.0 + 1e-12,
                1.0 + 1e-12 - worst,
                format!("C = {c:e}"),
            );
        }
        None => out.warn("no explicit bound on the pseudo-inverse; shift bound not checked".into()),
    }
    Ok(out)
}

fn h1_line(name: &str, r: &see_lab_core::H1Report) -> String {
    format!(
        "{name}: lambda_(N+1) = {:e}, threshold = {:e}, {}",
        r.lambda_next,
        r.threshold,
        if r.passed { "satisfied" } else { "violated" }
    )
}

fn verify_model(cfg: &ExperimentConfig, eff: &Effective) -> Result<RunOutput, RunError> {
    let model = &cfg.model;
    let samples = cfg.nse.as_ref().map_or(1000, |n| n.samples);
    let mut out = RunOutput::default();
    let mut text = String::new();
    let _ = writeln!(text, "dim = {}, coupling_n = {}", model.dim(), model.coupling_n());
    let _ = writeln!(text, "bilinear = {}", model.bilinear().kind_name());
    let _ = writeln!(
        text,
        "C_1 = {:e}, |f(0)|^2_V* = {:e}, |sigma(0)|^2_HS = {:e}, gamma = {:e}",
        model.lipschitz_c1(),
        model.f0_vstar_sq(),
        model.sigma0_hs_sq(),
        model.damping_gamma()
    );

    if let Some(nse) = &cfg.nse {
        let v = verify_nse_model(&nse.model, samples, eff.seed)?;
        let _ = writeln!(text, "fourier modes = {}, wave vectors = {}", nse.model.grid.dim(), nse.model.grid.wave_vectors());
        out.verdict(
            "divergence_free",
            "every Fourier mode satisfies k . e_k = 0",
            v.divergence_free,
            0.0,
            String::new(),
        );
        let _ = writeln!(text, "{}", h1_line("h1 (nse form)", &v.h1_nse));
        let _ = writeln!(text, "{}", h1_line("h1 (generic form, reported only)", &v.h1_generic));
    }

    let ids = form_identity_check(model, samples, eff.seed);
    let _ = writeln!(
        text,
        "identities over {} triples: antisymmetry {:e}, cancellation {:e}, riesz {:e}, self {:e}",
        ids.samples, ids.max_antisymmetry, ids.max_cancellation, ids.max_riesz, ids.max_self_cancellation
    );
    let worst_id = ids
        .max_antisymmetry
        .max(ids.max_cancellation)
        .max(ids.max_riesz)
        .max(ids.max_self_cancellation);
    out.verdict(
        "form_identities",
        "|b(u,v,w) + b(u,w,v)|, |b(u,v,v)| <= 1e-12 scale",
        ids.passed,
        1e-12 - worst_id,
        String::new(),
    );
    let bounds = check_form_bounds(model, samples, eff.seed);
    let _ = writeln!(
        text,
        "form bounds over {} triples: trilinear ratio {:.12}, bilinear ratio {:.12}",
        bounds.samples, bounds.max_trilinear_ratio, bounds.max_bilinear_ratio
    );
    out.verdict(
        "form_bounds",
        "|b(u,v,w)| <= 2 ||u||^1/2 |u|^1/2 ||w||^1/2 |w|^1/2 ||v||, ||B(u,u)||_V* <= 2 ||u|| |u|",
        bounds.passed,
        1.0 + 1e-9 - bounds.max_trilinear_ratio.max(bounds.max_bilinear_ratio),
        String::new(),
    );
    let lip = lipschitz_probe(model, 3 * samples, eff.seed);
    let _ = writeln!(text, "lipschitz: estimate {:e}, declared C_1 {:e}", lip.estimate, lip.declared);
    out.verdict(
        "lipschitz",
        "|f(u)-f(v)|^2_V* + |sigma(u)-sigma(v)|^2_HS <= C_1 |u-v|^2",
        lip.passed,
        lip.declared - lip.estimate,
        String::new(),
    );
    let h1 = validate_h1(model, model.coupling_n())?;
    let _ = writeln!(text, "{}", h1_line("h1", &h1));
    let _ = writeln!(text, "range condition on P_N H: {}", h1.range_condition);
    out.verdict(
        "h1_spectral_gap",
        match h1.variant {
            H1Variant::Generic => "lambda_N+1 > (32/3) |f(0)|^2 + (32/3) |sigma(0)|^2 + 16 C_1",
            H1Variant::Nse => "lambda_N+1 > (32/3) |sigma(0)|^2 + 12 C_1 + 16 gamma^2",
        },
        h1.passed,
        h1.lambda_next - h1.threshold,
        String::new(),
    );
    out.verdict(
        "range_condition",
        "low-mode noise amplitudes bounded below by c_min > 0",
        h1.range_condition,
        0.0,
        String::new(),
    );
    out.files.push(OutputFile::new("verify_model.txt", text));
    Ok(out)
}

fn estimator_file(r: &EstimatorReport) -> OutputFile {
    let mut buf = Vec::new();
    r.write_csv(&mut buf).expect("writing to memory");
    OutputFile::new(format!("{}.csv", r.name), buf)
}

fn ergodicity(cfg: &ExperimentConfig, model: &ModelSpec, eff: &Effective) -> Result<RunOutput, RunError> {
    let e = &cfg.ergodicity;
    let mut out = RunOutput::default();
    if eff.n_paths == 0 {
        out.warn("no paths requested; no estimator was run".into());
        out.files.push(OutputFile::new("summary.txt", "no paths requested\n"));
        return Ok(out);
    }
    if eff.n_paths == 1 {
        return Err(ConfigError::single("the ergodicity battery needs at least 2 paths").into());
    }
    let p = distance_params(cfg, model)?;
    let h1 = validate_h1(model, model.coupling_n())?;
    if !h1.passed {
        out.warn(format!(
            "spectral gap condition fails: lambda_(N+1) = {} <= threshold {}; contraction verdicts may fail",
            h1.lambda_next, h1.threshold
        ));
    }
    let plan = MonteCarloPlan::new(eff.n_paths, cfg.plan.t_grid.clone(), eff.seed, cfg.stepper.config)
        .with_workers(eff.workers);
    let mut report = ErgodicityReport {
        fit: None,
        verdicts: Vec::new(),
        lyapunov_gamma: model.basis().lambda_1(),
        lyapunov_k: model.lyapunov_k(),
        distance: p,
        d_small_epsilon: None,
        contraction: None,
        notes: vec![h1_line("h1", &h1)],
    };
    let run = |name: &str| e.estimators.iter().any(|s| s == name);
    let push = |out: &mut RunOutput, report: &mut ErgodicityReport, v: Verdict| {
        report.verdicts.push(v.clone());
        out.verdicts.push(v);
    };

    if run("weighted_contraction") {
        let r = weighted_contraction_estimate(model, &e.x, &e.y, &plan)?;
        out.files.push(estimator_file(&r));
        push(&mut out, &mut report, r.verdict());
    }
    if run("fourth_moment") {
        let r = fourth_moment_estimate(model, &e.x, &e.y, &plan)?;
        out.files.push(estimator_file(&r));
        push(&mut out, &mut report, r.verdict());
    }
    if run("exp_integrability") {
        let r = exp_integrability_estimate(model, &e.x, p.delta, &plan)?;
        out.files.push(estimator_file(&r));
        push(&mut out, &mut report, r.verdict());
    }
    if run("lyapunov") {
        let r = lyapunov_check(model, &e.x, &plan)?;
        out.files.push(estimator_file(&r));
        push(&mut out, &mut report, r.verdict());
    }
    if run("feller") {
        let r = feller_modulus_estimate(model, &e.x, &e.feller_v_prime, &plan)?;
        let mut s = String::from("t");
        for sc in &r.scales {
            let _ = write!(s, ",ratio_scale_{sc}");
        }
        s.push_str(",bound,pass\n");
        for (i, t) in plan.t_grid.iter().enumerate() {
            let _ = write!(s, "{t}");
            for row in &r.ratios {
                let _ = write!(s, ",{:e}", row[i]);
            }
            let _ = writeln!(s, ",{:e},{}", r.report.bound[i], r.report.pass[i]);
        }
        out.files.push(OutputFile::new("feller_modulus.csv", s));
        push(&mut out, &mut report, r.report.verdict());
    }
    if run("contraction") {
        let pairs = sample_close_pairs(model.dim(), e.contraction_pairs, &p, eff.seed);
        let r = contraction_check(model, &plan.with_grid(e.contraction_grid.clone()), &p, &pairs)?;
        let mut s = String::from("t,worst_ratio,bound,pass\n");
        for (i, t) in e.contraction_grid.iter().enumerate() {
            let worst = r.ratios.iter().map(|row| row[i]).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "{t},{worst:e},{:e},{}", r.target, worst <= r.target);
        }
        out.files.push(OutputFile::new("contraction.csv", s));
        if let Some(t0) = r.t0 {
            report.contraction = Some((t0, r.alpha));
        }
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "contraction".into(),
                inequality: "E d_N(X^x(t0), Y^y(t0)) <= (2/3) d_N(x, y) for every sampled pair with d_N < 1".into(),
                passed: r.passed,
                margin: r.target - r.alpha,
                detail: match r.t0 {
                    Some(t0) => format!("t0 = {t0}, {} pairs", r.ratios.len()),
                    None => format!("no t0 on the grid, {} pairs", r.ratios.len()),
                },
            },
        );
    }
    if run("d_small") {
        let r = d_small_check(model, &plan, &p, e.d_small_level, e.d_small_t, e.d_small_pairs)?;
        let s = format!(
            "t,level,max_upper,epsilon,pass\n{},{:e},{:e},{:e},{}\n",
            r.t, r.level, r.max_upper, r.epsilon, r.passed
        );
        out.files.push(OutputFile::new("d_small.csv", s));
        report.d_small_epsilon = Some(r.epsilon);
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "d_small".into(),
                inequality: "sup over pairs in {V <= level} of E d_N(X^x(t), Y^y(t)) <= 1 - 0.05".into(),
                passed: r.passed,
                margin: r.epsilon - 0.05,
                detail: format!("epsilon = {:e}", r.epsilon),
            },
        );
    }
    let needs_occ = run("occupation") || run("invariance");
    let occ = if needs_occ {
        let oc = |seed| OccupationConfig {
            t_burn: e.occupation_t_burn,
            t_avg: e.occupation_t_avg,
            thin: e.occupation_thin,
            stepper: cfg.stepper.config,
            seed,
            path_index: 0,
        };
        let a = occupation_sampler(model, &e.x, &oc(eff.seed))?;
        let b = if run("occupation") {
            Some(occupation_sampler(model, &e.x, &oc(eff.seed.wrapping_add(1)))?)
        } else {
            None
        };
        Some((a, b))
    } else {
        None
    };
    if let Some((a, Some(b))) = &occ {
        let agree = summaries_agree(a, b);
        let mut s = String::from("quantity,run_a,stderr_a,run_b,stderr_b\n");
        let rows = [
            ("total_second_moment", &a.total_second_moment, &b.total_second_moment),
            ("mean_v_energy", &a.mean_v_energy, &b.mean_v_energy),
        ];
        for (name, x, y) in rows {
            let _ = writeln!(s, "{name},{:e},{:e},{:e},{:e}", x.mean, x.stderr, y.mean, y.stderr);
        }
        let _ = writeln!(s, "time_averaged_energy,{:e},,{:e},", a.time_averaged_energy, b.time_averaged_energy);
        let _ = writeln!(s, "energy_bound,{:e},,{:e},", a.energy_bound, b.energy_bound);
        for (i, (m, q)) in a.mean_coeffs.iter().zip(&a.second_moments).enumerate() {
            let _ = writeln!(s, "mode_{}_mean,{m:e},,{:e},", i + 1, b.mean_coeffs[i]);
            let _ = writeln!(s, "mode_{}_second_moment,{q:e},,{:e},", i + 1, b.second_moments[i]);
        }
        out.files.push(OutputFile::new("occupation.csv", s));
        let margin = (3.0 * agree.second_moment_joint_stderr - agree.second_moment_diff)
            .min(3.0 * agree.energy_joint_stderr - agree.energy_diff);
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "occupation_agreement".into(),
                inequality: "two independent occupation runs agree within 3 joint stderr".into(),
                passed: agree.passed,
                margin,
                detail: String::new(),
            },
        );
        let ok = a.energy_bound_holds() && b.energy_bound_holds();
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "occupation_energy".into(),
                inequality: "(1/t) int_0^t ||X||^2 <= |x|^2 / t + K".into(),
                passed: ok,
                margin: (a.energy_bound - a.time_averaged_energy).min(b.energy_bound - b.time_averaged_energy),
                detail: String::new(),
            },
        );
    }
    if run("invariance") {
        let (a, _) = occ.as_ref().expect("occupation computed");
        let fns = default_test_functions(e.test_functions, model.dim());
        let res = invariance_residual(model, a, e.residual_horizon, &fns, &plan)?;
        let mut s = String::from("function,residual,stderr,pass\n");
        for r in &res {
            let _ = writeln!(s, "{},{:e},{:e},{}", r.name, r.residual, r.stderr, r.passed);
        }
        out.files.push(OutputFile::new("invariance.csv", s));
        let margin = res.iter().map(|r| 3.0 * r.stderr - r.residual.abs()).fold(f64::INFINITY, f64::min);
        let failing = res.iter().filter(|r| !r.passed).count();
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "invariance".into(),
                inequality: "|E_occ[T_h phi] - E_occ[phi]| <= 3 stderr for every test function".into(),
                passed: failing == 0,
                margin: if margin.is_finite() { margin } else { 0.0 },
                detail: format!("{failing} of {} test functions fail", res.len()),
            },
        );
    }
    if run("rate") {
        let rate_plan = plan.with_grid(e.rate_grid.clone());
        let series = wasserstein_upper(model, &e.x, &e.y, &rate_plan, &p)?;
        let fit = fit_exponential_rate(&series.times, &series.mean);
        let mut s = String::from("t,mean,stderr,fitted\n");
        for i in 0..series.len() {
            let fitted = fit.as_ref().map_or(f64::NAN, |f| f.constant * (-f.rate * series.times[i]).exp());
            let _ = writeln!(s, "{},{:e},{:e},{:e}", series.times[i], series.mean[i], series.stderr[i], fitted);
        }
        out.files.push(OutputFile::new("rate.csv", s));
        let (passed, margin, detail) = match &fit {
            Ok(f) => (
                f.rate > 0.0 && f.r_squared >= 0.9,
                (f.r_squared - 0.9).min(f.rate),
                format!("r = {:e}, C = {:e}, r_squared = {:.6}", f.rate, f.constant, f.r_squared),
            ),
            Err(err) => (false, f64::NEG_INFINITY, err.to_string()),
        };
        report.fit = fit.ok();
        push(
            &mut out,
            &mut report,
            Verdict {
                name: "rate_fit".into(),
                inequality: "E d_N(X^x(t), Y^y(t)) ~ C exp(-r t) with r > 0 and r_squared >= 0.9".into(),
                passed,
                margin,
                detail,
            },
        );
        let ys = sphere_points(model.dim(), e.rate_partners, eff.seed);
        match rate_dependence_check(model, &e.rate_x_a, &e.rate_x_b, &ys, &rate_plan, &p) {
            Ok(r) => {
                let mut s = String::from("t,mean_a,stderr_a,mean_b,stderr_b\n");
                for i in 0..r.series_a.len() {
                    let _ = writeln!(
                        s,
                        "{},{:e},{:e},{:e},{:e}",
                        r.series_a.times[i], r.series_a.mean[i], r.series_a.stderr[i], r.series_b.mean[i], r.series_b.stderr[i]
                    );
                }
                out.files.push(OutputFile::new("rate_dependence.csv", s));
                push(
                    &mut out,
                    &mut report,
                    Verdict {
                        name: "rate_dependence".into(),
                        inequality: "rates from x_a and x_b agree within 10%, C_b / C_a consistent with (1+|x_b|^2)/(1+|x_a|^2)"
                            .into(),
                        passed: r.passed,
                        margin: 0.1 - r.rate_rel_diff,
                        detail: format!(
                            "r_a = {:e}, r_b = {:e}, C_b/C_a = {:e} in [{:e}, {:e}], weight ratio {:e}",
                            r.fit_a.rate,
                            r.fit_b.rate,
                            r.constant_ratio,
                            r.constant_ratio_band.0,
                            r.constant_ratio_band.1,
                            r.weight_ratio
                        ),
                    },
                );
            }
            Err(err) => push(
                &mut out,
                &mut report,
                Verdict {
                    name: "rate_dependence".into(),
                    inequality: "rate fits from two starting points".into(),
                    passed: false,
                    margin: f64::NEG_INFINITY,
                    detail: err.to_string(),
                },
            ),
        }
    }
    report.notes.extend(out.warnings.iter().cloned());
    out.files.push(OutputFile::new("summary.txt", report.render()));
    Ok(out)
}

fn convergence(cfg: &ExperimentConfig, eff: &Effective) -> Result<RunOutput, RunError> {
    let c = &cfg.convergence;
    let study = penalization_convergence_study(
        &cfg.model,
        &c.x0,
        c.t_end,
        cfg.stepper.config.dt,
        &c.penalties,
        eff.seed,
        c.path_index,
    )?;
    let mut out = RunOutput::default();
    let mut s = String::from("n,sup_gap,max_excess\n");
    for r in &study.rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.n, r.sup_gap, r.max_excess);
    }
    out.files.push(OutputFile::new("convergence.csv", s));
    let strictly = study.rows.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
    out.verdict(
        "penalization_monotone",
        "sup-gap to the projected path strictly decreases in n",
        strictly,
        study
            .rows
            .windows(2)
            .map(|w| w[0].sup_gap - w[1].sup_gap)
            .fold(f64::INFINITY, f64::min)
            .min(f64::MAX),
        String::new(),
    );
    // Reduction per decade of n between consecutive penalties.
    let per_decade = study
        .rows
        .windows(2)
        .map(|w| {
            if w[0].sup_gap == 0.0 {
                0.0
            } else {
                (w[0].sup_gap / w[1].sup_gap).powf(1.0 / (w[1].n / w[0].n).log10())
            }
        })
        .fold(f64::INFINITY, f64::min);
    out.verdict(
        "penalization_rate",
        "sup-gap drops by at least min_factor per decade of n",
        per_decade >= c.min_factor,
        if per_decade.is_finite() { per_decade - c.min_factor } else { 0.0 },
        format!("worst factor per decade {per_decade:e}"),
    );
    if study.rows.iter().all(|r| r.sup_gap == 0.0) {
        out.warn("the constraint never acted; the study is uninformative".into());
    }
    Ok(out)
}
