//! Strict INI-style experiment configuration.
//!
//! A config file is a list of `[section]` headers followed by `key = value`
//! lines; `#` starts a comment. Unknown sections and keys are errors, and so
//! is a key given twice. Every violation found is reported, each with the
//! line it refers to.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use see_lab_core::spectral::F0Form;
use see_lab_core::nse::{build_nse_model, NseModel, NseParams};
use see_lab_core::{
    BilinearForm, DriftMap, H1Variant, ModelSpec, Modulation, NoiseMap, SkewTensor, SpectralBasis, StateVector,
    StepperConfig,
};

/// One problem found in a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// All violations of a config file, in line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl ConfigError {
    pub fn single(message: impl Into<String>) -> Self {
        Self { violations: vec![Violation { line: None, message: message.into() }] }
    }

    /// Whether any violation message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

const SCHEMA: &[(&str, &[&str])] = &[
    ("basis", &["dim", "eigenvalues", "scale", "power"]),
    ("model", &["coupling_n", "lipschitz_c1", "damping_gamma", "f0_form", "h1_variant", "enforce_form_bounds"]),
    ("drift", &["kind", "rates", "slopes", "offset", "matrix"]),
    ("bilinear", &["kind", "entries"]),
    (
        "noise",
        &["kind", "amplitudes", "g_base", "g_slope", "g_lo", "g_hi", "c_min", "noise_dim", "matrix", "pseudo_inverse"],
    ),
    ("stepper", &["dt", "scheme", "penalty", "t_end", "x0", "y0", "ball_tolerance"]),
    ("plan", &["n_paths", "t_grid", "base_seed", "obstacle_trials"]),
    ("distance", &["delta", "n_tilde"]),
    ("output", &["dir", "format", "dump_paths", "thin"]),
    (
        "ergodicity",
        &[
            "estimators",
            "x",
            "y",
            "feller_v_prime",
            "contraction_pairs",
            "contraction_grid",
            "d_small_level",
            "d_small_t",
            "d_small_pairs",
            "occupation_t_burn",
            "occupation_t_avg",
            "occupation_thin",
            "residual_horizon",
            "test_functions",
            "rate_grid",
            "rate_x_a",
            "rate_x_b",
            "rate_partners",
        ],
    ),
    ("convergence", &["penalties", "t_end", "x0", "min_factor", "path_index"]),
    (
        "nse",
        &[
            "kappa",
            "gamma",
            "forcing",
            "noise_amplitudes",
            "g_base",
            "g_slope",
            "g_lo",
            "g_hi",
            "coupling_n",
            "lipschitz_c1",
            "experiment",
            "samples",
            "energy_slack",
        ],
    ),
];

/// Sections that describe a generic model and so conflict with `[nse]`.
const GENERIC_MODEL_SECTIONS: [&str; 5] = ["basis", "model", "drift", "bilinear", "noise"];

/// Every estimator of the ergodicity battery, in run order.
pub const ESTIMATORS: [&str; 10] = [
    "weighted_contraction",
    "fourth_moment",
    "exp_integrability",
    "lyapunov",
    "feller",
    "contraction",
    "d_small",
    "occupation",
    "invariance",
    "rate",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
struct RawSection {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

type RawConfig = BTreeMap<String, RawSection>;

fn parse_raw(text: &str, errs: &mut Vec<Violation>) -> RawConfig {
    let mut raw: RawConfig = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |errs: &mut Vec<Violation>, m: String| errs.push(Violation { line: Some(lineno), message: m });
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                err(errs, format!("malformed section header `{content}`"));
                current = None;
                continue;
            };
            let name = name.trim().to_string();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                err(errs, format!("unknown section [{name}]"));
                current = None;
                continue;
            }
            if let Some(prev) = raw.get(&name) {
                err(errs, format!("duplicate section [{name}] (lines {} and {lineno})", prev.line));
            } else {
                raw.insert(name.clone(), RawSection { line: lineno, entries: BTreeMap::new() });
            }
            current = Some(name);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            err(errs, format!("expected `key = value`, found `{content}`"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(section) = current.clone() else {
            err(errs, format!("key `{key}` appears before any section header"));
            continue;
        };
        let allowed = SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key.as_str()) {
            err(errs, format!("unknown key `{key}` in [{section}]"));
            continue;
        }
        if value.is_empty() {
            err(errs, format!("key `{key}` in [{section}] has an empty value"));
            continue;
        }
        let sec = raw.get_mut(&section).expect("section registered");
        if let Some(prev) = sec.entries.get(&key) {
            err(errs, format!("duplicate key `{key}` in [{section}] (lines {} and {lineno})", prev.line));
            continue;
        }
        sec.entries.insert(key, Entry { value, line: lineno });
    }
    raw
}

/// Typed lookups that record violations instead of failing fast.
struct Ctx<'a> {
    raw: &'a RawConfig,
    errs: RefCell<Vec<Violation>>,
}

impl<'a> Ctx<'a> {
    fn entry(&self, sec: &str, key: &str) -> Option<&'a Entry> {
        self.raw.get(sec).and_then(|s| s.entries.get(key))
    }

    fn has(&self, sec: &str, key: &str) -> bool {
        self.entry(sec, key).is_some()
    }

    /// Line of `key`, falling back to its section header.
    fn line(&self, sec: &str, key: &str) -> Option<usize> {
        self.entry(sec, key).map(|e| e.line).or_else(|| self.raw.get(sec).map(|s| s.line))
    }

    fn err(&self, line: Option<usize>, message: impl Into<String>) {
        self.errs.borrow_mut().push(Violation { line, message: message.into() });
    }

    fn err_at(&self, sec: &str, key: &str, message: impl Into<String>) {
        self.err(self.line(sec, key), message);
    }

    fn parse<T: std::str::FromStr>(&self, sec: &str, key: &str, what: &str) -> Option<T> {
        let e = self.entry(sec, key)?;
        match e.value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(Some(e.line), format!("[{sec}] {key}: expected {what}, found `{}`", e.value));
                None
            }
        }
    }

    fn f64_opt(&self, sec: &str, key: &str) -> Option<f64> {
        let v = self.parse::<f64>(sec, key, "a number")?;
        if v.is_finite() {
            Some(v)
        } else {
            self.err_at(sec, key, format!("[{sec}] {key} must be finite"));
            None
        }
    }

    fn f64(&self, sec: &str, key: &str, default: f64) -> f64 {
        self.f64_opt(sec, key).unwrap_or(default)
    }

    /// A number or the word `auto` (returned as `None`).
    fn f64_or_auto(&self, sec: &str, key: &str) -> Option<f64> {
        match self.entry(sec, key) {
            Some(e) if e.value == "auto" => None,
            _ => self.f64_opt(sec, key),
        }
    }

    fn usize(&self, sec: &str, key: &str, default: usize) -> usize {
        self.parse::<usize>(sec, key, "a nonnegative integer").unwrap_or(default)
    }

    fn u64(&self, sec: &str, key: &str, default: u64) -> u64 {
        self.parse::<u64>(sec, key, "a nonnegative integer").unwrap_or(default)
    }

    fn bool(&self, sec: &str, key: &str, default: bool) -> bool {
        self.parse::<bool>(sec, key, "true or false").unwrap_or(default)
    }

    fn choice(&self, sec: &str, key: &str, default: &'static str, allowed: &[&'static str]) -> &'static str {
        let Some(e) = self.entry(sec, key) else {
            return default;
        };
        match allowed.iter().find(|a| **a == e.value) {
            Some(a) => a,
            None => {
                self.err(
                    Some(e.line),
                    format!("[{sec}] {key}: expected one of {}, found `{}`", allowed.join(", "), e.value),
                );
                default
            }
        }
    }

    fn list(&self, sec: &str, key: &str) -> Option<Vec<f64>> {
        let e = self.entry(sec, key)?;
        let mut out = Vec::new();
        for tok in e.value.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => {
                    self.err(Some(e.line), format!("[{sec}] {key}: `{tok}` is not a finite number"));
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.err(Some(e.line), format!("[{sec}] {key}: empty list"));
            return None;
        }
        Some(out)
    }

    /// One value is repeated `dim` times; otherwise exactly `dim` values.
    fn broadcast(&self, sec: &str, key: &str, dim: usize) -> Option<Vec<f64>> {
        let v = self.list(sec, key)?;
        match v.len() {
            1 => Some(vec![v[0]; dim]),
            n if n == dim => Some(v),
            n => {
                self.err_at(sec, key, format!("[{sec}] {key}: expected 1 or {dim} values, found {n}"));
                None
            }
        }
    }

    /// Leading coordinates, padded with zeros to `dim`.
    fn leading(&self, sec: &str, key: &str, dim: usize) -> Option<Vec<f64>> {
        let mut v = self.list(sec, key)?;
        if v.len() > dim {
            self.err_at(sec, key, format!("[{sec}] {key}: {} values for a state of dimension {dim}", v.len()));
            return None;
        }
        v.resize(dim, 0.0);
        Some(v)
    }

    fn forbid(&self, sec: &str, keys: &[&str], why: &str) {
        for k in keys {
            if self.has(sec, k) {
                self.err_at(sec, k, format!("[{sec}] {k} is not used {why}"));
            }
        }
    }

    fn require(&self, sec: &str, key: &str, why: &str) {
        if !self.has(sec, key) {
            self.err(self.raw.get(sec).map(|s| s.line), format!("[{sec}] {key} is required {why}"));
        }
    }
}

/// Stepper section.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperSection {
    pub config: StepperConfig,
    pub t_end: f64,
    pub x0: StateVector,
    pub y0: StateVector,
    /// Allowed `|X|_H - 1` for the penalized scheme.
    pub ball_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSection {
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    pub base_seed: u64,
    pub obstacle_trials: usize,
}

/// `None` fields mean `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSection {
    pub delta: Option<f64>,
    pub n_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Number of paths whose full trajectory is written.
    pub dump_paths: usize,
    /// Row stride of trajectory dumps.
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicitySection {
    pub estimators: Vec<String>,
    pub x: StateVector,
    pub y: StateVector,
    pub feller_v_prime: StateVector,
    pub contraction_pairs: usize,
    pub contraction_grid: Vec<f64>,
    pub d_small_level: f64,
    pub d_small_t: f64,
    pub d_small_pairs: usize,
    pub occupation_t_burn: f64,
    pub occupation_t_avg: f64,
    pub occupation_thin: usize,
    pub residual_horizon: f64,
    pub test_functions: usize,
    pub rate_grid: Vec<f64>,
    pub rate_x_a: StateVector,
    pub rate_x_b: StateVector,
    pub rate_partners: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSection {
    pub penalties: Vec<f64>,
    pub t_end: f64,
    pub x0: StateVector,
    pub min_factor: f64,
    pub path_index: u64,
}

/// Experiment choice and checks specific to the Navier-Stokes instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NseSection {
    pub model: NseModel,
    pub experiment: String,
    pub samples: usize,
    pub energy_slack: f64,
    /// Forcing and noise both vanish.
    pub unforced: bool,
}

/// A validated configuration with its model already built.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub nse: Option<NseSection>,
    pub stepper: StepperSection,
    pub plan: PlanSection,
    pub distance: DistanceSection,
    pub output: OutputSection,
    pub ergodicity: ErgodicitySection,
    pub convergence: ConvergenceSection,
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut errs = Vec::new();
    let raw = parse_raw(text, &mut errs);
    let ctx = Ctx { raw: &raw, errs: RefCell::new(errs) };
    let built = build(&ctx);
    let mut violations = ctx.errs.into_inner();
    if violations.is_empty() {
        if let Some(cfg) = built {
            return Ok(cfg);
        }
        violations.push(Violation { line: None, message: "invalid configuration".into() });
    }
    violations.sort_by_key(|v| v.line.unwrap_or(0));
    Err(ConfigError { violations })
}

fn unit_vector(dim: usize, r: f64) -> StateVector {
    let mut v = StateVector::zeros(dim);
    if dim > 0 {
        v.coeffs_mut()[0] = r;
    }
    v
}

fn state_in_ball(ctx: &Ctx, sec: &str, key: &str, dim: usize, default: StateVector) -> StateVector {
    match ctx.leading(sec, key, dim) {
        Some(v) => {
            let s = StateVector::new(v);
            if s.h_norm() > 1.0 {
                ctx.err_at(sec, key, format!("[{sec}] {key} lies outside the unit ball (|x|_H = {})", s.h_norm()));
            }
            s
        }
        None => default,
    }
}

fn build(ctx: &Ctx) -> Option<ExperimentConfig> {
    let nse_mode = ctx.raw.contains_key("nse");
    if nse_mode {
        for s in GENERIC_MODEL_SECTIONS {
            if let Some(sec) = ctx.raw.get(s) {
                ctx.err(Some(sec.line), format!("section [{s}] conflicts with [nse]"));
            }
        }
    }
    let (model, nse) = if nse_mode { build_nse(ctx) } else { (build_generic(ctx), None) };
    let dim = model.as_ref().map_or(1, |m| m.dim());

    let stepper = build_stepper(ctx, dim);
    let plan = build_plan(ctx, &stepper);
    let distance = DistanceSection {
        delta: ctx.f64_or_auto("distance", "delta"),
        n_tilde: ctx.f64_or_auto("distance", "n_tilde").unwrap_or(1.0),
    };
    if let Some(d) = distance.delta {
        if !(d > 0.0 && d < 1.0) {
            ctx.err_at("distance", "delta", "[distance] delta must lie in (0, 1)");
        }
    }
    if distance.n_tilde <= 0.0 {
        ctx.err_at("distance", "n_tilde", "[distance] n_tilde must be positive");
    }
    ctx.choice("output", "format", "csv", &["csv"]);
    let output = OutputSection {
        dir: ctx.entry("output", "dir").map(|e| PathBuf::from(&e.value)),
        dump_paths: ctx.usize("output", "dump_paths", 4),
        thin: ctx.usize("output", "thin", 1),
    };
    if output.thin == 0 {
        ctx.err_at("output", "thin", "[output] thin must be positive");
    }
    let ergodicity = build_ergodicity(ctx, dim, &stepper);
    let convergence = build_convergence(ctx, dim, &stepper);
    Some(ExperimentConfig { model: model?, nse, stepper, plan, distance, output, ergodicity, convergence })
}

fn build_basis(ctx: &Ctx) -> Option<SpectralBasis> {
    let basis = if ctx.has("basis", "eigenvalues") {
        ctx.forbid("basis", &["scale", "power"], "together with an explicit eigenvalue list");
        let ev = ctx.list("basis", "eigenvalues")?;
        if let Some(d) = ctx.parse::<usize>("basis", "dim", "a positive integer") {
            if d != ev.len() {
                ctx.err_at("basis", "dim", format!("[basis] dim = {d} but {} eigenvalues are listed", ev.len()));
            }
        }
        SpectralBasis::new(ev)
    } else {
        let dim = ctx.usize("basis", "dim", 16);
        SpectralBasis::power_law(dim, ctx.f64("basis", "scale", 1.0), ctx.f64("basis", "power", 2.0))
    };
    match basis {
        Ok(b) => Some(b),
        Err(e) => {
            ctx.err(ctx.raw.get("basis").map(|s| s.line), format!("[basis] {e}"));
            None
        }
    }
}

fn build_drift(ctx: &Ctx, dim: usize) -> Option<DriftMap> {
    let kind = ctx.choice("drift", "kind", "zero", &["zero", "linear_decay", "affine", "table"]);
    let offset = || ctx.leading("drift", "offset", dim).unwrap_or_else(|| vec![0.0; dim]);
    match kind {
        "zero" => {
            ctx.forbid("drift", &["rates", "slopes", "offset", "matrix"], "by drift kind zero");
            Some(DriftMap::zero(dim))
        }
        "linear_decay" => {
            ctx.forbid("drift", &["slopes", "offset", "matrix"], "by drift kind linear_decay");
            ctx.require("drift", "rates", "for drift kind linear_decay");
            Some(DriftMap::LinearDecay { rates: ctx.broadcast("drift", "rates", dim)? })
        }
        "affine" => {
            ctx.forbid("drift", &["rates", "matrix"], "by drift kind affine");
            let slopes = if ctx.has("drift", "slopes") { ctx.broadcast("drift", "slopes", dim)? } else { vec![0.0; dim] };
            Some(DriftMap::Affine { slopes, offset: offset() })
        }
        _ => {
            ctx.forbid("drift", &["rates", "slopes"], "by drift kind table");
            ctx.require("drift", "matrix", "for drift kind table");
            let matrix = ctx.list("drift", "matrix")?;
            if matrix.len() != dim * dim {
                ctx.err_at("drift", "matrix", format!("[drift] matrix needs {} entries, found {}", dim * dim, matrix.len()));
                return None;
            }
            Some(DriftMap::Table { matrix, offset: offset() })
        }
    }
}

/// `i j k c` quadruples (1-based modes) separated by `;`.
fn parse_entries(ctx: &Ctx, dim: usize) -> Option<Vec<(usize, usize, usize, f64)>> {
    let Some(e) = ctx.entry("bilinear", "entries") else {
        return Some(vec![(0, 1, 2, 1.0)]);
    };
    let mut out = Vec::new();
    for chunk in e.value.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let toks: Vec<&str> = chunk.split_whitespace().collect();
        let parsed = (toks.len() == 4).then(|| {
            let idx: Vec<Option<usize>> = toks[..3].iter().map(|t| t.parse::<usize>().ok()).collect();
            let c = toks[3].parse::<f64>().ok();
            match (idx[0], idx[1], idx[2], c) {
                (Some(i), Some(j), Some(k), Some(c)) if i >= 1 && j >= 1 && k >= 1 && c.is_finite() => {
                    Some((i - 1, j - 1, k - 1, c))
                }
                _ => None,
            }
        });
        match parsed.flatten() {
            Some(q) if q.0 < dim && q.1 < dim && q.2 < dim => out.push(q),
            Some(_) => {
                ctx.err(Some(e.line), format!("[bilinear] entry `{chunk}` refers to a mode beyond dim = {dim}"));
                return None;
            }
            None => {
                ctx.err(Some(e.line), format!("[bilinear] entry `{chunk}` is not `i j k c` with 1-based modes"));
                return None;
            }
        }
    }
    Some(out)
}

fn build_bilinear(ctx: &Ctx, dim: usize) -> Option<BilinearForm> {
    match ctx.choice("bilinear", "kind", "skew_shear", &["zero", "skew_shear"]) {
        "zero" => {
            ctx.forbid("bilinear", &["entries"], "by bilinear kind zero");
            Some(BilinearForm::Zero)
        }
        _ => {
            if dim < 3 && !ctx.has("bilinear", "entries") {
                ctx.err(
                    ctx.raw.get("bilinear").map(|s| s.line),
                    "[bilinear] the default skew_shear entry needs dim >= 3; set kind = zero or give entries",
                );
                return None;
            }
            let entries = parse_entries(ctx, dim)?;
            match SkewTensor::new(dim, entries) {
                Ok(t) => Some(BilinearForm::SkewShear(t)),
                Err(e) => {
                    ctx.err_at("bilinear", "entries", format!("[bilinear] {e}"));
                    None
                }
            }
        }
    }
}

fn modulation(ctx: &Ctx, sec: &str) -> Modulation {
    let base = ctx.f64(sec, "g_base", 1.0);
    let slope = ctx.f64(sec, "g_slope", 0.0);
    let (lo_d, hi_d) = if slope == 0.0 { (base, base) } else { (0.5 * base, 2.0 * base) };
    Modulation { base, slope, lo: ctx.f64(sec, "g_lo", lo_d), hi: ctx.f64(sec, "g_hi", hi_d) }
}

fn build_noise(ctx: &Ctx, dim: usize, n: usize) -> Option<NoiseMap> {
    match ctx.choice("noise", "kind", "diag_affine", &["zero", "diag_affine", "custom"]) {
        "zero" => {
            ctx.forbid(
                "noise",
                &["amplitudes", "g_base", "g_slope", "g_lo", "g_hi", "c_min", "noise_dim", "matrix", "pseudo_inverse"],
                "by noise kind zero",
            );
            Some(NoiseMap::zero(dim))
        }
        "diag_affine" => {
            ctx.forbid("noise", &["noise_dim", "matrix", "pseudo_inverse"], "by noise kind diag_affine");
            let amplitudes =
                if ctx.has("noise", "amplitudes") { ctx.broadcast("noise", "amplitudes", dim)? } else { vec![0.1; dim] };
            let c_min = ctx.f64_or_auto("noise", "c_min").unwrap_or_else(|| {
                amplitudes.iter().take(n).copied().fold(f64::INFINITY, f64::min).max(0.0)
            });
            let c_min = if c_min.is_finite() { c_min } else { 0.0 };
            Some(NoiseMap::DiagAffine { amplitudes, modulation: modulation(ctx, "noise"), c_min })
        }
        _ => {
            ctx.forbid("noise", &["amplitudes", "g_base", "g_slope", "g_lo", "g_hi", "c_min"], "by noise kind custom");
            ctx.require("noise", "matrix", "for noise kind custom");
            let noise_dim = ctx.usize("noise", "noise_dim", dim);
            let matrix = ctx.list("noise", "matrix")?;
            if matrix.len() != dim * noise_dim {
                ctx.err_at(
                    "noise",
                    "matrix",
                    format!("[noise] matrix needs dim x noise_dim = {} entries, found {}", dim * noise_dim, matrix.len()),
                );
                return None;
            }
            let pseudo_inverse = match ctx.list("noise", "pseudo_inverse") {
                Some(p) if p.len() != dim * noise_dim => {
                    ctx.err_at("noise", "pseudo_inverse", format!("[noise] pseudo_inverse needs {} entries", dim * noise_dim));
                    return None;
                }
                p => p,
            };
            Some(NoiseMap::Custom { dim, noise_dim, matrix, pseudo_inverse })
        }
    }
}

fn build_generic(ctx: &Ctx) -> Option<ModelSpec> {
    let basis = build_basis(ctx)?;
    let dim = basis.dim();
    let n = ctx.usize("model", "coupling_n", 4.min(dim.saturating_sub(1)));
    if n >= dim {
        ctx.err_at("model", "coupling_n", format!("coupling_n must be < basis dim (got N = {n}, M = {dim})"));
    }
    let drift = build_drift(ctx, dim);
    let bilinear = build_bilinear(ctx, dim);
    let noise = build_noise(ctx, dim, n);
    let f0_form = match ctx.choice("model", "f0_form", "squared", &["squared", "unsquared"]) {
        "squared" => F0Form::Squared,
        _ => F0Form::Unsquared,
    };
    let h1 = match ctx.choice("model", "h1_variant", "generic", &["generic", "nse"]) {
        "generic" => H1Variant::Generic,
        _ => H1Variant::Nse,
    };
    let c1 = ctx.f64_or_auto("model", "lipschitz_c1");
    let gamma = ctx.f64("model", "damping_gamma", 0.0);
    let enforce = ctx.bool("model", "enforce_form_bounds", true);
    let (drift, bilinear, noise) = (drift?, bilinear?, noise?);
    if n >= dim {
        return None;
    }
    let mut b = ModelSpec::builder(basis)
        .drift(drift)
        .bilinear(bilinear)
        .noise(noise)
        .coupling_n(n)
        .damping_gamma(gamma)
        .f0_form(f0_form)
        .h1_variant(h1)
        .enforce_form_bounds(enforce);
    if let Some(c) = c1 {
        b = b.lipschitz_c1(c);
    }
    match b.build() {
        Ok(m) => Some(m),
        Err(e) => {
            ctx.err(ctx.raw.get("model").or_else(|| ctx.raw.get("bilinear")).map(|s| s.line), format!("model: {e}"));
            None
        }
    }
}

fn build_nse(ctx: &Ctx) -> (Option<ModelSpec>, Option<NseSection>) {
    let kappa = ctx.parse::<u32>("nse", "kappa", "a positive integer").unwrap_or(4);
    let forcing = ctx.list("nse", "forcing").unwrap_or_default();
    let noise = ctx.list("nse", "noise_amplitudes").unwrap_or_default();
    let experiment = ctx.choice("nse", "experiment", "verify-model", &["verify-model", "simulate", "ergodicity"]);
    let params = NseParams {
        kappa,
        gamma: ctx.f64("nse", "gamma", 1.0),
        forcing: forcing.clone(),
        noise_amplitudes: noise.clone(),
        modulation: modulation(ctx, "nse"),
        coupling_n: ctx.parse::<usize>("nse", "coupling_n", "a nonnegative integer"),
        lipschitz_c1: ctx.f64_or_auto("nse", "lipschitz_c1"),
    };
    let samples = ctx.usize("nse", "samples", 1000);
    let energy_slack = ctx.f64("nse", "energy_slack", 1e-6);
    let mut params = params;
    // A single amplitude is spread over every mode.
    if noise.len() == 1 {
        if let Ok(g) = see_lab_core::nse::FourierGrid::new(kappa) {
            params.noise_amplitudes = vec![noise[0]; g.dim()];
        }
    }
    if let (Some(n), Ok(g)) = (params.coupling_n, see_lab_core::nse::FourierGrid::new(kappa)) {
        if n >= g.dim() {
            ctx.err_at("nse", "coupling_n", format!("coupling_n must be < basis dim (got N = {n}, M = {})", g.dim()));
            return (None, None);
        }
    }
    match build_nse_model(&params) {
        Ok(m) => {
            let unforced = forcing.iter().all(|v| *v == 0.0) && noise.iter().all(|v| *v == 0.0);
            let spec = m.model.clone();
            (
                Some(spec),
                Some(NseSection { model: m, experiment: experiment.to_string(), samples, energy_slack, unforced }),
            )
        }
        Err(e) => {
            ctx.err(ctx.raw.get("nse").map(|s| s.line), format!("[nse] {e}"));
            (None, None)
        }
    }
}

fn build_stepper(ctx: &Ctx, dim: usize) -> StepperSection {
    let dt = ctx.f64("stepper", "dt", 1e-3);
    let scheme = ctx.choice("stepper", "scheme", "projected", &["projected", "penalized"]);
    let config = if scheme == "penalized" {
        StepperConfig::penalized(dt, ctx.f64("stepper", "penalty", 1e4))
    } else {
        ctx.forbid("stepper", &["penalty"], "by the projected scheme");
        StepperConfig::projected(dt)
    };
    if let Err(e) = config.validate() {
        ctx.err_at("stepper", "dt", format!("[stepper] {e}"));
    }
    let grid_end = ctx
        .list("plan", "t_grid")
        .and_then(|g| g.last().copied())
        .unwrap_or(2.0);
    StepperSection {
        config,
        t_end: ctx.f64("stepper", "t_end", grid_end),
        x0: state_in_ball(ctx, "stepper", "x0", dim, unit_vector(dim, 0.5)),
        y0: state_in_ball(ctx, "stepper", "y0", dim, unit_vector(dim, -0.5)),
        ball_tolerance: ctx.f64("stepper", "ball_tolerance", 1e-3),
    }
}

/// Records a violation unless every time in `grid` is a whole number of steps.
fn check_grid(ctx: &Ctx, sec: &str, key: &str, grid: &[f64], stepper: &StepperConfig) {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        ctx.err_at(sec, key, format!("[{sec}] {key} must be strictly increasing"));
    }
    for t in grid {
        if *t < 0.0 || stepper.validate().is_ok() && stepper.steps_for(*t).is_err() {
            ctx.err_at(sec, key, format!("[{sec}] {key}: time {t} is not a nonnegative multiple of dt"));
        }
    }
}

fn build_plan(ctx: &Ctx, stepper: &StepperSection) -> PlanSection {
    let t_grid = ctx.list("plan", "t_grid").unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0]);
    check_grid(ctx, "plan", "t_grid", &t_grid, &stepper.config);
    if t_grid.iter().any(|t| *t > stepper.t_end) {
        ctx.err_at("plan", "t_grid", format!("[plan] t_grid must lie in [0, t_end = {}]", stepper.t_end));
    }
    check_grid(ctx, "stepper", "t_end", &[stepper.t_end], &stepper.config);
    PlanSection {
        n_paths: ctx.usize("plan", "n_paths", 256),
        t_grid,
        base_seed: ctx.u64("plan", "base_seed", 0),
        obstacle_trials: ctx.usize("plan", "obstacle_trials", 100),
    }
}

fn build_ergodicity(ctx: &Ctx, dim: usize, stepper: &StepperSection) -> ErgodicitySection {
    const S: &str = "ergodicity";
    let estimators = match ctx.entry(S, "estimators") {
        None => ESTIMATORS.iter().map(|s| s.to_string()).collect(),
        Some(e) if e.value == "all" => ESTIMATORS.iter().map(|s| s.to_string()).collect(),
        Some(e) => {
            let names: Vec<String> =
                e.value.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(String::from).collect();
            for n in &names {
                if !ESTIMATORS.contains(&n.as_str()) {
                    ctx.err(Some(e.line), format!("[ergodicity] unknown estimator `{n}` (known: {})", ESTIMATORS.join(", ")));
                }
            }
            names
        }
    };
    let x = state_in_ball(ctx, S, "x", dim, stepper.x0.clone());
    let y = state_in_ball(ctx, S, "y", dim, stepper.y0.clone());
    let feller_v_prime = state_in_ball(ctx, S, "feller_v_prime", dim, y.clone());
    let contraction_grid = ctx
        .list(S, "contraction_grid")
        .unwrap_or_else(|| (1..=20).map(|i| i as f64 * 0.1).collect());
    check_grid(ctx, S, "contraction_grid", &contraction_grid, &stepper.config);
    let rate_grid = ctx
        .list(S, "rate_grid")
        .unwrap_or_else(|| (0..=8).map(|i| i as f64 * 0.25).collect());
    check_grid(ctx, S, "rate_grid", &rate_grid, &stepper.config);
    if rate_grid.len() < 3 {
        ctx.err_at(S, "rate_grid", "[ergodicity] rate_grid needs at least 3 times");
    }
    let sec = ErgodicitySection {
        estimators,
        x,
        y,
        feller_v_prime,
        contraction_pairs: ctx.usize(S, "contraction_pairs", 20),
        contraction_grid,
        d_small_level: ctx.f64(S, "d_small_level", 1.0),
        d_small_t: ctx.f64(S, "d_small_t", 4.0),
        d_small_pairs: ctx.usize(S, "d_small_pairs", 10),
        occupation_t_burn: ctx.f64(S, "occupation_t_burn", 5.0),
        occupation_t_avg: ctx.f64(S, "occupation_t_avg", 200.0),
        occupation_thin: ctx.usize(S, "occupation_thin", 100),
        residual_horizon: ctx.f64(S, "residual_horizon", 0.5),
        test_functions: ctx.usize(S, "test_functions", 10),
        rate_grid,
        rate_x_a: state_in_ball(ctx, S, "rate_x_a", dim, StateVector::zeros(dim)),
        rate_x_b: state_in_ball(ctx, S, "rate_x_b", dim, unit_vector(dim, 1.0)),
        rate_partners: ctx.usize(S, "rate_partners", 16),
    };
    for (key, t) in [
        ("d_small_t", sec.d_small_t),
        ("occupation_t_burn", sec.occupation_t_burn),
        ("occupation_t_avg", sec.occupation_t_avg),
        ("residual_horizon", sec.residual_horizon),
    ] {
        check_grid(ctx, S, key, &[t], &stepper.config);
    }
    if sec.occupation_thin == 0 {
        ctx.err_at(S, "occupation_thin", "[ergodicity] occupation_thin must be positive");
    }
    if sec.rate_partners == 0 {
        ctx.err_at(S, "rate_partners", "[ergodicity] rate_partners must be positive");
    }
    sec
}

fn build_convergence(ctx: &Ctx, dim: usize, stepper: &StepperSection) -> ConvergenceSection {
    const S: &str = "convergence";
    let penalties = ctx.list(S, "penalties").unwrap_or_else(|| vec![10.0, 100.0, 1000.0, 10000.0]);
    if penalties.iter().any(|n| *n <= 0.0) || penalties.windows(2).any(|w| w[1] <= w[0]) {
        ctx.err_at(S, "penalties", "[convergence] penalties must be positive and strictly increasing");
    }
    let t_end = ctx.f64(S, "t_end", stepper.t_end);
    check_grid(ctx, S, "t_end", &[t_end], &stepper.config);
    ConvergenceSection {
        penalties,
        t_end,
        x0: state_in_ball(ctx, S, "x0", dim, stepper.x0.clone()),
        min_factor: ctx.f64(S, "min_factor", 2.0),
        path_index: ctx.u64(S, "path_index", 0),
    }
}
