use std::f64::consts::PI;

use rand::Rng;
use see_lab_core::coefficients::{form_identity_check, trilinear_form};
use see_lab_core::nse::{build_nse_model, energy_check, verify_nse_model, FourierGrid, NseParams, Profile};
use see_lab_core::rng::{auxiliary_rng, random_ball_point};
use see_lab_core::spectral::validate_h1;
use see_lab_core::{H1Variant, Modulation, StateVector, StepperConfig};

/// Velocity and its gradient of a real field `sum_j c_j e_j`, built from the
/// wave vectors alone: `e = (-k2, k1)/|k| * p(k.x) / (pi sqrt 2)`.
struct Field {
    terms: Vec<((f64, f64), bool, f64)>,
}

impl Field {
    fn new(grid: &FourierGrid, coeffs: &[f64]) -> Self {
        let terms = grid
            .modes()
            .iter()
            .zip(coeffs)
            .map(|(m, c)| ((m.k.0 as f64, m.k.1 as f64), m.profile == Profile::Cos, *c))
            .collect();
        Self { terms }
    }

    /// `(u, du/dx1, du/dx2)` with `u` a 2-vector.
    fn eval(&self, x1: f64, x2: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let norm = 1.0 / (PI * 2f64.sqrt());
        let (mut u, mut d1, mut d2) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        for &((k1, k2), is_cos, c) in &self.terms {
            let len = (k1 * k1 + k2 * k2).sqrt();
            let dir = [-k2 / len, k1 / len];
            let ph = k1 * x1 + k2 * x2;
            let (p, dp) = if is_cos { (ph.cos(), -ph.sin()) } else { (ph.sin(), ph.cos()) };
            for i in 0..2 {
                u[i] += c * norm * dir[i] * p;
                d1[i] += c * norm * dir[i] * dp * k1;
                d2[i] += c * norm * dir[i] * dp * k2;
            }
        }
        (u, d1, d2)
    }
}

/// `int (u . grad) v . w` by the periodic trapezoidal rule on `n x n` points.
fn quadrature(grid: &FourierGrid, u: &[f64], v: &[f64], w: &[f64], n: usize) -> (f64, f64) {
    let (fu, fv, fw) = (Field::new(grid, u), Field::new(grid, v), Field::new(grid, w));
    let h = 2.0 * PI / n as f64;
    let (mut sum, mut abs) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let (x1, x2) = (i as f64 * h, j as f64 * h);
            let (uu, _, _) = fu.eval(x1, x2);
            let (_, v1, v2) = fv.eval(x1, x2);
            let (ww, _, _) = fw.eval(x1, x2);
            let term: f64 = (0..2).map(|c| (uu[0] * v1[c] + uu[1] * v2[c]) * ww[c]).sum();
            sum += term;
            abs += term.abs();
        }
    }
    (sum * h * h, abs * h * h)
}

#[test]
fn mode_enumeration() {
    let g = FourierGrid::new(1).unwrap();
    assert_eq!(g.wave_vectors(), 4);
    assert_eq!(g.dim(), 4);
    assert_eq!(g.eigenvalues()[0], 1.0);
    let g3 = FourierGrid::new(3).unwrap();
    let lam = g3.eigenvalues();
    assert!(lam.windows(2).all(|w| w[0] <= w[1]));
    assert!(g3.divergence_free());
    // Lattice points with 0 < |k|^2 <= 9: 28, i.e. 28 real modes.
    assert_eq!(g3.dim(), 28);
}

#[test]
fn modes_are_orthonormal_and_divergence_free_on_a_grid() {
    let g = FourierGrid::new(2).unwrap();
    let n = 32;
    let h = 2.0 * PI / n as f64;
    let dim = g.dim();
    let mut gram = vec![0.0; dim * dim];
    for i in 0..n {
        for j in 0..n {
            let (x1, x2) = (i as f64 * h, j as f64 * h);
            let vals: Vec<(f64, f64)> = g.modes().iter().map(|m| m.velocity(x1, x2)).collect();
            for a in 0..dim {
                for b in 0..dim {
                    gram[a * dim + b] += (vals[a].0 * vals[b].0 + vals[a].1 * vals[b].1) * h * h;
                }
            }
        }
    }
    for a in 0..dim {
        for b in 0..dim {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((gram[a * dim + b] - want).abs() < 1e-12);
        }
    }
    // Divergence of each mode via the analytic gradient.
    for m in g.modes() {
        let f = Field::new(&g, &g.modes().iter().map(|o| if o == m { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        for (x1, x2) in [(0.3, 1.1), (2.0, 5.5), (4.4, 0.1)] {
            let (_, d1, d2) = f.eval(x1, x2);
            assert!((d1[0] + d2[1]).abs() < 1e-14);
        }
    }
}

#[test]
fn trilinear_matches_physical_quadrature() {
    let nse = build_nse_model(&NseParams { kappa: 3, ..NseParams::default() }).unwrap();
    let dim = nse.model.dim();
    let mut rng = auxiliary_rng(64, "nse-quadrature");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut draw = || StateVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (u, v, w) = (draw(), draw(), draw());
        let spectral = trilinear_form(&nse.model, &u, &v, &w).unwrap();
        let (quad, abs) = quadrature(&nse.grid, u.coeffs(), v.coeffs(), w.coeffs(), 64);
        let rel = (spectral - quad).abs() / quad.abs().max(1e-3 * abs);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-8, "worst relative error {worst}");
}

#[test]
fn convective_identities() {
    let nse = build_nse_model(&NseParams { kappa: 4, ..NseParams::default() }).unwrap();
    let r = form_identity_check(&nse.model, 1000, 9);
    assert!(r.passed);
    assert!(r.max_antisymmetry <= 1e-12 && r.max_cancellation <= 1e-12);
    let dim = nse.model.dim();
    let basis = nse.model.basis();
    for i in 0..dim {
        let e = basis.unit(i);
        for j in 0..dim {
            assert_eq!(trilinear_form(&nse.model, &e, &e, &basis.unit(j)).unwrap(), 0.0);
        }
    }
    let mut rng = auxiliary_rng(2, "cancel");
    for _ in 0..200 {
        let u = StateVector::new(random_ball_point(&mut rng, dim, 1.0, 0.0));
        let v = StateVector::new(random_ball_point(&mut rng, dim, 1.0, 0.0));
        assert_eq!(trilinear_form(&nse.model, &u, &v, &v).unwrap(), 0.0);
    }
}

#[test]
fn verification_suite() {
    let params = NseParams {
        kappa: 2,
        gamma: 1.0,
        noise_amplitudes: vec![0.1; 8],
        lipschitz_c1: Some(0.0),
        coupling_n: Some(4),
        ..NseParams::default()
    };
    let nse = build_nse_model(&params).unwrap();
    let v = verify_nse_model(&nse, 1000, 3).unwrap();
    assert!(v.structure_passed());
    let s0: f64 = [0.1f64; 8].iter().map(|a| a * a).sum();
    assert_eq!(v.h1_nse.threshold, 32.0 / 3.0 * s0 + 12.0 * 0.0 + 16.0 * 1.0);
    assert_eq!(v.h1_nse.variant, H1Variant::Nse);
    assert_eq!(v.h1_nse.lambda_next, nse.model.basis().eigenvalues()[4]);
    assert_eq!(validate_h1(&nse.model, 4).unwrap(), v.h1_nse);
}

#[test]
fn h1_threshold_reproduced_exactly() {
    for (gamma, amps, c1) in [(0.5, vec![0.2, 0.1, 0.3], 0.7), (0.0, vec![], 2.0), (2.0, vec![1.0; 4], 0.0)] {
        let nse = build_nse_model(&NseParams {
            kappa: 4,
            gamma,
            noise_amplitudes: amps.clone(),
            lipschitz_c1: Some(c1),
            ..NseParams::default()
        })
        .unwrap();
        let s0: f64 = amps.iter().map(|a| a * a).sum();
        let want = 32.0 / 3.0 * s0 + 12.0 * c1 + 16.0 * gamma * gamma;
        let r = validate_h1(&nse.model, nse.model.coupling_n()).unwrap();
        assert_eq!(r.threshold, want);
    }
}

#[test]
fn classical_and_damped_drifts() {
    let classical = build_nse_model(&NseParams { gamma: 0.0, ..NseParams::default() }).unwrap();
    assert_eq!(classical.model.damping_gamma(), 0.0);
    assert!(build_nse_model(&NseParams { kappa: 0, ..NseParams::default() }).is_err());
    assert!(build_nse_model(&NseParams { kappa: 1, forcing: vec![1.0; 5], ..NseParams::default() }).is_err());
}

#[test]
fn unforced_energy_is_nonincreasing() {
    for gamma in [0.0, 0.5] {
        let nse = build_nse_model(&NseParams { kappa: 3, gamma, ..NseParams::default() }).unwrap();
        let dim = nse.model.dim();
        let mut rng = auxiliary_rng(5, "nse-energy");
        let x0 = StateVector::new(random_ball_point(&mut rng, dim, 1.0, 1.0));
        let r = energy_check(&nse.model, &x0, 1.0, &StepperConfig::projected(1e-3), 1, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.last < r.initial);
    }
}

#[test]
fn forced_noisy_nse_stays_in_the_ball() {
    let nse = build_nse_model(&NseParams {
        kappa: 3,
        gamma: 0.5,
        forcing: vec![2.0, 0.0, 1.0],
        noise_amplitudes: vec![0.3; 6],
        modulation: Modulation { base: 1.0, slope: 0.2, lo: 0.5, hi: 2.0 },
        ..NseParams::default()
    })
    .unwrap();
    let dim = nse.model.dim();
    let p = see_lab_core::dynamics::simulate_path(
        &nse.model,
        &StateVector::zeros(dim),
        1.0,
        &StepperConfig::projected(1e-3),
        4,
        0,
    )
    .unwrap();
    assert!(p.states.iter().all(|s| s.h_norm() <= 1.0 && s.dim() == dim));
}
