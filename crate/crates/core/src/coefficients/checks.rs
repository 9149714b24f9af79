//! Randomized checks of the Lipschitz and trilinear-form assumptions.

use rand::Rng;

use super::ModelSpec;
use crate::rng::{auxiliary_rng, random_ball_point, random_direction, standard_normal};

/// Relative slack on the trilinear-form bounds and the Lipschitz constant.
pub const FORM_BOUND_SLACK: f64 = 1e-9;

/// Relative tolerance for the algebraic identities of custom forms.
const IDENTITY_TOL: f64 = 1e-12;

/// A random probe state for the form and Lipschitz checks: dense spectra with
/// a random decay rate, or a handful of active modes.
pub fn sample_probe_state<R: Rng + ?Sized>(rng: &mut R, eigenvalues: &[f64]) -> Vec<f64> {
    let dim = eigenvalues.len();
    if rng.random::<f64>() < 0.7 {
        let decay = 1.5 * rng.random::<f64>();
        eigenvalues
            .iter()
            .map(|l| standard_normal(rng) * l.powf(-decay / 2.0))
            .collect()
    } else {
        let mut v = vec![0.0; dim];
        let active = 1 + rng.random_range(0..dim.min(3));
        for _ in 0..active {
            let i = rng.random_range(0..dim);
            v[i] = standard_normal(rng);
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

/// Largest observed ratios in the trilinear-form bounds
/// `|b(u,v,w)| <= 2 ||u||^½ |u|^½ ||w||^½ |w|^½ ||v||` and
/// `||B(u,u)||_{V*} <= 2 ||u|| |u|_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormBoundReport {
    pub samples: usize,
    pub max_trilinear_ratio: f64,
    pub max_bilinear_ratio: f64,
    pub passed: bool,
}

pub fn check_form_bounds(model: &ModelSpec, samples: usize, seed: u64) -> FormBoundReport {
    let Some(t) = model.bilinear().tensor() else {
        return FormBoundReport {
            samples,
            max_trilinear_ratio: 0.0,
            max_bilinear_ratio: 0.0,
            passed: true,
        };
    };
    let basis = model.basis();
    let lam = basis.eigenvalues();
    let mut rng = auxiliary_rng(seed, "form-bounds");
    let mut buf = vec![0.0; model.dim()];
    let (mut tri, mut bil) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let u = sample_probe_state(&mut rng, lam);
        let v = sample_probe_state(&mut rng, lam);
        let w = sample_probe_state(&mut rng, lam);
        let (uh, wh) = (h(&u), h(&w));
        let (uv, vv, wv) = (basis.v_norm_sq(&u).sqrt(), basis.v_norm_sq(&v).sqrt(), basis.v_norm_sq(&w).sqrt());
        let rhs = 2.0 * (uv * uh).sqrt() * (wv * wh).sqrt() * vv;
        if rhs > 0.0 {
            tri = tri.max(t.trilinear(&u, &v, &w).abs() / rhs);
        }
        t.apply_into(&u, &u, &mut buf);
        let rhs = 2.0 * uv * uh;
        if rhs > 0.0 {
            bil = bil.max(basis.v_star_norm_sq(&buf).sqrt() / rhs);
        }
    }
    FormBoundReport {
        samples,
        max_trilinear_ratio: tri,
        max_bilinear_ratio: bil,
        passed: tri <= 1.0 + FORM_BOUND_SLACK && bil <= 1.0 + FORM_BOUND_SLACK,
    }
}

/// Antisymmetry, cancellation and Riesz consistency on random triples, all
/// relative to the absolute contraction scale `sum |c| |u_i v_j w_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormIdentityReport {
    pub samples: usize,
    /// `max |b(u,v,w) + b(u,w,v)| / scale`.
    pub max_antisymmetry: f64,
    /// `max |b(u,v,v)| / scale`.
    pub max_cancellation: f64,
    /// `max |(B(u,v), w) - b(u,v,w)| / scale`.
    pub max_riesz: f64,
    /// `max |(B(u,u), u)| / scale`.
    pub max_self_cancellation: f64,
    pub passed: bool,
}

pub fn form_identity_check(model: &ModelSpec, samples: usize, seed: u64) -> FormIdentityReport {
    let mut report = FormIdentityReport {
        samples,
        max_antisymmetry: 0.0,
        max_cancellation: 0.0,
        max_riesz: 0.0,
        max_self_cancellation: 0.0,
        passed: true,
    };
    let Some(t) = model.bilinear().tensor() else {
        return report;
    };
    let lam = model.basis().eigenvalues();
    let mut rng = auxiliary_rng(seed, "form-identities");
    let mut buf = vec![0.0; model.dim()];
    let rel = |x: f64, scale: f64| if scale > 0.0 { x.abs() / scale } else { x.abs() };
    for _ in 0..samples {
        let u = sample_probe_state(&mut rng, lam);
        let v = sample_probe_state(&mut rng, lam);
        let w = sample_probe_state(&mut rng, lam);
        let scale = t.trilinear_scale(&u, &v, &w);
        let b_uvw = t.trilinear(&u, &v, &w);
        report.max_antisymmetry = report.max_antisymmetry.max(rel(b_uvw + t.trilinear(&u, &w, &v), scale));
        report.max_cancellation = report
            .max_cancellation
            .max(rel(t.trilinear(&u, &v, &v), t.trilinear_scale(&u, &v, &v)));
        t.apply_into(&u, &v, &mut buf);
        report.max_riesz = report.max_riesz.max(rel(dot(&buf, &w) - b_uvw, scale));
        t.apply_into(&u, &u, &mut buf);
        report.max_self_cancellation = report
            .max_self_cancellation
            .max(rel(dot(&buf, &u), t.trilinear_scale(&u, &u, &u)));
    }
    report.passed = report.max_antisymmetry <= IDENTITY_TOL
        && report.max_cancellation <= IDENTITY_TOL
        && report.max_riesz <= IDENTITY_TOL
        && report.max_self_cancellation <= IDENTITY_TOL;
    report
}

/// Empirical constant of the Lipschitz assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub pairs: usize,
    /// `max (|f(u)-f(v)|^2_{V*} + |sigma(u)-sigma(v)|^2_HS) / |u-v|^2_H`.
    pub estimate: f64,
    pub declared: f64,
    pub passed: bool,
}

/// Samples pairs from three families: independent points of the ball, small
/// perturbations, and collinear (radial) pairs, which saturate the
/// norm-dependent noise modulation.
pub fn lipschitz_probe(model: &ModelSpec, pairs: usize, seed: u64) -> LipschitzReport {
    let basis = model.basis();
    let dim = model.dim();
    let mut rng = auxiliary_rng(seed, "lipschitz");
    let (mut fu, mut fv) = (vec![0.0; dim], vec![0.0; dim]);
    let mut estimate = 0.0f64;
    for p in 0..pairs {
        let u = random_ball_point(&mut rng, dim, 1.0, 0.2);
        let v: Vec<f64> = match p % 3 {
            0 => random_ball_point(&mut rng, dim, 1.0, 0.2),
            1 => {
                let eps = 10f64.powf(-1.0 - 2.0 * rng.random::<f64>());
                let dir = random_direction(&mut rng, dim);
                u.iter().zip(dir).map(|(a, d)| a + eps * d).collect()
            }
            _ => {
                let c = 0.5 + rng.random::<f64>();
                u.iter().map(|a| c * a).collect()
            }
        };
        let diff_sq: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        if diff_sq == 0.0 {
            continue;
        }
        model.drift_into(&u, &mut fu);
        model.drift_into(&v, &mut fv);
        let df: Vec<f64> = fu.iter().zip(&fv).map(|(a, b)| a - b).collect();
        let f_part = basis.v_star_norm_sq(&df);
        let s_part = model
            .noise()
            .operator_at(h(&u))
            .hs_distance(&model.noise().operator_at(h(&v)))
            .powi(2);
        estimate = estimate.max((f_part + s_part) / diff_sq);
    }
    LipschitzReport {
        pairs,
        estimate,
        declared: model.lipschitz_c1(),
        passed: estimate <= model.lipschitz_c1() * (1.0 + FORM_BOUND_SLACK),
    }
}

fn h(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BilinearForm, DriftMap, Modulation, NoiseMap, SkewTensor};
    use crate::spectral::SpectralBasis;

    fn shear_model(c: f64, lam: Vec<f64>) -> ModelSpec {
        let dim = lam.len();
        ModelSpec::builder(SpectralBasis::new(lam).unwrap())
            .bilinear(BilinearForm::SkewShear(
                SkewTensor::new(dim, [(0, 1, 2, c), (1, 0, 2, 0.5 * c)]).unwrap(),
            ))
            .coupling_n(1)
            .enforce_form_bounds(false)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_form_trivially_passes() {
        let m = ModelSpec::builder(SpectralBasis::new(vec![1.0, 2.0]).unwrap())
            .coupling_n(1)
            .build()
            .unwrap();
        let r = check_form_bounds(&m, 100, 1);
        assert_eq!((r.max_trilinear_ratio, r.max_bilinear_ratio), (0.0, 0.0));
        assert!(r.passed);
    }

    #[test]
    fn modest_shear_passes_and_oversized_fails() {
        let ok = check_form_bounds(&shear_model(1.0, vec![4.0, 16.0, 36.0]), 1000, 3);
        assert!(ok.passed, "{ok:?}");
        let bad = check_form_bounds(&shear_model(100.0, vec![1.0, 1.0, 1.0]), 1000, 3);
        assert!(!bad.passed);
        assert!(bad.max_trilinear_ratio > 1.0);
    }

    #[test]
    fn identities_hold_for_shear() {
        let r = form_identity_check(&shear_model(3.0, vec![1.0, 2.0, 3.0]), 1000, 9);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.max_antisymmetry, 0.0);
        assert_eq!(r.max_cancellation, 0.0);
    }

    #[test]
    fn lipschitz_of_constant_coefficients_is_zero() {
        let m = ModelSpec::builder(SpectralBasis::new(vec![1.0, 2.0, 3.0]).unwrap())
            .drift(DriftMap::Affine { slopes: vec![0.0; 3], offset: vec![1.0, 2.0, 3.0] })
            .noise(NoiseMap::additive(vec![0.5; 3]))
            .coupling_n(1)
            .build()
            .unwrap();
        assert_eq!(lipschitz_probe(&m, 300, 2).estimate, 0.0);
    }

    #[test]
    fn lipschitz_of_half_identity() {
        let m = ModelSpec::builder(SpectralBasis::new(vec![1.0, 4.0, 9.0]).unwrap())
            .drift(DriftMap::Affine { slopes: vec![0.5; 3], offset: vec![0.0; 3] })
            .coupling_n(1)
            .build()
            .unwrap();
        let r = lipschitz_probe(&m, 500, 4);
        assert!(r.estimate <= 0.25 + 1e-15);
        assert!(r.passed);
        assert_eq!(m.lipschitz_c1(), 0.25);
    }

    #[test]
    fn modulated_noise_reaches_analytic_constant() {
        let slope = 0.8;
        let amps = vec![0.3, 0.2, 0.1, 0.4];
        let analytic = slope * slope * amps.iter().map(|s| s * s).sum::<f64>();
        let m = ModelSpec::builder(SpectralBasis::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .noise(NoiseMap::DiagAffine {
                amplitudes: amps,
                modulation: Modulation { base: 1.0, slope, lo: 0.5, hi: 2.0 },
                c_min: 0.1,
            })
            .coupling_n(2)
            .build()
            .unwrap();
        let r = lipschitz_probe(&m, 600, 5);
        assert!(r.estimate <= analytic * (1.0 + 1e-12));
        assert!(r.estimate >= 0.9 * analytic, "{} vs {analytic}", r.estimate);
    }
}
