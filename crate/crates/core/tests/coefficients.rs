use rand::Rng;
use see_lab_core::coefficients::{
    check_form_bounds, eval_bilinear, eval_drift, eval_noise, form_identity_check, lipschitz_probe, trilinear_form,
};
use see_lab_core::nse::{build_nse_model, NseParams};
use see_lab_core::rng::{auxiliary_rng, random_ball_point};
use see_lab_core::{BilinearForm, DriftMap, ModelSpec, Modulation, NoiseMap, SkewTensor, SpectralBasis, StateVector};

fn basis(dim: usize) -> SpectralBasis {
    SpectralBasis::power_law(dim, 4.0, 2.0).unwrap()
}

fn shear(c: f64) -> BilinearForm {
    BilinearForm::SkewShear(SkewTensor::new(4, [(0, 1, 2, c), (1, 0, 3, 0.5 * c), (3, 2, 1, -0.25 * c)]).unwrap())
}

#[test]
fn drift_examples() {
    let b = basis(3);
    let m = ModelSpec::builder(b.clone()).drift(DriftMap::zero(3)).coupling_n(1).build().unwrap();
    let u = StateVector::new(vec![0.3, -0.2, 0.1]);
    assert_eq!(eval_drift(&m, &u).unwrap(), StateVector::zeros(3));

    let half = DriftMap::Affine { slopes: vec![0.5; 3], offset: vec![0.0; 3] };
    let m = ModelSpec::builder(b.clone()).drift(half).coupling_n(1).build().unwrap();
    assert_eq!(eval_drift(&m, &b.unit(0)).unwrap(), StateVector::new(vec![0.5, 0.0, 0.0]));

    let table = vec![1.0, 2.0, 0.0, -1.0, 0.0, 3.0, 0.5, 0.25, -2.0];
    let offset = vec![0.1, 0.0, -0.1];
    let m = ModelSpec::builder(b)
        .drift(DriftMap::Table { matrix: table.clone(), offset: offset.clone() })
        .coupling_n(1)
        .build()
        .unwrap();
    let mut rng = auxiliary_rng(1, "table");
    for _ in 0..100 {
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = eval_drift(&m, &StateVector::new(u.clone())).unwrap();
        for i in 0..3 {
            let want = offset[i] + (0..3).map(|j| table[3 * i + j] * u[j]).sum::<f64>();
            assert_eq!(got[i], want);
        }
    }
}

#[test]
fn damping_enters_the_drift() {
    let m = ModelSpec::builder(basis(2)).damping_gamma(2.0).coupling_n(1).build().unwrap();
    let u = StateVector::new(vec![0.5, -1.0]);
    assert_eq!(eval_drift(&m, &u).unwrap(), StateVector::new(vec![-1.0, 2.0]));
}

#[test]
fn trilinear_examples() {
    let b = basis(4);
    let zero = ModelSpec::builder(b.clone()).coupling_n(2).build().unwrap();
    let single =
        BilinearForm::SkewShear(SkewTensor::new(4, [(0, 1, 2, 1.0)]).unwrap());
    let m = ModelSpec::builder(b.clone()).bilinear(single).coupling_n(2).build().unwrap();
    assert_eq!(trilinear_form(&m, &b.unit(0), &b.unit(1), &b.unit(2)).unwrap(), 1.0);
    assert_eq!(trilinear_form(&m, &b.unit(0), &b.unit(2), &b.unit(1)).unwrap(), -1.0);

    let mut rng = auxiliary_rng(2, "trilinear");
    for _ in 0..1000 {
        let u = StateVector::new(random_ball_point(&mut rng, 4, 1.0, 0.0));
        let v = StateVector::new(random_ball_point(&mut rng, 4, 1.0, 0.0));
        assert_eq!(trilinear_form(&zero, &u, &v, &v).unwrap(), 0.0);
        assert_eq!(trilinear_form(&m, &u, &v, &v).unwrap(), 0.0);
        let buu = eval_bilinear(&m, &u, &u).unwrap();
        assert!(buu.dot(&u).abs() <= 1e-12 * u.h_norm().powi(3));
    }
    assert_eq!(eval_bilinear(&zero, &b.unit(0), &b.unit(1)).unwrap(), StateVector::zeros(4));
    assert!(trilinear_form(&m, &StateVector::zeros(3), &b.unit(0), &b.unit(0)).is_err());
}

#[test]
fn form_bound_checks() {
    let zero = ModelSpec::builder(basis(4)).coupling_n(2).build().unwrap();
    let r = check_form_bounds(&zero, 100, 1);
    assert!(r.passed);
    assert_eq!((r.max_trilinear_ratio, r.max_bilinear_ratio), (0.0, 0.0));

    let modest = ModelSpec::builder(basis(4)).bilinear(shear(1.0)).coupling_n(2).build().unwrap();
    assert!(check_form_bounds(&modest, 1000, 2).passed);
    assert!(form_identity_check(&modest, 1000, 3).passed);

    let big = ModelSpec::builder(basis(4))
        .bilinear(shear(200.0))
        .coupling_n(2)
        .enforce_form_bounds(false)
        .build()
        .unwrap();
    let r = check_form_bounds(&big, 1000, 2);
    assert!(!r.passed);
    assert!(r.max_trilinear_ratio > 1.0);
    assert!(ModelSpec::builder(basis(4)).bilinear(shear(200.0)).coupling_n(2).build().is_err());

    let nse = build_nse_model(&NseParams::default()).unwrap();
    assert!(check_form_bounds(&nse.model, 1000, 4).passed);
    assert!(form_identity_check(&nse.model, 1000, 5).passed);
}

#[test]
fn noise_examples() {
    let b = basis(3);
    let unit = NoiseMap::DiagAffine {
        amplitudes: vec![1.0, 0.0, 0.0],
        modulation: Modulation::constant(1.0),
        c_min: 0.0,
    };
    let m = ModelSpec::builder(b.clone()).noise(unit).coupling_n(1).build().unwrap();
    assert_eq!(eval_noise(&m, &b.unit(1)).unwrap().hs_norm(), 1.0);

    let s = vec![0.3, 0.2, 0.1];
    let g = Modulation { base: 1.5, slope: 0.5, lo: 0.5, hi: 2.0 };
    let noise = NoiseMap::DiagAffine { amplitudes: s.clone(), modulation: g, c_min: 0.1 };
    let m = ModelSpec::builder(b.clone()).noise(noise).coupling_n(1).build().unwrap();
    let hs0 = eval_noise(&m, &b.zero()).unwrap().hs_norm();
    let want = 1.5 * s.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((hs0 - want).abs() < 1e-15);
    assert_eq!(hs0, m.sigma0_hs());

    let m = ModelSpec::builder(b.clone()).noise(NoiseMap::additive(s)).coupling_n(1).build().unwrap();
    assert_eq!(eval_noise(&m, &b.zero()).unwrap(), eval_noise(&m, &b.unit(2).scaled(0.7)).unwrap());
}

#[test]
fn lipschitz_examples() {
    let b = basis(4);
    let constant = ModelSpec::builder(b.clone())
        .drift(DriftMap::Affine { slopes: vec![0.0; 4], offset: vec![1.0, 0.0, 2.0, 0.0] })
        .noise(NoiseMap::additive(vec![0.1; 4]))
        .coupling_n(2)
        .build()
        .unwrap();
    assert_eq!(lipschitz_probe(&constant, 300, 1).estimate, 0.0);

    let unit_gap = SpectralBasis::power_law(4, 1.0, 2.0).unwrap();
    let half = ModelSpec::builder(unit_gap)
        .drift(DriftMap::Affine { slopes: vec![0.5; 4], offset: vec![0.0; 4] })
        .coupling_n(2)
        .build()
        .unwrap();
    let r = lipschitz_probe(&half, 300, 2);
    assert!(r.estimate <= 0.25 * (1.0 + 1e-12));
    assert!(r.passed);

    let slope = 0.5;
    let s = vec![0.4, 0.3, 0.2, 0.1];
    let noise = NoiseMap::DiagAffine {
        amplitudes: s.clone(),
        modulation: Modulation { base: 1.0, slope, lo: 0.5, hi: 2.0 },
        c_min: 0.1,
    };
    let m = ModelSpec::builder(b).noise(noise).coupling_n(2).build().unwrap();
    let analytic = slope * slope * s.iter().map(|x| x * x).sum::<f64>();
    let r = lipschitz_probe(&m, 600, 3);
    assert!(r.estimate <= analytic * (1.0 + 1e-12));
    assert!(r.estimate >= 0.9 * analytic, "{} vs {analytic}", r.estimate);
}
