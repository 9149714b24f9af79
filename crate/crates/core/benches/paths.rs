use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use see_lab_core::dynamics::PathStepper;
use see_lab_core::ergodicity::{weighted_contraction_estimate, MonteCarloPlan};
use see_lab_core::parallel::{parallel_map, resolve_workers};
use see_lab_core::{BilinearForm, ModelSpec, Modulation, NoiseMap, SkewTensor, SpectralBasis, StateVector, StepperConfig};

fn model() -> ModelSpec {
    let dim = 16;
    let noise = NoiseMap::DiagAffine {
        amplitudes: vec![0.025; dim],
        modulation: Modulation { base: 1.0, slope: 0.5, lo: 0.5, hi: 2.0 },
        c_min: 0.025,
    };
    ModelSpec::builder(SpectralBasis::power_law(dim, 4.0, 2.0).unwrap())
        .bilinear(BilinearForm::SkewShear(SkewTensor::new(dim, [(0, 1, 2, 1.0)]).unwrap()))
        .noise(noise)
        .lipschitz_c1(1.0)
        .coupling_n(3)
        .build()
        .unwrap()
}

fn x0(dim: usize) -> StateVector {
    let mut v = StateVector::zeros(dim);
    v[0] = 0.9;
    v
}

fn bench_paths(c: &mut Criterion) {
    let m = model();
    let x = x0(m.dim());
    let cfg = StepperConfig::projected(1e-3);
    let all = resolve_workers(None);
    let mut g = c.benchmark_group("simulate_256_paths_t0.25");
    g.sample_size(10);
    for workers in [1, all] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("workers={workers}")), &workers, |b, &w| {
            b.iter(|| {
                let out = parallel_map(256, w, |j| {
                    let mut st = PathStepper::new(&m, &x, cfg, 7, j as u64)?;
                    for _ in 0..250 {
                        st.advance()?;
                    }
                    Ok(st.state()[0])
                })
                .unwrap();
                black_box(out)
            })
        });
        if all == 1 {
            break;
        }
    }
    g.finish();

    let y = StateVector::zeros(m.dim());
    let mut g = c.benchmark_group("weighted_contraction_128_pairs");
    g.sample_size(10);
    for workers in [1, all] {
        let plan = MonteCarloPlan::new(128, vec![0.1, 0.2], 7, cfg).with_workers(workers);
        g.bench_with_input(BenchmarkId::from_parameter(format!("workers={workers}")), &plan, |b, p| {
            b.iter(|| black_box(weighted_contraction_estimate(&m, &x, &y, p).unwrap()))
        });
        if all == 1 {
            break;
        }
    }
    g.finish();
}

criterion_group!(benches, bench_paths);
criterion_main!(benches);
