//! Counter-based Gaussian increments.
//!
//! Every `(seed, path_index, step)` tuple maps to its own ChaCha8 key/stream
//! pair, so the increments of a step never depend on how many other paths or
//! steps were drawn before it, nor on which worker drew them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic source of the Brownian increments of one path.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: [u8; 32],
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        Self { key: key_for(seed, path_index, *b"see-lab:path-noise") }
    }

    /// Fills `out` with i.i.d. `N(0, dt)` draws for `step`.
    pub fn fill(&self, step: u64, dt: f64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(step);
        let scale = dt.sqrt();
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *o = scale * z;
        }
    }
}

/// `k` i.i.d. `N(0, dt)` draws fully determined by `(seed, path_index, step)`.
pub fn gaussian_increments(seed: u64, path_index: u64, step: u64, k: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; k];
    NoiseStream::new(seed, path_index).fill(step, dt, &mut out);
    out
}

/// An auxiliary generator for sampling test inputs (random states, pairs,
/// test functions), independent of the path noise for the same seed.
pub fn auxiliary_rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut tag = [0u8; 18];
    for (t, b) in tag.iter_mut().zip(purpose.bytes().chain(std::iter::repeat(b'#'))) {
        *t = b;
    }
    let mut rng = ChaCha8Rng::from_seed(key_for(seed, u64::MAX, tag));
    rng.set_stream(1);
    rng
}

fn key_for(seed: u64, index: u64, tag: [u8; 18]) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..].copy_from_slice(&tag[..16]);
    key
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// A uniformly random unit direction in `R^dim`.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A random point of the closed ball of the given radius; with probability
/// `sphere_prob` it lies exactly on the sphere, otherwise it is uniform in
/// the ball.
pub fn random_ball_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64, sphere_prob: f64) -> Vec<f64> {
    let dir = random_direction(rng, dim);
    let r = if rng.random::<f64>() < sphere_prob {
        radius
    } else {
        radius * rng.random::<f64>().powf(1.0 / dim as f64)
    };
    dir.into_iter().map(|x| x * r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_tuple_same_draws() {
        let a = gaussian_increments(7, 3, 11, 16, 1e-3);
        let b = gaussian_increments(7, 3, 11, 16, 1e-3);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_increments(7, 3, 12, 16, 1e-3));
        assert_ne!(a, gaussian_increments(7, 4, 11, 16, 1e-3));
        assert_ne!(a, gaussian_increments(8, 3, 11, 16, 1e-3));
    }

    #[test]
    fn prefix_does_not_depend_on_count() {
        let a = gaussian_increments(1, 0, 0, 4, 1.0);
        let b = gaussian_increments(1, 0, 0, 8, 1.0);
        assert_eq!(a[..], b[..4]);
    }

    #[test]
    fn ball_points_stay_in_ball() {
        let mut rng = auxiliary_rng(5, "ball");
        for _ in 0..1000 {
            let p = random_ball_point(&mut rng, 6, 0.7, 0.5);
            assert!(p.iter().map(|x| x * x).sum::<f64>().sqrt() <= 0.7 + 1e-15);
        }
    }
}
