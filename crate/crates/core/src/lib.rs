//! Simulation and verification laboratory for stochastic evolution equations
//! reflected in the closed unit ball of a Hilbert space.
//!
//! The infinite-dimensional state space is truncated to the first `M`
//! eigenmodes of a diagonal positive operator `A`. On top of that truncation
//! the crate provides
//!
//! * the coefficient triple `(f, B, sigma)` with checks of the Lipschitz and
//!   trilinear-form assumptions ([`coefficients`]),
//! * projected and penalized semi-implicit time stepping with a local-time
//!   ledger ([`dynamics`]),
//! * the low-mode drift coupling of two trajectories and its Girsanov shift
//!   ([`coupling`]),
//! * Monte Carlo estimators and verdicts for the moment bounds, the Lyapunov
//!   condition, contraction and d-smallness, occupation measures and rate
//!   extraction ([`ergodicity`]),
//! * a 2D periodic damped Navier-Stokes instance ([`nse`]).
//!
//! Paths are independent given `(seed, path_index)`; [`parallel::parallel_map`]
//! fans them out over a rayon pool (feature `parallel`, on by default) and
//! returns results in path order so every aggregate is scheduling-independent.

pub mod coefficients;
pub mod coupling;
pub mod dynamics;
pub mod ergodicity;
mod error;
pub mod nse;
pub mod parallel;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use coefficients::{BilinearForm, DriftMap, ModelSpec, Modulation, NoiseMap, SkewTensor};
pub use coupling::{CoupledPath, DistanceParams};
pub use dynamics::{LocalTimeLedger, PathSample, Scheme, StepperConfig};
pub use error::{Error, Result};
pub use spectral::{H1Report, H1Variant, SpectralBasis, StateVector};
