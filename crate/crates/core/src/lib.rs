//! Learned control barrier functions from a cost-sensitive, incrementally
//! updatable random vector functional link (RVFL) classifier.
//!
//! The crate is `no_std` (it needs `alloc`) and holds only the numerical
//! core:
//!
//! * [`rvfl`]: random enhancement layer, closed-form cost-sensitive training,
//!   barrier value / gradient / Hessian.
//! * [`incremental`]: Woodbury sample appends and misclassification-cost
//!   updates on a trained model.
//! * [`analysis`]: Lipschitz bounds, hat-matrix influence sums, coverage
//!   radii and conservativeness probes.
//! * [`dynamics`]: the planar two-link arm as a double integrator, its
//!   kinematics, and lifting a workspace barrier to joint space.
//! * [`filter`]: the HOCBF and velocity constraint rows and the two-variable
//!   QP safety filter.
//! * [`scenario`]: timed rectangular unsafe regions and labeled sampling.
//! * [`mpc`]: the safety-blind reference controller.
//!
//! File formats, the closed-loop runner, benchmarks and the CLI live in the
//! `safelink` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod dynamics;
mod error;
pub mod filter;
pub mod incremental;
mod linalg;
pub use linalg::relative_frobenius;
pub mod mpc;
pub mod rvfl;
pub mod scenario;

pub use error::{Error, Result};
pub use rvfl::{CbfEvaluation, CostMatrix, Label, LabeledSamples, RvflConfig, TrainedModel};

/// Seed mixing shared by every sampler that derives an independent stream
/// from a root seed (splitmix64 finalizer).
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
