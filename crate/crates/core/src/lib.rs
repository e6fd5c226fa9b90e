//! Score-based iterative reconstruction (SIR) at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: variance-preserving noise schedules, timestep ladders and
//!   the annealed `t2`/`t1` plans.
//! - [`scoremodel`]: exact closed-form noise predictors (empirical and
//!   Gaussian data distributions), classifier-free guidance and NFE counting.
//! - [`diffops`]: noise-adding, single-step `x0` prediction, DDIM sampling and
//!   inversion, the hybrid forward process and refinement sampling.
//! - [`scene`]: flatland and voxel emission-absorption renderers with exact
//!   hand-written vector-Jacobian products.
//! - [`sirloop`]: the iterative reconstruction loop, the SDS baseline, the
//!   linear latent codec and the Adam optimizer.
//! - [`meshx`]: marching-cubes mesh extraction and OBJ I/O.
//! - [`tasks`]: procedurally generated hidden ground-truth objects.

pub mod diffops;
pub mod error;
pub mod meshx;
pub mod scene;
pub mod schedule;
pub mod scoremodel;
pub mod sirloop;
pub mod tasks;

pub use error::{Result, SirError};

/// Random generator used by every stochastic operator.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
