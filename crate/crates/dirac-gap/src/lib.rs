//! Eigenvalues in the spectral gap (-1, 1) of two- and three-dimensional
//! Coulomb-Dirac operators.
//!
//! The operator decomposes into angular-momentum channels; on each channel
//! two independent solvers find the gap eigenvalues:
//!
//! * the Talman route works in configuration space and root-finds on the
//!   lambda-dependent Schur complement over upper spinor components;
//! * the Esteban-Sere route works in momentum space on the free operator's
//!   positive/negative spectral subspaces.
//!
//! Around the solvers sit numerical validators: the momentum-kernel chain
//! and Kato bounds, the Hardy-Dirac inequality, the lower-bound certificate
//! behind the Talman characterisation, and the operator-core boundedness
//! computation for the distinguished self-adjoint extension at strong
//! coupling.
//!
//! Entry points: [`minimax::talman_eigenvalue`] / [`minimax::esteban_sere_eigenvalue`]
//! for spectra, the `cli` module for the batch front end, and the crate
//! examples for one runnable demonstration per capability.

pub mod channels;
pub mod cli;
pub mod error;
pub mod hardy;
pub mod kernel;
pub mod minimax;
pub mod quad;
pub mod radial;

pub use channels::{Channel, ChannelIndex, Dimension, Parity, Spin};
pub use error::{Error, Result};
pub use kernel::{kato_constant, legendre_q, MomentumMesh};
pub use radial::{PotentialSpec, RadialMesh};

/// Lowest gap eigenvalue of the Coulomb-Dirac operator at coupling nu:
/// sqrt(1 - ((4-n) nu)^2), valid for nu in [0, 1/(4-n)].
pub fn coulomb_ground_energy(dim: Dimension, nu: f64) -> f64 {
    let scaled = (4 - dim.n()) as f64 * nu;
    (1.0 - scaled * scaled).sqrt()
}
