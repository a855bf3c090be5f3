//! Hardy-Dirac functional and its numerical verification.
//!
//! On a single channel the functional reads
//!
//! J(lambda)[f] = int |f' - (kappa/r) f|^2 / (1 + lambda - v)
//!              + (1 - lambda + v) |f|^2 dr,
//!
//! which is the Talman Schur form evaluated on the upper profile; it is
//! nonnegative for lambda up to the lowest gap eigenvalue, and vanishes on
//! the ground profile at lambda(v). The optimal lower spinor is
//! (f' - (kappa/r) f) / (1 + lambda - v).

use crate::channels::{Channel, Dimension};
use crate::error::Result;
use crate::minimax::talman_schur;
use crate::radial::{h1_scale, PotentialSpec, RadialMesh};
use serde::{Deserialize, Serialize};

/// J value of one upper-component coefficient vector; delegates to the
/// Talman Schur form (same code path as the eigenvalue solver).
pub fn hardy_j(
    channel: &Channel,
    potential: &PotentialSpec,
    coeffs: &[f64],
    lambda: f64,
    mesh: &RadialMesh,
) -> Result<f64> {
    let schur = talman_schur(channel, potential, mesh, lambda)?;
    Ok(schur.matrix.quadratic(coeffs))
}

/// Optimal lower profile (f' - (kappa/r) f) / (1 + lambda - v) on the
/// interior mesh nodes, from nodal values of the upper profile.
pub fn optimal_lower(
    channel: &Channel,
    potential: &PotentialSpec,
    upper: &[f64],
    lambda: f64,
    mesh: &RadialMesh,
) -> Result<Vec<f64>> {
    let r = mesh.interior_nodes();
    assert_eq!(upper.len(), r.len());
    let df = mesh.nodal_derivative(upper);
    let mut out = Vec::with_capacity(r.len());
    for i in 0..r.len() {
        let denom = 1.0 + lambda - potential.value(r[i]);
        if denom <= 0.0 {
            return Err(crate::error::Error::DenominatorSign(format!(
                "1 + lambda - v = {denom} at r = {}",
                r[i]
            )));
        }
        out.push((df[i] - channel.kappa * upper[i] / r[i]) / denom);
    }
    Ok(out)
}

/// Outcome of one inequality run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardyReport {
    pub dim: Dimension,
    pub nu: f64,
    /// lambda(v) used in the functional.
    pub lambda: f64,
    /// J normalised by the H^1-type scale of each profile.
    pub j_over_scale: Vec<f64>,
    pub min_j_over_scale: f64,
    /// |J| / scale of the ground profile at lambda(nu), when available.
    pub saturation_residual: Option<f64>,
}

/// Evaluate the critical-coupling corollary form on the supplied profiles:
/// lambda = sqrt(1 - ((4-n) nu)^2) with the Coulomb potential at coupling nu
/// (the endpoint nu = 1/(4-n) is admissible).
pub fn verify_corollary(
    dim: Dimension,
    nu: f64,
    profiles: &[(Channel, Vec<f64>)],
    mesh: &RadialMesh,
) -> Result<HardyReport> {
    let potential = PotentialSpec::coulomb(nu);
    potential.validate_for(dim, true)?;
    let lambda = crate::coulomb_ground_energy(dim, nu);
    let mut j_over_scale = Vec::with_capacity(profiles.len());
    let mut min = f64::INFINITY;
    for (channel, coeffs) in profiles {
        let j = hardy_j(channel, &potential, coeffs, lambda, mesh)?;
        let scale = h1_scale(channel, &potential, mesh, true, coeffs).max(1e-300);
        let ratio = j / scale;
        min = min.min(ratio);
        j_over_scale.push(ratio);
    }
    Ok(HardyReport {
        dim,
        nu,
        lambda,
        j_over_scale,
        min_j_over_scale: min,
        saturation_residual: None,
    })
}
