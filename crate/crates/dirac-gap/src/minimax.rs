//! Gap-eigenvalue solvers and minimax certificates.
//!
//! Both solvers root-find on a lambda-dependent Schur complement whose
//! eigenvalue curves are strictly decreasing in lambda, so the number of
//! negative eigenvalues of S(lambda) counts the operator eigenvalues below
//! lambda. Bisection on that count (a monotone integer predicate) is the
//! sign-tracking of the individual curves rho_j without ever forming them.
//!
//! * Talman: configuration space, upper-component basis, eliminating the
//!   lower spinor at its pointwise optimum.
//! * Esteban-Sere: momentum space, blocks over the free operator's
//!   positive/negative spectral subspaces, eliminating the negative block.
//!
//! The module also carries the explicit operators behind the minimax proofs
//! (the channel-shift map L and the subspace map G) and the two numerical
//! certificates built from them.

use crate::channels::{next_kappa_beyond, Channel, Dimension, Parity};
use crate::error::{Error, Result};
use crate::kernel::{assemble_coulomb_form, kato_constant, FormMatrix, MomentumMesh};
use crate::radial::{
    assemble_channel_operator, assemble_schur_form, assemble_upper_gram,
    generalized_eigenvalues, BorderedTridiagonal, PotentialSpec, RadialMesh,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Which characterisation produced a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Talman,
    EstebanSere,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Talman => write!(f, "talman"),
            Method::EstebanSere => write!(f, "esteban-sere"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapEigenvalue {
    pub lambda: f64,
    /// Half width of the final bisection bracket.
    pub residual: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpectrum {
    pub kappa: f64,
    pub degeneracy: u32,
    pub eigenvalues: Vec<GapEigenvalue>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MergedEigenvalue {
    pub lambda: f64,
    pub kappa: f64,
    pub multiplicity: u32,
    pub residual: f64,
}

/// Per-channel and multiplicity-merged gap eigenvalues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSpectrumResult {
    pub method: Method,
    pub dim: Dimension,
    pub per_channel: Vec<ChannelSpectrum>,
    pub merged: Vec<MergedEigenvalue>,
    /// Multiplicity count up to which the merged list is unaffected by the
    /// kappa truncation (free lower bound on the dropped channels).
    pub certified_through: usize,
}

impl GapSpectrumResult {
    /// k-th eigenvalue counted from below with multiplicity (1-based).
    pub fn kth(&self, k: usize) -> Option<&MergedEigenvalue> {
        let mut count = 0usize;
        for entry in &self.merged {
            count += entry.multiplicity as usize;
            if count >= k {
                return Some(entry);
            }
        }
        None
    }

    /// Distinct eigenvalues after merging within `tol`.
    pub fn distinct(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.merged {
            if out.last().map_or(true, |&last| (e.lambda - last).abs() > tol) {
                out.push(e.lambda);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// root finding on the eigenvalue-count predicate

const SCAN_MARGIN: f64 = 1e-3;
const SCAN_SAMPLES: usize = 64;
const MAX_BISECTIONS: u32 = 200;

/// Find the first `k_max` roots of the Schur eigenvalue curves in
/// (-1 + margin, 1 - margin), given the monotone count predicate.
fn gap_roots<F: FnMut(f64) -> Result<usize>>(
    mut count: F,
    k_max: usize,
    tol: f64,
) -> Result<Vec<GapEigenvalue>> {
    let lo_edge = -1.0 + SCAN_MARGIN;
    let hi_edge = 1.0 - SCAN_MARGIN;
    let step = (hi_edge - lo_edge) / (SCAN_SAMPLES as f64 - 1.0);
    let mut samples = Vec::with_capacity(SCAN_SAMPLES);
    let mut counts = Vec::with_capacity(SCAN_SAMPLES);
    let mut total = 0usize;
    for i in 0..SCAN_SAMPLES {
        let lambda = lo_edge + step * i as f64;
        let c = count(lambda)?;
        samples.push(lambda);
        counts.push(c);
        total = c;
        if c >= k_max {
            break;
        }
    }
    if counts[0] > 0 {
        return Err(Error::ConvergenceFailure(format!(
            "{} eigenvalue(s) below the scan floor {lo_edge}",
            counts[0]
        )));
    }
    let mut roots = Vec::new();
    for target in 1..=k_max.min(total) {
        // first scanned sample reaching the target count
        let idx = match counts.iter().position(|&c| c >= target) {
            Some(i) => i,
            None => break,
        };
        let mut lo = samples[idx - 1];
        let mut hi = samples[idx];
        let mut iterations = 0u32;
        while hi - lo > tol {
            iterations += 1;
            if iterations > MAX_BISECTIONS {
                return Err(Error::ConvergenceFailure(format!(
                    "bisection for root {target} exceeded {MAX_BISECTIONS} iterations"
                )));
            }
            let mid = 0.5 * (lo + hi);
            if count(mid)? >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        roots.push(GapEigenvalue {
            lambda: 0.5 * (lo + hi),
            residual: 0.5 * (hi - lo),
            iterations,
        });
    }
    Ok(roots)
}

fn merge_spectra(
    dim: Dimension,
    nu_bound: f64,
    kappa_max_used: f64,
    method: Method,
    channels: &[Channel],
    spectra: Vec<Vec<GapEigenvalue>>,
) -> GapSpectrumResult {
    let mut per_channel = Vec::new();
    let mut merged: Vec<MergedEigenvalue> = Vec::new();
    for (ch, eigs) in channels.iter().zip(&spectra) {
        per_channel.push(ChannelSpectrum {
            kappa: ch.kappa,
            degeneracy: ch.degeneracy,
            eigenvalues: eigs.clone(),
        });
        for e in eigs {
            merged.push(MergedEigenvalue {
                lambda: e.lambda,
                kappa: ch.kappa,
                multiplicity: ch.degeneracy,
                residual: e.residual,
            });
        }
    }
    merged.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.kappa.total_cmp(&b.kappa)));
    // every channel beyond the truncation starts above the Coulomb channel
    // ground sqrt(1 - nu^2/kappa^2), so merged values below that are final
    let kappa_next = next_kappa_beyond(dim, kappa_max_used);
    let bound = (1.0 - (nu_bound / kappa_next).powi(2)).max(0.0).sqrt();
    let mut certified = 0usize;
    for e in &merged {
        if e.lambda + e.residual < bound {
            certified += e.multiplicity as usize;
        } else {
            break;
        }
    }
    GapSpectrumResult {
        method,
        dim,
        per_channel,
        merged,
        certified_through: certified,
    }
}

// ---------------------------------------------------------------------------
// Talman route

/// The lambda-dependent quadratic form on upper components.
#[derive(Debug, Clone)]
pub struct SchurForm {
    pub lambda: f64,
    pub channel: Channel,
    pub matrix: BorderedTridiagonal,
}

/// Assemble the Talman Schur form b_lambda over the upper-component basis
/// (with the extension enrichment on flagged channels).
pub fn talman_schur(
    channel: &Channel,
    potential: &PotentialSpec,
    mesh: &RadialMesh,
    lambda: f64,
) -> Result<SchurForm> {
    let matrix = assemble_schur_form(channel, potential, mesh, lambda, true)?;
    Ok(SchurForm {
        lambda,
        channel: *channel,
        matrix,
    })
}

fn talman_channel_roots(
    channel: &Channel,
    potential: &PotentialSpec,
    mesh: &RadialMesh,
    k_max: usize,
    tol: f64,
) -> Result<Vec<GapEigenvalue>> {
    gap_roots(
        |lambda| {
            Ok(assemble_schur_form(channel, potential, mesh, lambda, true)?.negative_count())
        },
        k_max,
        tol,
    )
}

/// Gap eigenvalues through the Talman characterisation; `k` values merged
/// with channel degeneracies must exist or the error names the gap.
pub fn talman_eigenvalue(
    k: usize,
    channels: &[Channel],
    potential: &PotentialSpec,
    mesh: &RadialMesh,
    tol: f64,
) -> Result<GapSpectrumResult> {
    if k < 1 || channels.is_empty() {
        return Err(Error::Config("need k >= 1 and at least one channel".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let dim = channels[0].dim;
    potential.validate_for(dim, false)?;
    let spectra = channels
        .iter()
        .map(|ch| talman_channel_roots(ch, potential, mesh, k, tol))
        .collect::<Result<Vec<_>>>()?;
    let kappa_max = channels.iter().fold(0.0f64, |m, c| m.max(c.kappa.abs()));
    let result = merge_spectra(
        dim,
        potential.nu_bound(),
        kappa_max,
        Method::Talman,
        channels,
        spectra,
    );
    if result.kth(k).is_none() {
        return Err(Error::NoEigenvalueInGap(format!(
            "fewer than {k} eigenvalues in (-1, 1) for the given channels"
        )));
    }
    Ok(result)
}

/// Smallest-|rho| eigenvector of the pencil (S(lambda), Gram) by inverse
/// iteration; returns (rho, coefficients).
pub fn schur_ground_vector(
    channel: &Channel,
    potential: &PotentialSpec,
    mesh: &RadialMesh,
    lambda: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let s = assemble_schur_form(channel, potential, mesh, lambda, true)?;
    let g = assemble_upper_gram(channel, potential, mesh, true)?;
    let n = s.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let normalize = |v: &mut Vec<f64>, g: &BorderedTridiagonal| {
        let norm = g.quadratic(v).max(1e-300).sqrt();
        for vi in v.iter_mut() {
            *vi /= norm;
        }
    };
    normalize(&mut x, &g);
    for _ in 0..30 {
        let rhs = g.apply(&x);
        let mut y = s.solve(&rhs);
        normalize(&mut y, &g);
        x = y;
    }
    let rho = s.quadratic(&x) / g.quadratic(&x);
    Ok((rho, x))
}

/// Spurious-eigenvalue policy: eigenvalues of the 2-component pencil (H, G)
/// in the gap are accepted only if the Schur root-finder reproduces them
/// within `match_tol`; the rest are reported as suspected spectral pollution.
#[derive(Debug, Clone)]
pub struct PencilValidation {
    pub accepted: Vec<f64>,
    pub suspected_pollution: Vec<f64>,
}

pub fn validated_pencil_eigenvalues(
    channel: &Channel,
    potential: &PotentialSpec,
    mesh: &RadialMesh,
    enrich: bool,
    match_tol: f64,
) -> Result<PencilValidation> {
    let (h, g) = assemble_channel_operator(channel, potential, mesh, enrich)?;
    let eigs = generalized_eigenvalues(&h, &g)?;
    let margin = SCAN_MARGIN;
    let candidates: Vec<f64> = eigs
        .into_iter()
        .filter(|&e| e > -1.0 + margin && e < 1.0 - margin)
        .collect();
    if candidates.is_empty() {
        return Ok(PencilValidation {
            accepted: vec![],
            suspected_pollution: vec![],
        });
    }
    let roots = talman_channel_roots(channel, potential, mesh, candidates.len() + 2, match_tol.min(1e-8))?;
    let mut accepted = Vec::new();
    let mut suspected = Vec::new();
    for c in candidates {
        if roots.iter().any(|r| (r.lambda - c).abs() <= match_tol) {
            accepted.push(c);
        } else {
            suspected.push(c);
        }
    }
    Ok(PencilValidation {
        accepted,
        suspected_pollution: suspected,
    })
}

// ---------------------------------------------------------------------------
// Esteban-Sere route

/// Momentum-space operator blocks of one channel pair (j, T j) over the
/// free spectral-subspace spinors.
#[derive(Debug, Clone)]
pub struct MomentumBlockOperator {
    pub channel: Channel,
    /// sqrt(1 + p_i^2): free part is +free on the positive block, -free on
    /// the negative block (diagonal in the subspace basis).
    pub free: Vec<f64>,
    /// Lumped Gram weights g_i = w_i (1 + beta_i^2) shared by both blocks.
    pub gram: Vec<f64>,
    pub beta: Vec<f64>,
    pub v_pp: DMatrix<f64>,
    pub v_pm: DMatrix<f64>,
    pub v_mm: DMatrix<f64>,
}

impl MomentumBlockOperator {
    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    /// Total positive-positive block at spectral parameter 0.
    pub fn a_pp(&self) -> DMatrix<f64> {
        let mut m = self.v_pp.clone();
        for i in 0..self.len() {
            m[(i, i)] += self.free[i] * self.gram[i];
        }
        m
    }

    pub fn a_mm(&self) -> DMatrix<f64> {
        let mut m = self.v_mm.clone();
        for i in 0..self.len() {
            m[(i, i)] -= self.free[i] * self.gram[i];
        }
        m
    }

    pub fn a_pm(&self) -> &DMatrix<f64> {
        &self.v_pm
    }

    /// Full 2M x 2M operator and Gram matrices (diagnostics).
    pub fn full_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.len();
        let mut a = DMatrix::zeros(2 * m, 2 * m);
        let mut g = DMatrix::zeros(2 * m, 2 * m);
        let app = self.a_pp();
        let amm = self.a_mm();
        for i in 0..m {
            g[(i, i)] = self.gram[i];
            g[(m + i, m + i)] = self.gram[i];
            for k in 0..m {
                a[(i, k)] = app[(i, k)];
                a[(m + i, m + k)] = amm[(i, k)];
                a[(i, m + k)] = self.v_pm[(i, k)];
                a[(m + k, i)] = self.v_pm[(i, k)];
            }
        }
        (a, g)
    }

    /// Schur complement onto the positive subspace:
    /// S(lambda) = A_pp - lambda G - A_pm (A_mm - lambda G)^{-1} A_pm^T.
    pub fn schur(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let m = self.len();
        let mut neg = self.a_mm();
        for i in 0..m {
            neg[(i, i)] -= lambda * self.gram[i];
        }
        // A_mm - lambda G must be negative definite for lambda > -1
        let chol = (-&neg)
            .cholesky()
            .ok_or(Error::NegativeBlockNotDefinite)?;
        let solved = chol.solve(&self.v_pm.transpose());
        let mut s = self.a_pp();
        for i in 0..m {
            s[(i, i)] -= lambda * self.gram[i];
        }
        // minus (A_pm (neg)^{-1} A_pm^T) = plus A_pm (-neg)^{-1} A_pm^T
        s += self.v_pm.clone() * solved;
        Ok(s)
    }

    fn gap_count(&self, lambda: f64) -> Result<usize> {
        Ok(dense_negative_count(&self.schur(lambda)?))
    }
}

/// Negative-eigenvalue count of a dense symmetric matrix by LDL^T with
/// symmetric diagonal pivoting, falling back to an eigendecomposition on the
/// (rare) pivot stall.
fn dense_negative_count(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut m = a.clone();
    let scale = m.abs().max().max(1e-300);
    let mut neg = 0usize;
    for step in 0..n {
        // largest remaining |diagonal| as pivot
        let mut best = step;
        for i in step..n {
            if m[(i, i)].abs() > m[(best, best)].abs() {
                best = i;
            }
        }
        if m[(best, best)].abs() < 1e-13 * scale {
            // off-diagonal coupling with vanishing diagonal: fall back
            let rest = m.view((step, step), (n - step, n - step)).into_owned();
            let sym = 0.5 * (&rest + rest.transpose());
            return neg
                + sym
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .filter(|&&e| e < 0.0)
                    .count();
        }
        if best != step {
            m.swap_rows(step, best);
            m.swap_columns(step, best);
        }
        let pivot = m[(step, step)];
        if pivot < 0.0 {
            neg += 1;
        }
        for i in (step + 1)..n {
            let factor = m[(i, step)] / pivot;
            for k in (step + 1)..=i {
                let update = factor * m[(k, step)];
                m[(i, k)] -= update;
                m[(k, i)] = m[(i, k)];
            }
        }
    }
    neg
}

/// Assemble the momentum-space blocks for the channel pair (j, T j): free
/// parts are diagonal +-sqrt(1+p^2); the Coulomb coupling enters through the
/// Galerkin kernel matrices of order j's and T j's channels sandwiched
/// between the subspace spinors (1, beta) and (-beta, 1).
pub fn esteban_sere_assemble(
    channel: &Channel,
    potential: &PotentialSpec,
    mesh: &MomentumMesh,
) -> Result<MomentumBlockOperator> {
    let nu = match potential {
        PotentialSpec::Coulomb { nu } => *nu,
        PotentialSpec::Tabulated { .. } => {
            return Err(Error::InvalidPotential(
                "the momentum-space solver supports Coulomb potentials only".into(),
            ))
        }
    };
    let order_up = channel.coulomb_order();
    let order_dn = channel.shifted().coulomb_order();
    let q_up = assemble_coulomb_form(order_up, mesh)?;
    let q_dn = assemble_coulomb_form(order_dn, mesh)?;
    let beta: Vec<f64> = mesh
        .nodes
        .iter()
        .map(|&p| p / (1.0 + (1.0 + p * p).sqrt()))
        .collect();
    let free: Vec<f64> = mesh.nodes.iter().map(|&p| (1.0 + p * p).sqrt()).collect();
    let gram: Vec<f64> = mesh
        .l2_weights
        .iter()
        .zip(&beta)
        .map(|(&w, &b)| w * (1.0 + b * b))
        .collect();

    // upper component u = c+ - B c-, lower d = B c+ + c-; potential form is
    // -nu (q_up[u] + q_dn[d])
    let mu = -nu * &q_up.matrix;
    let md = -nu * &q_dn.matrix;
    let bdiag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(beta.clone()));
    let v_pp = &mu + &bdiag * &md * &bdiag;
    let v_pm = -(&mu * &bdiag) + &bdiag * &md;
    let v_mm = &bdiag * &mu * &bdiag + &md;
    Ok(MomentumBlockOperator {
        channel: *channel,
        free,
        gram,
        beta,
        v_pp,
        v_pm,
        v_mm,
    })
}

/// Gap eigenvalues through the Esteban-Sere characterisation.
pub fn esteban_sere_eigenvalue(
    k: usize,
    channels: &[Channel],
    potential: &PotentialSpec,
    mesh: &MomentumMesh,
    tol: f64,
) -> Result<GapSpectrumResult> {
    if k < 1 || channels.is_empty() {
        return Err(Error::Config("need k >= 1 and at least one channel".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let dim = channels[0].dim;
    potential.validate_for(dim, false)?;
    let mut spectra = Vec::new();
    for ch in channels {
        let block = esteban_sere_assemble(ch, potential, mesh)?;
        spectra.push(gap_roots(|lambda| block.gap_count(lambda), k, tol)?);
    }
    let kappa_max = channels.iter().fold(0.0f64, |m, c| m.max(c.kappa.abs()));
    let result = merge_spectra(
        dim,
        potential.nu_bound(),
        kappa_max,
        Method::EstebanSere,
        channels,
        spectra,
    );
    if result.kth(k).is_none() {
        return Err(Error::NoEigenvalueInGap(format!(
            "fewer than {k} eigenvalues in (-1, 1) for the given channels"
        )));
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// channel-indexed momentum profiles and the explicit trial maps

/// Scalar momentum profiles per channel (values on the momentum mesh nodes).
#[derive(Debug, Clone)]
pub struct ChannelProfiles {
    pub dim: Dimension,
    pub entries: Vec<(Channel, Vec<f64>)>,
}

impl ChannelProfiles {
    pub fn zeros_like(&self) -> Self {
        ChannelProfiles {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|(c, v)| (*c, vec![0.0; v.len()]))
                .collect(),
        }
    }

    pub fn get(&self, channel: &Channel) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(c, _)| c.index == channel.index)
            .map(|(_, v)| v.as_slice())
    }
}

/// The operator L in channel representation: the output channel T j carries
/// c_{n, T j} times the input channel j's profile.
pub fn apply_l(profiles: &ChannelProfiles) -> ChannelProfiles {
    let entries = profiles
        .entries
        .iter()
        .map(|(ch, v)| {
            let target = ch.shifted();
            let scale = target.coupling();
            (target, v.iter().map(|x| x * scale).collect())
        })
        .collect();
    ChannelProfiles {
        dim: profiles.dim,
        entries,
    }
}

/// Scalar multiplier of the subspace map on channel j:
/// (1 - c p + sqrt(1+p^2)) / (c + p + c sqrt(1+p^2)).
pub fn esteban_sere_multiplier(coupling: f64, p: f64) -> f64 {
    let s = (1.0 + p * p).sqrt();
    (1.0 - coupling * p + s) / (coupling + p + coupling * s)
}

/// Free positive-subspace spinor direction (1, beta(p)).
pub fn positive_spinor(p: f64) -> [f64; 2] {
    [1.0, p / (1.0 + (1.0 + p * p).sqrt())]
}

/// Free negative-subspace spinor direction (-beta(p), 1).
pub fn negative_spinor(p: f64) -> [f64; 2] {
    [-p / (1.0 + (1.0 + p * p).sqrt()), 1.0]
}

/// The map G on positive-subspace coefficients: multiply by the channel
/// multiplier and rotate into the negative subspace. Returns the
/// negative-subspace coefficients per channel.
pub fn apply_g(profiles: &ChannelProfiles, mesh: &MomentumMesh) -> ChannelProfiles {
    let entries = profiles
        .entries
        .iter()
        .map(|(ch, chi)| {
            let c = ch.coupling();
            let out: Vec<f64> = chi
                .iter()
                .zip(&mesh.nodes)
                .map(|(&x, &p)| esteban_sere_multiplier(c, p) * x)
                .collect();
            (*ch, out)
        })
        .collect();
    ChannelProfiles {
        dim: profiles.dim,
        entries,
    }
}

/// Report of the lower-bound certificate behind the Talman characterisation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertificateReport {
    /// d[(phi, L phi)] - (4-n)^{-1} Coulomb[(phi, L phi)] - c-term; must be
    /// >= -slack * scale.
    pub value: f64,
    /// H^{1/2}-type squared norm of the trial spinor, for slack normalisation.
    pub scale: f64,
}

/// Evaluate the certificate on multi-channel upper profiles: kinetic and mass
/// terms through the lumped momentum weights, the Coulomb term through the
/// Galerkin kernel matrices.
pub fn talman_certificate(
    profiles: &ChannelProfiles,
    mesh: &MomentumMesh,
    forms: &mut HashMap<i64, FormMatrix>,
) -> Result<CertificateReport> {
    let dim = profiles.dim;
    let c = kato_constant(dim);
    let c_term = (c * c - 1.0) / (c * c + 1.0);
    let inv_dim_factor = 1.0 / (4 - dim.n()) as f64;
    let w = &mesh.weights;
    let p = &mesh.nodes;

    let mut kinetic = 0.0;
    let mut mass = 0.0;
    let mut norm = 0.0;
    let mut coulomb = 0.0;
    let mut scale = 0.0;
    for (ch, phi) in &profiles.entries {
        let target = ch.shifted();
        let c_target = target.coupling();
        // (L phi)_{T j} = c_{n, T j} phi_j
        let lphi: Vec<f64> = phi.iter().map(|x| x * c_target).collect();
        let mut n_up = 0.0;
        let mut n_dn = 0.0;
        let mut kin = 0.0;
        let mut sc = 0.0;
        for i in 0..phi.len() {
            n_up += w[i] * phi[i] * phi[i];
            n_dn += w[i] * lphi[i] * lphi[i];
            kin += 2.0 * w[i] * p[i] * phi[i] * lphi[i];
            sc += w[i] * (1.0 + p[i] * p[i]).sqrt() * (phi[i] * phi[i] + lphi[i] * lphi[i]);
        }
        kinetic += kin;
        scale += sc;
        norm += n_up + n_dn;
        // mass term through the parity identity (1 -+ c^{+-2}) per class
        mass += match ch.parity {
            Parity::Plus => (1.0 - 1.0 / (c * c)) * n_up,
            Parity::Minus => (1.0 - c * c) * n_up,
        };
        // Coulomb: order of the channel for the upper, of T j for the lower
        for (order, vec) in [(ch.coulomb_order(), phi), (target.coulomb_order(), &lphi)] {
            let key = (2.0 * order) as i64;
            if !forms.contains_key(&key) {
                forms.insert(key, assemble_coulomb_form(order, mesh)?);
            }
            coulomb += forms[&key].quadratic(vec);
        }
    }
    let value = kinetic + mass - inv_dim_factor * coulomb - c_term * norm;
    Ok(CertificateReport { value, scale })
}

/// Residuals of the identity L (phi + G phi)_1 = (phi + G phi)_2 and of the
/// explicit intermediate formula for (I + E)(W F phi).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RelationReport {
    /// || L (phi + G phi)_1 - (phi + G phi)_2 || / || phi ||.
    pub relation_residual: f64,
    /// Worst pointwise deviation of the per-channel ratio lower/upper from
    /// c_{n, T j} and of the upper from the closed-form chi-tilde.
    pub ratio_residual: f64,
}

pub fn es_relation_check(
    profiles: &ChannelProfiles,
    mesh: &MomentumMesh,
) -> Result<RelationReport> {
    let w = &mesh.l2_weights;
    let p = &mesh.nodes;
    // spinor field of phi + G phi per channel pair
    let g_out = apply_g(profiles, mesh);
    let mut upper = ChannelProfiles {
        dim: profiles.dim,
        entries: Vec::new(),
    };
    let mut lower_by_channel: Vec<(Channel, Vec<f64>)> = Vec::new();
    let mut ratio_residual = 0.0f64;
    let mut input_norm_sq = 0.0;
    for ((ch, chi), (_, zeta)) in profiles.entries.iter().zip(&g_out.entries) {
        let c = ch.coupling();
        let target = ch.shifted();
        let c_target = target.coupling();
        let m = chi.len();
        let mut u = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut max_ratio = 0.0f64;
        let mut max_chi = 0.0f64;
        let mut max_u = 0.0f64;
        for i in 0..m {
            let b = p[i] / (1.0 + (1.0 + p[i] * p[i]).sqrt());
            // phi contributes chi (1, b); G phi contributes zeta (-b, 1)
            u[i] = chi[i] - b * zeta[i];
            d[i] = b * chi[i] + zeta[i];
            // closed-form chi-tilde from the derivation
            let s = (1.0 + p[i] * p[i]).sqrt();
            let chi_tilde = c * (p[i] * p[i] + (1.0 + s) * (1.0 + s))
                / ((1.0 + s) * (c + p[i] + c * s))
                * chi[i];
            max_chi = max_chi.max(chi_tilde.abs());
            max_u = max_u.max(u[i].abs());
            max_ratio = max_ratio
                .max((u[i] - chi_tilde).abs())
                .max((d[i] - c_target * u[i]).abs());
            input_norm_sq += w[i] * chi[i] * chi[i];
        }
        ratio_residual = ratio_residual.max(max_ratio / max_chi.max(max_u).max(1e-300));
        upper.entries.push((*ch, u));
        lower_by_channel.push((target, d));
    }
    // route the upper field through the L operator and compare channelwise
    let l_upper = apply_l(&upper);
    let mut diff_sq = 0.0;
    for ((ch, lu), (target, d)) in l_upper.entries.iter().zip(&lower_by_channel) {
        debug_assert_eq!(ch.index, target.index);
        for i in 0..lu.len() {
            let diff = lu[i] - d[i];
            diff_sq += w[i] * diff * diff;
        }
    }
    Ok(RelationReport {
        relation_residual: (diff_sq / input_norm_sq.max(1e-300)).sqrt(),
        ratio_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::enumerate_channels;
    use crate::coulomb_ground_energy;

    fn chan(dim: Dimension, kappa: f64) -> Channel {
        Channel::from_kappa(dim, kappa).unwrap()
    }

    #[test]
    fn talman_ground_state_3d() {
        let mesh = RadialMesh::log(1e-6, 50.0, 600).unwrap();
        let channels = enumerate_channels(Dimension::Three, 1.0);
        let pot = PotentialSpec::coulomb(0.5);
        let result = talman_eigenvalue(1, &channels, &pot, &mesh, 1e-10).unwrap();
        let ground = result.kth(1).unwrap();
        let exact = coulomb_ground_energy(Dimension::Three, 0.5);
        assert!(
            (ground.lambda - exact).abs() < 2e-4,
            "{} vs {exact}",
            ground.lambda
        );
        assert!(result.certified_through >= 2);
    }

    #[test]
    fn talman_ground_state_2d() {
        let mesh = RadialMesh::log(1e-6, 60.0, 600).unwrap();
        let channels = enumerate_channels(Dimension::Two, 0.5);
        let pot = PotentialSpec::coulomb(0.3);
        let result = talman_eigenvalue(1, &channels, &pot, &mesh, 1e-10).unwrap();
        // sqrt(1 - (2 * 0.3)^2) = 0.8
        let ground = result.kth(1).unwrap();
        assert!((ground.lambda - 0.8).abs() < 2e-4, "{}", ground.lambda);
    }

    #[test]
    fn free_case_has_no_gap_eigenvalue() {
        let mesh = RadialMesh::log(1e-5, 40.0, 300).unwrap();
        let channels = enumerate_channels(Dimension::Three, 1.0);
        let pot = PotentialSpec::coulomb(0.0);
        match talman_eigenvalue(1, &channels, &pot, &mesh, 1e-8) {
            Err(Error::NoEigenvalueInGap(_)) => {}
            other => panic!("expected NoEigenvalueInGap, got {other:?}"),
        }
    }

    #[test]
    fn variational_upper_bound_under_nested_refinement() {
        let pot = PotentialSpec::coulomb(0.9);
        let ch = chan(Dimension::Three, 1.0);
        let exact = coulomb_ground_energy(Dimension::Three, 0.9);
        let mut previous = f64::INFINITY;
        for n in [201usize, 401, 801] {
            let mesh = RadialMesh::log(1e-6, 50.0, n).unwrap();
            let roots = talman_channel_roots(&ch, &pot, &mesh, 1, 1e-12).unwrap();
            let lambda = roots[0].lambda;
            assert!(lambda >= exact - 1e-9, "upper bound violated: {lambda} < {exact}");
            assert!(
                lambda <= previous + 1e-12,
                "not monotone under nested refinement: {lambda} after {previous}"
            );
            previous = lambda;
        }
    }

    #[test]
    fn schur_ground_vector_saturates() {
        let nu = 0.5;
        let mesh = RadialMesh::log(1e-6, 50.0, 800).unwrap();
        let ch = chan(Dimension::Three, 1.0);
        let pot = PotentialSpec::coulomb(nu);
        let roots = talman_channel_roots(&ch, &pot, &mesh, 1, 1e-11).unwrap();
        let (rho, vec) = schur_ground_vector(&ch, &pot, &mesh, roots[0].lambda, 7).unwrap();
        assert!(rho.abs() < 1e-7, "Schur quotient at the root: {rho}");
        // the eigenvector resembles the closed-form ground profile
        let exact: Vec<f64> = mesh
            .interior_nodes()
            .iter()
            .map(|&r| crate::radial::coulomb_ground_upper_profile(1.0, nu, r))
            .collect();
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let overlap = dot(&vec[..exact.len()], &exact)
            / (dot(&vec[..exact.len()], &vec[..exact.len()]).sqrt() * dot(&exact, &exact).sqrt());
        assert!(overlap.abs() > 0.999, "overlap {overlap}");
    }

    #[test]
    fn esteban_sere_free_case_blocks() {
        let mesh = MomentumMesh::geometric(1e-3, 1e3, 40).unwrap();
        let ch = chan(Dimension::Three, 1.0);
        let block = esteban_sere_assemble(&ch, &PotentialSpec::coulomb(0.0), &mesh).unwrap();
        assert!(block.v_pm.abs().max() == 0.0, "free coupling must vanish");
        let (a, g) = block.full_matrices();
        assert!((a.clone() - a.transpose()).abs().max() <= 1e-14 * a.abs().max());
        // spectra are +-sqrt(1+p^2) samples
        let eigs = generalized_eigenvalues(&a, &g).unwrap();
        for e in &eigs {
            assert!(e.abs() >= 1.0 - 1e-10, "free ES spectrum inside gap: {e}");
        }
        // no roots in the gap
        assert!(gap_roots(|l| block.gap_count(l), 1, 1e-8).unwrap().is_empty());
    }

    #[test]
    fn esteban_sere_ground_state() {
        let mesh = MomentumMesh::geometric(1e-4, 1e4, 260).unwrap();
        let channels = enumerate_channels(Dimension::Three, 1.0);
        let pot = PotentialSpec::coulomb(0.5);
        let result = esteban_sere_eigenvalue(1, &channels, &pot, &mesh, 1e-9).unwrap();
        let exact = coulomb_ground_energy(Dimension::Three, 0.5);
        let got = result.kth(1).unwrap().lambda;
        assert!((got - exact).abs() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn cross_method_agreement() {
        let rmesh = RadialMesh::log(1e-6, 60.0, 900).unwrap();
        let pmesh = MomentumMesh::geometric(1e-4, 1e4, 260).unwrap();
        let channels = enumerate_channels(Dimension::Two, 0.5);
        let pot = PotentialSpec::coulomb(0.25);
        let talman = talman_eigenvalue(1, &channels, &pot, &rmesh, 1e-9).unwrap();
        let es = esteban_sere_eigenvalue(1, &channels, &pot, &pmesh, 1e-9).unwrap();
        let (t, e) = (talman.kth(1).unwrap(), es.kth(1).unwrap());
        assert!(
            (t.lambda - e.lambda).abs() <= t.residual + e.residual + 1e-3,
            "talman {} vs esteban-sere {}",
            t.lambda,
            e.lambda
        );
    }

    #[test]
    fn pencil_validation_accepts_real_ground_state() {
        let mesh = RadialMesh::log(1e-5, 40.0, 260).unwrap();
        let ch = chan(Dimension::Three, 1.0);
        let pot = PotentialSpec::coulomb(0.5);
        let validation = validated_pencil_eigenvalues(&ch, &pot, &mesh, true, 5e-3).unwrap();
        let exact = coulomb_ground_energy(Dimension::Three, 0.5);
        assert!(
            validation.accepted.iter().any(|&e| (e - exact).abs() < 5e-3),
            "validated spectrum misses the ground state: {:?}",
            validation
        );
    }

    #[test]
    fn apply_l_structure() {
        let mesh = MomentumMesh::geometric(1e-2, 1e2, 24).unwrap();
        let ch = chan(Dimension::Three, 1.0);
        let mut profile = vec![0.0; mesh.len()];
        profile[3] = 2.0;
        let input = ChannelProfiles {
            dim: Dimension::Three,
            entries: vec![(ch, profile.clone())],
        };
        let out = apply_l(&input);
        assert_eq!(out.entries.len(), 1);
        let (target, values) = &out.entries[0];
        assert_eq!(target.kappa, -1.0);
        // s = +1/2 input scaled by c_{3, T j} = c_3^{-1}
        let expect = 2.0 / kato_constant(Dimension::Three);
        assert!((values[3] - expect).abs() < 1e-14);
        // zero input stays zero
        let zeros = ChannelProfiles {
            dim: Dimension::Three,
            entries: vec![(ch, vec![0.0; mesh.len()])],
        };
        assert!(apply_l(&zeros).entries[0].1.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn apply_g_lands_in_negative_subspace() {
        let mesh = MomentumMesh::geometric(1e-2, 1e2, 32).unwrap();
        let ch = chan(Dimension::Two, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chi: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = ChannelProfiles {
            dim: Dimension::Two,
            entries: vec![(ch, chi.clone())],
        };
        let out = apply_g(&input, &mesh);
        // overlap of the output spinor with the positive spinor family
        let mut overlap = 0.0;
        let mut norm = 0.0;
        for (i, &p) in mesh.nodes.iter().enumerate() {
            let pos = positive_spinor(p);
            let negv = negative_spinor(p);
            let spinor = [out.entries[0].1[i] * negv[0], out.entries[0].1[i] * negv[1]];
            overlap += mesh.l2_weights[i] * (spinor[0] * pos[0] + spinor[1] * pos[1]) * chi[i];
            norm += mesh.l2_weights[i] * (spinor[0] * spinor[0] + spinor[1] * spinor[1]);
        }
        assert!(overlap.abs() <= 1e-12 * norm.max(1.0));
        // p -> 0 limit of the multiplier is 1/c
        let c = ch.coupling();
        assert!((esteban_sere_multiplier(c, 1e-12) - 1.0 / c).abs() < 1e-9);
    }

    #[test]
    fn certificate_nonnegative_on_random_profiles() {
        let mesh = MomentumMesh::geometric(1e-4, 1e4, 70).unwrap();
        let mut forms = HashMap::new();
        for dim in [Dimension::Two, Dimension::Three] {
            let kappa_max = match dim {
                Dimension::Two => 2.5,
                Dimension::Three => 3.0,
            };
            let channels = enumerate_channels(dim, kappa_max);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for trial in 0..40 {
                let entries: Vec<(Channel, Vec<f64>)> = channels
                    .iter()
                    .map(|ch| {
                        let v: Vec<f64> =
                            (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        (*ch, v)
                    })
                    .collect();
                let profiles = ChannelProfiles { dim, entries };
                let report = talman_certificate(&profiles, &mesh, &mut forms).unwrap();
                assert!(
                    report.value >= -1e-8 * report.scale,
                    "certificate violated on trial {trial} (dim {dim:?}): {} vs scale {}",
                    report.value,
                    report.scale
                );
            }
            // quadratic homogeneity
            let entries: Vec<(Channel, Vec<f64>)> = channels
                .iter()
                .map(|ch| (*ch, (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let base = ChannelProfiles { dim, entries: entries.clone() };
            let scaled = ChannelProfiles {
                dim,
                entries: entries
                    .iter()
                    .map(|(c, v)| (*c, v.iter().map(|x| 3.0 * x).collect()))
                    .collect(),
            };
            let r1 = talman_certificate(&base, &mesh, &mut forms).unwrap();
            let r2 = talman_certificate(&scaled, &mesh, &mut forms).unwrap();
            assert!((r2.value - 9.0 * r1.value).abs() < 1e-9 * r1.value.abs().max(r1.scale));
        }
    }

    #[test]
    fn relation_holds_to_roundoff() {
        let mesh = MomentumMesh::geometric(1e-3, 1e3, 50).unwrap();
        for dim in [Dimension::Two, Dimension::Three] {
            let channels = enumerate_channels(dim, 1.5);
            let mut rng = ChaCha8Rng::seed_from_u64(29);
            for _ in 0..20 {
                let entries: Vec<(Channel, Vec<f64>)> = channels
                    .iter()
                    .map(|ch| {
                        (*ch, (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    })
                    .collect();
                let profiles = ChannelProfiles { dim, entries };
                let report = es_relation_check(&profiles, &mesh).unwrap();
                assert!(report.relation_residual <= 1e-10, "{report:?}");
                assert!(report.ratio_residual <= 1e-12, "{report:?}");
            }
            // zero input gives zero residual
            let zero = ChannelProfiles {
                dim,
                entries: channels.iter().map(|c| (*c, vec![0.0; mesh.len()])).collect(),
            };
            let report = es_relation_check(&zero, &mesh).unwrap();
            assert!(report.relation_residual == 0.0 || report.relation_residual.is_nan() == false);
        }
    }

    #[test]
    fn dense_inertia_matches_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3usize, 8, 20] {
            let mut a = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for k in 0..=i {
                    let v = rng.gen_range(-1.0..1.0);
                    a[(i, k)] = v;
                    a[(k, i)] = v;
                }
            }
            let expected = a
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .filter(|&&e| e < 0.0)
                .count();
            assert_eq!(dense_negative_count(&a), expected, "n={n}");
        }
    }
}
