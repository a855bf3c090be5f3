//! Batch command-line front end.
//!
//! Subcommands: `eigenvalues`, `hardy-check`, `kernel-check`, `core-check`,
//! `certificate`, `sweep`. Configuration precedence is flags over config-file
//! values over defaults; all randomised suites take an explicit seed so runs
//! are reproducible byte for byte (sweep timings can be zeroed with
//! `--no-runtime` for that purpose).
//!
//! Exit codes: 0 success, 1 configuration error (also the trivial core
//! branch), 2 no eigenvalue in the gap, 3 convergence/quadrature failure,
//! 4 property violation.

use crate::channels::{enumerate_channels, Channel, Dimension};
use crate::error::Error;
use crate::hardy;
use crate::kernel::{
    assemble_coulomb_form, assemble_p_form, kato_bound_constant, FormMatrix, MomentumMesh,
};
use crate::minimax::{
    es_relation_check, esteban_sere_eigenvalue, schur_ground_vector, talman_certificate,
    talman_eigenvalue, ChannelProfiles, GapSpectrumResult,
};
use crate::radial::{
    analytic_core_bound, core_sequence_value, h1_scale, CutoffPair, PotentialSpec, RadialMesh,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_EIGENVALUE: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidChannel(_)
        | Error::InvalidPotential(_)
        | Error::OutOfCoreBranch(_)
        | Error::Domain(_) => EXIT_CONFIG,
        Error::NoEigenvalueInGap(_) => EXIT_NO_EIGENVALUE,
        Error::ConvergenceFailure(_)
        | Error::QuadratureFailure(_)
        | Error::SingularGram(_)
        | Error::DenominatorSign(_)
        | Error::NegativeBlockNotDefinite => EXIT_CONVERGENCE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Talman,
    EstebanSere,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Config-file counterpart of the command-line flags (all optional).
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    pub dim: Option<u8>,
    pub nu: Option<f64>,
    pub table: Option<PathBuf>,
    pub nu_bound: Option<f64>,
    pub kappa_max: Option<f64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub n: Option<usize>,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub m: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub profiles: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonOpts {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spatial dimension, 2 or 3.
    #[arg(long)]
    pub dim: Option<u8>,
    /// Coulomb coupling constant.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Tabulated radial potential: text file with `r v` per line.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Coulomb envelope bound for a tabulated potential.
    #[arg(long)]
    pub nu_bound: Option<f64>,
    /// Channel truncation |kappa| <= kappa_max.
    #[arg(long)]
    pub kappa_max: Option<f64>,
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Radial mesh end; defaults scale with the bound-state decay length.
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Radial mesh points.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p_min: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    /// Momentum mesh points.
    #[arg(long)]
    pub m: Option<usize>,
    /// Bisection tolerance on eigenvalues.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seed for randomised property suites (fixed default, never time-based).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads (default: DIRAC_GAP_THREADS env var, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of random profiles for the property suites.
    #[arg(long)]
    pub profiles: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "dirac-gap", version, about = "Gap eigenvalues and inequality validators for 2D/3D Coulomb-Dirac operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the k-th gap eigenvalue (counted with multiplicity).
    Eigenvalues {
        #[command(flatten)]
        common: CommonOpts,
        /// 1-based eigenvalue index in the merged, multiplicity-counted list.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_enum, default_value_t = MethodChoice::Talman)]
        method: MethodChoice,
    },
    /// Verify the Hardy-type inequality on seeded random channel profiles.
    HardyCheck {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Verify the momentum-kernel chain and Kato bounds.
    KernelCheck {
        #[command(flatten)]
        common: CommonOpts,
        /// Largest integer order in the chain suite.
        #[arg(long, default_value_t = 5)]
        j_max: u32,
    },
    /// Verify boundedness of the operator-core q-value sequence.
    CoreCheck {
        #[command(flatten)]
        common: CommonOpts,
        /// Largest mollifier index k in the sequence.
        #[arg(long, default_value_t = 64)]
        k_max: u32,
    },
    /// Run the lower-bound certificate and subspace-relation suites.
    Certificate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Ground-state eigenvalue versus coupling, as a CSV table.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated coupling constants.
        #[arg(long, value_delimiter = ',')]
        nu_list: Vec<f64>,
        #[arg(long, value_enum, default_value_t = MethodChoice::Talman)]
        method: MethodChoice,
        /// Write 0 for runtime_ms so repeated runs are byte-identical.
        #[arg(long, default_value_t = false)]
        no_runtime: bool,
    },
}

/// Fully resolved run configuration (flags over config file over defaults).
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dim: Dimension,
    pub potential: PotentialSpec,
    pub kappa_max: f64,
    pub r_min: f64,
    pub r_max: Option<f64>,
    pub n: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub m: usize,
    pub tol: f64,
    pub seed: u64,
    pub format: OutputFormat,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub profiles: usize,
}

impl Resolved {
    pub fn from_opts(opts: &CommonOpts) -> crate::error::Result<Self> {
        let file: FileConfig = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {path:?}: {e}")))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {path:?}: {e}")))?
            }
            None => FileConfig::default(),
        };
        let dim_raw = opts
            .dim
            .or(file.dim)
            .ok_or_else(|| Error::Config("--dim is required (2 or 3)".into()))?;
        let dim = Dimension::from_n(dim_raw)?;
        let table = opts.table.clone().or(file.table);
        let potential = match table {
            Some(path) => {
                let nu_bound = opts
                    .nu_bound
                    .or(file.nu_bound)
                    .ok_or_else(|| Error::Config("--nu-bound is required with --table".into()))?;
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {path:?}: {e}")))?;
                let mut rs = Vec::new();
                let mut vs = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let mut parts = line.split([',', ' ', '\t']).filter(|s| !s.is_empty());
                    let r: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Config(format!("bad table line: {line}")))?;
                    let v: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Config(format!("bad table line: {line}")))?;
                    rs.push(r);
                    vs.push(v);
                }
                PotentialSpec::tabulated(rs, vs, nu_bound)?
            }
            None => {
                let nu = opts
                    .nu
                    .or(file.nu)
                    .ok_or_else(|| Error::Config("either --nu or --table is required".into()))?;
                PotentialSpec::coulomb(nu)
            }
        };
        let threads = opts.threads.or(file.threads).or_else(|| {
            std::env::var("DIRAC_GAP_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        });
        Ok(Resolved {
            dim,
            potential,
            kappa_max: opts.kappa_max.or(file.kappa_max).unwrap_or(match dim {
                Dimension::Two => 1.5,
                Dimension::Three => 2.0,
            }),
            r_min: opts.r_min.or(file.r_min).unwrap_or(1e-6),
            r_max: opts.r_max.or(file.r_max),
            n: opts.n.or(file.n).unwrap_or(1000),
            p_min: opts.p_min.or(file.p_min).unwrap_or(1e-4),
            p_max: opts.p_max.or(file.p_max).unwrap_or(1e4),
            m: opts.m.or(file.m).unwrap_or(240),
            tol: opts.tol.or(file.tol).unwrap_or(1e-8),
            seed: opts.seed.or(file.seed).unwrap_or(42),
            format: opts.format.unwrap_or(OutputFormat::Json),
            output: opts.output.clone(),
            threads,
            profiles: opts.profiles.or(file.profiles).unwrap_or(100),
        })
    }

    /// Radial mesh end: explicit value, or scaled to the slowest relevant
    /// bound-state decay exp(-sqrt(1-lambda^2) r) so truncation error stays
    /// below the discretisation error.
    pub fn radial_mesh(&self, k: usize) -> crate::error::Result<RadialMesh> {
        let r_max = self.r_max.unwrap_or_else(|| {
            let nu = self.potential.nu_bound();
            let decay = (4 - self.dim.n()) as f64 * nu;
            if decay < 1e-6 {
                50.0
            } else {
                (16.0 * (1.0 + 0.5 * (k.saturating_sub(1)) as f64) / decay).clamp(50.0, 4000.0)
            }
        });
        RadialMesh::log(self.r_min, r_max, self.n)
    }

    pub fn momentum_mesh(&self) -> crate::error::Result<MomentumMesh> {
        MomentumMesh::geometric(self.p_min, self.p_max, self.m)
    }

    fn write(&self, content: &str) -> crate::error::Result<()> {
        match &self.output {
            Some(path) => fs::write(path, content)
                .map_err(|e| Error::Config(format!("cannot write {path:?}: {e}"))),
            None => {
                print!("{content}");
                Ok(())
            }
        }
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool")
                .install(f),
            None => f(),
        }
    }
}

// ---------------------------------------------------------------------------
// eigenvalues

#[derive(Debug, Clone, Serialize)]
pub struct EigenvalueRecord {
    pub method: String,
    pub dim: u8,
    pub nu: f64,
    pub kappa: f64,
    pub k: usize,
    pub lambda: f64,
    pub residual: f64,
    pub analytic: Option<f64>,
    pub rel_error: Option<f64>,
    /// Whether the kappa truncation provably cannot change this value.
    pub certified: bool,
}

fn record_from(result: &GapSpectrumResult, k: usize, cfg: &Resolved) -> EigenvalueRecord {
    let entry = result.kth(k).expect("checked by the solver");
    let is_ground = (entry.lambda - result.merged[0].lambda).abs() <= 1e-12;
    let analytic = (cfg.potential.is_coulomb() && is_ground)
        .then(|| crate::coulomb_ground_energy(cfg.dim, cfg.potential.nu_bound()));
    EigenvalueRecord {
        method: result.method.to_string(),
        dim: cfg.dim.n(),
        nu: cfg.potential.nu_bound(),
        kappa: entry.kappa,
        k,
        lambda: entry.lambda,
        residual: entry.residual,
        analytic,
        rel_error: analytic.map(|a| (entry.lambda - a).abs() / a.abs().max(1e-300)),
        certified: result.certified_through >= k,
    }
}

fn render_records(records: &[EigenvalueRecord], format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(records).expect("serializable");
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut out =
                String::from("method,dim,nu,kappa,k,lambda,residual,analytic,rel_error,certified\n");
            for r in records {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.method,
                    r.dim,
                    r.nu,
                    r.kappa,
                    r.k,
                    r.lambda,
                    r.residual,
                    opt(r.analytic),
                    opt(r.rel_error),
                    r.certified
                ));
            }
            out
        }
    }
}

pub fn cmd_eigenvalues(cfg: &Resolved, k: usize, method: MethodChoice) -> crate::error::Result<String> {
    cfg.potential.validate_for(cfg.dim, false)?;
    let channels = enumerate_channels(cfg.dim, cfg.kappa_max);
    let mut records = Vec::new();
    cfg.in_pool(|| -> crate::error::Result<()> {
        if matches!(method, MethodChoice::Talman | MethodChoice::Both) {
            let mesh = cfg.radial_mesh(k)?;
            let result = talman_eigenvalue(k, &channels, &cfg.potential, &mesh, cfg.tol)?;
            records.push(record_from(&result, k, cfg));
        }
        if matches!(method, MethodChoice::EstebanSere | MethodChoice::Both) {
            let mesh = cfg.momentum_mesh()?;
            let result = esteban_sere_eigenvalue(k, &channels, &cfg.potential, &mesh, cfg.tol)?;
            records.push(record_from(&result, k, cfg));
        }
        Ok(())
    })?;
    Ok(render_records(&records, cfg.format))
}

// ---------------------------------------------------------------------------
// hardy-check

#[derive(Debug, Clone, Serialize)]
pub struct HardyOutput {
    pub dim: u8,
    pub nu: f64,
    pub lambda: f64,
    pub profiles: usize,
    pub min_j_over_scale: f64,
    pub saturation_residual: Option<f64>,
    pub pass: bool,
    pub j_over_scale: Vec<f64>,
}

pub fn cmd_hardy_check(cfg: &Resolved) -> crate::error::Result<(String, bool)> {
    let nu = cfg.potential.nu_bound();
    cfg.potential.validate_for(cfg.dim, true)?;
    if !cfg.potential.is_coulomb() {
        return Err(Error::Config(
            "hardy-check evaluates the Coulomb corollary; use --nu".into(),
        ));
    }
    let mesh = cfg.radial_mesh(1)?;
    let channels = enumerate_channels(cfg.dim, cfg.kappa_max);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles: Vec<(Channel, Vec<f64>)> = (0..cfg.profiles)
        .map(|t| {
            let ch = channels[t % channels.len()];
            let v: Vec<f64> = (0..mesh.n_hat()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (ch, v)
        })
        .collect();
    let report = cfg.in_pool(|| hardy::verify_corollary(cfg.dim, nu, &profiles, &mesh))?;

    // ground-profile saturation at lambda(nu): through the solver below the
    // critical coupling, through the fixed-lambda Schur minimiser at it
    let crit = cfg.dim.critical_coupling();
    let saturation = if nu > 1e-12 {
        let pot = PotentialSpec::coulomb(nu);
        let lambda_nu = crate::coulomb_ground_energy(cfg.dim, nu);
        let (channel, vec) = if nu < crit - 1e-12 {
            let result = talman_eigenvalue(1, &channels, &pot, &mesh, cfg.tol.min(1e-9))?;
            let ground = result.kth(1).expect("solver guarantees k entries");
            let ch = Channel::from_kappa(cfg.dim, ground.kappa)?;
            let (_, v) = schur_ground_vector(&ch, &pot, &mesh, ground.lambda, cfg.seed)?;
            (ch, v)
        } else {
            let ch = Channel::from_kappa(cfg.dim, crit)?;
            let (_, v) = schur_ground_vector(&ch, &pot, &mesh, lambda_nu, cfg.seed)?;
            (ch, v)
        };
        let j = hardy::hardy_j(&channel, &pot, &vec, lambda_nu, &mesh)?;
        let scale = h1_scale(&channel, &pot, &mesh, true, &vec).max(1e-300);
        Some(j.abs() / scale)
    } else {
        None
    };

    let pass = report.min_j_over_scale >= -1e-10;
    let out = HardyOutput {
        dim: cfg.dim.n(),
        nu,
        lambda: report.lambda,
        profiles: cfg.profiles,
        min_j_over_scale: report.min_j_over_scale,
        saturation_residual: saturation,
        pass,
        j_over_scale: report.j_over_scale,
    };
    let mut s = serde_json::to_string_pretty(&out).expect("serializable");
    s.push('\n');
    Ok((s, pass))
}

// ---------------------------------------------------------------------------
// kernel-check

#[derive(Debug, Clone, Serialize)]
pub struct InequalityResult {
    pub name: String,
    /// Largest relative violation observed (positive means violated).
    pub max_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelOutput {
    pub dim: u8,
    pub vectors: usize,
    pub inequalities: Vec<InequalityResult>,
    pub near_sharpness: Vec<InequalityResult>,
    pub pass: bool,
}

pub fn cmd_kernel_check(cfg: &Resolved, j_max: u32) -> crate::error::Result<(String, bool)> {
    let mesh = cfg.momentum_mesh()?;
    let pform = assemble_p_form(&mesh);
    let mut forms: HashMap<i64, FormMatrix> = HashMap::new();
    let mut order_list: Vec<f64> = Vec::new();
    for twice in -1..=(2 * j_max as i64 + 2) {
        order_list.push(twice as f64 / 2.0);
    }
    for &j in &order_list {
        forms.insert((2.0 * j) as i64, assemble_coulomb_form(j, &mesh)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vectors: Vec<Vec<f64>> = (0..cfg.profiles)
        .map(|_| (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut inequalities = Vec::new();
    // chain: q_{j+1/2} <= q_{j-1/2} and q_{j+1} <= q_j for integer j
    for kind in [1i64, 2] {
        let mut worst: f64 = f64::NEG_INFINITY;
        for j in 0..=j_max as i64 {
            let (lo_key, hi_key) = if kind == 1 {
                (2 * j - 1, 2 * j + 1)
            } else {
                (2 * j, 2 * j + 2)
            };
            let (flo, fhi) = (&forms[&lo_key], &forms[&hi_key]);
            for v in &vectors {
                let a = flo.quadratic(v);
                let b = fhi.quadratic(v);
                worst = worst.max((b - a) / a.abs().max(1e-300));
            }
        }
        inequalities.push(InequalityResult {
            name: if kind == 1 {
                "q_{j+1/2} <= q_{j-1/2}".into()
            } else {
                "q_{j+1} <= q_j".into()
            },
            max_violation: worst,
        });
    }
    // the four Kato bounds
    let kato_cases = [
        (Dimension::Three, 0.0, "q_0 <= c_3^{-1} p"),
        (Dimension::Three, 1.0, "q_1 <= c_3 p"),
        (Dimension::Two, -0.5, "q_{-1/2} <= 2 c_2^{-1} p"),
        (Dimension::Two, 0.5, "q_{1/2} <= 2 c_2 p"),
    ];
    let mut near_sharpness = Vec::new();
    for (dim, order, name) in kato_cases {
        let c = kato_bound_constant(dim, order);
        let form = &forms[&((2.0 * order) as i64)];
        let mut worst: f64 = f64::NEG_INFINITY;
        for v in &vectors {
            let q = form.quadratic(v);
            let p = pform.quadratic(v);
            worst = worst.max((q - c * p) / (c * p).abs().max(1e-300));
        }
        inequalities.push(InequalityResult {
            name: name.into(),
            max_violation: worst,
        });
        // concentrating family p^{-1/2} on growing windows
        let mut best = 0.0f64;
        for half_window in [2.0, 4.0, 6.0, 8.0] {
            let v: Vec<f64> = mesh
                .nodes
                .iter()
                .map(|&p| {
                    if p.ln().abs() <= half_window {
                        1.0 / p.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            best = best.max(form.quadratic(&v) / (c * pform.quadratic(&v)));
        }
        near_sharpness.push(InequalityResult {
            name: name.into(),
            max_violation: best,
        });
    }
    let pass = inequalities.iter().all(|i| i.max_violation <= 1e-8)
        && near_sharpness.iter().all(|i| i.max_violation >= 0.8);
    let out = KernelOutput {
        dim: cfg.dim.n(),
        vectors: cfg.profiles,
        inequalities,
        near_sharpness,
        pass,
    };
    let mut s = serde_json::to_string_pretty(&out).expect("serializable");
    s.push('\n');
    Ok((s, pass))
}

// ---------------------------------------------------------------------------
// core-check

#[derive(Debug, Clone, Serialize)]
pub struct CoreOutput {
    pub dim: u8,
    pub nu: f64,
    pub trivial_branch: bool,
    pub message: Option<String>,
    pub bound_gradient: Option<f64>,
    pub bound_mass: Option<f64>,
    pub bound_total: Option<f64>,
    pub values: Vec<f64>,
    pub sup_value: Option<f64>,
    pub pass: bool,
}

pub fn cmd_core_check(cfg: &Resolved, k_max: u32) -> crate::error::Result<(String, i32)> {
    let nu = cfg.potential.nu_bound();
    cfg.potential.validate_for(cfg.dim, true)?;
    let cutoffs = CutoffPair::standard();
    match analytic_core_bound(cfg.dim, nu, &cutoffs) {
        Err(Error::OutOfCoreBranch(msg)) => {
            let out = CoreOutput {
                dim: cfg.dim.n(),
                nu,
                trivial_branch: true,
                message: Some(msg),
                bound_gradient: None,
                bound_mass: None,
                bound_total: None,
                values: vec![],
                sup_value: None,
                pass: false,
            };
            let mut s = serde_json::to_string_pretty(&out).expect("serializable");
            s.push('\n');
            Ok((s, EXIT_CONFIG))
        }
        Err(e) => Err(e),
        Ok(bound) => {
            let values = cfg.in_pool(|| {
                (1..=k_max)
                    .into_par_iter()
                    .map(|k| core_sequence_value(cfg.dim, nu, k, &cutoffs))
                    .collect::<crate::error::Result<Vec<f64>>>()
            })?;
            let sup = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let pass = sup <= bound.total() + 1e-8;
            let out = CoreOutput {
                dim: cfg.dim.n(),
                nu,
                trivial_branch: false,
                message: None,
                bound_gradient: Some(bound.gradient_term),
                bound_mass: Some(bound.mass_term),
                bound_total: Some(bound.total()),
                values,
                sup_value: Some(sup),
                pass,
            };
            let mut s = serde_json::to_string_pretty(&out).expect("serializable");
            s.push('\n');
            Ok((s, if pass { EXIT_OK } else { EXIT_VIOLATION }))
        }
    }
}

// ---------------------------------------------------------------------------
// certificate

#[derive(Debug, Clone, Serialize)]
pub struct CertificateOutput {
    pub dim: u8,
    pub trials: usize,
    /// Minimum of certificate value / scale over the trials (must be >= -1e-8).
    pub worst_certificate: f64,
    /// Maximum relation residual (must be <= 1e-10).
    pub worst_relation: f64,
    /// Maximum intermediate ratio residual (must be <= 1e-12).
    pub worst_ratio: f64,
    pub pass: bool,
}

pub fn cmd_certificate(cfg: &Resolved) -> crate::error::Result<(String, bool)> {
    let mesh = cfg.momentum_mesh()?;
    let channels = enumerate_channels(cfg.dim, cfg.kappa_max.max(2.0));
    let mut forms: HashMap<i64, FormMatrix> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst_certificate = f64::INFINITY;
    let mut worst_relation = f64::NEG_INFINITY;
    let mut worst_ratio = f64::NEG_INFINITY;
    for _ in 0..cfg.profiles {
        let entries: Vec<(Channel, Vec<f64>)> = channels
            .iter()
            .map(|ch| {
                let v: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (*ch, v)
            })
            .collect();
        let profiles = ChannelProfiles {
            dim: cfg.dim,
            entries,
        };
        let cert = talman_certificate(&profiles, &mesh, &mut forms)?;
        worst_certificate = worst_certificate.min(cert.value / cert.scale.max(1e-300));
        let rel = es_relation_check(&profiles, &mesh)?;
        worst_relation = worst_relation.max(rel.relation_residual);
        worst_ratio = worst_ratio.max(rel.ratio_residual);
    }
    let pass = worst_certificate >= -1e-8 && worst_relation <= 1e-10 && worst_ratio <= 1e-12;
    let out = CertificateOutput {
        dim: cfg.dim.n(),
        trials: cfg.profiles,
        worst_certificate,
        worst_relation,
        worst_ratio,
        pass,
    };
    let mut s = serde_json::to_string_pretty(&out).expect("serializable");
    s.push('\n');
    Ok((s, pass))
}

// ---------------------------------------------------------------------------
// sweep

pub fn cmd_sweep(
    cfg: &Resolved,
    nu_list: &[f64],
    method: MethodChoice,
    no_runtime: bool,
) -> crate::error::Result<String> {
    let mut out = String::from("nu,lambda_num,lambda_analytic,rel_error,runtime_ms,status\n");
    let channels = enumerate_channels(cfg.dim, cfg.kappa_max);
    let crit = cfg.dim.critical_coupling();
    let rows: Vec<String> = cfg.in_pool(|| {
        nu_list
            .par_iter()
            .map(|&nu| {
                let start = std::time::Instant::now();
                let pot = PotentialSpec::coulomb(nu);
                let analytic = crate::coulomb_ground_energy(cfg.dim, nu);
                let sub = Resolved {
                    potential: pot.clone(),
                    ..cfg.clone()
                };
                let solve = || -> crate::error::Result<f64> {
                    pot.validate_for(cfg.dim, false)?;
                    let lambda = match method {
                        MethodChoice::Talman | MethodChoice::Both => {
                            let mesh = sub.radial_mesh(1)?;
                            talman_eigenvalue(1, &channels, &pot, &mesh, cfg.tol)?
                                .kth(1)
                                .expect("k=1 guaranteed")
                                .lambda
                        }
                        MethodChoice::EstebanSere => {
                            let mesh = sub.momentum_mesh()?;
                            esteban_sere_eigenvalue(1, &channels, &pot, &mesh, cfg.tol)?
                                .kth(1)
                                .expect("k=1 guaranteed")
                                .lambda
                        }
                    };
                    Ok(lambda)
                };
                let elapsed = |no_runtime: bool, start: std::time::Instant| {
                    if no_runtime {
                        0
                    } else {
                        start.elapsed().as_millis()
                    }
                };
                match solve() {
                    Ok(lambda) => {
                        let rel = (lambda - analytic).abs() / analytic.abs().max(1e-300);
                        let status = if nu > 0.95 * crit { "near-critical" } else { "ok" };
                        format!(
                            "{},{},{},{},{},{}\n",
                            nu,
                            lambda,
                            analytic,
                            rel,
                            elapsed(no_runtime, start),
                            status
                        )
                    }
                    Err(e) => {
                        let status = match exit_code_for(&e) {
                            EXIT_NO_EIGENVALUE => "no-eigenvalue",
                            EXIT_CONVERGENCE => "convergence-failure",
                            _ => "config-error",
                        };
                        format!(
                            "{},,{},,{},{}\n",
                            nu,
                            analytic,
                            elapsed(no_runtime, start),
                            status
                        )
                    }
                }
            })
            .collect()
    });
    for row in rows {
        out.push_str(&row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dispatch

pub fn run() -> i32 {
    let cli = Cli::parse();
    run_command(cli.command)
}

pub fn run_command(command: Command) -> i32 {
    let outcome = match command {
        Command::Eigenvalues { common, k, method } => Resolved::from_opts(&common)
            .and_then(|cfg| cmd_eigenvalues(&cfg, k, method).map(|s| (cfg, s, EXIT_OK))),
        Command::HardyCheck { common } => Resolved::from_opts(&common).and_then(|cfg| {
            cmd_hardy_check(&cfg).map(|(s, pass)| {
                let code = if pass { EXIT_OK } else { EXIT_VIOLATION };
                (cfg, s, code)
            })
        }),
        Command::KernelCheck { common, j_max } => Resolved::from_opts(&common).and_then(|cfg| {
            cmd_kernel_check(&cfg, j_max).map(|(s, pass)| {
                let code = if pass { EXIT_OK } else { EXIT_VIOLATION };
                (cfg, s, code)
            })
        }),
        Command::CoreCheck { common, k_max } => Resolved::from_opts(&common)
            .and_then(|cfg| cmd_core_check(&cfg, k_max).map(|(s, code)| (cfg, s, code))),
        Command::Certificate { common } => Resolved::from_opts(&common).and_then(|cfg| {
            cmd_certificate(&cfg).map(|(s, pass)| {
                let code = if pass { EXIT_OK } else { EXIT_VIOLATION };
                (cfg, s, code)
            })
        }),
        Command::Sweep {
            common,
            nu_list,
            method,
            no_runtime,
        } => Resolved::from_opts(&common)
            .and_then(|cfg| cmd_sweep(&cfg, &nu_list, method, no_runtime).map(|s| (cfg, s, EXIT_OK))),
    };
    match outcome {
        Ok((cfg, content, code)) => match cfg.write(&content) {
            Ok(()) => code,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
