//! Quadrature rules used by the kernel and radial assemblies.
//!
//! Gauss-Legendre nodes come from Newton iteration on the three-term
//! recurrence; symmetric Gauss-Jacobi rules (weight (1-t^2)^alpha) from the
//! Golub-Welsch tridiagonal; Gauss-Chebyshev is closed form. Rules are cached
//! process-wide since node computation dominates small integrals.

use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// A quadrature rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Integrate `f` over [a, b] after the affine map from [-1, 1].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * t);
        }
        acc * half
    }
}

fn legendre_value_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let p_next = ((2 * k + 1) as f64 * x * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

fn gauss_legendre_rule(n: usize) -> Rule {
    assert!(n >= 1);
    if n == 1 {
        return Rule {
            nodes: vec![0.0],
            weights: vec![2.0],
        };
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_value_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_value_and_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    Rule { nodes, weights }
}

/// mu_0 = int_{-1}^{1} (1-t^2)^alpha dt for alpha in half-integer steps >= -1/2,
/// via the recurrence mu_0(alpha) = mu_0(alpha-1) * 2 alpha / (2 alpha + 1).
fn jacobi_moment(alpha: f64) -> f64 {
    let (mut mu, mut a) = if (alpha - alpha.round()).abs() < 1e-12 {
        (2.0, 0.0)
    } else {
        (std::f64::consts::PI, -0.5)
    };
    while a < alpha - 0.25 {
        a += 1.0;
        mu *= 2.0 * a / (2.0 * a + 1.0);
    }
    mu
}

/// Symmetric Gauss-Jacobi rule for the weight (1-t^2)^alpha, alpha > -1.
fn gauss_jacobi_rule(alpha: f64, n: usize) -> Rule {
    assert!(n >= 1);
    // Golub-Welsch: zero diagonal, off-diagonals sqrt(beta_k).
    let beta = |k: usize| -> f64 {
        let kf = k as f64;
        if k == 1 {
            1.0 / (2.0 * alpha + 3.0)
        } else {
            kf * (kf + 2.0 * alpha)
                / ((2.0 * kf + 2.0 * alpha + 1.0) * (2.0 * kf + 2.0 * alpha - 1.0))
        }
    };
    let mut t = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = beta(k).sqrt();
        t[(k - 1, k)] = b;
        t[(k, k - 1)] = b;
    }
    let eig = t.symmetric_eigen();
    let mu0 = jacobi_moment(alpha);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, mu0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Chebyshev rule (weight (1-t^2)^{-1/2}), closed form.
fn gauss_chebyshev_rule(n: usize) -> Rule {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        nodes.push((std::f64::consts::PI * (2.0 * i as f64 - 1.0) / (2.0 * n as f64)).cos());
        weights.push(std::f64::consts::PI / n as f64);
    }
    nodes.reverse();
    Rule { nodes, weights }
}

static LEGENDRE_CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
static JACOBI_CACHE: OnceLock<Mutex<HashMap<(i64, usize), Arc<Rule>>>> = OnceLock::new();

pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    let cache = LEGENDRE_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| Arc::new(gauss_legendre_rule(n)))
        .clone()
}

/// Cached Gauss-Jacobi rule for weight (1-t^2)^alpha with 2*alpha integer.
pub fn gauss_jacobi(alpha: f64, n: usize) -> Arc<Rule> {
    let key = ((2.0 * alpha).round() as i64, n);
    if key.0 == -1 {
        // Chebyshev weight: no eigen decomposition needed.
        let cache = JACOBI_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        return map
            .entry(key)
            .or_insert_with(|| Arc::new(gauss_chebyshev_rule(n)))
            .clone();
    }
    let cache = JACOBI_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(key)
        .or_insert_with(|| Arc::new(gauss_jacobi_rule(alpha, n)))
        .clone()
}

/// Adaptive panel integration: Gauss-Legendre 15 with bisection until the
/// two-half refinement agrees with the single-panel estimate.
pub fn adaptive<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let rule = gauss_legendre(15);
    fn recurse<F: Fn(f64) -> f64 + Copy>(
        rule: &Rule,
        f: F,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = rule.integrate(a, mid, f);
        let right = rule.integrate(mid, b, f);
        let refined = left + right;
        if depth >= 48 || (refined - whole).abs() <= tol * (1.0 + refined.abs()) {
            return refined;
        }
        recurse(rule, f, a, mid, left, 0.5 * tol, depth + 1)
            + recurse(rule, f, mid, b, right, 0.5 * tol, depth + 1)
    }
    let whole = rule.integrate(a, b, f);
    recurse(&rule, f, a, b, whole, tol, 0)
}

/// Integrate a function with an integrable endpoint singularity at `a`:
/// geometric panels shrinking toward `a` (handles log and weak algebraic
/// singularities), smooth Gauss panels elsewhere.
pub fn integrate_toward_singularity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    levels: u32,
    points: usize,
) -> f64 {
    let rule = gauss_legendre(points);
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    // Panels [a + len/2^{m+1}, a + len/2^m], m = 0..levels, plus the residual sliver.
    let mut hi = b;
    for _ in 0..levels {
        let lo = a + 0.5 * (hi - a);
        acc += rule.integrate(lo, hi, |x| f(x));
        hi = lo;
    }
    acc
}
