//! One-dimensional quadrature: adaptive Simpson (plain and log-domain),
//! Gauss-Legendre and Gauss-Hermite rules, and integrals against the
//! semicircle law.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

const MAX_DEPTH: u32 = 50;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`. Fails if some panel cannot be resolved within the depth cap.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("non-finite integration limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    // Seed with 16 panels so that narrow features are not missed by the
    // first coarse estimate.
    const SEED: usize = 16;
    let h = (b - a) / SEED as f64;
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..SEED {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == SEED { b } else { lo + h };
        let fa = f(lo);
        let fb = f(hi);
        let fm = f(0.5 * (lo + hi));
        let panel = Panel { a: lo, b: hi, fa, fm, fb, whole: simpson(lo, hi, fa, fm, fb) };
        let (value, err) = refine(&f, panel, tol / SEED as f64, MAX_DEPTH);
        total += value;
        worst = worst.max(err);
    }
    if !total.is_finite() {
        return Err(Error::Numerical("quadrature produced a non-finite value".into()));
    }
    if worst.is_finite() && worst > tol {
        return Err(Error::Numerical(format!(
            "adaptive Simpson did not converge: achieved {worst:.3e}, requested {tol:.3e}"
        )));
    }
    Ok(total)
}

// Returns (estimate, unresolved error). The error is zero when every leaf met
// its tolerance.
fn refine<F: Fn(f64) -> f64>(f: &F, p: Panel, tol: f64, depth: u32) -> (f64, f64) {
    let m = 0.5 * (p.a + p.b);
    let lm = f(0.5 * (p.a + m));
    let rm = f(0.5 * (m + p.b));
    let left = simpson(p.a, m, p.fa, lm, p.fm);
    let right = simpson(m, p.b, p.fm, rm, p.fb);
    let delta = left + right - p.whole;
    if delta.abs() <= 15.0 * tol {
        return (left + right + delta / 15.0, 0.0);
    }
    if depth == 0 {
        return (left + right + delta / 15.0, delta.abs() / 15.0);
    }
    let (lv, le) = refine(f, Panel { a: p.a, b: m, fa: p.fa, fm: lm, fb: p.fm, whole: left }, 0.5 * tol, depth - 1);
    let (rv, re) = refine(f, Panel { a: m, b: p.b, fa: p.fm, fm: rm, fb: p.fb, whole: right }, 0.5 * tol, depth - 1);
    (lv + rv, le + re)
}

/// Integrates `exp(log_f)` over `[a, b]` and returns the logarithm of the
/// integral. The integrand is rescaled by its peak on a coarse grid, so the
/// tolerance `rel_tol` is relative to the peak value times the interval
/// length.
pub fn log_adaptive_simpson<F: Fn(f64) -> f64>(log_f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const GRID: usize = 256;
    let mut peak = f64::NEG_INFINITY;
    for k in 0..=GRID {
        let x = a + (b - a) * k as f64 / GRID as f64;
        peak = peak.max(log_f(x));
    }
    if peak == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !peak.is_finite() {
        return Err(Error::Numerical("log-integrand is not finite".into()));
    }
    let value = adaptive_simpson(|x| (log_f(x) - peak).exp(), a, b, rel_tol * (b - a).abs().max(1.0))?;
    if value <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(peak + value.ln())
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Hermite rule for the weight `e^{-x^2}` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mu0 = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], mu0 * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `∫ g dμ*` for the semicircle law, through the substitution `λ = 2cos θ`
/// which turns the integrand into a smooth function on `[0, π]`.
pub fn semicircle_expectation<F: Fn(f64) -> f64>(g: F, tol: f64) -> Result<f64> {
    let pi = std::f64::consts::PI;
    adaptive_simpson(|t| {
        let s = t.sin();
        g(2.0 * t.cos()) * 2.0 / pi * s * s
    }, 0.0, pi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
        let g = adaptive_simpson(|x| (-x * x).exp(), -10.0, 10.0, 1e-13).unwrap();
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn log_domain_matches_plain_for_huge_integrands() {
        // ∫_0^1 e^{800 + x} dx = e^{800}(e - 1)
        let l = log_adaptive_simpson(|x| 800.0 + x, 0.0, 1.0, 1e-13).unwrap();
        let expected = 800.0 + (std::f64::consts::E - 1.0).ln();
        assert!((l - expected).abs() < 1e-11);
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-13);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let pi = std::f64::consts::PI;
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m0 - pi.sqrt()).abs() < 1e-12);
        assert!((m2 - pi.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn semicircle_second_moment_is_one() {
        let m2 = semicircle_expectation(|x| x * x, 1e-13).unwrap();
        assert!((m2 - 1.0).abs() < 1e-12);
    }
}
