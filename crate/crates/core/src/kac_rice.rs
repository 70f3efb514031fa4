//! Expected numbers of critical points from the Kac–Rice density
//!
//! `ρ_N(u) = ω_N ((p-1)(N-1)/2π)^{(N-1)/2} (2πN)^{-1/2} e^{-u²/2N}
//!          · E|det(M - γ_p u/√(N(N-1)) I)|`
//!
//! with `M` an `(N-1)`-dimensional GOE, and the centred intensity
//! `ν_N(x) = (1+ι_p)^{-1} ρ_N(x + m_N)`.

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre;
use crate::random_matrix::{expected_det_hermite, sample_tridiagonal_goe, MC_BLOCK};
use crate::rng::{self, TaskKind};
use crate::stats::{log_add_exp, LogMeanAccumulator, Summary};
use crate::theory::{self, ModelParams, TheoryConstants};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

/// Shifts beyond `2 + HERMITE_MARGIN` use the Hermite formula in
/// [`DensityMethod::HermiteExact`].
pub const HERMITE_MARGIN: f64 = 0.05;

/// Number of batches used for standard errors of integrated counts.
pub const BATCHES: usize = 16;

// Largest bank (in stored floats) kept in memory between evaluations.
const BANK_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    /// `E det` from the Hermite identity outside the bulk, Monte Carlo
    /// `E|det|` inside it.
    HermiteExact,
    /// Monte Carlo `E|det|` everywhere.
    GoeMonteCarlo,
}

/// `log ρ_N(u)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoValue {
    pub u: f64,
    pub log_value: f64,
    /// Absolute standard error of `ρ_N(u)`; zero on exact paths.
    pub std_error: f64,
    pub rel_std_error: f64,
}

/// An expected count with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub lo: f64,
    pub hi: f64,
}

/// One point of the centred intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityPoint {
    pub x: f64,
    pub u: f64,
    pub log_rho: f64,
    pub nu: f64,
    /// `ν_N(x) / e^{c_p x}`.
    pub nu_over_limit: f64,
    pub se: f64,
}

// Tridiagonal GOE samples laid out contiguously: diagonals and squared
// off-diagonals.
struct Bank {
    diag: Vec<f64>,
    off2: Vec<f64>,
}

pub struct KacRiceDensity {
    params: ModelParams,
    constants: TheoryConstants,
    method: DensityMethod,
    samples: usize,
    seed: u64,
    bank: OnceLock<Vec<Bank>>,
}

impl std::fmt::Debug for KacRiceDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KacRiceDensity")
            .field("params", &self.params)
            .field("method", &self.method)
            .field("samples", &self.samples)
            .field("seed", &self.seed)
            .finish()
    }
}

impl KacRiceDensity {
    /// Density with 100 000 Monte Carlo samples from seed 0.
    pub fn new(params: ModelParams, method: DensityMethod) -> Result<Self> {
        let constants = theory::solve_constants(params)?;
        Ok(KacRiceDensity {
            params: constants.params(),
            constants,
            method,
            samples: 100_000,
            seed: 0,
            bank: OnceLock::new(),
        })
    }

    pub fn with_monte_carlo(mut self, samples: usize, seed: u64) -> Result<Self> {
        if samples < 2 * BATCHES {
            return Err(invalid(format!("need at least {} Monte Carlo samples", 2 * BATCHES)));
        }
        self.samples = samples;
        self.seed = seed;
        self.bank = OnceLock::new();
        Ok(self)
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn constants(&self) -> &TheoryConstants {
        &self.constants
    }

    pub fn method(&self) -> DensityMethod {
        self.method
    }

    /// GOE shift `γ_p u / √(N(N-1))`.
    pub fn shift(&self, u: f64) -> f64 {
        let n = self.params.n as f64;
        self.constants.gamma_p * u / (n * (n - 1.0)).sqrt()
    }

    /// `log` of every factor of `ρ_N(u)` except the determinant.
    pub fn log_prefactor(&self, u: f64) -> Result<f64> {
        let n = self.params.n as f64;
        let p = self.params.p as f64;
        Ok(theory::log_omega_surface(self.params.n)?
            + 0.5 * (n - 1.0) * ((p - 1.0) * (n - 1.0) / (2.0 * PI)).ln()
            - 0.5 * (2.0 * PI * n).ln()
            - u * u / (2.0 * n))
    }

    fn dim(&self) -> usize {
        self.params.n as usize - 1
    }

    fn uses_hermite(&self, v: f64) -> bool {
        self.method == DensityMethod::HermiteExact && v.abs() > 2.0 + HERMITE_MARGIN
    }

    fn blocks(&self) -> usize {
        self.samples.div_ceil(MC_BLOCK)
    }

    fn generate_block(&self, b: usize) -> Bank {
        let n = self.dim();
        let count = MC_BLOCK.min(self.samples - b * MC_BLOCK);
        let mut rng = rng::stream(self.seed, TaskKind::Goe, b as u64);
        let mut diag = Vec::with_capacity(count * n);
        let mut off2 = Vec::with_capacity(count * (n - 1));
        for _ in 0..count {
            let t = sample_tridiagonal_goe(n, &mut rng);
            diag.extend_from_slice(&t.diag);
            off2.extend(t.offdiag.iter().map(|x| x * x));
        }
        Bank { diag, off2 }
    }

    fn cached_bank(&self) -> Option<&Vec<Bank>> {
        let n = self.dim();
        if self.samples * (2 * n - 1) > BANK_LIMIT {
            return None;
        }
        Some(self.bank.get_or_init(|| (0..self.blocks()).into_par_iter().map(|b| self.generate_block(b)).collect()))
    }

    // Per-batch accumulators of the antithetic pair mean
    // (|det(T - v)| + |det(T + v)|)/2 over the common sample bank.
    fn mc_batches(&self, v: f64) -> Vec<LogMeanAccumulator> {
        let n = self.dim();
        let run = |bank: &Bank| -> Vec<LogMeanAccumulator> {
            let mut acc = vec![LogMeanAccumulator::new(); BATCHES];
            let count = bank.diag.len() / n;
            for k in 0..count {
                let d = &bank.diag[k * n..(k + 1) * n];
                let o = &bank.off2[k * (n - 1)..(k + 1) * (n - 1)];
                let a = log_abs_continuant(d, o, v);
                let b = log_abs_continuant(d, o, -v);
                acc[k % BATCHES].push(log_add_exp(a, b) - LN_2);
            }
            acc
        };
        let per_block: Vec<Vec<LogMeanAccumulator>> = match self.cached_bank() {
            Some(bank) => bank.par_iter().map(run).collect(),
            None => (0..self.blocks()).into_par_iter().map(|b| run(&self.generate_block(b))).collect(),
        };
        let mut total = vec![LogMeanAccumulator::new(); BATCHES];
        for block in &per_block {
            for (t, a) in total.iter_mut().zip(block) {
                t.merge(a);
            }
        }
        total
    }

    /// `log E|det(M - vI)|` per batch (all equal on exact paths) and overall,
    /// with the relative standard error of the overall value.
    fn log_abs_det(&self, v: f64) -> Result<(Vec<f64>, f64, f64)> {
        let n = self.dim();
        if n == 1 {
            let m = folded_normal_mean(v).ln();
            return Ok((vec![m; BATCHES], m, 0.0));
        }
        if self.uses_hermite(v) {
            let m = expected_det_hermite(n, v)?.log_abs;
            return Ok((vec![m; BATCHES], m, 0.0));
        }
        let batches = self.mc_batches(v);
        let mut total = LogMeanAccumulator::new();
        for b in &batches {
            total.merge(b);
        }
        let overall = total.finish();
        let per_batch = batches.iter().map(|b| b.finish().log_mean).collect();
        Ok((per_batch, overall.log_mean, overall.rel_std_error))
    }

    pub fn rho_n(&self, u: f64) -> Result<RhoValue> {
        let (_, log_det, rel) = self.log_abs_det(self.shift(u))?;
        let log_value = self.log_prefactor(u)? + log_det;
        Ok(RhoValue { u, log_value, std_error: log_value.exp() * rel, rel_std_error: rel })
    }

    /// Leading-order asymptotic form of `log ρ_N(u)` near the bottom:
    /// `log(h̃(-γ_p E_0/2)/(2√π)) + c_p(u + E_0 N - E_0/2) - ½ log N`.
    pub fn log_rho_asymptotic(&self, u: f64) -> Result<f64> {
        let k = &self.constants;
        let n = self.params.n as f64;
        let h = theory::h_tilde(-0.5 * k.gamma_p * k.e_0)?;
        Ok((h / (2.0 * PI.sqrt())).ln() + k.c_p * (u + k.e_0 * n - 0.5 * k.e_0) - 0.5 * n.ln())
    }

    /// Expected number of critical points with value in `[lo, hi]`
    /// (infinite ends allowed). The integral runs over Gauss–Legendre panels
    /// in log form and is checked against a rule with twice the panels; its
    /// standard error comes from the spread of per-batch integrals.
    pub fn mean_crt(&self, lo: f64, hi: f64) -> Result<CountEstimate> {
        if !(lo < hi) {
            return Err(invalid(format!("empty interval [{lo}, {hi}]")));
        }
        let (a, b) = self.truncate(lo, hi)?;
        let coarse_panels = (((b - a) / self.panel_width()).ceil() as usize).max(4);
        let coarse = self.panel_integral(a, b, coarse_panels)?;
        let fine = self.panel_integral(a, b, 2 * coarse_panels)?;
        let diff = (fine.mean - coarse.mean).abs();
        let tol = 1e-7 * fine.mean.abs() + 1e-12;
        if diff > tol.max(0.05 * fine.std_error) {
            return Err(Error::Numerical(format!(
                "window integral not converged: panel refinement changed it by {diff:.3e} (tolerance {tol:.3e})"
            )));
        }
        Ok(CountEstimate { lo, hi, ..fine })
    }

    fn panel_width(&self) -> f64 {
        // ρ varies on the scale where the shift changes by O(1/N).
        0.25 * (self.params.n as f64).sqrt().min(4.0)
    }

    // Finite bounds where the integrand is at least 1e-18 of its peak.
    fn truncate(&self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        if lo.is_finite() && hi.is_finite() {
            return Ok((lo, hi));
        }
        let step = self.panel_width();
        let threshold = (1e-18f64).ln();
        // Peak of the integrand over the (clipped) range on a coarse scan.
        let limit = 40.0 * self.params.n as f64 + 40.0;
        let (scan_lo, scan_hi) = (lo.max(-limit), hi.min(limit));
        let grid: Vec<f64> = {
            let k = ((scan_hi - scan_lo) / step).ceil() as usize;
            (0..=k).map(|i| scan_lo + (scan_hi - scan_lo) * i as f64 / k as f64).collect()
        };
        let logs: Vec<f64> = grid.iter().map(|&u| self.rough_log_rho(u)).collect::<Result<_>>()?;
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let keep: Vec<usize> = (0..grid.len()).filter(|&i| logs[i] >= peak + threshold).collect();
        let first = keep.first().copied().unwrap_or(0).saturating_sub(1);
        let last = (keep.last().copied().unwrap_or(grid.len() - 1) + 1).min(grid.len() - 1);
        let a = if lo.is_finite() { lo } else { grid[first] };
        let b = if hi.is_finite() { hi } else { grid[last] };
        if (!lo.is_finite() && first == 0) || (!hi.is_finite() && last == grid.len() - 1) {
            return Err(Error::Numerical("integrand does not decay inside the scan range".into()));
        }
        Ok((a, b))
    }

    // Deterministic log ρ for locating the support: Hermite outside the
    // bulk, `log E|det| ≤` Jensen bound inside, which only affects where
    // the tails are cut.
    fn rough_log_rho(&self, u: f64) -> Result<f64> {
        let n = self.dim();
        let v = self.shift(u);
        let log_det = if n == 1 {
            folded_normal_mean(v).ln()
        } else if v.abs() > 2.0 {
            expected_det_hermite(n, v)?.log_abs
        } else {
            // E|det| ≤ sqrt(E det²) ≤ e^{n/2}·(1 + v²) as a cheap cap.
            0.5 * n as f64 + (1.0 + v * v).ln() * n as f64 / 2.0
        };
        Ok(self.log_prefactor(u)? + log_det)
    }

    fn panel_integral(&self, a: f64, b: f64, panels: usize) -> Result<CountEstimate> {
        let (nodes, weights) = gauss_legendre(8);
        let h = (b - a) / panels as f64;
        let points: Vec<(f64, f64)> = (0..panels)
            .flat_map(|k| {
                let mid = a + (k as f64 + 0.5) * h;
                nodes.iter().zip(&weights).map(move |(&x, &w)| (mid + 0.5 * h * x, 0.5 * h * w)).collect::<Vec<_>>()
            })
            .collect();
        // Per node: log prefactor + per-batch log E|det|.
        let evaluated: Vec<(f64, Vec<f64>)> = points
            .iter()
            .map(|&(u, _)| -> Result<(f64, Vec<f64>)> {
                let (batches, _, _) = self.log_abs_det(self.shift(u))?;
                Ok((self.log_prefactor(u)?, batches))
            })
            .collect::<Result<_>>()?;
        let mut batch_logs = vec![f64::NEG_INFINITY; BATCHES];
        for ((_, w), (pre, batches)) in points.iter().zip(&evaluated) {
            for (acc, lb) in batch_logs.iter_mut().zip(batches) {
                *acc = log_add_exp(*acc, pre + lb + w.ln());
            }
        }
        let values: Vec<f64> = batch_logs.iter().map(|l| l.exp()).collect();
        let s = Summary::of(&values);
        let exact = values.iter().all(|v| *v == values[0]);
        Ok(CountEstimate { mean: s.mean, std_error: if exact { 0.0 } else { s.std_error }, lo: a, hi: b })
    }

    /// `ν_N(x) = (1+ι_p)^{-1} ρ_N(x + m_N)` for `|x| ≤ √N`.
    pub fn intensity_nu(&self, x: f64) -> Result<IntensityPoint> {
        let n = self.params.n as f64;
        if x.abs() > n.sqrt() {
            return Err(Error::Domain(format!("|x| = {} exceeds √N = {}", x.abs(), n.sqrt())));
        }
        let u = x + self.constants.m_n;
        let rho = self.rho_n(u)?;
        let scale = 1.0 / (1.0 + self.constants.iota_p);
        let nu = scale * rho.log_value.exp();
        Ok(IntensityPoint {
            x,
            u,
            log_rho: rho.log_value,
            nu,
            nu_over_limit: nu / (self.constants.c_p * x).exp(),
            se: scale * rho.std_error,
        })
    }
}

// log|det(T - v)| for a tridiagonal matrix given squared off-diagonals.
fn log_abs_continuant(diag: &[f64], off2: &[f64], v: f64) -> f64 {
    let mut prev = 1.0;
    let mut cur = diag[0] - v;
    let mut log_scale = 0.0;
    for k in 1..diag.len() {
        let next = (diag[k] - v) * cur - off2[k - 1] * prev;
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if !(1e-100..=1e100).contains(&m) && m > 0.0 {
            cur /= m;
            prev /= m;
            log_scale += m.ln();
        }
    }
    log_scale + cur.abs().ln()
}

/// `E|X - v|` for `X ~ N(0, 2)`.
pub fn folded_normal_mean(v: f64) -> f64 {
    let s = 2f64.sqrt();
    let phi = Normal::new(0.0, 1.0).expect("standard normal").cdf(-v / s);
    s * (2.0 / PI).sqrt() * (-v * v / 4.0).exp() + v * (1.0 - 2.0 * phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density(p: u32, n: u32, method: DensityMethod) -> KacRiceDensity {
        KacRiceDensity::new(ModelParams::new(p, n).unwrap(), method).unwrap()
    }

    #[test]
    fn two_dimensional_count_matches_rice_formula() {
        // On the circle, H is a stationary trigonometric polynomial whose
        // derivative has 2√(λ₄/λ₂) = 2√(3p - 2) expected zeros.
        for p in [3u32, 4, 5] {
            for method in [DensityMethod::HermiteExact, DensityMethod::GoeMonteCarlo] {
                let c = density(p, 2, method).mean_crt(f64::NEG_INFINITY, f64::INFINITY).unwrap();
                let target = 2.0 * (3.0 * p as f64 - 2.0).sqrt();
                assert!((c.mean - target).abs() < 1e-6, "p={p}: {c:?}");
            }
        }
    }

    #[test]
    fn folded_normal_closed_form() {
        assert!((folded_normal_mean(0.0) - 2.0 / PI.sqrt()).abs() < 1e-14);
        assert!((folded_normal_mean(10.0) - 10.0).abs() < 1e-12);
        let d = density(3, 2, DensityMethod::GoeMonteCarlo);
        let u = 0.7;
        let direct = d.log_prefactor(u).unwrap() + folded_normal_mean(d.shift(u)).ln();
        assert!((d.rho_n(u).unwrap().log_value - direct).abs() < 1e-12);
    }

    #[test]
    fn prefactor_overflow_free() {
        let d = density(3, 400, DensityMethod::HermiteExact);
        assert!(d.log_prefactor(d.constants().m_n).unwrap().is_finite());
        assert!(d.rho_n(-700.0).unwrap().log_value.is_finite());
    }

    #[test]
    fn methods_agree_near_the_bottom() {
        // Where the hybrid uses E det, the two methods differ by exactly the
        // wrong-sign mass of det, which is measured independently here.
        for n in [10u32, 20] {
            let h = density(3, n, DensityMethod::HermiteExact).with_monte_carlo(20_000, 5).unwrap();
            let m = density(3, n, DensityMethod::GoeMonteCarlo).with_monte_carlo(20_000, 6).unwrap();
            let m_n = h.constants().m_n;
            for k in 0..10 {
                let u = m_n - 3.0 + 6.0 * k as f64 / 9.0;
                let a = h.rho_n(u).unwrap();
                let b = m.rho_n(u).unwrap();
                let (va, vb) = (a.log_value.exp(), b.log_value.exp());
                let (expected, extra_se) = if h.uses_hermite(h.shift(u)) {
                    let g = crate::random_matrix::absolute_value_gap(n as usize - 1, h.shift(u), 200_000, 7).unwrap();
                    (va * (1.0 + g.relative_gap), va * g.gap_se)
                } else {
                    (va, a.std_error)
                };
                let se = (extra_se.powi(2) + b.std_error.powi(2)).sqrt();
                assert!((expected - vb).abs() < 3.0 * se, "N={n} u={u}: {expected} vs {vb} (se {se})");
            }
        }
    }

    #[test]
    fn density_is_even_in_u() {
        let d = density(4, 6, DensityMethod::GoeMonteCarlo).with_monte_carlo(8192, 1).unwrap();
        for u in [0.3, 2.0, 7.5] {
            let a = d.rho_n(u).unwrap().log_value;
            let b = d.rho_n(-u).unwrap().log_value;
            assert!((a - b).abs() < 1e-12);
        }
        let left = d.mean_crt(-8.0, -2.0).unwrap();
        let right = d.mean_crt(2.0, 8.0).unwrap();
        assert!((left.mean - right.mean).abs() < 1e-9 * left.mean);
    }

    #[test]
    fn shrinking_window_recovers_density() {
        let d = density(3, 12, DensityMethod::HermiteExact).with_monte_carlo(20_000, 2).unwrap();
        let m_n = d.constants().m_n;
        let eps = 1e-3;
        let w = d.mean_crt(m_n, m_n + eps).unwrap();
        let rho = d.rho_n(m_n).unwrap().log_value.exp();
        assert!((w.mean / (eps * rho) - 1.0).abs() < 0.01);
    }

    #[test]
    fn window_mass_equals_integrated_intensity() {
        let d = density(3, 12, DensityMethod::GoeMonteCarlo).with_monte_carlo(8192, 3).unwrap();
        let m_n = d.constants().m_n;
        let l = 2.0;
        let w = d.mean_crt(m_n - l, m_n + l).unwrap();
        // Same Gauss–Legendre rule applied to ν directly.
        let (x, wt) = gauss_legendre(8);
        let mut total = 0.0;
        for panel in 0..16 {
            let mid = -l + (panel as f64 + 0.5) * 0.25;
            for (xi, wi) in x.iter().zip(&wt) {
                total += 0.125 * wi * d.intensity_nu(mid + 0.125 * xi).unwrap().nu;
            }
        }
        assert!((total - w.mean).abs() < 1e-6 * w.mean, "{total} vs {}", w.mean);
        assert!(w.std_error > 0.0);
    }

    // log ρ_N(u) with E det from the Hermite identity, valid far into the
    // large-N regime where the bottom sits outside the bulk.
    fn hermite_log_rho(d: &KacRiceDensity, u: f64) -> f64 {
        let n = d.params().n as usize - 1;
        d.log_prefactor(u).unwrap() + expected_det_hermite(n, d.shift(u)).unwrap().log_abs
    }

    #[test]
    fn intensity_normalisation_at_large_n() {
        for (p, n) in [(3u32, 20_000u32), (4, 20_000)] {
            let d = density(p, n, DensityMethod::HermiteExact);
            let k = *d.constants();
            for x in [-1.0, 0.0, 1.0] {
                let nu = hermite_log_rho(&d, x + k.m_n).exp() / (1.0 + k.iota_p);
                let ratio = nu / (k.c_p * x).exp();
                assert!((ratio - 1.0).abs() < 0.02, "p={p} x={x}: {ratio}");
            }
        }
    }

    #[test]
    fn printed_centering_misses_the_limit() {
        let d = density(3, 20_000, DensityMethod::HermiteExact);
        let k = *d.constants();
        let printed = theory::k_0_as_printed(3).unwrap();
        let m_printed = k.m_n + k.k_0 - printed;
        let nu = hermite_log_rho(&d, m_printed).exp();
        assert!((nu - 0.2756).abs() < 0.005, "{nu}");
    }

    #[test]
    fn asymptotic_form_ratio_tends_to_one() {
        let mut last = f64::INFINITY;
        for n in [1000u32, 4000, 16_000] {
            let d = density(3, n, DensityMethod::HermiteExact);
            let u = d.constants().m_n;
            let gap = (hermite_log_rho(&d, u) - d.log_rho_asymptotic(u).unwrap()).abs();
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 0.03);
    }

    #[test]
    fn intensity_domain() {
        let d = density(3, 16, DensityMethod::HermiteExact);
        assert!(matches!(d.intensity_nu(5.0), Err(Error::Domain(_))));
        assert!(d.mean_crt(1.0, 1.0).is_err());
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let d = density(3, 30, DensityMethod::GoeMonteCarlo).with_monte_carlo(20_000, 9).unwrap();
                (d.rho_n(-45.0).unwrap(), d.mean_crt(-50.0, -45.0).unwrap())
            })
        };
        assert_eq!(run(1), run(3));
    }
}
