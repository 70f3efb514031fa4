//! GOE sampling, spectra, orthonormal Hermite polynomials and expected
//! characteristic polynomials of GOE matrices.
//!
//! The GOE here has off-diagonal variance `1/n` and diagonal variance
//! `2/n`, so its spectrum fills `[-2, 2]`.

use crate::error::{invalid, Error, Result};
use crate::rng::{self, StreamRng, TaskKind};
use crate::stats::{LogMeanAccumulator, Summary};
use crate::theory;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// Samples per parallel block in Monte Carlo estimators. Each block has its
/// own stream, so results do not depend on the number of threads.
pub const MC_BLOCK: usize = 4096;

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignedLog {
    /// -1, 0 or 1.
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub fn zero() -> Self {
        SignedLog { sign: 0, log_abs: f64::NEG_INFINITY }
    }

    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            Self::zero()
        } else {
            SignedLog { sign: if x > 0.0 { 1 } else { -1 }, log_abs: x.abs().ln() }
        }
    }

    pub fn value(&self) -> f64 {
        self.sign as f64 * self.log_abs.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoeMatrix {
    pub entries: DMatrix<f64>,
}

impl GoeMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// Dense GOE sample: independent Gaussians on and above the diagonal.
pub fn sample_goe(n: usize, rng: &mut StreamRng) -> GoeMatrix {
    assert!(n >= 1, "GOE dimension must be positive");
    let off = (1.0 / n as f64).sqrt();
    let diag = (2.0 / n as f64).sqrt();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag * rng.sample::<f64, _>(StandardNormal);
        for j in i + 1..n {
            let x = off * rng.sample::<f64, _>(StandardNormal);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    GoeMatrix { entries: m }
}

/// Symmetric tridiagonal matrix with the GOE spectral law: diagonal
/// `N(0, 2/n)`, off-diagonals `χ_{n-k}/√n` for `k = 1..n-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalGoe {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

pub fn sample_tridiagonal_goe(n: usize, rng: &mut StreamRng) -> TridiagonalGoe {
    assert!(n >= 1, "GOE dimension must be positive");
    let s = (1.0 / n as f64).sqrt();
    let diag = (0..n).map(|_| s * 2f64.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
    let offdiag = (1..n)
        .map(|k| s * ChiSquared::new((n - k) as f64).expect("positive degrees of freedom").sample(rng).sqrt())
        .collect();
    TridiagonalGoe { diag, offdiag }
}

impl TridiagonalGoe {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `det(T - vI)` by the three-term continuant, rescaled to stay finite.
    pub fn shifted_det(&self, v: f64) -> SignedLog {
        let mut prev = 1.0;
        let mut cur = self.diag[0] - v;
        let mut log_scale = 0.0;
        for k in 1..self.dim() {
            let next = (self.diag[k] - v) * cur - self.offdiag[k - 1].powi(2) * prev;
            prev = cur;
            cur = next;
            let m = cur.abs().max(prev.abs());
            if m > 1e100 || (m < 1e-100 && m > 0.0) {
                cur /= m;
                prev /= m;
                log_scale += m.ln();
            }
        }
        if cur == 0.0 {
            return SignedLog::zero();
        }
        SignedLog { sign: if cur > 0.0 { 1 } else { -1 }, log_abs: log_scale + cur.abs().ln() }
    }

    /// `(1/n) tr (T + shift·I)^{-1}` from the continuant and its derivative
    /// in `shift`. Fails unless `T + shift·I` is positive definite.
    pub fn stieltjes(&self, shift: f64) -> Result<f64> {
        let (mut g0, mut g1) = (1.0, self.diag[0] + shift);
        let (mut d0, mut d1) = (0.0, 1.0);
        if g1 <= 0.0 {
            return Err(Error::Domain(format!("spectrum reaches the pole at -{shift}")));
        }
        for k in 1..self.dim() {
            let b2 = self.offdiag[k - 1].powi(2);
            let a = self.diag[k] + shift;
            let g2 = a * g1 - b2 * g0;
            let d2 = g1 + a * d1 - b2 * d0;
            if g2 <= 0.0 {
                return Err(Error::Domain(format!("spectrum reaches the pole at -{shift}")));
            }
            // Rescale by the newest minor; only ratios matter.
            g0 = g1 / g2;
            d0 = d1 / g2;
            g1 = 1.0;
            d1 = d2 / g2;
        }
        Ok(d1 / g1 / self.dim() as f64)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for (k, b) in self.offdiag.iter().enumerate() {
            m[(k, k + 1)] = *b;
            m[(k + 1, k)] = *b;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }
}

/// Sorted eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSample {
    pub eigenvalues: Vec<f64>,
}

impl SpectralSample {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Π (λ_i - v)` in sign/log form.
    pub fn shifted_det(&self, v: f64) -> SignedLog {
        let mut sign = 1i8;
        let mut log_abs = 0.0;
        for &l in &self.eigenvalues {
            let d = l - v;
            if d == 0.0 {
                return SignedLog::zero();
            }
            if d < 0.0 {
                sign = -sign;
            }
            log_abs += d.abs().ln();
        }
        SignedLog { sign, log_abs }
    }
}

/// Eigen-decomposition of a symmetric matrix with ascending eigenvalues and
/// matching eigenvector columns. Fails after `30·n` sweeps.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let eig = m
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 30 * n)
        .ok_or_else(|| Error::Numerical(format!("eigen-solver did not converge in {} iterations", 30 * n)))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

pub fn eigenvalues(m: &GoeMatrix) -> Result<SpectralSample> {
    Ok(SpectralSample { eigenvalues: symmetric_eigen(&m.entries)?.0 })
}

pub fn tridiagonal_eigenvalues(t: &TridiagonalGoe) -> Result<SpectralSample> {
    Ok(SpectralSample { eigenvalues: symmetric_eigen(&t.to_dense())?.0 })
}

/// Orthonormal Hermite polynomial `p_n(x)` for the weight `e^{-x²}`.
pub fn hermite_orthonormal(n: usize, x: f64) -> SignedLog {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut log_scale = 0.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if m > 1e100 || (m < 1e-100 && m > 0.0) {
            cur /= m;
            prev /= m;
            log_scale += m.ln();
        }
    }
    match SignedLog::from_value(cur) {
        s if s.sign == 0 => s,
        s => SignedLog { sign: s.sign, log_abs: s.log_abs + log_scale },
    }
}

/// `E det(M - vI)` for an `n`-dimensional GOE, from
/// `n^{n/2} E det = (-1)^n π^{1/4} √(n!) p_n(√(n/2) v)`.
pub fn expected_det_hermite(n: usize, v: f64) -> Result<SignedLog> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let nf = n as f64;
    let h = hermite_orthonormal(n, (nf / 2.0).sqrt() * v);
    if h.sign == 0 {
        return Ok(h);
    }
    let log_fact = statrs::function::gamma::ln_gamma(nf + 1.0);
    let log_abs = 0.25 * std::f64::consts::PI.ln() + 0.5 * log_fact + h.log_abs - 0.5 * nf * nf.ln();
    let sign = if n % 2 == 0 { h.sign } else { -h.sign };
    Ok(SignedLog { sign, log_abs })
}

/// Monte Carlo estimate of `E |det(M - vI)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsDetEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub log_estimate: f64,
    pub rel_std_error: f64,
    pub samples: usize,
}

fn mc_blocks<T: Send, F>(samples: usize, seed: u64, f: F) -> Vec<T>
where
    F: Fn(&mut StreamRng, usize) -> T + Sync + Send,
{
    let blocks = samples.div_ceil(MC_BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, TaskKind::Goe, b as u64);
            let count = MC_BLOCK.min(samples - b * MC_BLOCK);
            f(&mut rng, count)
        })
        .collect()
}

/// Monte Carlo `E |det(M - vI)|` with the log-domain streaming mean. The
/// determinant depends only on the spectrum, so the tridiagonal model is
/// used. The standard error is the jackknife error of the sample mean.
pub fn expected_abs_det_mc(n: usize, v: f64, samples: usize, seed: u64) -> Result<AbsDetEstimate> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if samples < 1000 {
        return Err(invalid("need at least 1000 samples"));
    }
    let accs = mc_blocks(samples, seed, |rng, count| {
        let mut acc = LogMeanAccumulator::new();
        for _ in 0..count {
            acc.push(sample_tridiagonal_goe(n, rng).shifted_det(v).log_abs);
        }
        acc
    });
    let mut total = LogMeanAccumulator::new();
    for a in &accs {
        total.merge(a);
    }
    let m = total.finish();
    Ok(AbsDetEstimate {
        estimate: m.estimate(),
        std_error: m.std_error(),
        log_estimate: m.log_mean,
        rel_std_error: m.rel_std_error,
        samples,
    })
}

/// Monte Carlo `E det(M - vI)` for several shifts over dense GOE draws,
/// reusing each spectrum for every shift.
pub fn expected_det_mc(n: usize, shifts: &[f64], samples: usize, seed: u64) -> Result<Vec<Summary>> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let blocks = mc_blocks(samples, seed, |rng, count| -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(count); shifts.len()];
        for _ in 0..count {
            let spec = eigenvalues(&sample_goe(n, rng))?;
            for (k, &v) in shifts.iter().enumerate() {
                out[k].push(spec.eigenvalues.iter().map(|l| l - v).product());
            }
        }
        Ok(out)
    });
    let mut columns = vec![Vec::with_capacity(samples); shifts.len()];
    for b in blocks {
        for (k, col) in b?.into_iter().enumerate() {
            columns[k].extend(col);
        }
    }
    Ok(columns.iter().map(|c| Summary::of(c)).collect())
}

/// Comparison of `E|det|` with `E det` outside the bulk.
#[derive(Debug, Clone, Serialize)]
pub struct AbsoluteValueGap {
    pub n: usize,
    pub v: f64,
    pub e_det_hermite: f64,
    pub e_absdet_mc: f64,
    pub mc_se: f64,
    /// `(E|det| - |E det|)/|E det|`, i.e. twice the mass of `|det|` on the
    /// event that `det` has the wrong sign, relative to `|E det|`.
    pub relative_gap: f64,
    pub gap_se: f64,
}

impl TridiagonalGoe {
    /// Number of eigenvalues below `x` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let mut q = self.diag[0] - x;
        let mut count = usize::from(q < 0.0);
        for k in 1..self.dim() {
            let prev = if q == 0.0 { f64::EPSILON } else { q };
            q = self.diag[k] - x - self.offdiag[k - 1].powi(2) / prev;
            count += usize::from(q < 0.0);
        }
        count
    }
}

/// `E|det(M - vI)|` against `E det(M - vI)` for an `n × n` GOE.
///
/// Inside the bulk the gap is the sample mean of `|det| - s·det` (`s` the
/// sign of `E det`). For `|v| > 2` a wrong sign needs an eigenvalue beyond
/// `v`, which direct sampling almost never produces once `n` is moderate.
/// There the gap is computed from the one-eigenvalue decomposition of the
/// GOE law: with one eigenvalue pinned at `λ > v` the others form an
/// `(n-1)`-dimensional GOE of variance `2/n` weighted by `∏|λ - μ_j|`, so
///
/// `E[|det|; wrong sign] = C_n ∫_v^∞ e^{-nλ²/4} (λ - v) E'[∏|λ-μ_j||v-μ_j| w(μ)] dλ`
///
/// with `w = 1{#(μ > v) even}/(1 + #(μ > v))` and
/// `C_n = n (n/2)^{n/2} Γ(3/2) / (√(2π) Γ(1 + n/2))` from Mehta's integral.
/// The inner expectation is sampled, the `λ` integral done by Gauss–Legendre.
pub fn absolute_value_gap(n: usize, v: f64, samples: usize, seed: u64) -> Result<AbsoluteValueGap> {
    let exact = expected_det_hermite(n, v)?;
    if exact.sign == 0 {
        return Err(Error::Domain("E det vanishes at this shift".into()));
    }
    if samples < 2 {
        return Err(invalid("need at least two samples"));
    }
    let s = exact.sign as f64;
    // Both the absolute mean and the gap are scaled by |E det| before
    // averaging so that large n stays in range.
    let blocks = mc_blocks(samples, seed, |rng, count| {
        let mut abs = Vec::with_capacity(count);
        let mut gap = Vec::with_capacity(count);
        for _ in 0..count {
            let d = sample_tridiagonal_goe(n, rng).shifted_det(v);
            let r = (d.log_abs - exact.log_abs).exp();
            abs.push(r);
            gap.push(if d.sign as f64 == s { 0.0 } else { 2.0 * r });
        }
        (abs, gap)
    });
    let (mut abs, mut gap) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for (a, g) in blocks {
        abs.extend(a);
        gap.extend(g);
    }
    let a = Summary::of(&abs);
    let g = if v.abs() > 2.0 && n >= 2 {
        Summary::of(&wrong_sign_mass(n, v.abs(), samples, rng::child_seed(seed, 1), exact.log_abs))
    } else {
        Summary::of(&gap)
    };
    let scale = exact.log_abs.exp();
    Ok(AbsoluteValueGap {
        n,
        v,
        e_det_hermite: exact.value(),
        e_absdet_mc: a.mean * scale,
        mc_se: a.std_error * scale,
        relative_gap: g.mean,
        gap_se: g.std_error,
    })
}

// Per-sample estimates of 2 E[|det(M - v)|; odd number of eigenvalues above v]
// / e^{log_scale} for v > 2, from the one-eigenvalue decomposition above.
fn wrong_sign_mass(n: usize, v: f64, samples: usize, seed: u64, log_scale: f64) -> Vec<f64> {
    let nf = n as f64;
    let log_c = nf.ln() + 0.5 * nf * (0.5 * nf).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        + statrs::function::gamma::ln_gamma(1.5)
        - statrs::function::gamma::ln_gamma(1.0 + 0.5 * nf);
    // The integrand decays like exp(-n√(v²-4) t/2) in t = λ - v.
    let width = (80.0 / (nf * (v * v - 4.0).sqrt())).min(10.0);
    const PANELS: usize = 16;
    let (x, w) = crate::quadrature::gauss_legendre(8);
    let h = width / PANELS as f64;
    let nodes: Vec<(f64, f64)> = (0..PANELS)
        .flat_map(|p| {
            let mid = v + h * (p as f64 + 0.5);
            x.iter().zip(&w).map(move |(xi, wi)| (mid + 0.5 * h * xi, 0.5 * h * wi)).collect::<Vec<_>>()
        })
        .collect();
    // μ = c·(eigenvalues of a standard (n-1)-dimensional model).
    let c = ((nf - 1.0) / nf).sqrt();
    let log_c_pow = (nf - 1.0) * c.ln();
    let blocks = mc_blocks(samples, seed, |rng, count| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let t = sample_tridiagonal_goe(n - 1, rng);
            let above = (n - 1) - t.count_below(v / c);
            if above % 2 == 1 {
                out.push(0.0);
                continue;
            }
            let log_v = t.shifted_det(v / c).log_abs + log_c_pow;
            let mut total = f64::NEG_INFINITY;
            for &(lam, wt) in &nodes {
                let l = -0.25 * nf * lam * lam + (lam - v).ln() + t.shifted_det(lam / c).log_abs + log_c_pow + wt.ln();
                total = crate::stats::log_add_exp(total, l);
            }
            out.push(2.0 * (log_c + total + log_v - log_scale).exp() / (1 + above) as f64);
        }
        out
    });
    blocks.into_iter().flatten().collect()
}

/// One row of the Plancherel–Rotach comparison at `√(2n)·x`.
#[derive(Debug, Clone, Serialize)]
pub struct PlancherelRow {
    pub n: usize,
    pub log_abs_exact: f64,
    pub log_abs_asymptotic: f64,
    pub relative_error: f64,
    /// `n · relative_error`.
    pub scaled_error: f64,
    pub sign: i8,
    /// `(-1)^n`: every zero of `p_n` lies to the right of `√(2n)·x`.
    pub expected_sign: i8,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlancherelReport {
    pub x: f64,
    pub rows: Vec<PlancherelRow>,
}

impl PlancherelReport {
    pub fn signs_match(&self) -> bool {
        self.rows.iter().all(|r| r.sign == r.expected_sign)
    }
}

/// Compares `p_n(√(2n) x)` with
/// `(4π√(2n))^{-1/2} exp{n(Ω(2x) + 1/2)} h̃(x)` in log-magnitude.
pub fn plancherel_rotach_check(n_list: &[usize], x: f64) -> Result<PlancherelReport> {
    const DELTA: f64 = 0.05;
    if !(x <= -(1.0 + DELTA)) {
        return Err(Error::Domain(format!("x = {x} must be at most -{}", 1.0 + DELTA)));
    }
    let omega = theory::omega(2.0 * x);
    let log_h = theory::h_tilde(x)?.ln();
    let rows = n_list
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let exact = hermite_orthonormal(n, (2.0 * nf).sqrt() * x);
            let asym = -0.5 * (4.0 * std::f64::consts::PI * (2.0 * nf).sqrt()).ln() + nf * (omega + 0.5) + log_h;
            let rel = (exact.log_abs - asym).exp_m1().abs();
            PlancherelRow {
                n,
                log_abs_exact: exact.log_abs,
                log_abs_asymptotic: asym,
                relative_error: rel,
                scaled_error: nf * rel,
                sign: exact.sign,
                expected_sign: if n % 2 == 0 { 1 } else { -1 },
            }
        })
        .collect();
    Ok(PlancherelReport { x, rows })
}

/// `(1/n) Σ 1/(λ_i + shift)`.
pub fn stieltjes_linear_statistic(spec: &SpectralSample, shift: f64) -> Result<f64> {
    let mut total = 0.0;
    for &l in &spec.eigenvalues {
        let d = l + shift;
        if d <= 0.0 {
            return Err(Error::Domain(format!("eigenvalue {l} reaches the pole at -{shift}")));
        }
        total += 1.0 / d;
    }
    Ok(total / spec.dim() as f64)
}

/// Kolmogorov–Smirnov distance between a spectrum and the semicircle law.
pub fn semicircle_ks(eigenvalues: &[f64]) -> f64 {
    crate::stats::ks_distance(eigenvalues, theory::semicircle_cdf)
}

/// One row of the `rmt` report.
#[derive(Debug, Clone, Serialize)]
pub struct RmtRow {
    pub n: usize,
    pub v: f64,
    pub e_det_hermite: f64,
    pub e_absdet_mc: f64,
    pub mc_se: f64,
    /// `E|det| / |E det|`.
    pub ratio: f64,
}

pub fn rmt_table(dims: &[usize], shifts: &[f64], samples: usize, seed: u64) -> Result<Vec<RmtRow>> {
    let mut rows = Vec::new();
    for (i, &n) in dims.iter().enumerate() {
        for (j, &v) in shifts.iter().enumerate() {
            let cell_seed = rng::child_seed(seed, (i * shifts.len() + j) as u64);
            let exact = expected_det_hermite(n, v)?;
            let mc = expected_abs_det_mc(n, v, samples, cell_seed)?;
            rows.push(RmtRow {
                n,
                v,
                e_det_hermite: exact.value(),
                e_absdet_mc: mc.estimate,
                mc_se: mc.std_error,
                ratio: (mc.log_estimate - exact.log_abs).exp(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;

    fn rng(seed: u64) -> StreamRng {
        rng::stream(seed, TaskKind::Goe, 0)
    }

    #[test]
    fn goe_entry_variances() {
        let mut r = rng(1);
        let one: Vec<f64> = (0..20_000).map(|_| sample_goe(1, &mut r).entries[(0, 0)]).collect();
        let s = Summary::of(&one);
        assert!((s.variance - 2.0).abs() < 0.06, "{s:?}");

        let n = 200;
        let mut off = Vec::new();
        let mut diag = Vec::new();
        for _ in 0..500 {
            let m = sample_goe(n, &mut r).entries;
            for i in 0..n {
                diag.push(m[(i, i)]);
                off.push(m[(i, (i + 1) % n)]);
            }
        }
        let sq: Vec<f64> = off.iter().map(|x| x * x).collect();
        let s = Summary::of(&sq);
        assert!((s.mean - 1.0 / n as f64).abs() < 3.0 * s.std_error);
        let sq: Vec<f64> = diag.iter().map(|x| x * x).collect();
        let s = Summary::of(&sq);
        assert!((s.mean - 2.0 / n as f64).abs() < 3.0 * s.std_error);
        assert_eq!(sample_goe(5, &mut rng(3)), sample_goe(5, &mut rng(3)));
    }

    #[test]
    fn small_spectra() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        assert_eq!(symmetric_eigen(&d).unwrap().0, vec![1.0, 2.0, 3.0]);
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = symmetric_eigen(&s).unwrap().0;
        assert!((e[0] + 1.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(symmetric_eigen(&bad), Err(Error::Numerical(_))));
    }

    #[test]
    fn eigenvectors_reconstruct() {
        let m = sample_goe(30, &mut rng(4)).entries;
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(vals));
        assert!((&vecs * lambda * vecs.transpose() - m).amax() < 1e-12);
    }

    #[test]
    fn semicircle_fit() {
        let spec = eigenvalues(&sample_goe(1000, &mut rng(5))).unwrap();
        assert!(semicircle_ks(&spec.eigenvalues) < 0.05);
        let mut pooled = Vec::new();
        let mut r = rng(6);
        for _ in 0..100 {
            pooled.extend(tridiagonal_eigenvalues(&sample_tridiagonal_goe(200, &mut r)).unwrap().eigenvalues);
        }
        assert!(semicircle_ks(&pooled) < 0.01);
    }

    #[test]
    fn tridiagonal_model_matches_dense_moments() {
        // E tr M² = n + 1 and E tr M⁴ / n = 2 + 5/n + 1/n² ... compare the
        // two samplers against each other instead.
        let n = 6;
        let mut a = rng(7);
        let mut b = rng(8);
        let mut dense = Vec::new();
        let mut tri = Vec::new();
        for _ in 0..40_000 {
            let m = sample_goe(n, &mut a).entries;
            let t = sample_tridiagonal_goe(n, &mut b).to_dense();
            dense.push((&m * &m * &m * &m).trace());
            tri.push((&t * &t * &t * &t).trace());
        }
        let (d, t) = (Summary::of(&dense), Summary::of(&tri));
        let se = (d.std_error.powi(2) + t.std_error.powi(2)).sqrt();
        assert!((d.mean - t.mean).abs() < 3.0 * se, "{d:?} {t:?}");
        // E tr M² = (n(n-1)/n + 2n/n) = n + 1
        let mut sq = Vec::new();
        for _ in 0..40_000 {
            let t = sample_tridiagonal_goe(n, &mut b).to_dense();
            sq.push((&t * &t).trace());
        }
        let s = Summary::of(&sq);
        assert!((s.mean - (n as f64 + 1.0)).abs() < 3.0 * s.std_error);
    }

    #[test]
    fn continuant_matches_spectrum() {
        let t = sample_tridiagonal_goe(40, &mut rng(9));
        let spec = tridiagonal_eigenvalues(&t).unwrap();
        for v in [-2.5, -0.3, 0.0, 1.1, 3.0] {
            let a = t.shifted_det(v);
            let b = spec.shifted_det(v);
            assert_eq!(a.sign, b.sign);
            assert!((a.log_abs - b.log_abs).abs() < 1e-9);
        }
        let big = sample_tridiagonal_goe(2000, &mut rng(10));
        assert!(big.shifted_det(0.3).log_abs.is_finite());
    }

    #[test]
    fn hermite_values() {
        let p0 = hermite_orthonormal(0, 0.4).value();
        assert!((p0 - 0.751_125_544_464_942_5).abs() < 1e-12);
        let p1 = hermite_orthonormal(1, 1.0).value();
        assert!((p1 - 2f64.sqrt() * std::f64::consts::PI.powf(-0.25)).abs() < 1e-12);
        assert!((p1 - 1.062_251).abs() < 1e-6);
    }

    #[test]
    fn hermite_against_physicists_polynomials() {
        // H_{k+1} = 2x H_k - 2k H_{k-1}; p_k = H_k / sqrt(2^k k! sqrt(pi)).
        for i in 0..20 {
            let x = -3.0 + 0.31 * i as f64;
            let (mut hm, mut h) = (0.0, 1.0);
            for k in 0..=10usize {
                if k > 0 {
                    let next = 2.0 * x * h - 2.0 * (k - 1) as f64 * hm;
                    hm = h;
                    h = next;
                }
                let fact: f64 = (1..=k).map(|j| j as f64).product();
                let norm = (2f64.powi(k as i32) * fact * std::f64::consts::PI.sqrt()).sqrt();
                let direct = h / norm;
                let rec = hermite_orthonormal(k, x).value();
                assert!((rec - direct).abs() <= 1e-10 * direct.abs().max(1e-300) + 1e-14, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn hermite_orthonormality() {
        let (nodes, weights) = quadrature::gauss_hermite(40);
        let inner = |a: usize, b: usize| -> f64 {
            nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * hermite_orthonormal(a, x).value() * hermite_orthonormal(b, x).value())
                .sum()
        };
        assert!(inner(3, 4).abs() < 1e-8);
        assert!((inner(4, 4) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn expected_det_small_cases() {
        for v in [-3.0, -1.0, 0.0, 0.7, 2.5] {
            let d1 = expected_det_hermite(1, v).unwrap().value();
            assert!((d1 + v).abs() < 1e-10);
            let d2 = expected_det_hermite(2, v).unwrap().value();
            assert!((d2 - (v * v - 0.5)).abs() < 1e-10);
        }
        assert!((expected_det_hermite(2, 1.0).unwrap().value() - 0.5).abs() < 1e-12);
        assert!(expected_det_hermite(0, 1.0).is_err());
    }

    #[test]
    fn expected_det_n3_against_monte_carlo() {
        let s = expected_det_mc(3, &[0.7], 1_000_000, 11).unwrap();
        let exact = expected_det_hermite(3, 0.7).unwrap().value();
        assert!((s[0].mean - exact).abs() < 3.0 * s[0].std_error, "{:?} vs {exact}", s[0]);
    }

    #[test]
    fn abs_det_estimates() {
        let e = expected_abs_det_mc(1, 0.0, 200_000, 12).unwrap();
        let target = 2.0 / std::f64::consts::PI.sqrt();
        assert!((e.estimate - target).abs() < 3.0 * e.std_error, "{e:?}");

        let e = expected_abs_det_mc(20, 3.0, 200_000, 13).unwrap();
        let exact = expected_det_hermite(20, 3.0).unwrap().value();
        assert!((e.estimate - exact).abs() < 3.0 * e.std_error, "{e:?} vs {exact}");

        let e = expected_abs_det_mc(20, 0.0, 20_000, 14).unwrap();
        let exact = expected_det_hermite(20, 0.0).unwrap().value().abs();
        assert!(e.estimate > exact + 3.0 * e.std_error);
        assert!(expected_abs_det_mc(3, 0.0, 10, 1).is_err());
    }

    #[test]
    fn sturm_count_matches_spectrum() {
        let mut r = rng(21);
        for n in [1, 2, 7, 30] {
            let t = sample_tridiagonal_goe(n, &mut r);
            let spec = symmetric_eigen(&t.to_dense()).unwrap().0;
            for x in [-2.5, -0.3, 0.0, 0.8, 2.1] {
                assert_eq!(t.count_below(x), spec.iter().filter(|&&l| l < x).count(), "n={n} x={x}");
            }
        }
    }

    // Where wrong signs are frequent the gap is also the plain sample mean
    // of |det| - s·det over direct draws.
    #[test]
    fn one_point_gap_matches_direct_sampling() {
        for (n, v) in [(2usize, 2.1), (4, 2.2), (6, -2.3)] {
            let g = absolute_value_gap(n, v, 100_000, 31).unwrap();
            let exact = expected_det_hermite(n, v).unwrap();
            let mut r = rng(32);
            let direct: Vec<f64> = (0..400_000)
                .map(|_| {
                    let d = sample_tridiagonal_goe(n, &mut r).shifted_det(v);
                    if d.sign == exact.sign { 0.0 } else { 2.0 * (d.log_abs - exact.log_abs).exp() }
                })
                .collect();
            let d = Summary::of(&direct);
            let se = (d.std_error.powi(2) + g.gap_se.powi(2)).sqrt();
            assert!((g.relative_gap - d.mean).abs() < 3.0 * se, "n={n} v={v}: {} vs {} ± {se}", g.relative_gap, d.mean);
        }
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| expected_abs_det_mc(8, 0.5, 20_000, 3).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn plancherel_rotach() {
        let rep = plancherel_rotach_check(&[50, 51, 100, 200], -1.5).unwrap();
        assert!(rep.signs_match());
        let e: Vec<f64> = rep.rows.iter().map(|r| r.relative_error).collect();
        assert!(e[0] > e[2] && e[2] > e[3]);
        assert!(rep.rows.iter().all(|r| r.scaled_error < 1.0));
        assert!(plancherel_rotach_check(&[10], -1.0).is_err());
    }

    #[test]
    fn stieltjes_statistic() {
        let zero = SpectralSample { eigenvalues: vec![0.0; 5] };
        assert_eq!(stieltjes_linear_statistic(&zero, 4.0).unwrap(), 0.25);
        let t = theory::solve_constants(theory::ModelParams::new(3, 10).unwrap()).unwrap();
        let shift = t.gamma_p * t.e_0;
        let target = (shift - (shift * shift - 4.0).sqrt()) / 2.0;
        assert!((2.0 * t.c_0 / t.gamma_p - target).abs() < 1e-10);
        let small = sample_tridiagonal_goe(40, &mut rng(16));
        let dense = stieltjes_linear_statistic(&tridiagonal_eigenvalues(&small).unwrap(), 4.0).unwrap();
        assert!((small.stieltjes(4.0).unwrap() - dense).abs() < 1e-12);
        assert!(small.stieltjes(-1.0).is_err());
        let mut r = rng(15);
        let vals: Vec<f64> = (0..200).map(|_| sample_tridiagonal_goe(20_000, &mut r).stieltjes(shift).unwrap()).collect();
        let s = Summary::of(&vals);
        // Loop equation z ḡ - 1 = ḡ² - ḡ'/n gives the first finite-n
        // correction g/(n(z² - 4)), which is large this close to the edge.
        let n = 20_000.0;
        let corrected = target + target / (n * (shift * shift - 4.0));
        assert!((s.mean - corrected).abs() < 3.0 * s.std_error, "{s:?} vs {corrected}");
        assert!((s.mean - target).abs() < 1e-3);

        let far = 4.0;
        let limit = (far - (far * far - 4.0f64).sqrt()) / 2.0;
        let vals: Vec<f64> = (0..200)
            .map(|_| sample_tridiagonal_goe(500, &mut r).stieltjes(far).unwrap())
            .collect();
        let s = Summary::of(&vals);
        let corrected = limit + limit / (500.0 * (far * far - 4.0));
        assert!((s.mean - corrected).abs() < 3.0 * s.std_error, "{s:?} vs {corrected}");
    }
}
