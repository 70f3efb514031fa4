//! Perturbation experiments: the field `H⁺ = H + N^{-1/2} H′`, matching of
//! near-minimal critical points of `H` to those of `H⁺`, and the
//! statistics of the extremal point process (Poisson bins, Gumbel minima).

use crate::critical_points::{
    classify, newton_solve, separation_stats, window_search, CriticalPoint, CriticalSet, NewtonConfig, SearchConfig,
};
use crate::error::{invalid, Result};
use crate::hamiltonian::{overlap, DisorderTensor, Hamiltonian, LocalFrame, SpherePoint};
use crate::random_matrix::symmetric_eigen;
use crate::rng;
use crate::stats::{correlation, ks_distance, ks_p_value, median, median_std_error, regression_slope, Summary};
use crate::theory::{gumbel_min_cdf, gumbel_min_median, ModelParams, TheoryConstants};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Fewest pooled samples for which the shift and Poisson tests are
/// considered meaningful.
pub const MIN_POOLED: usize = 200;

/// A disorder and an independent copy of it.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub base: DisorderTensor,
    pub perturb: DisorderTensor,
    pub s_n: f64,
}

impl PerturbationPair {
    pub fn new(base: DisorderTensor, perturb: DisorderTensor) -> Result<Self> {
        if base.params() != perturb.params() {
            return Err(invalid("base and perturbation must share (p, N)"));
        }
        if base.seed() == perturb.seed() {
            return Err(invalid("base and perturbation seeds must differ"));
        }
        let n = base.params().n as f64;
        Ok(PerturbationPair { base, perturb, s_n: ((n + 1.0) / n).sqrt() })
    }

    pub fn sample(params: ModelParams, base_seed: u64, perturb_seed: u64) -> Result<Self> {
        PerturbationPair::new(
            DisorderTensor::sample(params, base_seed)?,
            DisorderTensor::sample(params, perturb_seed)?,
        )
    }

    pub fn params(&self) -> ModelParams {
        self.base.params()
    }

    /// `H⁺ = H + N^{-1/2} H′`.
    pub fn plus(&self) -> Result<Hamiltonian> {
        let n = self.params().n as f64;
        self.base.hamiltonian().combined(&self.perturb.hamiltonian(), n.powf(-0.5))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingLawReport {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    pub probes: usize,
    pub variance: f64,
    pub variance_se: f64,
    pub variance_target: f64,
    pub variance_z: f64,
    pub overlap: f64,
    pub cov_at_overlap: f64,
    pub cov_at_overlap_se: f64,
    pub cov_at_overlap_target: f64,
    pub cov_at_overlap_z: f64,
    pub cov_orthogonal: f64,
    pub cov_orthogonal_se: f64,
    pub cov_orthogonal_z: f64,
    /// Largest `|H⁺(σ) - H(σ) - H′(σ)/√N|` seen.
    pub max_identity_error: f64,
}

fn covariance(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let s = Summary::of(&prods);
    (s.mean * n / (n - 1.0), s.std_error)
}

/// Over `probes` independent pairs, the variance of `H⁺` at a point and its
/// covariance at overlaps `0` and `1/2`, against `(N+1) R^p`.
pub fn scaling_law_check(params: ModelParams, probes: usize, seed: u64) -> Result<ScalingLawReport> {
    if probes < 1000 {
        return Err(invalid("the scaling-law check needs at least 1000 probes"));
    }
    let params = ModelParams::new(params.p, params.n)?;
    let n = params.n as usize;
    if n < 2 {
        return Err(invalid("the scaling-law check needs N ≥ 2"));
    }
    let nf = n as f64;
    let r = 0.5;
    // Fixed probe points: e_1, an orthogonal point, one at overlap r.
    let mut a = DVector::zeros(n);
    a[0] = nf.sqrt();
    let mut b = DVector::zeros(n);
    b[1] = nf.sqrt();
    let c = &a * r + &b * (1.0 - r * r).sqrt();
    let (a, b, c) = (SpherePoint::new(a)?, SpherePoint::new(b)?, SpherePoint::new(c)?);
    let rows: Vec<([f64; 3], f64)> = (0..probes)
        .into_par_iter()
        .map(|k| -> Result<([f64; 3], f64)> {
            let base = rng::child_seed(seed, 2 * k as u64);
            let pair = PerturbationPair::sample(params, base, rng::child_seed(seed, 2 * k as u64 + 1))?;
            let plus = pair.plus()?;
            let (h, hp) = (pair.base.hamiltonian(), pair.perturb.hamiltonian());
            let mut err: f64 = 0.0;
            let mut vals = [0.0; 3];
            for (v, s) in vals.iter_mut().zip([&a, &b, &c]) {
                *v = plus.value(s);
                err = err.max((*v - h.value(s) - hp.value(s) / nf.sqrt()).abs());
            }
            Ok((vals, err))
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| rows.iter().map(|(v, _)| v[i]).collect::<Vec<f64>>();
    let (ha, hb, hc) = (col(0), col(1), col(2));
    let (var, var_se) = covariance(&ha, &ha);
    let (cr, cr_se) = covariance(&ha, &hc);
    let (c0, c0_se) = covariance(&ha, &hb);
    let target = nf + 1.0;
    let cr_target = target * r.powi(params.p as i32);
    Ok(ScalingLawReport {
        p: params.p,
        n: params.n,
        probes,
        variance: var,
        variance_se: var_se,
        variance_target: target,
        variance_z: (var - target) / var_se,
        overlap: r,
        cov_at_overlap: cr,
        cov_at_overlap_se: cr_se,
        cov_at_overlap_target: cr_target,
        cov_at_overlap_z: (cr - cr_target) / cr_se,
        cov_orthogonal: c0,
        cov_orthogonal_se: c0_se,
        cov_orthogonal_z: c0 / c0_se,
        max_identity_error: rows.iter().map(|(_, e)| *e).fold(0.0, f64::max),
    })
}

/// A critical point of `H` and the critical point of `H⁺` Newton reached
/// from it.
#[derive(Debug, Clone, Serialize)]
pub struct MatchedPair {
    pub original: CriticalPoint,
    pub matched: CriticalPoint,
    pub overlap: f64,
    /// `H′(σ)/√N - C_0`.
    pub predicted_shift: f64,
    /// `H⁺(σ′) - H(σ)`.
    pub actual_shift: f64,
    pub residual: f64,
    /// Second-order model shift `-(1/2N) ∇H′ᵀ (Hess H)^{-1} ∇H′`.
    pub model_shift: f64,
    /// `(p/2N) tr (Hess H)^{-1}`, the model's estimate of `C_0`.
    pub trace_term: f64,
    /// Hessian spectrum of `H` at `σ` inside `pE_0 ± (2√(p(p-1)) + δ)`.
    pub spectral_window: bool,
}

/// Outcome of matching one window set.
#[derive(Debug, Clone, Serialize)]
pub struct MatchOutcome {
    pub matches: Vec<MatchedPair>,
    /// Window points with no accepted partner: non-convergence or overlap
    /// below the gate.
    pub unmatched: usize,
    pub overlap_gate: f64,
}

/// Lower overlap bound `1 - N^{-2α}` for accepted matches.
pub fn overlap_gate(n: u32, alpha: f64) -> f64 {
    1.0 - (n as f64).powf(-2.0 * alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (1/3, 1/2), got {alpha}")));
    }
    Ok(())
}

/// Runs Newton on `H⁺` from each point of `cs_window` and keeps the result
/// when it converges within the overlap gate. For even `p` only one point
/// of each antipodal pair is matched.
pub fn match_critical_points(
    pair: &PerturbationPair,
    cs_window: &CriticalSet,
    alpha: f64,
    constants: &TheoryConstants,
) -> Result<MatchOutcome> {
    check_alpha(alpha)?;
    let params = pair.params();
    let nf = params.n as f64;
    let p = params.p as f64;
    let gate = overlap_gate(params.n, alpha);
    let h = pair.base.hamiltonian();
    let hp = pair.perturb.hamiltonian();
    let plus = pair.plus()?;
    let cfg = NewtonConfig::default();
    let tol = cfg.residual_factor * nf.sqrt();
    let delta = 0.5 * p * (constants.e_0 - constants.e_inf);
    let half_width = 2.0 * (p * (p - 1.0)).sqrt() + delta;

    let mut targets: Vec<&CriticalPoint> = Vec::new();
    for c in &cs_window.points {
        if !targets.iter().any(|t| overlap(&t.location, &c.location) < -1.0 + 1e-8) {
            targets.push(c);
        }
    }
    let mut matches = Vec::new();
    let mut unmatched = 0;
    for c in targets {
        let sigma = &c.location;
        let frame = LocalFrame::householder(sigma);
        let jet = h.riemannian_jet(&frame);
        let jet_p = hp.riemannian_jet(&frame);
        let (eig, vecs) = symmetric_eigen(&jet.hess)?;
        let coeffs = vecs.tr_mul(&jet_p.grad);
        let invertible = eig.iter().all(|l| l.abs() > 1e-12);
        let (model_shift, trace_term) = if invertible {
            let quad: f64 = coeffs.iter().zip(&eig).map(|(g, l)| g * g / l).sum();
            let tr: f64 = eig.iter().map(|l| 1.0 / l).sum();
            (-quad / (2.0 * nf), p * tr / (2.0 * nf))
        } else {
            (0.0, f64::NAN)
        };
        let spectral_window = eig.iter().all(|l| (l - p * constants.e_0).abs() < half_width);
        let found = newton_solve(&plus, sigma, &cfg)?.filter(|s| plus.riemannian_grad_norm(s) <= tol);
        let Some(found) = found else {
            unmatched += 1;
            continue;
        };
        let r = overlap(sigma, &found);
        if r < gate {
            unmatched += 1;
            continue;
        }
        let matched = classify(&plus, &found)?;
        let predicted_shift = jet_p.value / nf.sqrt() - constants.c_0;
        let actual_shift = matched.value - c.value;
        matches.push(MatchedPair {
            original: c.clone(),
            matched,
            overlap: r,
            predicted_shift,
            actual_shift,
            residual: actual_shift - predicted_shift,
            model_shift,
            trace_term,
            spectral_window,
        });
    }
    Ok(MatchOutcome { matches, unmatched, overlap_gate: gate })
}

/// Atoms `H(σ) - m_N` of the extremal process in a window.
#[derive(Debug, Clone, Serialize)]
pub struct PointProcessSample {
    pub centered_values: Vec<f64>,
    pub window_l: f64,
    pub parity_weight: f64,
    pub params: ModelParams,
    /// Centred global minimum found by the search, inside the window or not.
    pub centered_minimum: Option<f64>,
}

/// One atom per point of the window (per antipodal pair for even `p`).
pub fn build_xi(cs: &CriticalSet, l: f64, constants: &TheoryConstants) -> PointProcessSample {
    let mut kept: Vec<&CriticalPoint> = Vec::new();
    for c in &cs.points {
        if (c.value - constants.m_n).abs() > l {
            continue;
        }
        if cs.params.is_even() && kept.iter().any(|k| overlap(&k.location, &c.location) < -1.0 + 1e-8) {
            continue;
        }
        kept.push(c);
    }
    let mut centered_values: Vec<f64> = kept.iter().map(|c| c.value - constants.m_n).collect();
    centered_values.sort_by(|a, b| a.total_cmp(b));
    PointProcessSample {
        centered_values,
        window_l: l,
        parity_weight: 1.0 / (1.0 + constants.iota_p),
        params: cs.params,
        centered_minimum: cs.minimum.map(|m| m - constants.m_n),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftReport {
    pub count: usize,
    pub sufficient: bool,
    pub target_mean: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub mean_z: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub variance_z: f64,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub median_abs_residual: f64,
    pub median_abs_residual_se: f64,
    /// Correlation of shifts of distinct points of the same instance.
    pub cross_correlation: f64,
    pub cross_correlation_se: f64,
    pub cross_pairs: usize,
    /// Mean second-order model shift and trace term, against `-C_0` and `C_0`.
    pub model_shift_mean: f64,
    pub model_shift_se: f64,
    pub trace_term_mean: f64,
    pub trace_term_se: f64,
    pub spectral_window_fraction: f64,
}

/// Pooled statistics of the shifts; `per_instance` groups matches by
/// disorder instance for the cross-point correlation.
pub fn shift_distribution_test(per_instance: &[Vec<MatchedPair>], constants: &TheoryConstants) -> ShiftReport {
    let all: Vec<&MatchedPair> = per_instance.iter().flatten().collect();
    let actual: Vec<f64> = all.iter().map(|m| m.actual_shift).collect();
    let predicted: Vec<f64> = all.iter().map(|m| m.predicted_shift).collect();
    let abs_res: Vec<f64> = all.iter().map(|m| m.residual.abs()).collect();
    let s = Summary::of(&actual);
    let var_se = Summary::variance_std_error(&actual);
    let target = -constants.c_0;
    let normal = Normal::new(target, 1.0).expect("unit normal");
    let ks = ks_distance(&actual, |x| normal.cdf(x));
    let (slope, slope_se) = if all.len() > 2 { regression_slope(&predicted, &actual) } else { (f64::NAN, f64::NAN) };

    // Products of centred shifts over unordered pairs within an instance,
    // normalised by the pooled variance.
    let mut prods = Vec::new();
    for group in per_instance {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                prods.push((a.actual_shift - s.mean) * (b.actual_shift - s.mean) / s.variance);
            }
        }
    }
    let cross = Summary::of(&prods);
    let model: Vec<f64> = all.iter().map(|m| m.model_shift).collect();
    let trace: Vec<f64> = all.iter().map(|m| m.trace_term).filter(|t| t.is_finite()).collect();
    let ms = Summary::of(&model);
    let ts = Summary::of(&trace);
    ShiftReport {
        count: all.len(),
        sufficient: all.len() >= MIN_POOLED,
        target_mean: target,
        mean: s.mean,
        mean_se: s.std_error,
        mean_z: (s.mean - target) / s.std_error,
        variance: s.variance,
        variance_se: var_se,
        variance_z: (s.variance - 1.0) / var_se,
        ks_distance: ks,
        ks_p_value: ks_p_value(ks, all.len()),
        slope,
        slope_se,
        median_abs_residual: median(&abs_res),
        median_abs_residual_se: median_std_error(&abs_res),
        cross_correlation: cross.mean,
        cross_correlation_se: cross.std_error,
        cross_pairs: prods.len(),
        model_shift_mean: ms.mean,
        model_shift_se: ms.std_error,
        trace_term_mean: ts.mean,
        trace_term_se: ts.std_error,
        spectral_window_fraction: all.iter().filter(|m| m.spectral_window).count() as f64 / all.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub limit_mean: f64,
    pub variance: f64,
    /// `Var/Mean`; absent when no atom fell in the bin.
    pub dispersion: Option<f64>,
    pub second_moment_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonReport {
    pub samples: usize,
    pub sufficient: bool,
    pub bins: Vec<BinStats>,
    /// The same statistics for the whole window `[-L, L]`.
    pub window: BinStats,
    /// Largest absolute correlation between counts of distinct bins, over
    /// bins with non-constant counts.
    pub max_inter_bin_correlation: f64,
    pub correlation_se: f64,
}

fn bin_stats(counts: &[f64], lo: f64, hi: f64, constants: &TheoryConstants) -> BinStats {
    let s = Summary::of(counts);
    let factorial2 = counts.iter().map(|k| k * (k - 1.0)).sum::<f64>() / counts.len() as f64;
    let positive = s.mean > 0.0;
    BinStats {
        lo,
        hi,
        mean: s.mean,
        mean_se: s.std_error,
        limit_mean: constants.limit_mass(lo, hi),
        variance: s.variance,
        dispersion: positive.then(|| s.variance / s.mean),
        second_moment_ratio: positive.then(|| factorial2 / (s.mean * s.mean)),
    }
}

/// Unit-width bins covering `[-L, L]` (the last one may be shorter).
pub fn unit_bins(l: f64) -> Vec<(f64, f64)> {
    let mut bins = Vec::new();
    let mut lo = -l;
    while lo < l - 1e-12 {
        let hi = (lo + 1.0).min(l);
        bins.push((lo, hi));
        lo = hi;
    }
    bins
}

pub fn poisson_tests(samples: &[PointProcessSample], constants: &TheoryConstants) -> Result<PoissonReport> {
    let Some(first) = samples.first() else {
        return Err(invalid("no point-process samples"));
    };
    let l = first.window_l;
    if samples.iter().any(|s| s.window_l != l) {
        return Err(invalid("samples must share the window half-width"));
    }
    let bins = unit_bins(l);
    let counts: Vec<Vec<f64>> = bins
        .iter()
        .map(|&(lo, hi)| {
            samples
                .iter()
                .map(|s| {
                    s.centered_values
                        .iter()
                        .filter(|&&x| x >= lo && (x < hi || (hi == l && x <= hi)))
                        .count() as f64
                })
                .collect()
        })
        .collect();
    let totals: Vec<f64> = samples.iter().map(|s| s.centered_values.len() as f64).collect();
    let mut max_corr: f64 = 0.0;
    for i in 0..bins.len() {
        for j in i + 1..bins.len() {
            let c = correlation(&counts[i], &counts[j]);
            if c.is_finite() {
                max_corr = max_corr.max(c.abs());
            }
        }
    }
    Ok(PoissonReport {
        samples: samples.len(),
        sufficient: samples.len() >= MIN_POOLED,
        bins: bins.iter().zip(&counts).map(|(&(lo, hi), c)| bin_stats(c, lo, hi, constants)).collect(),
        window: bin_stats(&totals, -l, l, constants),
        max_inter_bin_correlation: max_corr,
        correlation_se: 1.0 / (samples.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GumbelReport {
    pub used: usize,
    /// Samples without a recorded minimum.
    pub excluded: usize,
    pub exclusion_rate: f64,
    /// Samples whose minimum lies below `-L`; they are kept, since the
    /// search locates the global minimum wherever it is.
    pub below_window: usize,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    pub median: f64,
    pub median_se: f64,
    pub median_target: f64,
    pub median_z: f64,
    /// `(empirical, theoretical)` quantile pairs at plotting positions
    /// `(i + 1/2)/n`.
    pub qq: Vec<(f64, f64)>,
}

/// Quantile function of [`gumbel_min_cdf`].
pub fn gumbel_min_quantile(q: f64, c_p: f64) -> f64 {
    (-c_p * (-q).ln_1p()).ln() / c_p
}

pub fn gumbel_test(samples: &[PointProcessSample], constants: &TheoryConstants) -> GumbelReport {
    let mut minima: Vec<f64> = samples.iter().filter_map(|s| s.centered_minimum).collect();
    minima.sort_by(|a, b| a.total_cmp(b));
    let excluded = samples.len() - minima.len();
    let below_window = samples.iter().filter(|s| s.centered_minimum.is_some_and(|m| m < -s.window_l)).count();
    let c = constants.c_p;
    let ks = ks_distance(&minima, |x| gumbel_min_cdf(x, c));
    let med = median(&minima);
    let med_se = median_std_error(&minima);
    let target = gumbel_min_median(c);
    let n = minima.len();
    GumbelReport {
        used: n,
        excluded,
        exclusion_rate: excluded as f64 / samples.len().max(1) as f64,
        below_window,
        ks_distance: ks,
        ks_p_value: ks_p_value(ks, n),
        median: med,
        median_se: med_se,
        median_target: target,
        median_z: (med - target) / med_se,
        qq: minima
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, gumbel_min_quantile((i as f64 + 0.5) / n as f64, c)))
            .collect(),
    }
}

/// Per-instance record of the perturbation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceMatches {
    pub instance: usize,
    pub base_seed: u64,
    pub perturb_seed: u64,
    pub window_count: usize,
    pub unmatched: usize,
    pub matches: Vec<MatchedPair>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationRun {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "L")]
    pub l: f64,
    pub alpha: f64,
    pub seed: u64,
    pub overlap_gate: f64,
    pub search: SearchConfig,
    pub window_points: usize,
    pub matched: usize,
    pub match_rate: f64,
    pub shifts: ShiftReport,
    pub instances: Vec<InstanceMatches>,
}

fn instance_seeds(seed: u64, i: usize) -> (u64, u64, u64) {
    let base = rng::child_seed(seed, 3 * i as u64);
    (base, rng::child_seed(seed, 3 * i as u64 + 1), rng::child_seed(seed, 3 * i as u64 + 2))
}

/// The full perturbation experiment over `instances` independent pairs.
pub fn run_perturbation(
    params: ModelParams,
    instances: usize,
    l: f64,
    alpha: f64,
    seed: u64,
    search: &SearchConfig,
    constants: &TheoryConstants,
) -> Result<PerturbationRun> {
    check_alpha(alpha)?;
    if instances == 0 {
        return Err(invalid("need at least one instance"));
    }
    if !(l > 0.0) {
        return Err(invalid("L must be positive"));
    }
    let records: Vec<InstanceMatches> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<InstanceMatches> {
            let (base_seed, perturb_seed, search_seed) = instance_seeds(seed, i);
            let pair = PerturbationPair::sample(params, base_seed, perturb_seed)?;
            let cs = window_search(&pair.base.hamiltonian(), base_seed, constants, l, search, search_seed)?;
            let out = match_critical_points(&pair, &cs, alpha, constants)?;
            Ok(InstanceMatches {
                instance: i,
                base_seed,
                perturb_seed,
                window_count: out.matches.len() + out.unmatched,
                unmatched: out.unmatched,
                matches: out.matches,
            })
        })
        .collect::<Result<_>>()?;
    let window_points: usize = records.iter().map(|r| r.window_count).sum();
    let matched: usize = records.iter().map(|r| r.matches.len()).sum();
    let groups: Vec<Vec<MatchedPair>> = records.iter().map(|r| r.matches.clone()).collect();
    Ok(PerturbationRun {
        p: params.p,
        n: params.n,
        l,
        alpha,
        seed,
        overlap_gate: overlap_gate(params.n, alpha),
        search: *search,
        window_points,
        matched,
        match_rate: if window_points == 0 { f64::NAN } else { matched as f64 / window_points as f64 },
        shifts: shift_distribution_test(&groups, constants),
        instances: records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtremalRun {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "L")]
    pub l: f64,
    pub seed: u64,
    pub search: SearchConfig,
    pub disorder_seeds: Vec<u64>,
    pub poisson: PoissonReport,
    pub gumbel: GumbelReport,
    /// Per-sample largest `|R|` between distinct window points.
    pub max_overlaps: Vec<Option<f64>>,
    pub median_max_overlap: f64,
    /// Fraction of index-0 points among atoms within `L_min = min(L, 2)`.
    pub minima_fraction: f64,
    pub samples: Vec<PointProcessSample>,
}

/// Window searches on `samples` independent disorders and the Poisson and
/// Gumbel statistics of the resulting extremal process.
pub fn run_extremal(
    params: ModelParams,
    samples: usize,
    l: f64,
    seed: u64,
    search: &SearchConfig,
    constants: &TheoryConstants,
) -> Result<ExtremalRun> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    if !(l > 0.0) {
        return Err(invalid("L must be positive"));
    }
    let sets: Vec<CriticalSet> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (disorder_seed, _, search_seed) = instance_seeds(seed, i);
            let j = DisorderTensor::sample(params, disorder_seed)?;
            window_search(&j.hamiltonian(), disorder_seed, constants, l, search, search_seed)
        })
        .collect::<Result<_>>()?;
    let xi: Vec<PointProcessSample> = sets.iter().map(|cs| build_xi(cs, l, constants)).collect();
    let max_overlaps: Vec<Option<f64>> = sets.iter().map(separation_stats).collect();
    let present: Vec<f64> = max_overlaps.iter().flatten().copied().collect();
    let low = l.min(2.0);
    let (mut minima, mut total) = (0usize, 0usize);
    for cs in &sets {
        for c in cs.points.iter().filter(|c| (c.value - constants.m_n).abs() <= low) {
            total += 1;
            minima += (c.morse_index == 0) as usize;
        }
    }
    Ok(ExtremalRun {
        p: params.p,
        n: params.n,
        l,
        seed,
        search: *search,
        disorder_seeds: sets.iter().map(|cs| cs.disorder_seed).collect(),
        poisson: poisson_tests(&xi, constants)?,
        gumbel: gumbel_test(&xi, constants),
        median_max_overlap: median(&present),
        max_overlaps,
        minima_fraction: if total == 0 { f64::NAN } else { minima as f64 / total as f64 },
        samples: xi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_points::{find_all, window_select};
    use crate::rng::TaskKind;
    use crate::theory::solve_constants;

    #[test]
    fn pair_validation_and_identity() {
        let params = ModelParams::new(3, 6).unwrap();
        assert!(PerturbationPair::sample(params, 4, 4).is_err());
        let other = DisorderTensor::sample(ModelParams::new(3, 5).unwrap(), 9).unwrap();
        assert!(PerturbationPair::new(DisorderTensor::sample(params, 1).unwrap(), other).is_err());
        let pair = PerturbationPair::sample(params, 1, 2).unwrap();
        assert!((pair.s_n * pair.s_n - 7.0 / 6.0).abs() < 1e-15);
        let plus = pair.plus().unwrap();
        let mut rng = rng::stream(3, TaskKind::Probe, 0);
        for _ in 0..50 {
            let s = SpherePoint::random(6, &mut rng);
            let direct = pair.base.evaluate(&s) + pair.perturb.evaluate(&s) / 6f64.sqrt();
            assert!((plus.value(&s) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_law() {
        let r = scaling_law_check(ModelParams::new(3, 6).unwrap(), 4000, 5).unwrap();
        assert!(r.variance_z.abs() < 3.0, "{r:?}");
        assert!(r.cov_at_overlap_z.abs() < 3.0, "{r:?}");
        assert!(r.cov_orthogonal_z.abs() < 3.0, "{r:?}");
        assert!(r.max_identity_error < 1e-12);
        assert!(scaling_law_check(ModelParams::new(3, 6).unwrap(), 10, 5).is_err());
    }

    #[test]
    fn xi_atoms_and_parity() {
        let k = solve_constants(ModelParams::new(4, 5).unwrap()).unwrap();
        let j = DisorderTensor::sample(k.params(), 3).unwrap();
        let cs = find_all(&j, 3000, 1).unwrap();
        let wide = build_xi(&cs, 20.0, &k);
        let in_window = window_select(&cs, 20.0, &k).len();
        // Even p: one atom per antipodal pair.
        assert_eq!(2 * wide.centered_values.len(), in_window);
        assert_eq!(wide.parity_weight, 0.5);
        let narrow = build_xi(&cs, 1.0, &k);
        for x in &narrow.centered_values {
            assert!(wide.centered_values.iter().any(|y| (x - y).abs() < 1e-12));
        }
        let empty = build_xi(&CriticalSet { points: vec![], ..cs.clone() }, 3.0, &k);
        assert!(empty.centered_values.is_empty());

        let k3 = solve_constants(ModelParams::new(3, 5).unwrap()).unwrap();
        let cs3 = find_all(&DisorderTensor::sample(k3.params(), 4).unwrap(), 3000, 1).unwrap();
        let xi3 = build_xi(&cs3, 3.0, &k3);
        assert_eq!(xi3.centered_values.len(), window_select(&cs3, 3.0, &k3).len());
    }

    #[test]
    fn matches_respect_the_gate() {
        let params = ModelParams::new(3, 12).unwrap();
        let k = solve_constants(params).unwrap();
        let pair = PerturbationPair::sample(params, 21, 22).unwrap();
        let cs = window_search(&pair.base.hamiltonian(), 21, &k, 3.0, &SearchConfig::default(), 1).unwrap();
        let out = match_critical_points(&pair, &cs, 0.45, &k).unwrap();
        assert_eq!(out.matches.len() + out.unmatched, cs.len());
        for m in &out.matches {
            assert!(m.overlap >= out.overlap_gate);
            assert!((m.residual - (m.actual_shift - m.predicted_shift)).abs() < 1e-12);
        }
        assert!(match_critical_points(&pair, &cs, 0.3, &k).is_err());
        assert!(match_critical_points(&pair, &cs, 0.5, &k).is_err());
    }

    #[test]
    fn gumbel_quantile_inverts_cdf() {
        for c in [0.625, 0.9] {
            for q in [0.01, 0.3, 0.5, 0.9, 0.999] {
                assert!((gumbel_min_cdf(gumbel_min_quantile(q, c), c) - q).abs() < 1e-12);
            }
            assert!((gumbel_min_quantile(0.5, c) - gumbel_min_median(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_statistics_of_synthetic_poisson_samples() {
        use rand::Rng;
        let k = solve_constants(ModelParams::new(3, 32).unwrap()).unwrap();
        let l = 3.0;
        let far = 15.0;
        let total = k.limit_mass(-far, l);
        let mut rng = rng::stream(8, TaskKind::Generic, 0);
        let samples: Vec<PointProcessSample> = (0..2000)
            .map(|_| {
                let count = rand_distr::Distribution::sample(&rand_distr::Poisson::new(total).unwrap(), &mut rng) as usize;
                // Inverse-CDF draws from the density ∝ e^{c x} on [-L, L].
                let mut xs: Vec<f64> = (0..count)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let (a, b) = ((-k.c_p * far).exp(), (k.c_p * l).exp());
                        (a + u * (b - a)).ln() / k.c_p
                    })
                    .collect();
                xs.sort_by(|a, b| a.total_cmp(b));
                PointProcessSample {
                    centered_minimum: xs.first().copied(),
                    centered_values: xs.into_iter().filter(|x| *x >= -l).collect(),
                    window_l: l,
                    parity_weight: 1.0,
                    params: k.params(),
                }
            })
            .collect();
        let r = poisson_tests(&samples, &k).unwrap();
        assert_eq!(r.bins.len(), 6);
        for b in &r.bins {
            assert!((b.mean - b.limit_mean).abs() < 4.0 * b.mean_se);
            assert!((b.dispersion.unwrap() - 1.0).abs() < 0.15);
        }
        assert!((r.window.second_moment_ratio.unwrap() - 1.0).abs() < 0.05);
        assert!(r.max_inter_bin_correlation < 4.0 * r.correlation_se);
        // Minima of a Poisson process with intensity e^{cx} follow the Gumbel
        // law, up to the mass below -15, which is negligible.
        let g = gumbel_test(&samples, &k);
        assert!(g.below_window > 0 && g.excluded == 0);
        assert!(g.ks_p_value > 0.001, "{g:?}");
        assert!(g.median_z.abs() < 4.0);
    }
}
