//! Enumeration of critical points of `H_N` on the sphere by multistart
//! Riemannian Newton, with deduplication, Morse classification, window
//! selection and pair statistics.

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{overlap, DisorderTensor, Hamiltonian, LocalFrame, SpherePoint};
use crate::kac_rice::{DensityMethod, KacRiceDensity};
use crate::random_matrix::symmetric_eigen;
use crate::rng::{self, StreamRng, TaskKind};
use crate::stats::Summary;
use crate::theory::{ModelParams, TheoryConstants};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Overlap above which two points are the same critical point.
pub const DEDUP_OVERLAP: f64 = 1.0 - 1e-8;
/// Hessian eigenvalues closer than this to zero mark a degenerate point.
pub const DEGENERACY_TOL: f64 = 1e-8;
const STALL_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Convergence when the Riemannian gradient norm is at most
    /// `residual_factor · √N`.
    pub residual_factor: f64,
    pub armijo: f64,
    /// Largest tangent step when the Hessian is indefinite.
    pub trust_radius: f64,
    /// Runs are abandoned once `H` exceeds this value.
    pub ceiling: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iter: 50, residual_factor: 1e-10, armijo: 1e-4, trust_radius: 0.5, ceiling: f64::INFINITY }
    }
}

/// A located critical point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    #[serde(skip)]
    pub location: SpherePoint,
    pub value: f64,
    pub grad_residual: f64,
    #[serde(skip)]
    pub hessian_spectrum: Vec<f64>,
    pub morse_index: usize,
    pub min_eig: f64,
    pub degenerate: bool,
}

impl CriticalPoint {
    pub fn location_vec(&self) -> Vec<f64> {
        self.location.coords().iter().copied().collect()
    }
}

/// The critical points found for one disorder instance.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalSet {
    pub params: ModelParams,
    pub disorder_seed: u64,
    pub restarts_used: usize,
    pub converged_runs: usize,
    /// Value window `[lo, hi]` in `H` units, when selected.
    pub window: Option<(f64, f64)>,
    /// Lowest critical value seen by the search, inside the window or not.
    pub minimum: Option<f64>,
    pub points: Vec<CriticalPoint>,
    /// Bookkeeping of the window search, when one was run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchStats>,
}

impl CriticalSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|c| c.value).collect()
    }
}

// Riemannian gradient, Hessian eigen-decomposition and frame at a point.
struct Local {
    frame: LocalFrame,
    value: f64,
    grad: DVector<f64>,
    eigvals: Vec<f64>,
    eigvecs: DMatrix<f64>,
}

fn local(h: &Hamiltonian, sigma: &SpherePoint) -> Result<Local> {
    let frame = LocalFrame::householder(sigma);
    let jet = h.riemannian_jet(&frame);
    let (eigvals, eigvecs) = symmetric_eigen(&jet.hess)?;
    Ok(Local { frame, value: jet.value, grad: jet.grad, eigvals, eigvecs })
}

fn retract(sigma: &SpherePoint, frame: &LocalFrame, step: &DVector<f64>) -> Option<SpherePoint> {
    SpherePoint::new(sigma.coords() + frame.to_ambient(step)).ok()
}

// Newton direction -H^{-1} g in the eigenbasis; with `absolute` the
// eigenvalues are replaced by their moduli, giving a descent direction.
fn newton_direction(l: &Local, absolute: bool) -> DVector<f64> {
    let coeffs = l.eigvecs.tr_mul(&l.grad);
    let mut d = DVector::zeros(l.grad.len());
    for (i, &lam) in l.eigvals.iter().enumerate() {
        let mut lam = if absolute { lam.abs() } else { lam };
        if lam.abs() < 1e-12 {
            lam = if lam < 0.0 { -1e-12 } else { 1e-12 };
        }
        d -= l.eigvecs.column(i) * (coeffs[i] / lam);
    }
    d
}

fn cap(mut d: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = d.norm();
    if n > radius {
        d *= radius / n;
    }
    d
}

/// Riemannian Newton for a zero of the gradient from `start`, globalised
/// by backtracking on the gradient norm. Returns `None` when the iteration
/// stalls or exhausts its budget.
pub fn newton_solve(h: &Hamiltonian, start: &SpherePoint, cfg: &NewtonConfig) -> Result<Option<SpherePoint>> {
    let tol = cfg.residual_factor * (start.dim() as f64).sqrt();
    let mut sigma = start.clone();
    let mut l = local(h, &sigma)?;
    let mut history = Vec::with_capacity(cfg.max_iter);
    for iter in 0..cfg.max_iter {
        if l.value > cfg.ceiling {
            return Ok(None);
        }
        let gnorm = l.grad.norm();
        if gnorm <= tol {
            return Ok(Some(polish(h, sigma, l, tol)?));
        }
        // Runs that creep towards a nonzero minimum of |grad| are dropped.
        if iter >= STALL_WINDOW && gnorm > 0.5 * history[iter - STALL_WINDOW] {
            return Ok(None);
        }
        history.push(gnorm);
        let mut d = newton_direction(&l, false);
        if l.eigvals[0] < 0.0 {
            d = cap(d, cfg.trust_radius);
        }
        let fallback = || {
            let coeffs = l.eigvecs.tr_mul(&l.grad).component_mul(&DVector::from_column_slice(&l.eigvals));
            cap(-(&l.eigvecs * coeffs), cfg.trust_radius)
        };
        let mut accepted = None;
        for k in 0..2 {
            let dir = if k == 0 { d.clone() } else { fallback() };
            let mut t = 1.0;
            for _ in 0..20 {
                if let Some(cand) = retract(&sigma, &l.frame, &(&dir * t)) {
                    let gn = h.riemannian_grad_norm(&cand);
                    if gn * gn <= (1.0 - 2.0 * cfg.armijo * t) * gnorm * gnorm {
                        accepted = Some(cand);
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some(next) => {
                sigma = next;
                l = local(h, &sigma)?;
            }
            None => return Ok(None),
        }
    }
    Ok(None)
}

// A few undamped Newton steps past the tolerance, keeping the best point.
fn polish(h: &Hamiltonian, mut sigma: SpherePoint, mut l: Local, tol: f64) -> Result<SpherePoint> {
    for _ in 0..3 {
        let d = newton_direction(&l, false);
        let Some(cand) = retract(&sigma, &l.frame, &d) else { break };
        let lc = local(h, &cand)?;
        if lc.grad.norm() < l.grad.norm() {
            sigma = cand;
            l = lc;
        } else {
            break;
        }
        if l.grad.norm() < 1e-3 * tol {
            break;
        }
    }
    Ok(sigma)
}

/// Saddle-free Newton descent on `H` to a local minimum, finished by
/// [`newton_solve`].
pub fn minimize(h: &Hamiltonian, start: &SpherePoint, cfg: &NewtonConfig) -> Result<Option<SpherePoint>> {
    let n = start.dim() as f64;
    let radius = 0.1 * n.sqrt();
    let mut sigma = start.clone();
    let mut l = local(h, &sigma)?;
    for _ in 0..cfg.max_iter {
        let gnorm = l.grad.norm();
        if l.eigvals[0] > 0.0 && gnorm < 1e-6 * n.sqrt() {
            return newton_solve(h, &sigma, cfg);
        }
        let d = if gnorm < 1e-9 * n.sqrt() {
            l.eigvecs.column(0).into_owned() * radius
        } else {
            cap(newton_direction(&l, true), radius)
        };
        let slope = l.grad.dot(&d).min(-1e-300);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            if let Some(cand) = retract(&sigma, &l.frame, &(&d * t)) {
                if h.value(&cand) <= l.value + cfg.armijo * t * slope {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                sigma = next;
                l = local(h, &sigma)?;
            }
            None => return newton_solve(h, &sigma, cfg),
        }
    }
    Ok(None)
}

/// Classifies a (converged) point.
pub fn classify(h: &Hamiltonian, sigma: &SpherePoint) -> Result<CriticalPoint> {
    let l = local(h, sigma)?;
    let morse_index = l.eigvals.iter().filter(|&&x| x < 0.0).count();
    let degenerate = l.eigvals.iter().any(|x| x.abs() < DEGENERACY_TOL);
    Ok(CriticalPoint {
        location: sigma.clone(),
        value: l.value,
        grad_residual: l.grad.norm(),
        min_eig: l.eigvals[0],
        hessian_spectrum: l.eigvals,
        morse_index,
        degenerate,
    })
}

/// Collects distinct critical points; candidates are merged in the order
/// given, so the result is deterministic.
#[derive(Debug, Clone, Default)]
struct PointSet {
    points: Vec<CriticalPoint>,
}

impl PointSet {
    fn contains(&self, sigma: &SpherePoint) -> bool {
        self.points.iter().any(|c| overlap(&c.location, sigma) > DEDUP_OVERLAP)
    }

    // Inserts the point and its antipode; returns true if anything was new.
    fn insert_with_antipode(&mut self, h: &Hamiltonian, sigma: &SpherePoint) -> Result<bool> {
        let mut added = false;
        for s in [sigma.clone(), sigma.antipode()] {
            if !self.contains(&s) {
                self.points.push(classify(h, &s)?);
                added = true;
            }
        }
        Ok(added)
    }

    fn sorted(mut self) -> Vec<CriticalPoint> {
        self.points.sort_by(|a, b| a.value.total_cmp(&b.value));
        self.points
    }
}

fn tolerance(params: ModelParams, cfg: &NewtonConfig) -> f64 {
    cfg.residual_factor * (params.n as f64).sqrt()
}

/// Multistart Newton from `restarts` uniform starting points.
pub fn find_all(j: &DisorderTensor, restarts: usize, seed: u64) -> Result<CriticalSet> {
    find_all_with(&j.hamiltonian(), j.seed(), restarts, seed, &NewtonConfig::default())
}

pub fn find_all_with(
    h: &Hamiltonian,
    disorder_seed: u64,
    restarts: usize,
    seed: u64,
    cfg: &NewtonConfig,
) -> Result<CriticalSet> {
    if restarts == 0 {
        return Err(invalid("restarts must be at least 1"));
    }
    let params = h.params();
    let n = params.n as usize;
    let tol = tolerance(params, cfg);
    let found: Vec<Option<SpherePoint>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, TaskKind::Restart, r as u64);
            let start = SpherePoint::random(n, &mut rng);
            newton_solve(h, &start, cfg)
        })
        .collect::<Result<_>>()?;
    let converged: Vec<SpherePoint> =
        found.into_iter().flatten().filter(|s| h.riemannian_grad_norm(s) <= tol).collect();
    if converged.is_empty() {
        return Err(Error::Numerical(format!(
            "no Newton run converged out of {restarts} (p = {}, N = {}, residual tolerance {tol:.1e})",
            params.p, params.n
        )));
    }
    let mut set = PointSet::default();
    for s in &converged {
        set.insert_with_antipode(h, s)?;
    }
    let points = set.sorted();
    Ok(CriticalSet {
        params,
        disorder_seed,
        restarts_used: restarts,
        converged_runs: converged.len(),
        window: None,
        minimum: points.first().map(|c| c.value),
        points,
        search: None,
    })
}

/// Points with value in `[m_N - L, m_N + L]`.
pub fn window_select(cs: &CriticalSet, l: f64, constants: &TheoryConstants) -> CriticalSet {
    let (lo, hi) = (constants.m_n - l, constants.m_n + l);
    let (lo, hi) = match cs.window {
        Some((a, b)) => (lo.max(a), hi.min(b)),
        None => (lo, hi),
    };
    CriticalSet {
        window: Some((lo, hi)),
        points: cs.points.iter().filter(|c| c.value >= lo && c.value <= hi).cloned().collect(),
        ..cs.clone()
    }
}

// Overlaps within this distance of ±1 are treated as exactly ±1.
const OVERLAP_SNAP: f64 = 1e-8;

fn snapped_overlap(a: &SpherePoint, b: &SpherePoint) -> f64 {
    let r = overlap(a, b);
    if r > 1.0 - OVERLAP_SNAP {
        1.0
    } else if r < -1.0 + OVERLAP_SNAP {
        -1.0
    } else {
        r
    }
}

/// Number of ordered pairs of critical points with normalised values
/// `H/N` in `[b_lo, b_hi]` and overlap in the open interval `(r_lo, r_hi)`.
pub fn pair_counts(cs: &CriticalSet, b_lo: f64, b_hi: f64, r_lo: f64, r_hi: f64) -> u64 {
    let n = cs.params.n as f64;
    let inside: Vec<&CriticalPoint> =
        cs.points.iter().filter(|c| c.value / n >= b_lo && c.value / n <= b_hi).collect();
    let mut count = 0;
    for a in &inside {
        for b in &inside {
            let r = snapped_overlap(&a.location, &b.location);
            if r > r_lo && r < r_hi {
                count += 1;
            }
        }
    }
    count
}

/// Number of critical points with normalised value in `[b_lo, b_hi]`.
pub fn count_in(cs: &CriticalSet, b_lo: f64, b_hi: f64) -> u64 {
    let n = cs.params.n as f64;
    cs.points.iter().filter(|c| c.value / n >= b_lo && c.value / n <= b_hi).count() as u64
}

/// Largest `|R(σ₁, σ₂)|` over pairs with `σ₁ ≠ ±σ₂`; `None` with fewer than
/// two non-antipodal points.
pub fn separation_stats(cs: &CriticalSet) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in cs.points.iter().enumerate() {
        for b in &cs.points[i + 1..] {
            let r = snapped_overlap(&a.location, &b.location);
            if r.abs() < 1.0 {
                best = Some(best.map_or(r.abs(), |m: f64| m.max(r.abs())));
            }
        }
    }
    best
}

/// Empirical counts against Kac–Rice means.
#[derive(Debug, Clone, Serialize)]
pub struct CompletenessReport {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "L")]
    pub l: f64,
    pub instances: usize,
    pub restarts: usize,
    pub residual_threshold: f64,
    pub counts: Vec<usize>,
    pub window_counts: Vec<usize>,
    pub mean_count: f64,
    pub count_se: f64,
    pub kac_rice_mean: f64,
    pub kac_rice_se: f64,
    pub z: f64,
    pub mean_window_count: f64,
    pub window_count_se: f64,
    pub kac_rice_window_mean: f64,
    pub kac_rice_window_se: f64,
    pub window_z: f64,
    pub all_even: bool,
    /// Pair identity `#pairs(B × B, R ∈ (-1,1)) = c² - (1+ι_p)c` on every
    /// instance, for `B = (-∞, b)` with `b ∈ {-0.01, -0.5, -1}`.
    pub pair_identity_holds: bool,
    /// `|z| > 3` for either comparison.
    pub flagged: bool,
}

/// Full enumeration on `instances` disorders, compared with the Kac–Rice
/// mean over ℝ and over the window of half-width `L` around `m_N`.
pub fn completeness_check(
    params: ModelParams,
    l: f64,
    instances: usize,
    restarts: usize,
    seed: u64,
    kac_rice_samples: usize,
) -> Result<CompletenessReport> {
    let params = ModelParams::new(params.p, params.n)?;
    if params.n > 8 {
        return Err(invalid("full-sphere enumeration is limited to N ≤ 8"));
    }
    if instances < 2 {
        return Err(invalid("need at least two instances"));
    }
    let density = KacRiceDensity::new(params, DensityMethod::GoeMonteCarlo)?
        .with_monte_carlo(kac_rice_samples, rng::child_seed(seed, u64::MAX))?;
    let constants = *density.constants();
    let cfg = NewtonConfig::default();
    let mut counts = Vec::with_capacity(instances);
    let mut window_counts = Vec::with_capacity(instances);
    let iota = if params.is_even() { 1 } else { 0 };
    let mut pair_identity_holds = true;
    for i in 0..instances {
        let dseed = rng::child_seed(seed, i as u64);
        let j = DisorderTensor::sample(params, dseed)?;
        let cs = find_all_with(&j.hamiltonian(), dseed, restarts, rng::child_seed(dseed, 1), &cfg)?;
        for b in [-0.01, -0.5, -1.0] {
            let c = count_in(&cs, f64::NEG_INFINITY, b);
            pair_identity_holds &= pair_counts(&cs, f64::NEG_INFINITY, b, -1.0, 1.0) == c * c - (1 + iota) * c;
        }
        counts.push(cs.len());
        window_counts.push(window_select(&cs, l, &constants).len());
    }
    let as_f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let total = Summary::of(&as_f(&counts));
    let win = Summary::of(&as_f(&window_counts));
    let kr = density.mean_crt(f64::NEG_INFINITY, f64::INFINITY)?;
    let kr_win = density.mean_crt(constants.m_n - l, constants.m_n + l)?;
    let z = |mean: f64, se: f64, m: f64, s: f64| (mean - m) / (se * se + s * s).sqrt();
    let zt = z(total.mean, total.std_error, kr.mean, kr.std_error);
    let zw = z(win.mean, win.std_error, kr_win.mean, kr_win.std_error);
    Ok(CompletenessReport {
        p: params.p,
        n: params.n,
        l,
        instances,
        restarts,
        residual_threshold: tolerance(params, &cfg),
        all_even: counts.iter().all(|c| c % 2 == 0),
        pair_identity_holds,
        counts,
        window_counts,
        mean_count: total.mean,
        count_se: total.std_error,
        kac_rice_mean: kr.mean,
        kac_rice_se: kr.std_error,
        z: zt,
        mean_window_count: win.mean,
        window_count_se: win.std_error,
        kac_rice_window_mean: kr_win.mean,
        kac_rice_window_se: kr_win.std_error,
        window_z: zw,
        flagged: zt.abs() > 3.0 || (zw.is_finite() && zw.abs() > 3.0),
    })
}

/// Settings of the bottom-of-landscape search used at larger `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchConfig {
    /// Descents from uniform random starts.
    pub descents: usize,
    /// Basin-hopping kicks per low minimum and round.
    pub hops: usize,
    /// Kick length as a fraction of `√N`.
    pub kick: f64,
    /// Newton runs from kicked points around each low point and round.
    pub saddle_starts: usize,
    /// Rounds of hopping/saddle search while new low points appear.
    pub max_rounds: usize,
    /// Points within `L + margin` of `m_N` seed the local searches.
    pub margin: f64,
    /// Softest Hessian modes followed uphill from each low point.
    pub follow_modes: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { descents: 200, hops: 2, kick: 0.1, saddle_starts: 0, max_rounds: 20, margin: 2.0, follow_modes: 6 }
    }
}

/// Eigenvector following: from `start`, climbs along the Hessian mode
/// `mode` (tracked by continuity) while taking Newton steps in the other
/// modes, then hands over to [`newton_solve`]. From a point of index `k`
/// this reaches index-`k+1` saddles attached to it.
pub fn follow_mode(
    h: &Hamiltonian,
    start: &SpherePoint,
    mode: usize,
    sign: f64,
    cfg: &NewtonConfig,
) -> Result<Option<SpherePoint>> {
    let l = local(h, start)?;
    if mode >= l.eigvals.len() {
        return Ok(None);
    }
    let target_index = l.eigvals.iter().filter(|&&x| x < 0.0).count() + 1;
    let dir = l.frame.to_ambient(&l.eigvecs.column(mode).into_owned()) * sign;
    follow_direction(h, start, &dir, target_index, cfg)
}

/// Eigenvector following from `start` along the Hessian mode closest to
/// the ambient tangent direction `dir`, stopping at index `target_index`.
pub fn follow_direction(
    h: &Hamiltonian,
    start: &SpherePoint,
    dir: &DVector<f64>,
    target_index: usize,
    cfg: &NewtonConfig,
) -> Result<Option<SpherePoint>> {
    let n = start.dim() as f64;
    let radius = 0.1 * n.sqrt();
    let mut sigma = start.clone();
    let mut l = local(h, &sigma)?;
    let mut followed = dir.clone();
    for iter in 0..cfg.max_iter {
        if l.value > cfg.ceiling {
            return Ok(None);
        }
        // Mode with the largest overlap with the one followed so far.
        let mut f = 0;
        let mut best = -1.0;
        for i in 0..l.eigvals.len() {
            let v = l.frame.to_ambient(&l.eigvecs.column(i).into_owned());
            let o = v.dot(&followed).abs();
            if o > best {
                best = o;
                f = i;
            }
        }
        let mut vf = l.eigvecs.column(f).into_owned();
        if l.frame.to_ambient(&vf).dot(&followed) < 0.0 {
            vf = -vf;
        }
        let coeffs = l.eigvecs.tr_mul(&l.grad);
        let index = l.eigvals.iter().filter(|&&x| x < 0.0).count();
        if index == target_index && l.eigvals[f] < 0.0 {
            let short = NewtonConfig { max_iter: 30, ..*cfg };
            if let Some(found) = newton_solve(h, &sigma, &short)? {
                return Ok(Some(found));
            }
        }
        let mut d = DVector::zeros(l.grad.len());
        for (i, &lam) in l.eigvals.iter().enumerate() {
            if i == f {
                continue;
            }
            let lam = if lam.abs() < 1e-8 { 1e-8f64.copysign(lam) } else { lam };
            d -= l.eigvecs.column(i) * (coeffs[i] / lam);
        }
        d = cap(d, radius);
        // Uphill along the followed mode: a Newton step on a maximum when the
        // curvature is already negative, a full push otherwise.
        let gf = coeffs[f] * vf.dot(&l.eigvecs.column(f));
        let up = if l.eigvals[f] < 0.0 {
            (gf / l.eigvals[f].abs()).clamp(-radius, radius)
        } else if iter == 0 {
            0.5 * radius
        } else {
            radius
        };
        d += &vf * up;
        let d = cap(d, radius);
        let Some(next) = retract(&sigma, &l.frame, &d) else { return Ok(None) };
        followed = l.frame.to_ambient(&vf);
        sigma = next;
        l = local(h, &sigma)?;
    }
    Ok(None)
}

// Local maxima of `H` along the great circle from `a` to `b`, excluding
// the end points.
fn path_maxima(h: &Hamiltonian, a: &SpherePoint, b: &SpherePoint, steps: usize) -> Vec<SpherePoint> {
    let pts: Vec<Option<SpherePoint>> = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            SpherePoint::new(a.coords() * (1.0 - t) + b.coords() * t).ok()
        })
        .collect();
    let vals: Vec<f64> = pts.iter().map(|p| p.as_ref().map_or(f64::NAN, |p| h.value(p))).collect();
    (1..steps)
        .filter(|&i| vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1])
        .filter_map(|i| pts[i].clone())
        .collect()
}

fn tangent_kick(sigma: &SpherePoint, length: f64, rng: &mut StreamRng) -> Option<SpherePoint> {
    let n = sigma.dim();
    let x = sigma.coords();
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t = &g - x * (g.dot(x) / n as f64);
    let norm = t.norm();
    if norm == 0.0 {
        return None;
    }
    SpherePoint::new(x + t * (length / norm)).ok()
}

/// Where the search found points; each point is credited to the first
/// source that reached it.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchStats {
    pub rounds: usize,
    pub runs: usize,
    pub converged: usize,
    pub seeds: usize,
    pub found_by: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
enum Job {
    Descent,
    Hop(usize),
    Kick(usize),
    Follow(usize, usize, f64),
    Downhill(usize, f64),
    Barrier(usize, usize),
}

impl Job {
    fn label(&self) -> &'static str {
        match self {
            Job::Descent => "descent",
            Job::Hop(_) => "hop",
            Job::Kick(_) => "kick",
            Job::Follow(..) => "follow",
            Job::Downhill(..) => "downhill",
            Job::Barrier(..) => "barrier",
        }
    }
}

/// Critical points with value in `[m_N - L, m_N + L]`.
///
/// Local minima come from descents out of uniform starts and from basin
/// hopping around low points; saddles from eigenvector following out of
/// low points, descents off saddles, Newton runs from kicked positions and
/// from barrier tops on great circles between low points. Every point with
/// value below `m_N + L + margin` is used as a seed exactly once; the search
/// stops when a round produces no new seed. `minimum` records the lowest
/// value found anywhere.
pub fn window_search(
    h: &Hamiltonian,
    disorder_seed: u64,
    constants: &TheoryConstants,
    l: f64,
    search: &SearchConfig,
    seed: u64,
) -> Result<CriticalSet> {
    let params = h.params();
    let n = params.n as usize;
    let root_n = (n as f64).sqrt();
    let cfg = NewtonConfig::default();
    let tol = tolerance(params, &cfg);
    let (lo, hi) = (constants.m_n - l, constants.m_n + l);
    let seed_cut = hi + search.margin;
    let local_cfg = NewtonConfig { max_iter: 60, ceiling: seed_cut + 1.0, ..cfg };
    let descent_cfg = NewtonConfig { max_iter: 60, ..cfg };

    let mut set = PointSet::default();
    let mut stats = SearchStats::default();
    let mut seeds: Vec<SpherePoint> = Vec::new();
    let mut task = 0u64;
    let mut jobs: Vec<Job> = vec![Job::Descent; search.descents];

    while !jobs.is_empty() && stats.rounds <= search.max_rounds {
        stats.rounds += 1;
        let base = task;
        task += jobs.len() as u64;
        let found: Vec<Option<SpherePoint>> = jobs
            .par_iter()
            .enumerate()
            .map(|(k, job)| -> Result<Option<SpherePoint>> {
                let mut rng = rng::stream(seed, TaskKind::BasinHop, base + k as u64);
                match job {
                    Job::Descent => minimize(h, &SpherePoint::random(n, &mut rng), &descent_cfg),
                    Job::Hop(s) => match tangent_kick(&seeds[*s], search.kick * root_n, &mut rng) {
                        Some(start) => minimize(h, &start, &local_cfg),
                        None => Ok(None),
                    },
                    Job::Kick(s) => {
                        let len = (0.05 + 0.3 * rng.random::<f64>()) * root_n;
                        match tangent_kick(&seeds[*s], len, &mut rng) {
                            Some(start) => newton_solve(h, &start, &local_cfg),
                            None => Ok(None),
                        }
                    }
                    Job::Follow(s, mode, sign) => follow_mode(h, &seeds[*s], *mode, *sign, &local_cfg),
                    Job::Downhill(s, sign) => {
                        let lc = local(h, &seeds[*s])?;
                        let d = lc.eigvecs.column(0).into_owned() * (sign * 0.05 * root_n);
                        match retract(&seeds[*s], &lc.frame, &d) {
                            Some(start) => minimize(h, &start, &local_cfg),
                            None => Ok(None),
                        }
                    }
                    Job::Barrier(a, b) => {
                        let (a, b) = (&seeds[*a], &seeds[*b]);
                        for top in path_maxima(h, a, b, 48) {
                            let tangent = b.coords() - top.coords() * (b.coords().dot(top.coords()) / n as f64);
                            for run in [newton_solve(h, &top, &local_cfg)?, follow_direction(h, &top, &tangent, 1, &local_cfg)?]
                                .into_iter()
                                .flatten()
                            {
                                if !seeds.iter().any(|s| overlap(s, &run).abs() > DEDUP_OVERLAP) {
                                    return Ok(Some(run));
                                }
                            }
                        }
                        Ok(None)
                    }
                }
            })
            .collect::<Result<_>>()?;
        stats.runs += jobs.len();
        for (job, s) in jobs.iter().zip(found) {
            if let Some(s) = s.filter(|s| h.riemannian_grad_norm(s) <= tol) {
                stats.converged += 1;
                let before = set.points.len();
                set.insert_with_antipode(h, &s)?;
                if set.points.len() > before {
                    *stats.found_by.entry(job.label().to_string()).or_insert(0) += set.points.len() - before;
                }
            }
        }
        if set.points.is_empty() {
            return Err(Error::Numerical(format!("no descent converged out of {}", search.descents)));
        }

        // New seeds: low points not used before, or the lowest few points
        // when nothing is low yet.
        let mut order: Vec<usize> = (0..set.points.len()).collect();
        order.sort_by(|&a, &b| set.points[a].value.total_cmp(&set.points[b].value));
        let mut fresh: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| set.points[i].value <= seed_cut)
            .filter(|&i| !seeds.iter().any(|s| overlap(s, &set.points[i].location) > DEDUP_OVERLAP))
            .collect();
        if seeds.is_empty() && fresh.is_empty() {
            fresh = order.iter().copied().take(4).collect();
        }
        jobs = Vec::new();
        for i in fresh {
            let k = seeds.len();
            let point = &set.points[i];
            for other in 0..k {
                if overlap(&seeds[other], &point.location) > -1.0 + 1e-6 {
                    jobs.push(Job::Barrier(other, k));
                }
            }
            jobs.extend((0..search.hops).map(|_| Job::Hop(k)));
            jobs.extend((0..search.saddle_starts).map(|_| Job::Kick(k)));
            for mode in 0..search.follow_modes.min(n - 1) {
                jobs.push(Job::Follow(k, mode, 1.0));
                jobs.push(Job::Follow(k, mode, -1.0));
            }
            if point.morse_index > 0 {
                jobs.push(Job::Downhill(k, 1.0));
                jobs.push(Job::Downhill(k, -1.0));
            }
            seeds.push(point.location.clone());
        }
    }
    stats.seeds = seeds.len();

    let points = set.sorted();
    let minimum = points.first().map(|c| c.value);
    let window_points = points.into_iter().filter(|c| c.value >= lo && c.value <= hi).collect();
    Ok(CriticalSet {
        params,
        disorder_seed,
        restarts_used: stats.runs,
        converged_runs: stats.converged,
        window: Some((lo, hi)),
        minimum,
        points: window_points,
        search: Some(stats),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::solve_constants;

    fn instance(p: u32, n: u32, seed: u64) -> DisorderTensor {
        DisorderTensor::sample(ModelParams::new(p, n).unwrap(), seed).unwrap()
    }

    #[test]
    fn enumeration_invariants() {
        for (p, n, seed) in [(3u32, 5u32, 1u64), (4, 4, 2), (3, 4, 3), (5, 4, 4)] {
            let j = instance(p, n, seed);
            let h = j.hamiltonian();
            let cs = find_all(&j, 3000, 10).unwrap();
            let root_n = (n as f64).sqrt();
            assert!(cs.len() >= 2 && cs.len() % 2 == 0);
            let indices: Vec<usize> = cs.points.iter().map(|c| c.morse_index).collect();
            assert!(indices.contains(&0) && indices.contains(&(n as usize - 1)));
            assert_eq!(cs.points[0].morse_index, 0);
            for c in &cs.points {
                assert!(c.grad_residual <= 1e-10 * root_n);
                assert!(!c.degenerate);
                assert_eq!(c.hessian_spectrum.len(), n as usize - 1);
                // Re-polishing does not move the value.
                let again = newton_solve(&h, &c.location, &NewtonConfig { max_iter: 5, ..Default::default() })
                    .unwrap()
                    .unwrap();
                assert!((h.value(&again) - c.value).abs() <= 1e-12 * c.value.abs().max(1.0));
                if c.morse_index == 0 {
                    assert!(c.min_eig >= -1e-8);
                }
            }
            let (vmin, vmax) = (cs.points[0].value, cs.points.last().unwrap().value);
            if p % 2 == 1 {
                assert!((vmin + vmax).abs() < 1e-9 * vmax.abs());
            } else {
                let vals = cs.values();
                for v in &vals {
                    let twins = vals.iter().filter(|w| (*w - v).abs() < 1e-9 * v.abs()).count();
                    assert_eq!(twins % 2, 0);
                }
            }
            for (i, a) in cs.points.iter().enumerate() {
                for b in &cs.points[i + 1..] {
                    assert!(overlap(&a.location, &b.location) <= DEDUP_OVERLAP);
                }
            }
        }
    }

    #[test]
    fn pair_identity_on_negative_values() {
        for (p, n, seed) in [(3u32, 5u32, 5u64), (4, 4, 6), (4, 5, 7)] {
            let cs = find_all(&instance(p, n, seed), 3000, 1).unwrap();
            let iota = if p % 2 == 0 { 1 } else { 0 };
            for b_hi in [-0.01, -0.5, -1.0, -1.3] {
                let c = count_in(&cs, f64::NEG_INFINITY, b_hi);
                let pairs = pair_counts(&cs, f64::NEG_INFINITY, b_hi, -1.0, 1.0);
                assert_eq!(pairs, c * c - (1 + iota) * c, "p={p} b={b_hi}");
            }
        }
    }

    #[test]
    fn pair_count_small_cases() {
        let params = ModelParams::new(3, 3).unwrap();
        let mk = |coords: &[f64], value: f64| CriticalPoint {
            location: SpherePoint::from_slice(coords).unwrap(),
            value,
            grad_residual: 0.0,
            hessian_spectrum: vec![1.0, 1.0],
            morse_index: 0,
            min_eig: 1.0,
            degenerate: false,
        };
        let one = CriticalSet {
            params,
            disorder_seed: 0,
            restarts_used: 1,
            converged_runs: 1,
            window: None,
            minimum: None,
            points: vec![mk(&[1.0, 0.0, 0.0], -3.0)],
            search: None,
        };
        assert_eq!(pair_counts(&one, f64::NEG_INFINITY, 0.0, -1.0, 1.0), 0);
        assert_eq!(separation_stats(&one), None);
        let two = CriticalSet { points: vec![mk(&[1.0, 0.0, 0.0], -3.0), mk(&[0.0, 1.0, 0.0], -2.9)], ..one };
        assert_eq!(pair_counts(&two, f64::NEG_INFINITY, 0.0, -1e-6, 1e-6), 2);
        assert!(separation_stats(&two).unwrap() < 1e-12);
    }

    #[test]
    fn window_selection_is_nested() {
        let j = instance(3, 5, 8);
        let cs = find_all(&j, 2000, 2).unwrap();
        let k = solve_constants(j.params()).unwrap();
        assert!(window_select(&cs, 0.0, &k).len() <= 1);
        assert_eq!(window_select(&cs, f64::INFINITY, &k).len(), cs.len());
        let mut prev = 0;
        for l in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let w = window_select(&cs, l, &k);
            assert!(w.len() >= prev);
            prev = w.len();
            for c in &w.points {
                assert!((c.value - k.m_n).abs() <= l);
            }
        }
    }

    #[test]
    fn fewer_restarts_never_find_more() {
        let j = instance(3, 5, 9);
        let big = find_all(&j, 4000, 3).unwrap();
        let small = find_all(&j, 500, 3).unwrap();
        assert!(small.len() <= big.len());
        for c in &small.points {
            assert!(big.points.iter().any(|b| overlap(&b.location, &c.location) > DEDUP_OVERLAP));
        }
    }

    #[test]
    fn window_search_matches_full_enumeration_at_small_n() {
        for seed in 0..4u64 {
            let j = instance(3, 6, 100 + seed);
            let h = j.hamiltonian();
            let k = solve_constants(j.params()).unwrap();
            let full = find_all(&j, 20_000, 4).unwrap();
            let l = 4.0;
            let target = window_select(&full, l, &k);
            let found = window_search(&h, j.seed(), &k, l, &SearchConfig::default(), 5).unwrap();
            assert_eq!(found.len(), target.len(), "seed {seed}");
            assert!((found.minimum.unwrap() - full.points[0].value).abs() < 1e-9);
        }
    }

    #[test]
    fn no_convergence_is_an_error() {
        let j = instance(3, 4, 1);
        let cfg = NewtonConfig { max_iter: 0, ..Default::default() };
        assert!(matches!(find_all_with(&j.hamiltonian(), 1, 5, 1, &cfg), Err(Error::Numerical(_))));
        assert!(find_all(&j, 0, 1).is_err());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let j = instance(3, 5, 11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| find_all(&j, 1000, 7).unwrap().values())
        };
        assert_eq!(run(1), run(4));
    }
}
