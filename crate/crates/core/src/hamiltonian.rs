//! Disorder sampling and exact evaluation of the p-spin Hamiltonian
//! `H_N(σ) = N^{-(p-1)/2} Σ J_{i_1…i_p} σ_{i_1}…σ_{i_p}` on the sphere of
//! radius `√N`, with Euclidean and Riemannian derivatives.

use crate::error::{invalid, Error, Result};
use crate::rng::{self, StreamRng, TaskKind};
use crate::theory::ModelParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;

/// Default cap on the number of tensor entries.
pub const DEFAULT_ENTRY_BUDGET: u128 = 1 << 31;

/// The i.i.d. standard normal coefficient array of one Hamiltonian, stored
/// row-major over ordered multi-indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderTensor {
    params: ModelParams,
    coefficients: Vec<f64>,
    seed: u64,
}

fn check_budget(params: ModelParams, budget: u128) -> Result<usize> {
    let entries = params.tensor_len();
    if entries > budget {
        return Err(Error::ResourceLimit { entries, budget });
    }
    Ok(entries as usize)
}

impl DisorderTensor {
    /// Samples the disorder for `params` from the stream of `seed`.
    pub fn sample(params: ModelParams, seed: u64) -> Result<Self> {
        Self::sample_with_budget(params, seed, DEFAULT_ENTRY_BUDGET)
    }

    pub fn sample_with_budget(params: ModelParams, seed: u64, budget: u128) -> Result<Self> {
        let params = ModelParams::new(params.p, params.n)?;
        let len = check_budget(params, budget)?;
        let mut rng = rng::stream(seed, TaskKind::Disorder, 0);
        let coefficients = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(DisorderTensor { params, coefficients, seed })
    }

    /// Wraps explicit coefficients (length must be `N^p`).
    pub fn from_coefficients(params: ModelParams, coefficients: Vec<f64>, seed: u64) -> Result<Self> {
        let params = ModelParams::new(params.p, params.n)?;
        let len = check_budget(params, DEFAULT_ENTRY_BUDGET)?;
        if coefficients.len() != len {
            return Err(invalid(format!("expected {len} coefficients, got {}", coefficients.len())));
        }
        Ok(DisorderTensor { params, coefficients, seed })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Direct evaluation of the defining sum over ordered multi-indices,
    /// contracting the last index first.
    pub fn evaluate(&self, sigma: &SpherePoint) -> f64 {
        let n = self.params.n as usize;
        assert_eq!(sigma.dim(), n, "dimension mismatch");
        let x = sigma.coords().as_slice();
        let mut current = contract_last(&self.coefficients, x);
        while current.len() > 1 {
            current = contract_last(&current, x);
        }
        current[0] * scale(self.params)
    }

    /// The Hamiltonian as a symmetric form, used for derivatives.
    pub fn hamiltonian(&self) -> Hamiltonian {
        Hamiltonian::from_disorder(self)
    }

    /// Writes the binary disorder format: magic `PSPN`, version `u16 = 1`,
    /// `p: u16`, `N: u32`, `seed: u64`, then `N^p` little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"PSPN")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&(self.params.p as u16).to_le_bytes())?;
        w.write_all(&self.params.n.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for c in &self.coefficients {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PSPN" {
            return Err(Error::Format("bad magic, expected PSPN".into()));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != 1 {
            return Err(Error::Format(format!("unsupported disorder file version {version}")));
        }
        r.read_exact(&mut b2)?;
        let p = u16::from_le_bytes(b2) as u32;
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let params = ModelParams::new(p, n).map_err(|e| Error::Format(e.to_string()))?;
        let len = check_budget(params, DEFAULT_ENTRY_BUDGET)?;
        let mut coefficients = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8).map_err(|_| Error::Format("truncated coefficient block".into()))?;
            coefficients.push(f64::from_le_bytes(b8));
        }
        if r.read(&mut b8)? != 0 {
            return Err(Error::Format("trailing bytes after coefficient block".into()));
        }
        Ok(DisorderTensor { params, coefficients, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn scale(params: ModelParams) -> f64 {
    (params.n as f64).powf(-(params.p as f64 - 1.0) / 2.0)
}

// Contracts the last (contiguous) index of a row-major tensor with `x`.
fn contract_last(t: &[f64], x: &[f64]) -> Vec<f64> {
    t.chunks_exact(x.len()).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// A point of the sphere of radius `√N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(DVector<f64>);

impl SpherePoint {
    /// Projects a nonzero vector radially onto the sphere of radius `√dim`.
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        let norm = coords.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("cannot project a zero or non-finite vector onto the sphere"));
        }
        let r = (coords.len() as f64).sqrt();
        Ok(SpherePoint(coords * (r / norm)))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// Uniform point on the sphere from normalised Gaussians.
    pub fn random(n: usize, rng: &mut StreamRng) -> Self {
        loop {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(p) = SpherePoint::new(v) {
                return p;
            }
        }
    }

    /// `√N e_N`.
    pub fn north_pole(n: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[n - 1] = (n as f64).sqrt();
        SpherePoint(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.0
    }

    pub fn antipode(&self) -> Self {
        SpherePoint(-&self.0)
    }

    /// Radius residual `|‖σ‖² - N| / N`.
    pub fn radius_error(&self) -> f64 {
        let n = self.dim() as f64;
        (self.0.norm_squared() - n).abs() / n
    }
}

/// Normalised inner product `⟨a, b⟩/N`.
pub fn overlap(a: &SpherePoint, b: &SpherePoint) -> f64 {
    a.0.dot(&b.0) / a.dim() as f64
}

/// An orthonormal basis of the tangent space at a point, stored as the
/// `N × (N-1)` matrix of basis columns.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    basepoint: SpherePoint,
    basis: DMatrix<f64>,
    // Householder vector when the frame is the reflected identity.
    reflector: Option<DVector<f64>>,
}

impl LocalFrame {
    /// Frame from the Householder reflection exchanging the north pole and
    /// `σ/√N`: the first `N-1` columns of the reflected identity.
    pub fn householder(basepoint: &SpherePoint) -> Self {
        let n = basepoint.dim();
        let u = basepoint.coords() / (n as f64).sqrt();
        let mut w = -u;
        w[n - 1] += 1.0;
        let ww = w.norm_squared();
        let reflector = if ww > 1e-28 { Some(w) } else { None };
        let basis = match &reflector {
            Some(w) => {
                let c = 2.0 / ww;
                DMatrix::from_fn(n, n - 1, |i, j| if i == j { 1.0 } else { 0.0 } - c * w[i] * w[j])
            }
            None => DMatrix::identity(n, n - 1),
        };
        LocalFrame { basepoint: basepoint.clone(), basis, reflector }
    }

    /// The Householder frame rotated by a Haar-random orthogonal matrix of
    /// the tangent space.
    pub fn random(basepoint: &SpherePoint, rng: &mut StreamRng) -> Self {
        let base = Self::householder(basepoint);
        let m = basepoint.dim() - 1;
        let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        LocalFrame { basepoint: basepoint.clone(), basis: base.basis * q, reflector: None }
    }

    /// Frame from explicit basis columns; checks orthonormality and
    /// tangency to within `1e-10`.
    pub fn from_basis(basepoint: &SpherePoint, basis: DMatrix<f64>) -> Result<Self> {
        let n = basepoint.dim();
        if basis.nrows() != n || basis.ncols() != n - 1 {
            return Err(invalid("frame must be N × (N-1)"));
        }
        let gram = basis.transpose() * &basis;
        let ortho = (gram - DMatrix::identity(n - 1, n - 1)).amax();
        let u = basepoint.coords() / (n as f64).sqrt();
        let tangency = (basis.transpose() * u).amax();
        if ortho > 1e-10 || tangency > 1e-10 {
            return Err(invalid(format!("frame not orthonormal/tangent: {ortho:.2e}, {tangency:.2e}")));
        }
        Ok(LocalFrame { basepoint: basepoint.clone(), basis, reflector: None })
    }

    pub fn basepoint(&self) -> &SpherePoint {
        &self.basepoint
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Tangent vector with frame components `xi`.
    pub fn to_ambient(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.basis * xi
    }

    /// Frame components of an ambient vector.
    pub fn to_frame(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    /// `Bᵀ A B` for a symmetric ambient matrix `A`.
    pub fn restrict(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.basis.ncols();
        match &self.reflector {
            Some(w) => {
                // Q A Q for Q = I - c w wᵀ, then drop the last row and column.
                let c = 2.0 / w.norm_squared();
                let aw = a * w;
                let waw = w.dot(&aw);
                let mut out = a.clone();
                for i in 0..out.nrows() {
                    for j in 0..out.ncols() {
                        out[(i, j)] += -c * (w[i] * aw[j] + aw[i] * w[j]) + c * c * waw * w[i] * w[j];
                    }
                }
                out.view((0, 0), (m, m)).into_owned()
            }
            None => self.basis.tr_mul(&(a * &self.basis)),
        }
    }
}

/// Value and derivatives of `H_N` at a point.
#[derive(Debug, Clone)]
pub struct LocalJet {
    pub value: f64,
    pub euclidean_grad: DVector<f64>,
    pub euclidean_hess: DMatrix<f64>,
}

/// Riemannian gradient and Hessian in a tangent frame.
#[derive(Debug, Clone)]
pub struct RiemannianJet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// `H_N` as a symmetric p-linear form: the disorder averaged over index
/// permutations and multiplied by `N^{-(p-1)/2}`. It defines the same
/// polynomial as the raw tensor and makes derivatives single contractions.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    params: ModelParams,
    form: Vec<f64>,
}

impl Hamiltonian {
    pub fn from_disorder(j: &DisorderTensor) -> Self {
        let params = j.params();
        let n = params.n as usize;
        let p = params.p as usize;
        let len = j.coefficients.len();
        // Average over each multiset class of indices: every ordered
        // multi-index is mapped to its sorted representative.
        let mut sums = vec![0.0; len];
        let mut counts = vec![0u32; len];
        let mut canon = vec![0usize; len];
        let mut digits = vec![0usize; p];
        for (idx, c) in canon.iter_mut().enumerate() {
            let mut r = idx;
            for d in digits.iter_mut().rev() {
                *d = r % n;
                r /= n;
            }
            digits.sort_unstable();
            *c = digits.iter().fold(0, |acc, &d| acc * n + d);
            sums[*c] += j.coefficients[idx];
            counts[*c] += 1;
        }
        let s = scale(params);
        let form = canon.iter().map(|&c| s * sums[c] / counts[c] as f64).collect();
        Hamiltonian { params, form }
    }

    /// `self + weight · other`, the form of `H + weight·H'`.
    pub fn combined(&self, other: &Hamiltonian, weight: f64) -> Result<Hamiltonian> {
        if self.params != other.params {
            return Err(invalid("cannot combine Hamiltonians of different (p, N)"));
        }
        let form = self.form.iter().zip(&other.form).map(|(a, b)| a + weight * b).collect();
        Ok(Hamiltonian { params: self.params, form })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    // Contracts all but two indices with σ.
    fn matrix_at(&self, x: &[f64]) -> Vec<f64> {
        let n = self.params.n as usize;
        let mut current = contract_last(&self.form, x);
        while current.len() > n * n {
            current = contract_last(&current, x);
        }
        current
    }

    pub fn value(&self, sigma: &SpherePoint) -> f64 {
        let x = sigma.coords().as_slice();
        let b = self.matrix_at(x);
        let bx = contract_last(&b, x);
        bx.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Exact Euclidean gradient and Hessian of the polynomial on `R^N`.
    pub fn euclidean_jet(&self, sigma: &SpherePoint) -> LocalJet {
        let n = self.params.n as usize;
        let p = self.params.p as f64;
        let x = sigma.coords().as_slice();
        let b = self.matrix_at(x);
        let bx = contract_last(&b, x);
        let value = bx.iter().zip(x).map(|(a, b)| a * b).sum();
        let euclidean_grad = DVector::from_iterator(n, bx.iter().map(|v| p * v));
        let euclidean_hess = DMatrix::from_row_iterator(n, n, b.iter().map(|v| p * (p - 1.0) * v));
        LocalJet { value, euclidean_grad, euclidean_hess }
    }

    /// Riemannian gradient and Hessian on the sphere of radius `√N`,
    /// expressed in `frame`: the tangent part of the Euclidean gradient and
    /// the restricted Euclidean Hessian minus `(p H/N) I`.
    pub fn riemannian_jet(&self, frame: &LocalFrame) -> RiemannianJet {
        let sigma = frame.basepoint();
        let jet = self.euclidean_jet(sigma);
        let n = sigma.dim() as f64;
        let radial = self.params.p as f64 * jet.value / n;
        let grad = frame.to_frame(&jet.euclidean_grad);
        let mut hess = frame.restrict(&jet.euclidean_hess);
        for i in 0..hess.nrows() {
            hess[(i, i)] -= radial;
        }
        // Symmetrise away rounding from the frame change.
        let hess = (&hess + hess.transpose()) * 0.5;
        RiemannianJet { value: jet.value, grad, hess }
    }

    /// Norm of the Riemannian gradient (frame independent).
    pub fn riemannian_grad_norm(&self, sigma: &SpherePoint) -> f64 {
        let jet = self.euclidean_jet(sigma);
        let n = sigma.dim() as f64;
        let radial = jet.euclidean_grad.dot(sigma.coords()) / n;
        (jet.euclidean_grad - sigma.coords() * radial).norm()
    }
}

/// One Lemma-7.2 style entry: Monte Carlo estimate against its exact target.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub name: String,
    pub target: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `|estimate - target| / std_error`.
    pub z: f64,
    /// Mixed finite difference of `W(x, y)^p` for the same entry.
    pub finite_difference: f64,
    pub fd_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    pub trials: usize,
    pub entries: Vec<CovarianceEntry>,
}

impl CovarianceReport {
    pub fn max_z(&self) -> f64 {
        self.entries.iter().map(|e| e.z).fold(0.0, f64::max)
    }

    pub fn max_fd_error(&self) -> f64 {
        self.entries.iter().map(|e| e.fd_error).fold(0.0, f64::max)
    }
}

/// Covariance of the chart field at the north pole, `W(x, y)^p` with
/// `W(x, y) = ⟨x, y⟩ + sqrt(1-|x|²) sqrt(1-|y|²)`.
pub fn chart_covariance(x: &[f64], y: &[f64], p: u32) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum();
    let ny: f64 = y.iter().map(|a| a * a).sum();
    (dot + (1.0 - nx).sqrt() * (1.0 - ny).sqrt()).powi(p as i32)
}

/// Mixed partial derivative of `f` at `point` by tensor-product central
/// differences, refined by Richardson extrapolation over four halvings of
/// the step. `orders[k]` is the derivative order (0, 1 or 2) in variable `k`.
pub fn mixed_partial<F: Fn(&[f64]) -> f64>(f: &F, point: &[f64], orders: &[u8], h0: f64) -> f64 {
    let estimate = |h: f64| -> f64 {
        let vars: Vec<usize> = (0..orders.len()).filter(|&k| orders[k] > 0).collect();
        let stencil = |order: u8| -> Vec<(f64, f64)> {
            match order {
                1 => vec![(-1.0, -0.5 / h), (1.0, 0.5 / h)],
                2 => vec![(-1.0, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (1.0, 1.0 / (h * h))],
                _ => panic!("derivative order must be 1 or 2"),
            }
        };
        let stencils: Vec<Vec<(f64, f64)>> = vars.iter().map(|&k| stencil(orders[k])).collect();
        let mut total = 0.0;
        let mut idx = vec![0usize; vars.len()];
        let mut x = point.to_vec();
        loop {
            let mut w = 1.0;
            for (slot, &k) in vars.iter().enumerate() {
                let (off, c) = stencils[slot][idx[slot]];
                x[k] = point[k] + off * h;
                w *= c;
            }
            total += w * f(&x);
            let mut s = 0;
            loop {
                if s == vars.len() {
                    return total;
                }
                idx[s] += 1;
                if idx[s] < stencils[s].len() {
                    break;
                }
                idx[s] = 0;
                s += 1;
            }
        }
    };
    let mut table: Vec<f64> = (0..4).map(|k| estimate(h0 / 2f64.powi(k))).collect();
    for level in 1..4 {
        let factor = 4f64.powi(level);
        for k in (level as usize..4).rev() {
            table[k] = (factor * table[k] - table[k - 1]) / (factor - 1.0);
        }
    }
    table[3]
}

/// Monte Carlo check of the joint law of the value, gradient and Hessian of
/// the chart field `f̄_n(x) = H_N(√N P(x))/√N` at the north pole.
///
/// Each trial samples an independent disorder from the `(seed, trial)`
/// stream. Entries are pooled within a trial over a few index choices and
/// their standard errors come from the across-trial spread.
pub fn verify_covariance_structure(params: ModelParams, trials: usize, seed: u64) -> Result<CovarianceReport> {
    use rayon::prelude::*;
    let params = ModelParams::new(params.p, params.n.max(4))?;
    if trials < 2 {
        return Err(invalid("need at least two trials"));
    }
    let p = params.p as f64;
    let n = params.n as usize;
    let root_n = (n as f64).sqrt();
    let north = SpherePoint::north_pole(n);
    let frame = LocalFrame::householder(&north);

    // Per-trial statistics, in the order of `names` below.
    let per_trial: Vec<Result<[f64; 10]>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let tseed = rng::child_seed(seed, t as u64);
            let j = DisorderTensor::sample(params, tseed)?;
            let h = j.hamiltonian();
            let jet = h.riemannian_jet(&frame);
            let f0 = jet.value / root_n;
            let g = &jet.grad;
            let hess = &jet.hess * root_n;
            Ok([
                0.5 * (g[0] * g[0] + g[1] * g[1]),
                g[0] * g[1],
                0.5 * (f0 * hess[(0, 0)] + f0 * hess[(1, 1)]),
                f0 * hess[(0, 1)],
                0.5 * (hess[(0, 0)].powi(2) + hess[(1, 1)].powi(2)),
                hess[(0, 1)].powi(2),
                hess[(0, 0)] * hess[(1, 1)],
                0.5 * (g[0] * f0 + g[1] * f0),
                0.5 * (hess[(0, 1)] * g[2] + hess[(0, 0)] * g[1]),
                hess[(0, 0)] * g[0],
            ])
        })
        .collect();
    let rows: Vec<[f64; 10]> = per_trial.into_iter().collect::<Result<_>>()?;

    let c = |x: &[f64], y: &[f64]| chart_covariance(x, y, params.p);
    // Variables 0..3 are x_1..x_3, 3..6 are y_1..y_3.
    let cov6 = |v: &[f64]| c(&v[0..3], &v[3..6]);
    let zero = [0.0; 6];
    let fd = |orders: [u8; 6]| mixed_partial(&cov6, &zero, &orders, 0.2);
    let pp1 = p * (p - 1.0);
    let specs: [(&str, f64, f64); 10] = [
        ("var_grad", p, fd([1, 0, 0, 1, 0, 0])),
        ("cov_grad_i_grad_j", 0.0, fd([1, 0, 0, 0, 1, 0])),
        ("cov_value_hess_ii", -p, fd([0, 0, 0, 2, 0, 0])),
        ("cov_value_hess_ij", 0.0, fd([0, 0, 0, 1, 1, 0])),
        ("var_hess_ii", 3.0 * pp1 + p, fd([2, 0, 0, 2, 0, 0])),
        ("var_hess_ij", pp1, fd([1, 1, 0, 1, 1, 0])),
        ("cov_hess_ii_hess_jj", pp1 + p, fd([2, 0, 0, 0, 2, 0])),
        ("cov_grad_value", 0.0, fd([1, 0, 0, 0, 0, 0])),
        ("cov_hess_grad", 0.0, fd([1, 1, 0, 0, 0, 1])),
        ("cov_hess_ii_grad_i", 0.0, fd([2, 0, 0, 1, 0, 0])),
    ];
    let entries = specs
        .iter()
        .enumerate()
        .map(|(k, &(name, target, finite_difference))| {
            let column: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let s = crate::stats::Summary::of(&column);
            CovarianceEntry {
                name: name.to_string(),
                target,
                estimate: s.mean,
                std_error: s.std_error,
                z: (s.mean - target).abs() / s.std_error,
                finite_difference,
                fd_error: (finite_difference - target).abs(),
            }
        })
        .collect();
    Ok(CovarianceReport { p: params.p, n: params.n, trials, entries })
}
