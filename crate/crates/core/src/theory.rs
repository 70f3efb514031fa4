//! Closed-form functions of the spherical pure p-spin model: the semicircle
//! law and its log-potential, the complexity function, the ground-state
//! constants and the limiting Gumbel law.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Interaction degree `p` and ambient dimension `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
}

impl ModelParams {
    pub fn new(p: u32, n: u32) -> Result<Self> {
        if p < 3 {
            return Err(invalid(format!("p must be at least 3, got {p}")));
        }
        if n < 2 {
            return Err(invalid(format!("N must be at least 2, got {n}")));
        }
        Ok(ModelParams { p, n })
    }

    /// Number of entries of the disorder tensor, `N^p`.
    pub fn tensor_len(&self) -> u128 {
        (self.n as u128).pow(self.p)
    }

    pub fn is_even(&self) -> bool {
        self.p % 2 == 0
    }
}

/// `γ_p = sqrt(p/(p-1))`.
pub fn gamma_p(p: u32) -> f64 {
    (p as f64 / (p as f64 - 1.0)).sqrt()
}

/// `ι_p = (1 + (-1)^p)/2`.
pub fn iota_p(p: u32) -> f64 {
    if p % 2 == 0 { 1.0 } else { 0.0 }
}

/// `E_∞ = 2 sqrt((p-1)/p)`, the threshold energy.
pub fn e_inf(p: u32) -> f64 {
    2.0 * ((p as f64 - 1.0) / p as f64).sqrt()
}

/// Density of the semicircle law on `[-2, 2]`.
pub fn semicircle_density(x: f64) -> f64 {
    if x.abs() <= 2.0 {
        (4.0 - x * x).sqrt() / (2.0 * PI)
    } else {
        0.0
    }
}

/// Distribution function of the semicircle law.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        0.0
    } else if x >= 2.0 {
        1.0
    } else {
        0.5 + (x * (4.0 - x * x).sqrt() / 4.0 + (x / 2.0).asin()) / PI
    }
}

/// Stieltjes transform `∫ dμ*(λ)/(z - λ)` for real `|z| > 2`.
pub fn semicircle_stieltjes(z: f64) -> Result<f64> {
    if z.abs() <= 2.0 {
        return Err(Error::Domain(format!("Stieltjes transform needs |z| > 2, got {z}")));
    }
    Ok((z - z.signum() * (z * z - 4.0).sqrt()) / 2.0)
}

/// Log-potential `Ω(x) = ∫ log|λ - x| dμ*(λ)` of the semicircle law.
pub fn omega(x: f64) -> f64 {
    let a = x.abs();
    let inner = x * x / 4.0 - 0.5;
    if a <= 2.0 {
        inner
    } else {
        inner - (a / 4.0 * (x * x - 4.0).sqrt() - ((x * x / 4.0 - 1.0).sqrt() + a / 2.0).ln())
    }
}

/// Derivative of [`omega`]. Outside `[-2, 2]` it coincides with the
/// Stieltjes transform of the semicircle law.
pub fn omega_prime(x: f64) -> f64 {
    if x.abs() <= 2.0 {
        x / 2.0
    } else {
        x / 2.0 - x.signum() * (x * x - 4.0).sqrt() / 2.0
    }
}

/// Complexity function `Θ_p(u)`: the exponential growth rate of the mean
/// number of critical points below level `N u`.
pub fn theta(u: f64, p: u32) -> f64 {
    let half_log = 0.5 * (p as f64 - 1.0).ln();
    if u < 0.0 {
        0.5 + half_log - u * u / 2.0 + omega(gamma_p(p) * u)
    } else {
        half_log
    }
}

/// Derivative of [`theta`] on the negative half-line.
pub fn theta_prime(u: f64, p: u32) -> Result<f64> {
    if u >= 0.0 {
        return Err(Error::Domain(format!("theta_prime is defined for u < 0, got {u}")));
    }
    let g = gamma_p(p);
    Ok(-u + g * omega_prime(g * u))
}

/// `h̃(x) = |(x-1)/(x+1)|^{1/4} + |(x+1)/(x-1)|^{1/4}`.
pub fn h_tilde(x: f64) -> Result<f64> {
    if x == 1.0 || x == -1.0 {
        return Err(Error::Domain(format!("h_tilde has a pole at {x}")));
    }
    let r = ((x - 1.0) / (x + 1.0)).abs();
    Ok(r.powf(0.25) + r.powf(-0.25))
}

/// Logarithm of the area of the unit sphere in `R^N`,
/// `log 2 + (N/2) log π - log Γ(N/2)`.
pub fn log_omega_surface(n: u32) -> Result<f64> {
    if n < 1 {
        return Err(invalid("sphere dimension must be at least 1"));
    }
    let half = n as f64 / 2.0;
    Ok(2f64.ln() + half * PI.ln() - statrs::function::gamma::ln_gamma(half))
}

/// Limiting law of the centred ground state, `P{min - m_N < x}`.
pub fn gumbel_min_cdf(x: f64, c_p: f64) -> f64 {
    -(-(c_p * x).exp() / c_p).exp_m1()
}

/// Median of [`gumbel_min_cdf`], `(1/c) log(c log 2)`.
pub fn gumbel_min_median(c_p: f64) -> f64 {
    (c_p * 2f64.ln()).ln() / c_p
}

/// The constants governing the bottom of the landscape for a given `(p, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub p: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(serialize_with = "sig17")]
    pub gamma_p: f64,
    #[serde(serialize_with = "sig17")]
    pub iota_p: f64,
    #[serde(rename = "E_inf", serialize_with = "sig17")]
    pub e_inf: f64,
    #[serde(rename = "E_0", serialize_with = "sig17")]
    pub e_0: f64,
    #[serde(serialize_with = "sig17")]
    pub c_p: f64,
    #[serde(rename = "C_0", serialize_with = "sig17")]
    pub c_0: f64,
    #[serde(rename = "K_0", serialize_with = "sig17")]
    pub k_0: f64,
    #[serde(rename = "m_N", serialize_with = "sig17")]
    pub m_n: f64,
}

/// `x` with 17 significant digits, as JSON number text.
pub fn format_sig17(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    if x == 0.0 {
        return "0.0000000000000000".to_string();
    }
    let e = x.abs().log10().floor() as i32;
    // Rounding can carry into the next decade; the exponent form is exact.
    let sci = format!("{:.16e}", x);
    let exp: i32 = sci.split('e').nth(1).and_then(|t| t.parse().ok()).unwrap_or(e);
    if (-5..16).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, x)
    } else {
        sci
    }
}

fn sig17<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = serde_json::value::RawValue::from_string(format_sig17(*x)).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

impl TheoryConstants {
    pub fn params(&self) -> ModelParams {
        ModelParams { p: self.p, n: self.n }
    }

    /// Asymptotic mean number of atoms of the extremal process in `[a, b]`,
    /// `∫_a^b e^{c_p x} dx`.
    pub fn limit_mass(&self, a: f64, b: f64) -> f64 {
        ((self.c_p * b).exp() - (self.c_p * a).exp()) / self.c_p
    }
}

const BISECTION_TOL: f64 = 1e-12;

/// Ground-state energy `E_0`: the root of `E ↦ Θ_p(-E)` above `E_∞`.
pub fn ground_state_energy(p: u32) -> Result<f64> {
    let f = |e: f64| theta(-e, p);
    let mut lo = e_inf(p) + 1e-9;
    let mut hi = 10.0;
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::Numerical(format!(
            "no sign change of Θ_{p}(-E) on [{lo}, {hi}]: values {flo}, {fhi}"
        )));
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // One secant step on the final bracket pushes |Θ| well below the
    // bisection width times c_p.
    let (flo, fhi) = (f(lo), f(hi));
    let root = if fhi != flo { lo - flo * (hi - lo) / (fhi - flo) } else { 0.5 * (lo + hi) };
    Ok(root.clamp(lo, hi))
}

/// The centering constant in the form `E_0/2 - (1/c_p) log((1+ι_p) h̃/(2√(2π)))`.
/// With it the intensity at `m_N` tends to `h̃² e^{-c_p E_0}/(4√2 π)` (about
/// 0.276 for p = 3) rather than 1; kept for comparison with
/// [`TheoryConstants::k_0`].
pub fn k_0_as_printed(p: u32) -> Result<f64> {
    let g = gamma_p(p);
    let e_0 = ground_state_energy(p)?;
    let c_p = theta_prime(-e_0, p)?;
    let h = h_tilde(-0.5 * g * e_0)?;
    Ok(0.5 * e_0 - ((1.0 + iota_p(p)) / (2.0 * (2.0 * PI).sqrt()) * h).ln() / c_p)
}

/// Solves for every constant of the model at `(p, N)`.
pub fn solve_constants(params: ModelParams) -> Result<TheoryConstants> {
    let ModelParams { p, n } = ModelParams::new(params.p, params.n)?;
    let g = gamma_p(p);
    let iota = iota_p(p);
    let e_0 = ground_state_energy(p)?;
    let c_p = theta_prime(-e_0, p)?;
    let c_0 = 0.5 * g * semicircle_stieltjes(g * e_0)?;
    let h = h_tilde(-0.5 * g * e_0)?;
    // Chosen so that (1+ι_p)^{-1} ρ_N(x + m_N) → e^{c_p x}, where
    // ρ_N(u) ~ h̃/(2√π) exp{c_p(u + E_0 N - E_0/2) - ½ log N}.
    let k_0 = -0.5 * e_0 + (h / ((1.0 + iota) * 2.0 * PI.sqrt())).ln() / c_p;
    let nf = n as f64;
    let m_n = -e_0 * nf + nf.ln() / (2.0 * c_p) - k_0;
    Ok(TheoryConstants { p, n, gamma_p: g, iota_p: iota, e_inf: e_inf(p), e_0, c_p, c_0, k_0, m_n })
}
