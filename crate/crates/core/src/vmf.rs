//! von Mises-Fisher machinery: the Bessel ratio `A_d(κ) = I_{d/2}(κ) / I_{d/2-1}(κ)`,
//! the KL constant `C_κ = κ A_d(κ) / 2`, reparameterized sampling, and the
//! latent distance used for retrieval.
//!
//! Sampling follows Wood's rejection scheme for the component `ω` along the
//! mean direction and rotates `e₁` onto `μ` with a Householder reflection, so
//! gradients reach `μ` while `ω` stays constant (its law depends only on κ).

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{dot, NodeId, Tape};

/// Hard cap on rejection-loop iterations per sample.
pub const MAX_REJECTION_TRIES: usize = 1000;

const CF_MAX_TERMS: usize = 10_000;
const CF_TOL: f64 = 1e-16;
const LENTZ_TINY: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct VmfParams {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "vMF dimension {} must be at least 3",
                mu.len()
            )));
        }
        let norm = dot(&mu, &mu).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mean direction has norm {norm}"
            )));
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kappa {kappa} must be positive"
            )));
        }
        Ok(Self { mu, kappa })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Mean directions of the utterance and context latents plus the shared κ.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu_x: Vec<f64>,
    pub mu_c: Vec<f64>,
    pub kappa: f64,
}

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.mu_x.len()
    }

    /// `[μ_x; μ_c]`
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.mu_x.clone();
        v.extend_from_slice(&self.mu_c);
        v
    }
}

fn check_order(d: usize, kappa: f64) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} must be at least 2"
        )));
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kappa {kappa} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// `I_{d/2}(κ) / I_{d/2-1}(κ)`, in `[0, 1)`.
pub fn bessel_ratio(d: usize, kappa: f64) -> Result<f64> {
    check_order(d, kappa)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let nu = d as f64 / 2.0;
    match perron_ratio(nu, kappa) {
        Some(r) => Ok(r),
        None => Ok(log_series_ratio(nu, kappa)),
    }
}

/// Perron's continued fraction
/// `x / (2ν + x − (2ν+1)x / (2ν+1+2x − (2ν+3)x / (2ν+2+2x − …)))`,
/// evaluated forward with the modified Lentz method.
fn perron_ratio(nu: f64, x: f64) -> Option<f64> {
    let mut f = 2.0 * nu + x;
    if f.abs() < LENTZ_TINY {
        f = LENTZ_TINY;
    }
    let mut c = f;
    let mut d = 0.0;
    for k in 1..=CF_MAX_TERMS {
        let kf = k as f64;
        let a = -(2.0 * nu + 2.0 * kf - 1.0) * x;
        let b = 2.0 * nu + kf + 2.0 * x;
        d = b + a * d;
        if d.abs() < LENTZ_TINY {
            d = LENTZ_TINY;
        }
        c = b + a / c;
        if c.abs() < LENTZ_TINY {
            c = LENTZ_TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < CF_TOL {
            return Some(x / f);
        }
    }
    None
}

/// Ratio from the power series of both Bessel functions, summed in log space.
fn log_series_ratio(nu: f64, x: f64) -> f64 {
    let log_sum = |order: f64| {
        let q = 2.0 * (x / 2.0).ln();
        let mut log_t = 0.0f64;
        let mut acc = 0.0f64; // log of running sum, first term is exp(0)
        let mut k = 0.0;
        loop {
            log_t += q - (k + 1.0f64).ln() - (k + order + 1.0).ln();
            k += 1.0;
            let hi = acc.max(log_t);
            acc = hi + ((acc - hi).exp() + (log_t - hi).exp()).ln();
            if log_t < acc - 40.0 && k > x {
                break acc;
            }
        }
    };
    // I_ν(x) = (x/2)^ν / Γ(ν+1) · S_ν, and Γ(ν+1) = ν Γ(ν)
    (x / 2.0) / nu * (log_sum(nu) - log_sum(nu - 1.0)).exp()
}

/// `C_κ = κ · I_{d/2}(κ) / (2 I_{d/2-1}(κ))`.
pub fn c_kappa(d: usize, kappa: f64) -> Result<f64> {
    Ok(kappa * bessel_ratio(d, kappa)? / 2.0)
}

/// Draws `ω = μᵀz` by Wood's rejection sampler.
pub fn sample_omega<R: Rng + ?Sized>(d: usize, kappa: f64, rng: &mut R) -> Result<f64> {
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} must be at least 3"
        )));
    }
    let m1 = (d - 1) as f64;
    let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m1 / 2.0, m1 / 2.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for _ in 0..MAX_REJECTION_TRIES {
        let z: f64 = beta.sample(rng);
        let omega = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * omega + m1 * (1.0 - x0 * omega).ln() - c >= u.ln() {
            return Ok(omega);
        }
    }
    Err(Error::SamplerExhausted(MAX_REJECTION_TRIES))
}

/// A vMF(e₁, κ) draw: `[ω; √(1-ω²) v]` with `v` uniform on the unit sphere of dimension `d-1`.
pub fn sample_frame<R: Rng + ?Sized>(d: usize, kappa: f64, rng: &mut R) -> Result<Vec<f64>> {
    let omega = sample_omega(d, kappa, rng)?;
    let mut v: Vec<f64> = (0..d - 1).map(|_| StandardNormal.sample(rng)).collect();
    let n = dot(&v, &v).sqrt();
    let r = (1.0 - omega * omega).max(0.0).sqrt();
    v.iter_mut().for_each(|x| *x *= r / n);
    let mut w = Vec::with_capacity(d);
    w.push(omega);
    w.extend(v);
    Ok(w)
}

/// Plain (non-differentiable) vMF sample.
pub fn vmf_sample<R: Rng + ?Sized>(p: &VmfParams, rng: &mut R) -> Result<Vec<f64>> {
    let w = sample_frame(p.dim(), p.kappa, rng)?;
    Ok(householder_apply(&p.mu, &w))
}

/// vMF sample recorded on the tape; the gradient flows to `mu` through the reflection.
pub fn vmf_sample_node<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    mu: NodeId,
    kappa: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let d = tape.value(mu).len();
    let w = sample_frame(d, kappa, rng)?;
    Ok(tape.householder(mu, w))
}

/// Reflection carrying `e₁` to `mu`, applied to `w`.
pub fn householder_apply(mu: &[f64], w: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = mu.iter().map(|v| -v).collect();
    a[0] += 1.0;
    let n = dot(&a, &a);
    if n < 1e-30 {
        return w.to_vec();
    }
    let s = dot(&a, w);
    w.iter()
        .zip(&a)
        .map(|(wi, ai)| wi - 2.0 * ai * s / n)
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closed-form `KL(vMF(μ₁,κ) ‖ vMF(μ₂,κ)) = C_κ ‖μ₁ − μ₂‖²`.
pub fn vmf_kl(mu1: &[f64], mu2: &[f64], d: usize, kappa: f64) -> Result<f64> {
    if mu1.len() != d || mu2.len() != d {
        return Err(Error::Shape(format!(
            "directions of length {} and {} for d = {d}",
            mu1.len(),
            mu2.len()
        )));
    }
    Ok(c_kappa(d, kappa)? * squared_distance(mu1, mu2))
}

/// Sum of the utterance and context KL terms between two latent codes.
pub fn latent_distance(a: &LatentCode, b: &LatentCode) -> Result<f64> {
    if a.kappa != b.kappa {
        return Err(Error::InvalidArgument(format!(
            "kappa mismatch: {} vs {}",
            a.kappa, b.kappa
        )));
    }
    let d = a.mu_x.len();
    if a.mu_c.len() != d || b.mu_x.len() != d || b.mu_c.len() != d {
        return Err(Error::Shape(
            "latent code halves differ in dimension".into(),
        ));
    }
    Ok(vmf_kl(&a.mu_x, &b.mu_x, d, a.kappa)? + vmf_kl(&a.mu_c, &b.mu_c, d, a.kappa)?)
}
