//! Epsilon-skew normal, Laplace and t distributions.
//!
//! All three are two-piece families: with z = (x − θ)/σ and
//! q = 1 − sign(z)ε the kernels are
//!
//! ```text
//!   ESN  exp(−z² / (2q²))
//!   ESL  exp(−|z| / (√2 q))
//!   ESt  (1 + z² / (ν q²))^(−(ν+1)/2)
//! ```
//!
//! so that P(X < θ) = (1+ε)/2 in every case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};

use crate::error::{EshError, Result};
use crate::loss::sign;
use crate::optim::nelder_mead;
use crate::specfun::ln_gamma;
use crate::univariate::{mad, median};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Esn,
    Esl,
    Est,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Esn => "ESN",
            Family::Esl => "ESL",
            Family::Est => "ESt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewFamilyParams {
    pub family: Family,
    pub theta: f64,
    pub sigma: f64,
    pub eps: f64,
    /// Degrees of freedom, used by ESt only.
    pub nu: Option<f64>,
}

impl SkewFamilyParams {
    pub fn new(family: Family, theta: f64, sigma: f64, eps: f64, nu: Option<f64>) -> Result<Self> {
        let p = Self { family, theta, sigma, eps, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn esn(theta: f64, sigma: f64, eps: f64) -> Result<Self> {
        Self::new(Family::Esn, theta, sigma, eps, None)
    }

    pub fn esl(theta: f64, sigma: f64, eps: f64) -> Result<Self> {
        Self::new(Family::Esl, theta, sigma, eps, None)
    }

    pub fn est(theta: f64, sigma: f64, eps: f64, nu: f64) -> Result<Self> {
        Self::new(Family::Est, theta, sigma, eps, Some(nu))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() {
            return Err(EshError::InvalidParams(format!("theta must be finite, got {}", self.theta)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EshError::InvalidParams(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.eps > -1.0 && self.eps < 1.0) {
            return Err(EshError::InvalidParams(format!("eps must lie in (-1, 1), got {}", self.eps)));
        }
        if self.family == Family::Est {
            match self.nu {
                Some(nu) if nu > 0.0 && nu.is_finite() => {}
                other => {
                    return Err(EshError::InvalidParams(format!("ESt needs nu > 0, got {other:?}")))
                }
            }
        }
        Ok(())
    }

    fn nu_or_nan(&self) -> f64 {
        self.nu.unwrap_or(f64::NAN)
    }
}

/// Two-component mixture; the default is the contaminated ESN used in the
/// simulations, 0.9·ESN(0, 1, ε) + 0.1·ESL(0, 1, ε).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub weight_primary: f64,
    pub primary: SkewFamilyParams,
    pub secondary: SkewFamilyParams,
}

impl MixtureSpec {
    pub fn new(weight_primary: f64, primary: SkewFamilyParams, secondary: SkewFamilyParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight_primary) {
            return Err(EshError::InvalidParams(format!(
                "mixture weight must be in [0, 1], got {weight_primary}"
            )));
        }
        primary.validate()?;
        secondary.validate()?;
        Ok(Self { weight_primary, primary, secondary })
    }

    pub fn contaminated_esn(eps0: f64) -> Result<Self> {
        Self::new(0.9, SkewFamilyParams::esn(0.0, 1.0, eps0)?, SkewFamilyParams::esl(0.0, 1.0, eps0)?)
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        let a = log_density(x, &self.primary)?;
        let b = log_density(x, &self.secondary)?;
        let w = self.weight_primary;
        Ok((w * a.exp() + (1.0 - w) * b.exp()).ln())
    }
}

/// Unchecked log density; callers validate first.
pub(crate) fn log_density_raw(x: f64, p: &SkewFamilyParams) -> f64 {
    let z = (x - p.theta) / p.sigma;
    let q = 1.0 - sign(z) * p.eps;
    let ls = p.sigma.ln();
    match p.family {
        Family::Esn => -0.5 * (z / q).powi(2) - LN_SQRT_2PI - ls,
        Family::Esl => -z.abs() / (std::f64::consts::SQRT_2 * q) - (2.0 * std::f64::consts::SQRT_2).ln() - ls,
        Family::Est => {
            let nu = p.nu_or_nan();
            let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
            c - ls - 0.5 * (nu + 1.0) * (z * z / (nu * q * q)).ln_1p()
        }
    }
}

/// Normalized log density.
pub fn log_density(x: f64, p: &SkewFamilyParams) -> Result<f64> {
    p.validate()?;
    Ok(log_density_raw(x, p))
}

/// Sum of log densities over a sample.
pub fn log_likelihood(data: &[f64], p: &SkewFamilyParams) -> Result<f64> {
    p.validate()?;
    Ok(data.iter().map(|&x| log_density_raw(x, p)).sum())
}

/// One draw using the two-piece construction: side first, then a scaled
/// half-normal, exponential or half-t magnitude.
pub fn draw<R: Rng + ?Sized>(p: &SkewFamilyParams, rng: &mut R) -> f64 {
    let left = rng.random::<f64>() < 0.5 * (1.0 + p.eps);
    let mag: f64 = match p.family {
        Family::Esn => {
            let z: f64 = StandardNormal.sample(rng);
            z.abs()
        }
        Family::Esl => {
            let e: f64 = Exp1.sample(rng);
            std::f64::consts::SQRT_2 * e
        }
        Family::Est => {
            let t = StudentT::new(p.nu_or_nan()).expect("validated nu");
            let v: f64 = t.sample(rng);
            v.abs()
        }
    };
    if left {
        p.theta - p.sigma * (1.0 + p.eps) * mag
    } else {
        p.theta + p.sigma * (1.0 - p.eps) * mag
    }
}

pub fn draw_mixture<R: Rng + ?Sized>(m: &MixtureSpec, rng: &mut R) -> f64 {
    // Degenerate weights skip the component draw so that a weight-1 mixture
    // reproduces the primary sampler's stream exactly.
    let primary = if m.weight_primary >= 1.0 {
        true
    } else if m.weight_primary <= 0.0 {
        false
    } else {
        rng.random::<f64>() < m.weight_primary
    };
    if primary {
        draw(&m.primary, rng)
    } else {
        draw(&m.secondary, rng)
    }
}

pub fn sample(p: &SkewFamilyParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    p.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw(p, &mut rng)).collect())
}

pub fn sample_mixture(m: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    m.primary.validate()?;
    m.secondary.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw_mixture(m, &mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlFit {
    pub params: SkewFamilyParams,
    pub log_lik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

const ML_STARTS: usize = 5;

/// Maximum likelihood over (θ, σ, ε) by Nelder–Mead on (θ, log σ, atanh ε),
/// restarted from the median/MAD/0 point and four perturbations of it.
pub fn fit_ml(data: &[f64], family: Family, nu_fixed: Option<f64>) -> Result<MlFit> {
    crate::univariate::check_sample(data)?;
    if family == Family::Est {
        match nu_fixed {
            Some(nu) if nu > 0.0 && nu.is_finite() => {}
            _ => return Err(EshError::InvalidParams("ESt fit needs a fixed nu > 0".into())),
        }
    }
    let med = median(data);
    let scale = {
        let m = mad(data);
        if m > 0.0 {
            m
        } else {
            let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            (hi - lo) / 4.0
        }
    };
    let unpack = |v: &[f64]| SkewFamilyParams {
        family,
        theta: v[0],
        sigma: v[1].exp(),
        eps: v[2].tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12),
        nu: nu_fixed,
    };
    let nll = |v: &[f64]| {
        let p = unpack(v);
        let s: f64 = data.iter().map(|&x| log_density_raw(x, &p)).sum();
        if s.is_finite() {
            -s
        } else {
            f64::INFINITY
        }
    };
    let starts: [[f64; 3]; ML_STARTS] = [
        [med, scale.ln(), 0.0],
        [med - 0.5 * scale, scale.ln(), 0.5],
        [med + 0.5 * scale, scale.ln(), -0.5],
        [med, (2.0 * scale).ln(), 0.0],
        [med, (0.5 * scale).ln(), 0.0],
    ];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut evaluations = 0;
    for s in &starts {
        let steps = [0.5 * scale, 0.3, 0.3];
        let r = nelder_mead(&nll, s, &steps, 1e-10, 4000);
        evaluations += r.evaluations;
        if best.as_ref().is_none_or(|b| r.value < b.1) {
            best = Some((r.x, r.value, r.converged));
        }
    }
    let (x, v, converged) = best.expect("at least one start");
    Ok(MlFit { params: unpack(&x), log_lik: -v, converged, evaluations })
}

/// (AIC, BIC) = (2k − 2 logL, −2 logL + k log n).
pub fn aic_bic(log_lik: f64, k: usize, n: f64) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k - 2.0 * log_lik, -2.0 * log_lik + k * n.ln())
}
