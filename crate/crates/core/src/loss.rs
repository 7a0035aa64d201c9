//! The epsilon-skew Huber (ESH) loss family and the classical Huber pair.
//!
//! ESH is a four-branch loss in the standardized residual `u`:
//!
//! ```text
//!   u < c1        c1 u / (1+ε)² − c1² / (2 (1+ε)²)
//!   c1 ≤ u < 0    u² / (2 (1+ε)²)
//!   0 ≤ u ≤ c2    u² / (2 (1−ε)²)
//!   u > c2        c2 u / (1−ε)² − c2² / (2 (1−ε)²)
//! ```
//!
//! with `c1 < 0 < c2` and `−1 < ε < 1`. Zero belongs to the right-hand
//! branch everywhere, including `sign(0) = +1` in the observation-space
//! scores.

use crate::error::{EshError, Result};

/// Tuning triple of the ESH loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    c1: f64,
    c2: f64,
    eps: f64,
}

/// Which piece of the loss a standardized residual falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    LeftLinear,
    LeftQuadratic,
    RightQuadratic,
    RightLinear,
}

impl LossParams {
    pub fn new(c1: f64, c2: f64, eps: f64) -> Result<Self> {
        if !(c1 < 0.0 && c1.is_finite()) {
            return Err(EshError::InvalidParams(format!("c1 must be negative and finite, got {c1}")));
        }
        if !(c2 > 0.0 && c2.is_finite()) {
            return Err(EshError::InvalidParams(format!("c2 must be positive and finite, got {c2}")));
        }
        if !(eps > -1.0 && eps < 1.0) {
            return Err(EshError::InvalidParams(format!("eps must lie in (-1, 1), got {eps}")));
        }
        Ok(Self { c1, c2, eps })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Same tuning constants, different skewness.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.c1, self.c2, eps)
    }

    pub fn branch(&self, u: f64) -> Branch {
        if u < self.c1 {
            Branch::LeftLinear
        } else if u < 0.0 {
            Branch::LeftQuadratic
        } else if u <= self.c2 {
            Branch::RightQuadratic
        } else {
            Branch::RightLinear
        }
    }

    /// ρ_ESH(u).
    pub fn rho(&self, u: f64) -> f64 {
        self.rho_on(self.branch(u), u)
    }

    /// ψ(u) = ρ_ESH'(u): monotone, bounded by `c1/(1+ε)²` and `c2/(1−ε)²`.
    pub fn psi(&self, u: f64) -> f64 {
        self.psi_on(self.branch(u), u)
    }

    /// The formula of one branch, evaluated at any `u`.
    pub fn rho_on(&self, br: Branch, u: f64) -> f64 {
        let p2 = (1.0 + self.eps).powi(2);
        let m2 = (1.0 - self.eps).powi(2);
        match br {
            Branch::LeftLinear => (self.c1 * u - 0.5 * self.c1 * self.c1) / p2,
            Branch::LeftQuadratic => 0.5 * u * u / p2,
            Branch::RightQuadratic => 0.5 * u * u / m2,
            Branch::RightLinear => (self.c2 * u - 0.5 * self.c2 * self.c2) / m2,
        }
    }

    pub fn psi_on(&self, br: Branch, u: f64) -> f64 {
        let p2 = (1.0 + self.eps).powi(2);
        let m2 = (1.0 - self.eps).powi(2);
        match br {
            Branch::LeftLinear => self.c1 / p2,
            Branch::LeftQuadratic => u / p2,
            Branch::RightQuadratic => u / m2,
            Branch::RightLinear => self.c2 / m2,
        }
    }

    /// w(u) = ψ(u)/u, with the right-hand central value at u = 0.
    pub fn weight(&self, u: f64) -> f64 {
        let p2 = (1.0 + self.eps).powi(2);
        let m2 = (1.0 - self.eps).powi(2);
        match self.branch(u) {
            Branch::LeftLinear => self.c1 / (p2 * u),
            Branch::LeftQuadratic => 1.0 / p2,
            Branch::RightQuadratic => 1.0 / m2,
            Branch::RightLinear => self.c2 / (m2 * u),
        }
    }

    /// Largest |ψ|.
    pub fn psi_bound(&self) -> f64 {
        (self.c1.abs() / (1.0 + self.eps).powi(2)).max(self.c2 / (1.0 - self.eps).powi(2))
    }

    /// ln Z with Z = ∫ exp(−ρ(u)) du, the constant that turns exp(−ρ) into a density.
    pub fn log_normalizer(&self) -> f64 {
        // each side: Gaussian core up to |c|, exponential tail beyond
        let side = |c: f64, s2: f64| {
            let core = (0.5 * s2).sqrt()
                * crate::specfun::lower_incomplete_gamma(0.5, c * c / (2.0 * s2)).unwrap_or(f64::NAN);
            core + s2 / c * (-c * c / (2.0 * s2)).exp()
        };
        (side(-self.c1, (1.0 + self.eps).powi(2)) + side(self.c2, (1.0 - self.eps).powi(2))).ln()
    }

    /// ∂/∂θ ρ_ESH((x−θ)/(σ(1−sign(x−θ)ε))) at θ = 0, σ = 1.
    pub fn score_theta(&self, x: f64) -> f64 {
        self.scores_at(x, 0.0, 1.0)[0]
    }

    /// ∂/∂σ of the same standardized loss at θ = 0, σ = 1.
    pub fn score_sigma(&self, x: f64) -> f64 {
        self.scores_at(x, 0.0, 1.0)[1]
    }

    /// ∂/∂ε of the same standardized loss at θ = 0, σ = 1. Includes the
    /// explicit ε in the (1±ε)² denominators of ρ_ESH.
    pub fn score_eps(&self, x: f64) -> f64 {
        self.scores_at(x, 0.0, 1.0)[2]
    }

    /// (ψ_θ, ψ_σ, ψ_ε) at a general location and scale.
    pub fn scores_at(&self, x: f64, theta: f64, sigma: f64) -> [f64; 3] {
        let r = x - theta;
        let s = sign(r);
        let q = 1.0 - s * self.eps;
        let u = r / (sigma * q);
        match self.branch(u) {
            Branch::LeftQuadratic | Branch::RightQuadratic => {
                let q4 = q.powi(4);
                [
                    -r / (sigma * sigma * q4),
                    -r * r / (sigma.powi(3) * q4),
                    2.0 * s * r * r / (sigma * sigma * q4 * q),
                ]
            }
            br => {
                let c = if br == Branch::LeftLinear { self.c1 } else { self.c2 };
                let q3 = q.powi(3);
                [
                    -c / (sigma * q3),
                    -c * r / (sigma * sigma * q3),
                    3.0 * s * c * r / (sigma * q3 * q) - s * c * c / q3,
                ]
            }
        }
    }

    /// Second derivatives of the standardized loss with respect to
    /// (θ, σ, ε), holding sign(x − θ) fixed. Row/column order θ, σ, ε.
    pub fn second_scores_at(&self, x: f64, theta: f64, sigma: f64) -> [[f64; 3]; 3] {
        let r = x - theta;
        let s = sign(r);
        let q = 1.0 - s * self.eps;
        let u = r / (sigma * q);
        let s2 = sigma * sigma;
        let (tt, ts, te, ss, se, ee) = match self.branch(u) {
            Branch::LeftQuadratic | Branch::RightQuadratic => {
                let q4 = q.powi(4);
                let q5 = q4 * q;
                (
                    1.0 / (s2 * q4),
                    2.0 * r / (s2 * sigma * q4),
                    -4.0 * s * r / (s2 * q5),
                    3.0 * r * r / (s2 * s2 * q4),
                    -4.0 * s * r * r / (s2 * sigma * q5),
                    10.0 * r * r / (s2 * q5 * q),
                )
            }
            br => {
                let c = if br == Branch::LeftLinear { self.c1 } else { self.c2 };
                let q3 = q.powi(3);
                let q4 = q3 * q;
                (
                    0.0,
                    c / (s2 * q3),
                    -3.0 * s * c / (sigma * q4),
                    2.0 * c * r / (s2 * sigma * q3),
                    -3.0 * s * c * r / (s2 * q4),
                    12.0 * c * r / (sigma * q4 * q) - 3.0 * c * c / q4,
                )
            }
        };
        [[tt, ts, te], [ts, ss, se], [te, se, ee]]
    }
}

/// sign with sign(0) = +1.
#[inline]
pub fn sign(r: f64) -> f64 {
    if r >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Classical symmetric Huber pair with ρ' = 2ψ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    k: f64,
}

impl HuberParams {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(EshError::InvalidParams(format!("Huber k must be positive, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn rho(&self, u: f64) -> f64 {
        if u.abs() <= self.k {
            u * u
        } else {
            2.0 * self.k * u.abs() - self.k * self.k
        }
    }

    pub fn psi(&self, u: f64) -> f64 {
        u.clamp(-self.k, self.k)
    }

    /// The ESH triple (−k, k, 0), whose ψ coincides with this pair's ψ.
    pub fn as_esh(&self) -> LossParams {
        LossParams { c1: -self.k, c2: self.k, eps: 0.0 }
    }
}

/// One row of a tabulated loss: (u, ρ, ψ, w).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub u: f64,
    pub rho: f64,
    pub psi: f64,
    pub weight: f64,
}

/// Tabulate ρ, ψ and w on `from, from + step, ...` up to and including `to`
/// (within half a step).
pub fn loss_table(p: &LossParams, from: f64, to: f64, step: f64) -> Result<Vec<LossRow>> {
    if !(step > 0.0) || !(to >= from) || !from.is_finite() || !to.is_finite() {
        return Err(EshError::Config(format!("bad grid from={from} to={to} step={step}")));
    }
    let count = ((to - from) / step + 0.5).floor() as usize + 1;
    Ok((0..count)
        .map(|i| {
            let u = from + i as f64 * step;
            LossRow { u, rho: p.rho(u), psi: p.psi(u), weight: p.weight(u) }
        })
        .collect())
}
