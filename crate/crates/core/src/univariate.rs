//! Joint M-estimation of location θ, scale σ and skewness ε.
//!
//! The objective is
//!
//! ```text
//!   Q(θ, σ, ε) = Σ ρ_ESH(uᵢ) + n log σ + Σ log(1 − sign(xᵢ − θ) ε),
//!   uᵢ = (xᵢ − θ) / (σ (1 − sign(xᵢ − θ) ε))
//! ```
//!
//! minimized by iterative reweighting: a weighted mean for θ, a weighted
//! second moment for σ and a one-dimensional root of ∂Q/∂ε for ε.

use crate::error::{EshError, Result};
use crate::loss::{sign, HuberParams, LossParams};
use crate::optim::bracketed_newton;

/// Distance kept from ±1 when ε is clamped.
pub const EPS_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Tuning constants; the ε stored here is not used by the fit.
    pub loss: LossParams,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting (θ, σ, ε); defaults to (median, MAD, 0).
    pub init: Option<(f64, f64, f64)>,
    /// Keep ε at its starting value instead of estimating it.
    pub hold_eps: bool,
}

impl FitConfig {
    pub fn new(loss: LossParams) -> Self {
        Self { loss, tol: 1e-8, max_iter: 500, init: None, hold_eps: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(EshError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(EshError::Config("max_iter must be at least 1".into()));
        }
        if let Some((t, s, e)) = self.init {
            if !t.is_finite() || !(s > 0.0) || !(e > -1.0 && e < 1.0) {
                return Err(EshError::Config(format!("invalid initial point ({t}, {s}, {e})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateFit {
    pub theta: f64,
    pub sigma: f64,
    pub eps: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_step_norm: f64,
    pub weights: Vec<f64>,
    pub objective: f64,
    /// ε hit the clamp at ±(1 − 1e-6) at some iteration.
    pub eps_clamped: bool,
    /// Iterations at which Q increased by more than 1e-9.
    pub descent_violations: usize,
    /// Set when θ̂ coincides with an observation whose side had to be split
    /// to balance the θ-equation.
    pub tie: Option<TieSplit>,
}

impl UnivariateFit {
    /// Estimating-equation residuals at the fit, honoring any tie split.
    pub fn residuals(&self, data: &[f64], p: &LossParams) -> Result<[f64; 3]> {
        estimating_equations_tied(data, self.theta, self.sigma, self.eps, p, self.tie)
    }
}

pub fn median(data: &[f64]) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// median(|xᵢ − median(x)|), without a consistency factor.
pub fn mad(data: &[f64]) -> f64 {
    let m = median(data);
    let dev: Vec<f64> = data.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

pub(crate) fn check_sample(data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(EshError::DegenerateSample("empty sample".into()));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(EshError::DegenerateSample("sample contains non-finite values".into()));
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 3 {
        return Err(EshError::DegenerateSample(format!(
            "need at least 3 distinct values, got {}",
            v.len()
        )));
    }
    Ok(())
}

fn check_point(sigma: f64, eps: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(EshError::InvalidParams(format!("sigma must be positive, got {sigma}")));
    }
    if !(eps > -1.0 && eps < 1.0) {
        return Err(EshError::InvalidParams(format!("eps must lie in (-1, 1), got {eps}")));
    }
    Ok(())
}

/// Q(θ, σ, ε) using the tuning constants c1, c2 of `p` and the given ε.
pub fn objective_q(data: &[f64], theta: f64, sigma: f64, eps: f64, p: &LossParams) -> Result<f64> {
    if data.is_empty() {
        return Err(EshError::DegenerateSample("empty sample".into()));
    }
    check_point(sigma, eps)?;
    let lp = p.with_eps(eps)?;
    Ok(q_raw(data, theta, sigma, &lp))
}

pub(crate) fn q_raw(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> f64 {
    let eps = lp.eps();
    let mut sum = data.len() as f64 * sigma.ln();
    for &x in data {
        let r = x - theta;
        let q = 1.0 - sign(r) * eps;
        sum += lp.rho(r / (sigma * q)) + q.ln();
    }
    sum
}

/// Log-likelihood of the density exp(−ρ(u))/(σ q Z), which is −Q − n ln Z.
pub fn esh_log_likelihood(data: &[f64], theta: f64, sigma: f64, eps: f64, p: &LossParams) -> Result<f64> {
    let lp = p.with_eps(eps)?;
    Ok(-objective_q(data, theta, sigma, eps, p)? - data.len() as f64 * lp.log_normalizer())
}

/// (∂Q/∂θ, ∂Q/∂σ, ∂Q/∂ε), signs of the residuals held fixed.
pub fn gradient_q(data: &[f64], theta: f64, sigma: f64, eps: f64, p: &LossParams) -> Result<[f64; 3]> {
    if data.is_empty() {
        return Err(EshError::DegenerateSample("empty sample".into()));
    }
    check_point(sigma, eps)?;
    let lp = p.with_eps(eps)?;
    Ok(grad_raw(data, theta, sigma, &lp))
}

pub(crate) fn grad_raw(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> [f64; 3] {
    let eps = lp.eps();
    let mut g = [0.0, data.len() as f64 / sigma, 0.0];
    for &x in data {
        let sc = lp.scores_at(x, theta, sigma);
        let s = sign(x - theta);
        g[0] += sc[0];
        g[1] += sc[1];
        g[2] += sc[2] - s / (1.0 - s * eps);
    }
    g
}

fn hessian_raw(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> [[f64; 3]; 3] {
    let eps = lp.eps();
    let n = data.len() as f64;
    let mut h = [[0.0; 3]; 3];
    for &x in data {
        let hi = lp.second_scores_at(x, theta, sigma);
        for a in 0..3 {
            for b in 0..3 {
                h[a][b] += hi[a][b];
            }
        }
        let q = 1.0 - sign(x - theta) * eps;
        h[2][2] -= 1.0 / (q * q);
    }
    h[1][1] -= n / (sigma * sigma);
    h
}

/// Observation sitting exactly at θ̂ whose side is split between the two
/// branches: a fraction `positive` counts as sign +1 in the ε-equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TieSplit {
    pub index: usize,
    pub positive: f64,
}

// s/q for observation i and its ε-derivative, honoring a tie split. Only the
// ε-equation needs this: a zero residual adds nothing to the θ and σ sums.
fn side_term(i: usize, r: f64, eps: f64, tie: Option<TieSplit>) -> (f64, f64) {
    match tie {
        Some(t) if t.index == i && r == 0.0 => {
            let l = t.positive;
            (
                l / (1.0 - eps) - (1.0 - l) / (1.0 + eps),
                l / (1.0 - eps).powi(2) + (1.0 - l) / (1.0 + eps).powi(2),
            )
        }
        _ => {
            let s = sign(r);
            let q = 1.0 - s * eps;
            (s / q, 1.0 / (q * q))
        }
    }
}

/// The ε-equation of the fixed-point scheme,
/// Σ ψ(uᵢ)(xᵢ − θ) sᵢ / (σ qᵢ²) − Σ sᵢ / qᵢ, and its derivative in ε.
/// Unlike ∂Q/∂ε it does not differentiate the (1±ε)² factors inside ρ_ESH.
pub(crate) fn eps_equation(
    data: &[f64],
    theta: f64,
    sigma: f64,
    base: &LossParams,
    eps: f64,
    tie: Option<TieSplit>,
) -> (f64, f64) {
    let (c1, c2) = (base.c1(), base.c2());
    let mut g = 0.0;
    let mut d = 0.0;
    for (i, &x) in data.iter().enumerate() {
        let r = x - theta;
        let s = sign(r);
        let q = 1.0 - s * eps;
        let u = r / (sigma * q);
        if u < c1 || u > c2 {
            let c = if u < c1 { c1 } else { c2 };
            g += c * r * s / (sigma * q.powi(4));
            d += 4.0 * c * r / (sigma * q.powi(5));
        } else {
            g += r * r * s / (sigma * sigma * q.powi(5));
            d += 5.0 * r * r / (sigma * sigma * q.powi(6));
        }
        let (t, dt) = side_term(i, r, eps, tie);
        g -= t;
        d -= dt;
    }
    (g, d)
}

/// Root of the ε-equation at fixed (θ, σ). Returns the new ε and whether it
/// sits on the clamp at ±(1 − 1e-6).
pub(crate) fn update_eps(
    data: &[f64],
    theta: f64,
    sigma: f64,
    base: &LossParams,
    start: f64,
    tie: Option<TieSplit>,
) -> (f64, bool) {
    let lo = -1.0 + EPS_MARGIN;
    let hi = 1.0 - EPS_MARGIN;
    if eps_equation(data, theta, sigma, base, lo, tie).0 >= 0.0 {
        return (lo, true);
    }
    if eps_equation(data, theta, sigma, base, hi, tie).0 <= 0.0 {
        return (hi, true);
    }
    let e = bracketed_newton(|e| eps_equation(data, theta, sigma, base, e, tie), lo, hi, start, 1e-15);
    (e, false)
}

pub(crate) fn weights(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> Vec<f64> {
    let eps = lp.eps();
    data.iter()
        .map(|&x| {
            let r = x - theta;
            lp.weight(r / (sigma * (1.0 - sign(r) * eps)))
        })
        .collect()
}

pub(crate) fn spread(data: &[f64]) -> f64 {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo
}

// Σ wᵢ (xᵢ − θ) / qᵢ²; positive to the left of the root.
fn theta_equation(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> f64 {
    let eps = lp.eps();
    data.iter()
        .map(|&x| {
            let r = x - theta;
            let q = 1.0 - sign(r) * eps;
            lp.weight(r / (sigma * q)) * r / (q * q)
        })
        .sum()
}

// (1/n) Σ wᵢ rᵢ² / (σ qᵢ)² − 1
pub(crate) fn sigma_equation(data: &[f64], theta: f64, sigma: f64, lp: &LossParams) -> f64 {
    let eps = lp.eps();
    let sum: f64 = data
        .iter()
        .map(|&x| {
            let r = x - theta;
            let q = 1.0 - sign(r) * eps;
            lp.weight(r / (sigma * q)) * r * r / (sigma * sigma * q * q)
        })
        .sum();
    sum / data.len() as f64 - 1.0
}

/// Residuals of the three estimating equations solved by the fit, each a
/// per-observation mean:
///
/// ```text
///   θ:  (1/n) Σ wᵢ (xᵢ − θ) / (σ qᵢ)²
///   σ:  (1/n) Σ wᵢ (xᵢ − θ)² / (σ qᵢ)² − 1
///   ε:  (1/n) [Σ ψ(uᵢ)(xᵢ − θ) sᵢ / (σ qᵢ²) − Σ sᵢ / qᵢ]
/// ```
///
/// The θ and σ rows are ∂Q/∂θ = 0 and ∂Q/∂σ = 0 rescaled. The ε row holds
/// the (1±ε)² inside ρ_ESH fixed; [`gradient_q`] has the full derivative.
pub fn estimating_equations(data: &[f64], theta: f64, sigma: f64, eps: f64, p: &LossParams) -> Result<[f64; 3]> {
    estimating_equations_tied(data, theta, sigma, eps, p, None)
}

/// [`estimating_equations`] with an observation at θ split between sides.
pub fn estimating_equations_tied(
    data: &[f64],
    theta: f64,
    sigma: f64,
    eps: f64,
    p: &LossParams,
    tie: Option<TieSplit>,
) -> Result<[f64; 3]> {
    if data.is_empty() {
        return Err(EshError::DegenerateSample("empty sample".into()));
    }
    check_point(sigma, eps)?;
    let lp = p.with_eps(eps)?;
    let n = data.len() as f64;
    Ok([
        theta_equation(data, theta, sigma, &lp) / (n * sigma * sigma),
        sigma_equation(data, theta, sigma, &lp),
        eps_equation(data, theta, sigma, p, eps, tie).0 / n,
    ])
}

/// One pass: θ from the current weights, σ from the same weights at the new
/// θ, then ε with weights refreshed at the new (θ, σ).
fn ira_step(
    data: &[f64],
    theta: f64,
    sigma: f64,
    eps: f64,
    base: &LossParams,
    hold_eps: bool,
    tie: Option<TieSplit>,
) -> (f64, f64, f64, bool) {
    let lp = base.with_eps(eps).expect("eps inside (-1, 1)");
    let n = data.len() as f64;
    let w = weights(data, theta, sigma, &lp);
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &wi) in data.iter().zip(&w) {
        let q = 1.0 - sign(x - theta) * eps;
        let a = wi / (q * q);
        num += a * x;
        den += a;
    }
    let mut theta_new = num / den;
    if let Some(t) = tie {
        // a balanced split reproduces the tied point up to rounding
        if (theta_new - data[t.index]).abs() <= 1e-12 * spread(data) {
            theta_new = data[t.index];
        }
    }
    let mut s2 = 0.0;
    for (&x, &wi) in data.iter().zip(&w) {
        let r = x - theta_new;
        let q = 1.0 - sign(r) * eps;
        s2 += wi * r * r / (q * q);
    }
    let sigma_new = (s2 / n).sqrt();
    if hold_eps || !(sigma_new > 0.0) {
        return (theta_new, sigma_new, eps, false);
    }
    let (eps_new, clamped) = update_eps(data, theta_new, sigma_new, base, eps, tie);
    (theta_new, sigma_new, eps_new, clamped)
}

// σ- and ε-equations at fixed θ (per observation) with their Jacobian in
// (σ, ε). With aᵢ = ψ(uᵢ)uᵢ the σ row is mean(a) − 1 and the ε row is
// mean(sᵢ aᵢ / qᵢ) − mean(sᵢ / qᵢ).
fn sigma_eps_system(
    data: &[f64],
    theta: f64,
    sigma: f64,
    eps: f64,
    base: &LossParams,
    tie: Option<TieSplit>,
) -> ([f64; 2], [[f64; 2]; 2]) {
    let (c1, c2) = (base.c1(), base.c2());
    let n = data.len() as f64;
    let mut f = [-1.0, 0.0];
    let mut j = [[0.0; 2]; 2];
    for (i, &x) in data.iter().enumerate() {
        let r = x - theta;
        let s = sign(r);
        let q = 1.0 - s * eps;
        let u = r / (sigma * q);
        // a = r²/(σ²q⁴) on the quadratic branches, c r/(σ q³) on the linear ones
        let (a, k) = if u < c1 || u > c2 {
            let c = if u < c1 { c1 } else { c2 };
            (c * r / (sigma * q.powi(3)), 3.0)
        } else {
            (r * r / (sigma * sigma * q.powi(4)), 4.0)
        };
        let m = k - 2.0; // a ∝ σ^(−m)
        f[0] += a / n;
        j[0][0] -= m * a / (sigma * n);
        j[0][1] += k * s * a / (q * n);
        let (t, dt) = side_term(i, r, eps, tie);
        f[1] += (s * a / q - t) / n;
        j[1][0] -= m * s * a / (q * sigma * n);
        j[1][1] += ((k + 1.0) * a / (q * q) - dt) / n;
    }
    (f, j)
}

/// (σ, ε) solving the σ- and ε-equations at fixed θ: Newton on the 2×2
/// system with step halving, falling back to alternating updates.
fn profile(
    data: &[f64],
    theta: f64,
    start: (f64, f64),
    base: &LossParams,
    hold_eps: bool,
    tie: Option<TieSplit>,
) -> (f64, f64) {
    let (mut sigma, mut eps) = start;
    let norm = |f: [f64; 2]| if hold_eps { f[0].abs() } else { f[0].hypot(f[1]) };
    let (mut f, mut j) = sigma_eps_system(data, theta, sigma, eps, base, tie);
    for _ in 0..100 {
        if norm(f) < 1e-14 {
            return (sigma, eps);
        }
        let (ds, de) = if hold_eps {
            (-f[0] / j[0][0], 0.0)
        } else {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            ((-f[0] * j[1][1] + f[1] * j[0][1]) / det, (-j[0][0] * f[1] + j[1][0] * f[0]) / det)
        };
        if !ds.is_finite() || !de.is_finite() {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let (s2, e2) = (sigma + t * ds, eps + t * de);
            if s2 > 0.0 && e2.abs() < 1.0 - EPS_MARGIN {
                let (f2, j2) = sigma_eps_system(data, theta, s2, e2, base, tie);
                if norm(f2) < norm(f) {
                    sigma = s2;
                    eps = e2;
                    f = f2;
                    j = j2;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(f) < 1e-12 {
        return (sigma, eps);
    }
    let (mut sigma, mut eps) = start;
    for _ in 0..200 {
        let lp = base.with_eps(eps).expect("eps inside (-1, 1)");
        let s = ((sigma_equation(data, theta, sigma, &lp) + 1.0) * sigma * sigma).sqrt();
        let e = if hold_eps { eps } else { update_eps(data, theta, s, base, eps, tie).0 };
        let done = (s - sigma).abs() <= 1e-15 * s && (e - eps).abs() <= 1e-15;
        sigma = s;
        eps = e;
        if done || !(sigma > 0.0) {
            break;
        }
    }
    (sigma, eps)
}

struct Solution {
    theta: f64,
    sigma: f64,
    eps: f64,
    tie: Option<TieSplit>,
}

/// Solve the estimating equations by bisection on the profiled θ-equation
/// h(θ) = Σ wᵢ rᵢ / qᵢ² at (σ(θ), ε(θ)).
///
/// h jumps where θ crosses an observation, because that observation's term
/// in Σ s/q changes sign and moves ε(θ). When the sign change of h sits on
/// such a jump there is no exact root; the observation is then pinned at θ
/// and its side split (a fraction λ counted positive) until h = 0.
fn solve_by_profile(
    data: &[f64],
    around: (f64, f64),
    start: (f64, f64),
    base: &LossParams,
    hold_eps: bool,
) -> Solution {
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let h = |t: f64, g: (f64, f64), tie: Option<TieSplit>| {
        let (sigma, eps) = profile(data, t, g, base, hold_eps, tie);
        let lp = base.with_eps(eps).expect("eps inside (-1, 1)");
        (theta_equation(data, t, sigma, &lp), sigma, eps)
    };
    let pad = (around.1 - around.0).max(1e-6 * (max - min));
    let (mut lo, mut hi) = ((around.0 - pad).max(min), (around.1 + pad).min(max));
    let mut hl = h(lo, start, None);
    if hl.0 <= 0.0 {
        lo = min;
        hl = h(lo, start, None);
    }
    let mut hh = h(hi, (hl.1, hl.2), None);
    if hh.0 > 0.0 {
        hi = max;
        hh = h(hi, (hl.1, hl.2), None);
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid, (hl.1, hl.2), None);
        if hm.0 == 0.0 {
            return Solution { theta: mid, sigma: hm.1, eps: hm.2, tie: None };
        }
        if hm.0 > 0.0 {
            lo = mid;
            hl = hm;
        } else {
            hi = mid;
            hh = hm;
        }
    }
    // The bracket is one floating-point gap wide. With sign(0) = +1 an
    // observation at `lo` still counts as positive there, so a jump sits at
    // `lo` exactly when some observation equals it.
    let Some(index) = data.iter().position(|&x| x == lo) else {
        let (t, v) = if hl.0.abs() <= hh.0.abs() { (lo, hl) } else { (hi, hh) };
        return Solution { theta: t, sigma: v.1, eps: v.2, tie: None };
    };
    let theta = lo;
    // λ = 1 is the sign(0) = +1 convention (h > 0); λ = 0 is the right limit.
    let (mut a, mut b) = (0.0, 1.0);
    let mut fa = h(theta, (hh.1, hh.2), Some(TieSplit { index, positive: a }));
    while b - a > 1e-15 {
        let m = 0.5 * (a + b);
        let fm = h(theta, (fa.1, fa.2), Some(TieSplit { index, positive: m }));
        if fm.0 <= 0.0 {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let tie = TieSplit { index, positive: a };
    Solution { theta, sigma: fa.1, eps: fa.2, tie: Some(tie) }
}

/// Fit (θ, σ, ε) by iterative reweighting.
///
/// The ε step solves the ε-equation exactly at the new (θ, σ) rather than
/// taking the one-step rearrangement, which overshoots (−1, 1). If θ stops
/// contracting (it keeps stepping across an observation) the equations are
/// finished by bisection on the profiled θ-equation and the result is
/// re-checked with one more pass.
pub fn fit_univariate(data: &[f64], cfg: &FitConfig) -> Result<UnivariateFit> {
    cfg.validate()?;
    check_sample(data)?;
    let base = cfg.loss;
    let (mut theta, mut sigma, mut eps) = cfg.init.unwrap_or_else(|| (median(data), mad(data), 0.0));
    let floor = 1e-12 * spread(data);
    if !(sigma > floor) {
        sigma = spread(data) / 4.0;
    }
    let mut q_prev = q_raw(data, theta, sigma, &base.with_eps(eps)?);
    let mut eps_clamped = false;
    let mut descent_violations = 0;
    let mut converged = false;
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    let mut tie = None;
    let mut path: Vec<f64> = Vec::new();

    while iterations < cfg.max_iter {
        iterations += 1;
        let (t, s, e, clamped) = ira_step(data, theta, sigma, eps, &base, cfg.hold_eps, None);
        if !(s > floor) {
            return Err(EshError::DegenerateSample(format!("scale collapsed to {s:e}")));
        }
        eps_clamped |= clamped;
        step = ((t - theta).powi(2) + (s - sigma).powi(2) + (e - eps).powi(2)).sqrt();
        theta = t;
        sigma = s;
        eps = e;
        let q_now = q_raw(data, theta, sigma, &base.with_eps(eps)?);
        if q_now > q_prev + 1e-9 {
            descent_violations += 1;
        }
        q_prev = q_now;
        if step < cfg.tol {
            converged = true;
            break;
        }
        path.push(theta);
        if path.len() >= STALL_WINDOW && stalled(&path[path.len() - STALL_WINDOW..]) {
            let w = &path[path.len() - STALL_WINDOW..];
            let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sol = solve_by_profile(data, (lo, hi), (sigma, eps), &base, cfg.hold_eps);
            if !(sol.sigma > floor) {
                return Err(EshError::DegenerateSample(format!("scale collapsed to {:e}", sol.sigma)));
            }
            iterations += 1;
            let (t, s, e, _) = ira_step(data, sol.theta, sol.sigma, sol.eps, &base, cfg.hold_eps, sol.tie);
            step = ((t - sol.theta).powi(2) + (s - sol.sigma).powi(2) + (e - sol.eps).powi(2)).sqrt();
            theta = sol.theta;
            sigma = sol.sigma;
            eps = sol.eps;
            tie = sol.tie;
            converged = step < cfg.tol;
            break;
        }
    }

    let lp = base.with_eps(eps)?;
    Ok(UnivariateFit {
        theta,
        sigma,
        eps,
        iterations,
        converged,
        final_step_norm: step,
        weights: weights(data, theta, sigma, &lp),
        objective: q_raw(data, theta, sigma, &lp),
        eps_clamped,
        descent_violations,
        tie,
    })
}

const STALL_WINDOW: usize = 40;

// θ has not contracted over the window: the later half spans more than half
// of the earlier half.
fn stalled(w: &[f64]) -> bool {
    let span = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let half = w.len() / 2;
    span(&w[half..]) > 0.5 * span(&w[..half])
}

/// Symmetric Huber location/scale: the ESH updates with c1 = −k, c2 = k and
/// ε held at 0.
pub fn fit_huber_location_scale(data: &[f64], h: &HuberParams, tol: f64, max_iter: usize) -> Result<UnivariateFit> {
    let cfg = FitConfig { loss: h.as_esh(), tol, max_iter, init: None, hold_eps: true };
    fit_univariate(data, &cfg)
}

#[doc(hidden)]
pub mod internals {
    //! Exposed for tests and diagnostics.
    use super::*;

    pub fn hessian_q(data: &[f64], theta: f64, sigma: f64, eps: f64, p: &LossParams) -> Result<[[f64; 3]; 3]> {
        check_point(sigma, eps)?;
        Ok(hessian_raw(data, theta, sigma, &p.with_eps(eps)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(c1: f64, c2: f64) -> LossParams {
        LossParams::new(c1, c2, 0.0).unwrap()
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }

    #[test]
    fn objective_examples() {
        let p = lp(-2.0, 2.0);
        assert_eq!(objective_q(&[0.0], 0.0, 1.0, 0.0, &p).unwrap(), 0.0);
        assert!((objective_q(&[1.0, -1.0], 0.0, 1.0, 0.0, &p).unwrap() - 1.0).abs() < 1e-15);
        assert!(objective_q(&[], 0.0, 1.0, 0.0, &p).is_err());
        assert!(objective_q(&[1.0], 0.0, -1.0, 0.0, &p).is_err());
    }

    #[test]
    fn degenerate_samples() {
        let cfg = FitConfig::new(lp(-1.0, 2.0));
        assert!(matches!(fit_univariate(&[5.0, 5.0, 5.0], &cfg), Err(EshError::DegenerateSample(_))));
        assert!(fit_univariate(&[1.0, 2.0, 1.0, 2.0], &cfg).is_err());
        let h = HuberParams::new(1.4).unwrap();
        assert!(fit_huber_location_scale(&[5.0, 5.0, 5.0], &h, 1e-8, 100).is_err());
    }

    #[test]
    fn profile_jacobian_matches_differences() {
        let data = [-2.3, -1.1, -0.4, 0.2, 0.9, 1.7, 3.8, 9.0];
        let base = LossParams::new(-0.9, 2.5, 0.0).unwrap();
        for tie in [None, Some(TieSplit { index: 3, positive: 0.3 })] {
            let theta = 0.2;
            let (_, j) = sigma_eps_system(&data, theta, 1.3, -0.25, &base, tie);
            let h = 1e-6;
            for k in 0..2 {
                let ds = (sigma_eps_system(&data, theta, 1.3 + h, -0.25, &base, tie).0[k]
                    - sigma_eps_system(&data, theta, 1.3 - h, -0.25, &base, tie).0[k])
                    / (2.0 * h);
                let de = (sigma_eps_system(&data, theta, 1.3, -0.25 + h, &base, tie).0[k]
                    - sigma_eps_system(&data, theta, 1.3, -0.25 - h, &base, tie).0[k])
                    / (2.0 * h);
                assert!((j[k][0] - ds).abs() < 1e-7, "row {k} sigma");
                assert!((j[k][1] - de).abs() < 1e-7, "row {k} eps");
            }
            // the system agrees with the public residuals
            let (f, _) = sigma_eps_system(&data, theta, 1.3, -0.25, &base, tie);
            let r = estimating_equations_tied(&data, theta, 1.3, -0.25, &base, tie).unwrap();
            assert!((f[0] - r[1]).abs() < 1e-14 && (f[1] - r[2]).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::new(lp(-1.0, 2.0));
        cfg.tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tol = 1e-8;
        cfg.max_iter = 0;
        assert!(cfg.validate().is_err());
    }
}
