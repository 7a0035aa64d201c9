//! Asymmetric M-estimation for the linear model yᵢ = xᵢᵀb + uᵢ.
//!
//! Residuals rᵢ = yᵢ − xᵢᵀb take the place of xᵢ − θ in the univariate
//! objective. b is refreshed by weighted least squares with weights
//! wᵢ / qᵢ², σ and ε exactly as in the location case.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distributions::{draw_mixture, log_density_raw, Family, MixtureSpec, SkewFamilyParams};
use crate::error::{EshError, Result};
use crate::loss::{sign, LossParams};
use crate::optim::nelder_mead;
use crate::eqsolve::solve;
use crate::univariate::{eps_equation, mad, q_raw, sigma_equation, spread, update_eps, weights, FitConfig, TieSplit};

/// Condition number of the weighted cross-product matrix above which the
/// design is treated as rank deficient.
pub const MAX_CONDITION: f64 = 1e12;

/// Coefficients of the simulation model.
pub const TRUE_COEFFICIENTS: [f64; 6] = [3.0, 5.0, 1.0, -4.0, 2.0, -2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl RegressionData {
    /// Checks dimensions, finiteness, n > p and numerical full column rank.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(EshError::InvalidParams(format!("y has {} entries but X has {n} rows", y.len())));
        }
        if p == 0 || n <= p {
            return Err(EshError::DegenerateSample(format!("need n > p >= 1, got n = {n}, p = {p}")));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(EshError::DegenerateSample("non-finite value in y or X".into()));
        }
        let d = Self { y: DVector::from_vec(y), x };
        d.solve_weighted(&vec![1.0; n])?;
        Ok(d)
    }

    /// Builds X from rows, optionally prepending a column of ones.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>], intercept: bool) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            return Err(EshError::InvalidParams("rows of X differ in length".into()));
        }
        let p = k + usize::from(intercept);
        let x = DMatrix::from_fn(rows.len(), p, |i, j| {
            if intercept {
                if j == 0 {
                    1.0
                } else {
                    rows[i][j - 1]
                }
            } else {
                rows[i][j]
            }
        });
        Self::new(y, x)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn residuals(&self, b: &[f64]) -> Vec<f64> {
        (&self.y - &self.x * DVector::from_column_slice(b)).iter().copied().collect()
    }

    // argmin Σ aᵢ (yᵢ − xᵢᵀb)² through the SVD of diag(√a) X D, where D
    // scales every column to unit norm. The condition estimate is that of
    // the equilibrated cross product D XᵀAX D, the square of the SVD's.
    fn solve_weighted(&self, a: &[f64]) -> Result<DVector<f64>> {
        let mut xw = self.x.clone();
        let mut yw = self.y.clone();
        for (i, &ai) in a.iter().enumerate() {
            let s = ai.sqrt();
            xw.row_mut(i).scale_mut(s);
            yw[i] *= s;
        }
        let norms: Vec<f64> = xw.column_iter().map(|c| c.norm()).collect();
        if norms.iter().any(|&v| !(v > 0.0)) {
            return Err(EshError::RankDeficient(f64::INFINITY));
        }
        for (j, &v) in norms.iter().enumerate() {
            xw.column_mut(j).unscale_mut(v);
        }
        let svd = xw.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
        if !(cond <= MAX_CONDITION) {
            return Err(EshError::RankDeficient(cond));
        }
        let mut b = svd.solve(&yw, 0.0).map_err(|_| EshError::RankDeficient(cond))?;
        for (j, &v) in norms.iter().enumerate() {
            b[j] /= v;
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub b: Vec<f64>,
    pub sigma: f64,
    pub eps: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_step_norm: f64,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub eps_clamped: bool,
    pub descent_violations: usize,
    /// Observation with zero residual whose side is split, as in the
    /// univariate fit.
    pub tie: Option<TieSplit>,
}

/// Q(b, σ, ε) for the linear model.
pub fn regression_objective_q(d: &RegressionData, b: &[f64], sigma: f64, eps: f64, p: &LossParams) -> Result<f64> {
    check_coefficients(d, b)?;
    let lp = p.with_eps(eps)?;
    check_scale(sigma)?;
    Ok(q_raw(&d.residuals(b), 0.0, sigma, &lp))
}

/// Regression counterpart of [`crate::univariate::esh_log_likelihood`].
pub fn regression_log_likelihood(d: &RegressionData, b: &[f64], sigma: f64, eps: f64, p: &LossParams) -> Result<f64> {
    let lp = p.with_eps(eps)?;
    Ok(-regression_objective_q(d, b, sigma, eps, p)? - d.n() as f64 * lp.log_normalizer())
}

/// (∂Q/∂b₀, …, ∂Q/∂b_{p−1}, ∂Q/∂σ, ∂Q/∂ε), residual signs held fixed.
pub fn regression_gradient_q(d: &RegressionData, b: &[f64], sigma: f64, eps: f64, p: &LossParams) -> Result<Vec<f64>> {
    check_coefficients(d, b)?;
    let lp = p.with_eps(eps)?;
    check_scale(sigma)?;
    let r = d.residuals(b);
    let mut g = vec![0.0; d.p() + 2];
    g[d.p()] = d.n() as f64 / sigma;
    for (i, &ri) in r.iter().enumerate() {
        // ∂rᵢ/∂b = −xᵢ, and the location score is ∂/∂θ of the loss of x − θ
        let sc = lp.scores_at(ri, 0.0, sigma);
        for j in 0..d.p() {
            g[j] += sc[0] * d.x[(i, j)];
        }
        let s = sign(ri);
        g[d.p()] += sc[1];
        g[d.p() + 1] += sc[2] - s / (1.0 - s * eps);
    }
    Ok(g)
}

/// Estimating-equation residuals in mean form: the p entries of
/// (1/n) Σ wᵢ rᵢ xᵢ / (σ qᵢ)², then the σ and ε rows as in
/// [`crate::univariate::estimating_equations`].
pub fn regression_estimating_equations(
    d: &RegressionData,
    b: &[f64],
    sigma: f64,
    eps: f64,
    p: &LossParams,
) -> Result<Vec<f64>> {
    regression_estimating_equations_tied(d, b, sigma, eps, p, None)
}

/// [`regression_estimating_equations`] for a fit whose observation
/// `tie.index` sits at zero residual, split between the two sides.
pub fn regression_estimating_equations_tied(
    d: &RegressionData,
    b: &[f64],
    sigma: f64,
    eps: f64,
    p: &LossParams,
    tie: Option<TieSplit>,
) -> Result<Vec<f64>> {
    check_coefficients(d, b)?;
    let lp = p.with_eps(eps)?;
    check_scale(sigma)?;
    let mut r = d.residuals(b);
    if let Some(t) = tie {
        r[t.index] = 0.0;
    }
    let n = d.n() as f64;
    let w = weights(&r, 0.0, sigma, &lp);
    let mut out = vec![0.0; d.p() + 2];
    for (i, (&ri, &wi)) in r.iter().zip(&w).enumerate() {
        let q = 1.0 - sign(ri) * eps;
        let a = wi * ri / (sigma * q).powi(2);
        for j in 0..d.p() {
            out[j] += a * d.x[(i, j)] / n;
        }
    }
    out[d.p()] = sigma_equation(&r, 0.0, sigma, &lp);
    out[d.p() + 1] = eps_equation(&r, 0.0, sigma, p, eps, tie).0 / n;
    Ok(out)
}

fn check_coefficients(d: &RegressionData, b: &[f64]) -> Result<()> {
    if b.len() != d.p() {
        return Err(EshError::InvalidParams(format!("expected {} coefficients, got {}", d.p(), b.len())));
    }
    Ok(())
}

fn check_scale(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(EshError::InvalidParams(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Fit from b⁰ = 0, σ⁰ = MAD(y), ε⁰ = 0. If `cfg.init` is set its σ and ε
/// entries replace the defaults; its θ entry is not used.
pub fn fit_regression(d: &RegressionData, cfg: &FitConfig) -> Result<RegressionFit> {
    let (sigma, eps) = match cfg.init {
        Some((_, s, e)) => (s, e),
        None => {
            let y: Vec<f64> = d.y.iter().copied().collect();
            let m = mad(&y);
            (if m > 0.0 { m } else { spread(&y) / 4.0 }, 0.0)
        }
    };
    fit_regression_from(d, cfg, &vec![0.0; d.p()], sigma, eps)
}

/// Iterations of plain reweighting before the Newton solver takes over.
const REWEIGHT_ITERATIONS: usize = 40;

struct Step {
    b: DVector<f64>,
    r: Vec<f64>,
    sigma: f64,
    eps: f64,
    clamped: bool,
}

// One reweighting pass: b by weighted least squares with weights wᵢ/qᵢ², σ
// from the same weights at the new residuals, then ε solving its equation at
// the new (b, σ).
fn reweight(
    d: &RegressionData,
    r: &[f64],
    sigma: f64,
    eps: f64,
    base: &LossParams,
    hold_eps: bool,
    tie: Option<TieSplit>,
) -> Result<Step> {
    let lp = base.with_eps(eps)?;
    let w = weights(r, 0.0, sigma, &lp);
    let a: Vec<f64> = r.iter().zip(&w).map(|(&ri, &wi)| wi / (1.0 - sign(ri) * eps).powi(2)).collect();
    let b = d.solve_weighted(&a)?;
    let mut r_new = d.residuals(b.as_slice());
    if let Some(t) = tie {
        // a balanced split reproduces the pinned residual up to rounding
        if r_new[t.index].abs() <= 1e-9 * (1.0 + d.y[t.index].abs()) {
            r_new[t.index] = 0.0;
        }
    }
    let s2: f64 = r_new
        .iter()
        .zip(&w)
        .map(|(&ri, &wi)| wi * ri * ri / (1.0 - sign(ri) * eps).powi(2))
        .sum();
    let sigma_new = (s2 / d.n() as f64).sqrt();
    let (eps_new, clamped) = if hold_eps || !(sigma_new > 0.0) {
        (eps, false)
    } else {
        update_eps(&r_new, 0.0, sigma_new, base, eps, tie)
    };
    Ok(Step { b, r: r_new, sigma: sigma_new, eps: eps_new, clamped })
}

/// Iterative reweighting from an explicit starting point. After a fixed
/// number of passes without convergence the estimating equations are
/// finished by Newton's method (see the tie handling of
/// [`crate::univariate::fit_univariate`]) and re-checked with one more pass.
pub fn fit_regression_from(d: &RegressionData, cfg: &FitConfig, b0: &[f64], sigma0: f64, eps0: f64) -> Result<RegressionFit> {
    cfg.validate()?;
    check_coefficients(d, b0)?;
    if !(sigma0 > 0.0) || !(eps0 > -1.0 && eps0 < 1.0) {
        return Err(EshError::Config(format!("invalid starting point sigma = {sigma0}, eps = {eps0}")));
    }
    let base = cfg.loss;
    let y: Vec<f64> = d.y.iter().copied().collect();
    let floor = 1e-12 * spread(&y).max(f64::MIN_POSITIVE);
    let mut b = DVector::from_column_slice(b0);
    let (mut sigma, mut eps) = (sigma0, eps0);
    let mut r = d.residuals(b.as_slice());
    let mut q_prev = q_raw(&r, 0.0, sigma, &base.with_eps(eps)?);
    let mut eps_clamped = false;
    let mut descent_violations = 0;
    let mut converged = false;
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    let mut tie = None;

    while iterations < cfg.max_iter {
        iterations += 1;
        // Weights far apart can make a pass numerically singular even for a
        // well-conditioned design; the equation solver does not need them.
        let st = match reweight(d, &r, sigma, eps, &base, cfg.hold_eps, None) {
            Err(EshError::RankDeficient(_)) if iterations > 1 => None,
            other => Some(other?),
        };
        if let Some(st) = st {
            if st.r.iter().all(|v| v.abs() <= floor) {
                return Err(EshError::DegenerateResidual("all residuals vanish".into()));
            }
            if !(st.sigma > floor) {
                return Err(EshError::DegenerateResidual(format!("scale collapsed to {:e}", st.sigma)));
            }
            eps_clamped |= st.clamped;
            step = ((&st.b - &b).norm_squared() + (st.sigma - sigma).powi(2) + (st.eps - eps).powi(2)).sqrt();
            b = st.b;
            r = st.r;
            sigma = st.sigma;
            eps = st.eps;
            let q_now = q_raw(&r, 0.0, sigma, &base.with_eps(eps)?);
            if q_now > q_prev + 1e-9 {
                descent_violations += 1;
            }
            q_prev = q_now;
            if step < cfg.tol {
                converged = true;
                break;
            }
            if iterations != REWEIGHT_ITERATIONS || iterations == cfg.max_iter {
                continue;
            }
        }
        let Some(sol) = solve(&y, &d.x, &base, (&b, sigma, eps), cfg.hold_eps) else { break };
        let mut r_sol = d.residuals(sol.b.as_slice());
        if let Some(t) = sol.tie {
            r_sol[t.index] = 0.0;
        }
        iterations += 1;
        b = sol.b;
        r = r_sol;
        sigma = sol.sigma;
        eps = sol.eps;
        tie = sol.tie;
        eps_clamped |= sol.clamped;
        // one more pass confirms the fixed point, unless its weights are too
        // far apart to solve with, in which case the solver's own check
        // (every row within rounding) stands
        (step, converged) = match reweight(d, &r, sigma, eps, &base, cfg.hold_eps || sol.clamped, tie) {
            Ok(st) => {
                let s = ((&st.b - &b).norm_squared() + (st.sigma - sigma).powi(2) + (st.eps - eps).powi(2)).sqrt();
                (s, s < cfg.tol)
            }
            Err(EshError::RankDeficient(_)) => (0.0, true),
            Err(e) => return Err(e),
        };
        break;
    }

    let lp = base.with_eps(eps)?;
    Ok(RegressionFit {
        b: b.iter().copied().collect(),
        sigma,
        eps,
        iterations,
        converged,
        final_step_norm: step,
        weights: weights(&r, 0.0, sigma, &lp),
        objective: q_raw(&r, 0.0, sigma, &lp),
        eps_clamped,
        descent_violations,
        tie,
    })
}

#[doc(hidden)]
pub mod internals {
    //! Exposed for tests and diagnostics.
    use super::*;

    /// The ε row with b and σ solved at fixed ε, returned with (b, σ).
    pub fn eps_profile(d: &RegressionData, p: &LossParams, eps: f64, b: &[f64], sigma: f64) -> Option<(f64, Vec<f64>, f64)> {
        let y: Vec<f64> = d.y.iter().copied().collect();
        crate::eqsolve::profile(&y, &d.x, p, eps, (&DVector::from_column_slice(b), sigma))
            .map(|(g, b, s)| (g, b.iter().copied().collect(), s))
    }

    /// Solve of the estimating equations from an arbitrary point.
    pub fn solve_from(d: &RegressionData, p: &LossParams, b: &[f64], sigma: f64, eps: f64) -> Option<(Vec<f64>, f64, f64, Option<TieSplit>)> {
        let y: Vec<f64> = d.y.iter().copied().collect();
        solve(&y, &d.x, p, (&DVector::from_column_slice(b), sigma, eps), false)
            .map(|s| (s.b.iter().copied().collect(), s.sigma, s.eps, s.tie))
    }
}

/// Ordinary least squares.
pub fn ols(d: &RegressionData) -> Result<Vec<f64>> {
    Ok(d.solve_weighted(&vec![1.0; d.n()])?.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlRegressionFit {
    pub family: Family,
    pub b: Vec<f64>,
    pub sigma: f64,
    pub eps: f64,
    pub nu: Option<f64>,
    pub log_lik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Maximum likelihood for the linear model with epsilon-skew errors:
/// Nelder–Mead on (b, log σ, atanh ε) from the least-squares fit, restarted
/// at the incumbent until a restart no longer improves the likelihood.
pub fn fit_ml_regression(d: &RegressionData, family: Family, nu_fixed: Option<f64>) -> Result<MlRegressionFit> {
    if family == Family::Est && !nu_fixed.is_some_and(|nu| nu > 0.0 && nu.is_finite()) {
        return Err(EshError::InvalidParams("ESt fit needs a fixed nu > 0".into()));
    }
    let p = d.p();
    let b_ols = ols(d)?;
    let r = d.residuals(&b_ols);
    let scale = {
        let m = mad(&r);
        if m > 0.0 {
            m
        } else {
            return Err(EshError::DegenerateResidual("least-squares residuals vanish".into()));
        }
    };
    let unpack = |v: &[f64]| SkewFamilyParams {
        family,
        theta: 0.0,
        sigma: v[p].exp(),
        eps: v[p + 1].tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12),
        nu: nu_fixed,
    };
    let nll = |v: &[f64]| {
        let par = unpack(v);
        let res = d.residuals(&v[..p]);
        let s: f64 = res.iter().map(|&e| log_density_raw(e, &par)).sum();
        if s.is_finite() {
            -s
        } else {
            f64::INFINITY
        }
    };
    let mut x: Vec<f64> = b_ols.clone();
    x.push(scale.ln());
    x.push(0.0);
    let mut steps = vec![0.0; p + 2];
    for j in 0..p {
        let col = d.x.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.n() as f64).sqrt();
        steps[j] = if sd > 0.0 { 0.5 * scale / sd } else { 0.5 * scale / mean.abs().max(1.0) };
    }
    steps[p] = 0.3;
    steps[p + 1] = 0.3;
    let mut value = nll(&x);
    let mut evaluations = 1;
    let mut converged = false;
    for _ in 0..8 {
        let res = nelder_mead(&nll, &x, &steps, 1e-12, 400 * (p + 2));
        evaluations += res.evaluations;
        let gain = value - res.value;
        if res.value <= value {
            x = res.x;
            value = res.value;
        }
        if res.converged && gain <= 1e-9 * (value.abs() + 1.0) {
            converged = true;
            break;
        }
        for s in steps.iter_mut() {
            *s *= 0.5;
        }
    }
    // The supremum can sit at ε = ±1, with every residual on one side and
    // the extreme one at zero; atanh ε never settles there. Finish with ε
    // pinned at the clamp and the extreme residual held at zero by solving
    // for one coefficient, which removes the wall the simplex stalls on.
    if !converged && x[p + 1].tanh().abs() >= 1.0 - 1e-6 {
        let edge = 40.0 * x[p + 1].signum();
        let mut best = x[..=p].to_vec();
        let mut best_v = f64::INFINITY;
        let mut prev: Option<usize> = None;
        for _ in 0..10 {
            let r = d.residuals(&best[..p]);
            let pick = |a: &f64, b: &f64| if edge < 0.0 { a.total_cmp(b) } else { b.total_cmp(a) };
            let j = (0..r.len()).min_by(|&u, &v| pick(&r[u], &r[v])).unwrap();
            if prev == Some(j) {
                converged = best_v.is_finite();
                break;
            }
            prev = Some(j);
            let row: Vec<f64> = d.x.row(j).iter().copied().collect();
            let k = (0..p).max_by(|&u, &v| row[u].abs().total_cmp(&row[v].abs())).unwrap();
            if row[k] == 0.0 {
                break;
            }
            let yj = d.y[j];
            let expand = |v: &[f64]| {
                let mut full: Vec<f64> = Vec::with_capacity(p + 2);
                full.extend_from_slice(&v[..k]);
                full.push(0.0);
                full.extend_from_slice(&v[k..]);
                let dot: f64 = (0..p).filter(|&l| l != k).map(|l| row[l] * full[l]).sum();
                full[k] = (yj - dot) / row[k];
                full.push(edge);
                full
            };
            let f = |v: &[f64]| nll(&expand(v));
            let mut z: Vec<f64> = best.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, &v)| v).collect();
            let mut st: Vec<f64> = steps.iter().take(p + 1).enumerate().filter(|&(l, _)| l != k).map(|(_, &v)| v).collect();
            let mut v = f(&z);
            for _ in 0..8 {
                let res = nelder_mead(&f, &z, &st, 1e-12, 400 * p);
                evaluations += res.evaluations;
                let gain = v - res.value;
                if res.value <= v {
                    z = res.x;
                    v = res.value;
                }
                if res.converged && gain <= 1e-9 * (v.abs() + 1.0) {
                    break;
                }
                for s in st.iter_mut() {
                    *s *= 0.5;
                }
            }
            if !(v < best_v) && best_v.is_finite() {
                converged = true;
                break;
            }
            let full = expand(&z);
            best = full[..=p].to_vec();
            best_v = v;
        }
        if converged && best_v <= value + 1e-9 * (value.abs() + 1.0) {
            x = best;
            x.push(edge);
            value = best_v.min(value);
        } else {
            converged = false;
        }
    }
    let par = unpack(&x);
    Ok(MlRegressionFit {
        family,
        b: x[..p].to_vec(),
        sigma: par.sigma,
        eps: par.eps,
        nu: nu_fixed,
        log_lik: -value,
        converged,
        evaluations,
    })
}

/// A sample from yᵢ = 3 + 5x₁ᵢ + x₂ᵢ − 4x₃ᵢ + 2x₄ᵢ − 2x₅ᵢ + uᵢ with
/// x₁…x₅ independent standard normal and uᵢ from
/// 0.9·ESN(0, 1, ε₀) + 0.1·ESL(0, 1, ε₀).
pub fn generate_regression_sample(n: usize, eps0: f64, seed: u64) -> Result<RegressionData> {
    generate_with_noise_scale(n, eps0, seed, 1.0)
}

/// [`generate_regression_sample`] with the errors multiplied by `scale`;
/// `scale = 0` gives a noiseless response.
#[doc(hidden)]
pub fn generate_with_noise_scale(n: usize, eps0: f64, seed: u64, scale: f64) -> Result<RegressionData> {
    if n < 10 {
        return Err(EshError::Config(format!("regression samples need n >= 10, got {n}")));
    }
    let mix = MixtureSpec::contaminated_esn(eps0)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, TRUE_COEFFICIENTS.len());
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..TRUE_COEFFICIENTS.len() {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let u = draw_mixture(&mix, &mut rng);
        let mean: f64 = (0..TRUE_COEFFICIENTS.len()).map(|j| x[(i, j)] * TRUE_COEFFICIENTS[j]).sum();
        y.push(mean + scale * u);
    }
    RegressionData::new(y, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::HuberParams;

    fn cfg(c1: f64, c2: f64) -> FitConfig {
        FitConfig::new(LossParams::new(c1, c2, 0.0).unwrap())
    }

    #[test]
    fn generator_embeds_true_coefficients() {
        let d = generate_with_noise_scale(40, -0.5, 3, 0.0).unwrap();
        let b = ols(&d).unwrap();
        for (bi, ti) in b.iter().zip(TRUE_COEFFICIENTS) {
            assert!((bi - ti).abs() < 1e-10, "{b:?}");
        }
        assert_eq!(d.p(), 6);
        assert!(d.x().column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generated_errors_are_right_skewed_for_negative_eps() {
        let d = generate_regression_sample(20_000, -0.8, 11).unwrap();
        let truth = DVector::from_column_slice(&TRUE_COEFFICIENTS);
        let u = d.y() - d.x() * truth;
        let m = u.mean();
        let m2 = u.iter().map(|v| (v - m).powi(2)).sum::<f64>() / u.len() as f64;
        let m3 = u.iter().map(|v| (v - m).powi(3)).sum::<f64>() / u.len() as f64;
        assert!(m3 / m2.powf(1.5) > 0.2, "skewness {}", m3 / m2.powf(1.5));
    }

    #[test]
    fn small_n_is_rejected() {
        assert!(matches!(generate_regression_sample(9, -0.2, 1), Err(EshError::Config(_))));
    }

    #[test]
    fn exact_fit_is_degenerate() {
        let d = generate_with_noise_scale(30, -0.2, 5, 0.0).unwrap();
        let r = fit_regression(&d, &cfg(-1.1, 5.2));
        assert!(matches!(r, Err(EshError::DegenerateResidual(_))), "{r:?}");
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let r = RegressionData::from_rows(y, &rows, true);
        assert!(matches!(r, Err(EshError::RankDeficient(_))), "{r:?}");
    }

    #[test]
    fn huge_constants_with_pinned_eps_give_least_squares() {
        let d = generate_regression_sample(60, -0.2, 9).unwrap();
        let mut c = cfg(-1e6, 1e6);
        c.hold_eps = true;
        let f = fit_regression(&d, &c).unwrap();
        assert!(f.converged);
        let b = ols(&d).unwrap();
        for (x, y) in f.b.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{:?} vs {b:?}", f.b);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = generate_regression_sample(25, -0.5, 4).unwrap();
        let p = LossParams::new(-0.7, 1.2, 0.0).unwrap();
        let b = [2.9, 5.1, 0.8, -4.1, 2.2, -1.7];
        let (sigma, eps) = (1.3, -0.35);
        let g = regression_gradient_q(&d, &b, sigma, eps, &p).unwrap();
        let h = 1e-6;
        for j in 0..b.len() {
            let f = |t: f64| {
                let mut bb = b;
                bb[j] = t;
                regression_objective_q(&d, &bb, sigma, eps, &p).unwrap()
            };
            let fd = (f(b[j] + h) - f(b[j] - h)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "b{j}: {fd} vs {}", g[j]);
        }
        let fs = |s: f64| regression_objective_q(&d, &b, s, eps, &p).unwrap();
        let fe = |e: f64| regression_objective_q(&d, &b, sigma, e, &p).unwrap();
        let fd_s = (fs(sigma + h) - fs(sigma - h)) / (2.0 * h);
        let fd_e = (fe(eps + h) - fe(eps - h)) / (2.0 * h);
        assert!((fd_s - g[6]).abs() < 1e-6 * (1.0 + g[6].abs()));
        assert!((fd_e - g[7]).abs() < 1e-6 * (1.0 + g[7].abs()));
    }

    #[test]
    fn converged_fit_satisfies_equations() {
        let d = generate_regression_sample(100, -0.2, 21).unwrap();
        let c = cfg(-1.1, 5.2);
        let f = fit_regression(&d, &c).unwrap();
        assert!(f.converged, "{f:?}");
        let e = regression_estimating_equations_tied(&d, &f.b, f.sigma, f.eps, &c.loss, f.tie).unwrap();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 10.0 * c.tol, "{e:?}");
    }

    #[test]
    fn regression_equivariance() {
        let d = generate_regression_sample(80, -0.5, 2).unwrap();
        let c = cfg(-0.3, 5.3);
        let f = fit_regression(&d, &c).unwrap();
        let a = DVector::from_column_slice(&[0.5, -1.0, 2.0, 0.25, -0.75, 1.5]);
        let y2: Vec<f64> = (d.y() + d.x() * &a).iter().copied().collect();
        let d2 = RegressionData::new(y2, d.x().clone()).unwrap();
        let b0: Vec<f64> = a.iter().copied().collect();
        let (s0, _) = (mad(&d.y().iter().copied().collect::<Vec<_>>()), 0.0);
        let f1 = fit_regression_from(&d, &c, &[0.0; 6], s0, 0.0).unwrap();
        let f2 = fit_regression_from(&d2, &c, &b0, s0, 0.0).unwrap();
        assert_eq!(f1.b, f.b);
        for j in 0..6 {
            assert!((f2.b[j] - f1.b[j] - a[j]).abs() < 1e-8, "{j}");
        }
        assert!((f2.sigma - f1.sigma).abs() < 1e-8);
        assert!((f2.eps - f1.eps).abs() < 1e-8);
        for (w1, w2) in f1.weights.iter().zip(&f2.weights) {
            assert!((w1 - w2).abs() < 1e-8);
        }
    }

    #[test]
    fn scale_equivariance() {
        let d = generate_regression_sample(80, -0.2, 8).unwrap();
        let c = cfg(-1.1, 5.2);
        let f = fit_regression(&d, &c).unwrap();
        let k = 3.5;
        let d2 = RegressionData::new(d.y().iter().map(|v| k * v).collect(), d.x().clone()).unwrap();
        let f2 = fit_regression(&d2, &c).unwrap();
        for j in 0..6 {
            assert!((f2.b[j] - k * f.b[j]).abs() < 1e-8 * (1.0 + f2.b[j].abs()));
        }
        assert!((f2.sigma - k * f.sigma).abs() < 1e-8 * f2.sigma);
        assert!((f2.eps - f.eps).abs() < 1e-8);
    }

    // Classical Huber IRLS from the module-loss ψ, solved through the normal
    // equations instead of an SVD.
    fn huber_reference(d: &RegressionData, h: &HuberParams, iters: usize) -> Vec<DVector<f64>> {
        let n = d.n() as f64;
        let y: Vec<f64> = d.y().iter().copied().collect();
        let mut sigma = mad(&y);
        let mut b = DVector::zeros(d.p());
        let mut path = Vec::new();
        for _ in 0..iters {
            let r = d.y() - d.x() * &b;
            let w: Vec<f64> = r
                .iter()
                .map(|&ri| {
                    let u = ri / sigma;
                    if u == 0.0 {
                        1.0
                    } else {
                        h.psi(u) / u
                    }
                })
                .collect();
            let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
            let xtwx = d.x().transpose() * &wm * d.x();
            let xtwy = d.x().transpose() * &wm * d.y();
            b = xtwx.cholesky().unwrap().solve(&xtwy);
            let r2 = d.y() - d.x() * &b;
            sigma = (r2.iter().zip(&w).map(|(ri, wi)| wi * ri * ri).sum::<f64>() / n).sqrt();
            path.push(b.clone());
        }
        path
    }

    #[test]
    fn huber_path_matches_reference_irls() {
        let d = generate_regression_sample(70, -0.5, 13).unwrap();
        let h = HuberParams::new(1.4).unwrap();
        let path = huber_reference(&d, &h, 15);
        for (k, bk) in path.iter().enumerate() {
            let mut c = FitConfig::new(h.as_esh());
            c.hold_eps = true;
            c.max_iter = k + 1;
            let f = fit_regression(&d, &c).unwrap();
            for j in 0..6 {
                assert!((f.b[j] - bk[j]).abs() < 1e-8 * (1.0 + bk[j].abs()), "iteration {k}, b{j}");
            }
        }
    }

    #[test]
    fn ml_regression_recovers_esn_coefficients() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 4000;
        let truth = SkewFamilyParams::esn(0.0, 1.0, -0.5).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 + 2.0 * r[0] - r[1] + crate::distributions::draw(&truth, &mut rng))
            .collect();
        let d = RegressionData::from_rows(y, &rows, true).unwrap();
        let f = fit_ml_regression(&d, Family::Esn, None).unwrap();
        assert!(f.converged);
        assert!((f.b[0] - 1.0).abs() < 0.1 && (f.b[1] - 2.0).abs() < 0.05 && (f.b[2] + 1.0).abs() < 0.05, "{f:?}");
        assert!((f.sigma - 1.0).abs() < 0.05 && (f.eps + 0.5).abs() < 0.05, "{f:?}");
    }
}
