//! Solver for the estimating equations of the linear model y = Xb + u
//! (location is the case X = 1):
//!
//! ```text
//!   b:  (1/n) Σ ψ(uᵢ) xᵢ / (σ qᵢ)       = 0
//!   σ:  (1/n) Σ ψ(uᵢ) uᵢ − 1            = 0
//!   ε:  (1/n) Σ sᵢ (ψ(uᵢ) uᵢ − 1) / qᵢ  = 0
//! ```
//!
//! For fixed ε the b and σ rows are continuous in (b, σ) with a unique root
//! (b(ε), σ(ε)), found by Newton's method. All discontinuity sits in the ε
//! row, through the residual signs, so the scalar equation left over in ε is
//! solved by bisection. When the bracket closes on a jump, the residual that
//! changed sign there is zero at the limit; it is pinned at zero and the
//! fraction λ of it counted on the positive side is set to make the ε row
//! vanish.

use nalgebra::{DMatrix, DVector};

use crate::loss::{sign, LossParams};
use crate::univariate::{TieSplit, EPS_MARGIN};

pub(crate) struct Solved {
    pub b: DVector<f64>,
    pub sigma: f64,
    pub eps: f64,
    pub tie: Option<TieSplit>,
    // the ε row keeps one sign up to the boundary, where ε was clamped
    pub clamped: bool,
}

struct Problem<'a> {
    y: &'a [f64],
    x: &'a DMatrix<f64>,
    base: &'a LossParams,
}

// h(z) = ρ(z/q) with q = 1 − sign(z)ε, as a function of the standardized
// residual z = r/σ, with its first two derivatives. h is convex and C¹.
fn h(base: &LossParams, z: f64, eps: f64) -> (f64, f64, f64) {
    let q = 1.0 - sign(z) * eps;
    let u = z / q;
    if u >= base.c1() && u <= base.c2() {
        let q4 = q.powi(4);
        (z * z / (2.0 * q4), z / q4, 1.0 / q4)
    } else {
        let c = if u < base.c1() { base.c1() } else { base.c2() };
        let q2 = q * q;
        (c * z / (q2 * q) - c * c / (2.0 * q2), c / (q2 * q), 0.0)
    }
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn residuals(&self, b: &DVector<f64>) -> Vec<f64> {
        let fitted = self.x * b;
        self.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect()
    }

    // For fixed ε the b and σ rows are the stationarity conditions of
    // Σ ρ(uᵢ) + n log σ. In β = b/σ, τ = 1/σ this is
    //   G(β, τ) = Σ h(τ yᵢ − xᵢβ) − n log τ,
    // which is jointly convex. Returns G, its gradient and Hessian.
    // Also returns the scales against which G and its gradient count as
    // rounding: Σ |h(zᵢ)| + n |log τ| and Σ |h'(zᵢ)| ‖wᵢ‖ + n/τ.
    fn convex(&self, v: &DVector<f64>, eps: f64) -> (f64, DVector<f64>, DMatrix<f64>, [f64; 2]) {
        let p = self.p();
        let n = self.n() as f64;
        let tau = v[p];
        let beta = v.rows(0, p);
        let mut val = -n * tau.ln();
        let mut grad = DVector::zeros(p + 1);
        let mut hess = DMatrix::zeros(p + 1, p + 1);
        grad[p] = -n / tau;
        hess[(p, p)] = n / (tau * tau);
        let mut gscale = n / tau;
        let mut vscale = n * tau.ln().abs();
        let mut w = DVector::zeros(p + 1);
        for i in 0..self.n() {
            let xi = self.x.row(i);
            let z = tau * self.y[i] - xi.dot(&beta.transpose());
            let (h0, h1, h2) = h(self.base, z, eps);
            for k in 0..p {
                w[k] = -xi[k];
            }
            w[p] = self.y[i];
            val += h0;
            grad.axpy(h1, &w, 1.0);
            gscale += h1.abs() * w.norm();
            vscale += h0.abs();
            if h2 != 0.0 {
                hess.ger(h2, &w, &w, 1.0);
            }
        }
        (val, grad, hess, [vscale, gscale])
    }

    // (b(ε), σ(ε)) by minimizing G from a warm start: Newton directions,
    // with a Levenberg shift when the Hessian is singular, and a line search
    // on the directional derivative. G itself is useless for the line search
    // near |ε| = 1, where its terms grow like 1/q³ and swamp the decrease.
    fn at_eps(&self, eps: f64, b: &DVector<f64>, sigma: f64) -> Option<(DVector<f64>, f64)> {
        let p = self.p();
        let mut v = DVector::zeros(p + 1);
        v.rows_mut(0, p).copy_from(&(b / sigma));
        v[p] = 1.0 / sigma;
        let (_, mut grad, mut hess, mut scale) = self.convex(&v, eps);
        let mut mu = 0.0;
        let finish = |v: &DVector<f64>| Some((v.rows(0, p) / v[p], 1.0 / v[p]));
        for _ in 0..100 {
            if grad.norm() <= 1e-13 * scale[1] {
                return finish(&v);
            }
            let mut m = hess.clone();
            let diag = hess.diagonal().max().max(1.0);
            for k in 0..=p {
                m[(k, k)] += mu * diag;
            }
            let Some(ch) = m.cholesky() else {
                mu = (mu * 10.0).max(1e-12);
                continue;
            };
            let d = ch.solve(&(-&grad));
            if d.norm() <= 1e-15 * v.norm() {
                if mu == 0.0 {
                    // at rounding level; the curvature of a narrow quadratic
                    // band keeps the gradient from getting smaller
                    return finish(&v);
                }
                mu = 0.0;
                continue;
            }
            let slope = grad.dot(&d);
            // φ'(t) = ∇G(v + t d)·d is nondecreasing; find where it turns
            // nonnegative in (0, t_max], stopping once |φ'| has dropped tenfold
            let t_max = if d[p] < 0.0 { (0.9 * v[p] / -d[p]).min(1.0) } else { 1.0 };
            let at = |t: f64| {
                let c = &v + &d * t;
                let r = self.convex(&c, eps);
                let dphi = r.1.dot(&d);
                (c, r, dphi)
            };
            let mut cur = at(t_max);
            let mut t = t_max;
            if cur.2 > 0.1 * slope.abs() {
                let (mut lo, mut hi) = (0.0, t_max);
                for _ in 0..40 {
                    t = 0.5 * (lo + hi);
                    cur = at(t);
                    if cur.2.abs() <= 0.1 * slope.abs() {
                        break;
                    }
                    if cur.2 < 0.0 {
                        lo = t;
                    } else {
                        hi = t;
                    }
                }
            }
            let (c, (_, c_grad, c_hess, c_scale), _) = cur;
            v = c;
            (grad, hess, scale) = (c_grad, c_hess, c_scale);
            mu = if t >= 0.5 * t_max { mu * 0.1 } else { (mu * 10.0).max(1e-12) };
            if mu < 1e-12 {
                mu = 0.0;
            }
        }
        (grad.norm() <= 1e-10 * scale[1]).then(|| (v.rows(0, p) / v[p], 1.0 / v[p]))
    }

    // The ε row, with observation j (if any) pinned at zero residual and a
    // fraction λ of it on the positive side.
    fn eps_row(&self, b: &DVector<f64>, sigma: f64, eps: f64, tie: Option<(usize, f64)>) -> f64 {
        let mut sum = 0.0;
        for (i, r) in self.residuals(b).into_iter().enumerate() {
            match tie {
                Some((j, l)) if j == i => sum -= l / (1.0 - eps) - (1.0 - l) / (1.0 + eps),
                _ => {
                    let s = sign(r);
                    let z = r / sigma;
                    sum += s * (h(self.base, z, eps).1 * z - 1.0) / (1.0 - s * eps);
                }
            }
        }
        sum / self.n() as f64
    }
}

/// The ε row after solving the other rows at fixed ε, with (b, σ).
pub(crate) fn profile(y: &[f64], x: &DMatrix<f64>, base: &LossParams, eps: f64, start: (&DVector<f64>, f64)) -> Option<(f64, DVector<f64>, f64)> {
    let pr = Problem { y, x, base };
    let (b, sigma) = pr.at_eps(eps, start.0, start.1)?;
    Some((pr.eps_row(&b, sigma, eps, None), b, sigma))
}

struct Point {
    eps: f64,
    g: f64,
    b: DVector<f64>,
    sigma: f64,
}

/// Solves the estimating equations, taking the root in ε nearest the
/// starting point. With `hold_eps` only (b, σ) are solved, at the start ε.
pub(crate) fn solve(
    y: &[f64],
    x: &DMatrix<f64>,
    base: &LossParams,
    start: (&DVector<f64>, f64, f64),
    hold_eps: bool,
) -> Option<Solved> {
    let pr = Problem { y, x, base };
    let eval = |eps: f64, b: &DVector<f64>, sigma: f64| -> Option<Point> {
        let (b, sigma) = pr.at_eps(eps, b, sigma)?;
        let g = pr.eps_row(&b, sigma, eps, None);
        Some(Point { eps, g, b, sigma })
    };
    let done = |p: Point| Some(Solved { b: p.b, sigma: p.sigma, eps: p.eps, tie: None, clamped: false });

    let first = eval(start.2, start.0, start.1)?;
    if hold_eps || first.g == 0.0 {
        return done(first);
    }

    // Bracket by stepping away from the start in the direction the ε row
    // points to, as the reweighting update of ε would. With no sign change
    // up to the boundary, ε is clamped there.
    // Steps are taken in atanh ε so that the scaling near the boundary, which
    // goes with 1 − |ε|, changes gradually between warm starts.
    let lim = 1.0 - EPS_MARGIN;
    let dir = if first.g > 0.0 { -1.0 } else { 1.0 };
    let mut near = first;
    let mut width = 0.02;
    let far = loop {
        let e = (near.eps.atanh() + dir * width).tanh().clamp(-lim, lim);
        let v = eval(e, &near.b, near.sigma)?;
        if v.g == 0.0 {
            return done(v);
        }
        if (v.g > 0.0) != (near.g > 0.0) {
            break v;
        }
        if e.abs() == lim {
            return Some(Solved { b: v.b, sigma: v.sigma, eps: e, tie: None, clamped: true });
        }
        near = v;
        width = (width * 2.0).min(0.5);
    };
    let (mut lo, mut hi) = if near.g < 0.0 { (near, far) } else { (far, near) };

    loop {
        let mid = 0.5 * (lo.eps + hi.eps);
        if mid == lo.eps || mid == hi.eps {
            break;
        }
        let warm = if (mid - lo.eps).abs() < (mid - hi.eps).abs() { &lo } else { &hi };
        let v = eval(mid, &warm.b, warm.sigma)?;
        if v.g == 0.0 {
            return done(v);
        }
        if v.g < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
    }

    let rl = pr.residuals(&lo.b);
    let rh = pr.residuals(&hi.b);
    let crossed = (0..pr.n())
        .filter(|&i| sign(rl[i]) != sign(rh[i]))
        .min_by(|&i, &j| (rl[i].abs() + rh[i].abs()).total_cmp(&(rl[j].abs() + rh[j].abs())));
    let best = if lo.g.abs() <= hi.g.abs() { lo } else { hi };
    let Some(j) = crossed else {
        // continuous sign change: the bracket is a root to rounding
        return done(best);
    };

    // Jump at observation j: pin its residual at zero (exactly, when a unit
    // entry of X can absorb it) and solve the ε row, linear in λ.
    let mut b = best.b;
    if let Some(k) = (0..pr.p()).find(|&k| x[(j, k)] == 1.0) {
        b[k] += pr.residuals(&b)[j];
    }
    let eps = best.eps;
    let n = pr.n() as f64;
    // row(λ) = row(0) − λ (1/(1−ε) + 1/(1+ε)) / n
    let row0 = pr.eps_row(&b, best.sigma, eps, Some((j, 0.0)));
    let lambda = row0 * n / (1.0 / (1.0 - eps) + 1.0 / (1.0 + eps));
    if !(-1e-9..=1.0 + 1e-9).contains(&lambda) {
        return None;
    }
    Some(Solved {
        b,
        sigma: best.sigma,
        eps,
        tie: Some(TieSplit { index: j, positive: lambda.clamp(0.0, 1.0) }),
        clamped: false,
    })
}
