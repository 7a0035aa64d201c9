//! Expectations, sandwich covariance and influence functions of the ESH
//! estimator under an epsilon-skew normal reference.
//!
//! Every expectation is a sum over the four loss branches of polynomial
//! moments of the ESN density, and each such moment is an incomplete gamma
//! value. The scores are evaluated at θ = 0 with X ~ ESN(0, σ, ε), so σ
//! only contributes the factors `1/σ` (θ and σ rows) and `1` (ε row).

use nalgebra::{Matrix3, Vector3};

use crate::error::{EshError, Result};
use crate::loss::LossParams;
use crate::specfun::{gamma, upper_incomplete_gamma};

const SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub cov: Matrix3<f64>,
    pub minors: (f64, f64, f64),
    pub params: (LossParams, f64),
}

/// One row of the variance table: diag(cov)/n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRow {
    pub n: usize,
    pub theta: f64,
    pub sigma: f64,
    pub eps: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(EshError::InvalidParams(format!("sigma must be positive and finite, got {sigma}")))
    }
}

// ∫_α^β t^k φ(t) dt for 0 ≤ α ≤ β ≤ ∞.
fn half_moment(k: usize, alpha: f64, beta: f64) -> f64 {
    if beta <= alpha {
        return 0.0;
    }
    let s = 0.5 * (k as f64 + 1.0);
    let ug = |t: f64| {
        if t.is_infinite() {
            0.0
        } else {
            upper_incomplete_gamma(s, 0.5 * t * t).expect("valid gamma arguments")
        }
    };
    let lo = if alpha == 0.0 { gamma(s) } else { ug(alpha) };
    2f64.powf(0.5 * (k as f64 - 1.0)) * (lo - ug(beta)) / (2.0 * std::f64::consts::PI).sqrt()
}

// ∫_a^b x^k φ(x/q) dx over an interval that does not straddle zero.
fn moment(k: usize, a: f64, b: f64, q: f64) -> f64 {
    let qk = q.powi(k as i32 + 1);
    if a >= 0.0 {
        qk * half_moment(k, a / q, b / q)
    } else {
        let sgn = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        sgn * qk * half_moment(k, -b / q, -a / q)
    }
}

// Polynomials in x as coefficient vectors, lowest degree first.
type Poly = Vec<f64>;

fn mul(p: &Poly, r: &Poly) -> Poly {
    let mut out = vec![0.0; p.len() + r.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in r.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn integrate(p: &Poly, a: f64, b: f64, q: f64) -> f64 {
    p.iter().enumerate().map(|(k, c)| if *c == 0.0 { 0.0 } else { c * moment(k, a, b, q) }).sum()
}

struct Piece {
    a: f64,
    b: f64,
    q: f64,
    scores: [Poly; 3],
    jac: [[Poly; 3]; 3],
}

// The four branches of the standardized scores at θ = 0, σ = 1.
fn pieces(p: &LossParams) -> [Piece; 4] {
    let e = p.eps();
    let quad = |a: f64, b: f64, s: f64| {
        let q = 1.0 - s * e;
        let (q4, q5, q6) = (q.powi(4), q.powi(5), q.powi(6));
        Piece {
            a,
            b,
            q,
            scores: [vec![0.0, -1.0 / q4], vec![0.0, 0.0, -1.0 / q4], vec![0.0, 0.0, 2.0 * s / q5]],
            jac: [
                [vec![1.0 / q4], vec![0.0, 2.0 / q4], vec![0.0, -4.0 * s / q5]],
                [vec![0.0, 2.0 / q4], vec![0.0, 0.0, 3.0 / q4], vec![0.0, 0.0, -4.0 * s / q5]],
                [vec![0.0, -4.0 * s / q5], vec![0.0, 0.0, -4.0 * s / q5], vec![0.0, 0.0, 10.0 / q6]],
            ],
        }
    };
    let lin = |a: f64, b: f64, s: f64, c: f64| {
        let q = 1.0 - s * e;
        let (q3, q4, q5) = (q.powi(3), q.powi(4), q.powi(5));
        Piece {
            a,
            b,
            q,
            scores: [vec![-c / q3], vec![0.0, -c / q3], vec![-s * c * c / q3, 3.0 * s * c / q4]],
            jac: [
                [vec![0.0], vec![c / q3], vec![-3.0 * s * c / q4]],
                [vec![c / q3], vec![0.0, 2.0 * c / q3], vec![0.0, -3.0 * s * c / q4]],
                [vec![-3.0 * s * c / q4], vec![0.0, -3.0 * s * c / q4], vec![-3.0 * c * c / q4, 12.0 * c / q5]],
            ],
        }
    };
    let left = p.c1() * (1.0 + e);
    let right = p.c2() * (1.0 - e);
    [
        lin(f64::NEG_INFINITY, left, -1.0, p.c1()),
        quad(left, 0.0, -1.0),
        quad(0.0, right, 1.0),
        lin(right, f64::INFINITY, 1.0, p.c2()),
    ]
}

fn scale(sigma: f64) -> Vector3<f64> {
    Vector3::new(1.0 / sigma, 1.0 / sigma, 1.0)
}

/// E[ρ_ESH(X/σ)] for X ~ ESN(0, σ, ε), with the loss knots at c1 and c2.
/// The value does not depend on σ.
pub fn expected_rho(p: &LossParams, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let (c1, c2) = (p.c1(), p.c2());
    let (qm, qp) = (1.0 + p.eps(), 1.0 - p.eps());
    let (p2, m2) = (qm * qm, qp * qp);
    Ok(integrate(&vec![-0.5 * c1 * c1 / p2, c1 / p2], f64::NEG_INFINITY, c1, qm)
        + integrate(&vec![0.0, 0.0, 0.5 / p2], c1, 0.0, qm)
        + integrate(&vec![0.0, 0.0, 0.5 / m2], 0.0, c2, qp)
        + integrate(&vec![-0.5 * c2 * c2 / m2, c2 / m2], c2, f64::INFINITY, qp))
}

/// (E[ψ_θ], E[ψ_σ], E[ψ_ε]).
pub fn expected_scores(p: &LossParams, sigma: f64) -> Result<[f64; 3]> {
    check_sigma(sigma)?;
    let d = scale(sigma);
    let mut out = [0.0; 3];
    for pc in pieces(p).iter() {
        for (i, o) in out.iter_mut().enumerate() {
            *o += d[i] * integrate(&pc.scores[i], pc.a, pc.b, pc.q);
        }
    }
    Ok(out)
}

/// A = E[Ψ Ψᵀ].
pub fn matrix_a(p: &LossParams, sigma: f64) -> Result<Matrix3<f64>> {
    check_sigma(sigma)?;
    let d = scale(sigma);
    let mut a = Matrix3::zeros();
    for pc in pieces(p).iter() {
        for i in 0..3 {
            for j in i..3 {
                a[(i, j)] += integrate(&mul(&pc.scores[i], &pc.scores[j]), pc.a, pc.b, pc.q);
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            a[(i, j)] *= d[i] * d[j];
            a[(j, i)] = a[(i, j)];
        }
    }
    Ok(a)
}

/// B = E[∂Ψ/∂(θ, σ, ε)]. Ψ is continuous in x, so this is also the
/// Jacobian of the expected score.
pub fn matrix_b(p: &LossParams, sigma: f64) -> Result<Matrix3<f64>> {
    let b = matrix_b_unchecked(p, sigma)?;
    nonsingular(&b)?;
    Ok(b)
}

fn matrix_b_unchecked(p: &LossParams, sigma: f64) -> Result<Matrix3<f64>> {
    check_sigma(sigma)?;
    let d = scale(sigma);
    let mut b = Matrix3::zeros();
    for pc in pieces(p).iter() {
        for i in 0..3 {
            for j in i..3 {
                b[(i, j)] += integrate(&pc.jac[i][j], pc.a, pc.b, pc.q);
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            b[(i, j)] *= d[i] * d[j];
            b[(j, i)] = b[(i, j)];
        }
    }
    Ok(b)
}

// |det B| relative to the product of row norms (Hadamard bound).
fn nonsingular(b: &Matrix3<f64>) -> Result<()> {
    let bound: f64 = b.row_iter().map(|r| r.norm()).product();
    let rel = if bound > 0.0 { b.determinant().abs() / bound } else { 0.0 };
    if rel < SINGULAR_REL || !rel.is_finite() {
        return Err(EshError::SingularB(rel));
    }
    Ok(())
}

fn inverse(b: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    nonsingular(b)?;
    b.lu().try_inverse().ok_or(EshError::SingularB(0.0))
}

/// B⁻¹ A (Bᵀ)⁻¹.
pub fn asymptotic_cov(p: &LossParams, sigma: f64) -> Result<Matrix3<f64>> {
    let bi = inverse(&matrix_b(p, sigma)?)?;
    let c = bi * matrix_a(p, sigma)? * bi.transpose();
    Ok(0.5 * (c + c.transpose()))
}

pub fn variance_table(p: &LossParams, sigma: f64, n_list: &[usize]) -> Result<Vec<VarianceRow>> {
    if n_list.contains(&0) {
        return Err(EshError::InvalidParams("sample sizes must be positive".into()));
    }
    let c = asymptotic_cov(p, sigma)?;
    Ok(n_list
        .iter()
        .map(|&n| {
            let nf = n as f64;
            VarianceRow { n, theta: c[(0, 0)] / nf, sigma: c[(1, 1)] / nf, eps: c[(2, 2)] / nf }
        })
        .collect())
}

/// Leading principal minors (K1, K2, K3) of B.
pub fn uniqueness_minors(p: &LossParams, sigma: f64) -> Result<(f64, f64, f64)> {
    let b = matrix_b_unchecked(p, sigma)?;
    Ok(minors(&b))
}

fn minors(b: &Matrix3<f64>) -> (f64, f64, f64) {
    (b[(0, 0)], b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)], b.determinant())
}

pub fn report(p: &LossParams, sigma: f64) -> Result<AsymptoticReport> {
    let a = matrix_a(p, sigma)?;
    let b = matrix_b(p, sigma)?;
    let bi = inverse(&b)?;
    let c = bi * a * bi.transpose();
    Ok(AsymptoticReport { a, b, cov: 0.5 * (c + c.transpose()), minors: minors(&b), params: (*p, sigma) })
}

/// IF(x) = −B⁻¹ Ψ(x).
pub fn influence_function(x: f64, p: &LossParams, sigma: f64) -> Result<Vector3<f64>> {
    Ok(Influence::new(p, sigma)?.at(x))
}

/// Euclidean norm of the influence function at each grid point.
pub fn ges(x_grid: &[f64], p: &LossParams, sigma: f64) -> Result<Vec<f64>> {
    let inf = Influence::new(p, sigma)?;
    Ok(x_grid.iter().map(|&x| inf.at(x).norm()).collect())
}

/// Influence function of θ̂ when σ and ε are known: −ψ_θ(x)/B₁₁.
pub fn influence_theta_known_nuisance(x: f64, p: &LossParams, sigma: f64) -> Result<f64> {
    let b11 = matrix_b_unchecked(p, sigma)?[(0, 0)];
    if b11.abs() < SINGULAR_REL {
        return Err(EshError::SingularB(b11.abs()));
    }
    Ok(-p.scores_at(x, 0.0, sigma)[0] / b11)
}

/// B⁻¹ factored once for repeated influence-function evaluation.
#[derive(Debug, Clone)]
pub struct Influence {
    p: LossParams,
    sigma: f64,
    b_inv: Matrix3<f64>,
}

impl Influence {
    pub fn new(p: &LossParams, sigma: f64) -> Result<Self> {
        let b_inv = inverse(&matrix_b(p, sigma)?)?;
        Ok(Self { p: *p, sigma, b_inv })
    }

    pub fn at(&self, x: f64) -> Vector3<f64> {
        let s = self.p.scores_at(x, 0.0, self.sigma);
        -(self.b_inv * Vector3::new(s[0], s[1], s[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_moments_match_known_values() {
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((half_moment(0, 0.0, f64::INFINITY) - 0.5).abs() < 1e-14);
        assert!((half_moment(1, 0.0, f64::INFINITY) - phi0).abs() < 1e-14);
        assert!((half_moment(2, 0.0, f64::INFINITY) - 0.5).abs() < 1e-14);
        assert!((half_moment(1, 1.0, 2.0) - phi0 * ((-0.5f64).exp() - (-2.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn moments_split_mass_by_side() {
        let e = 0.3;
        let left = moment(0, f64::NEG_INFINITY, 0.0, 1.0 + e);
        let right = moment(0, 0.0, f64::INFINITY, 1.0 - e);
        assert!((left - (1.0 + e) / 2.0).abs() < 1e-14);
        assert!((right - (1.0 - e) / 2.0).abs() < 1e-14);
        assert!(moment(1, f64::NEG_INFINITY, 0.0, 1.0 + e) < 0.0);
    }

    #[test]
    fn symmetric_case_cross_terms_vanish() {
        let p = LossParams::new(-1.3, 1.3, 0.0).unwrap();
        let a = matrix_a(&p, 1.0).unwrap();
        let s = expected_scores(&p, 1.0).unwrap();
        assert!(s[0].abs() < 1e-14);
        assert!(a[(0, 1)].abs() < 1e-12, "{}", a[(0, 1)]);
        assert!(a[(1, 2)].abs() < 1e-12, "{}", a[(1, 2)]);
        assert!(a[(0, 2)].abs() > 0.1);
        let rho = expected_rho(&p, 2.0).unwrap();
        assert!(rho.is_finite() && rho > 0.0);
    }

    #[test]
    fn sigma_scaling() {
        let p = LossParams::new(-1.1, 3.7, -0.2).unwrap();
        let c1 = asymptotic_cov(&p, 1.0).unwrap();
        let c2 = asymptotic_cov(&p, 2.0).unwrap();
        assert!((c2[(0, 0)] / c1[(0, 0)] - 4.0).abs() < 1e-9);
        assert!((c2[(2, 2)] / c1[(2, 2)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn influence_reconstructs_scores() {
        let p = LossParams::new(-0.7, 5.0, -0.5).unwrap();
        let b = matrix_b(&p, 1.5).unwrap();
        for &x in &[-8.0, -0.4, 0.0, 0.9, 12.0] {
            let inf = influence_function(x, &p, 1.5).unwrap();
            let s = p.scores_at(x, 0.0, 1.5);
            let back = -(b * inf);
            for i in 0..3 {
                assert!((back[i] - s[i]).abs() <= 1e-10 * (1.0 + s[i].abs()));
            }
        }
    }

    #[test]
    fn minors_are_leading_principal() {
        let p = LossParams::new(-0.1, 6.4, -0.8).unwrap();
        let b = matrix_b_unchecked(&p, 1.0).unwrap();
        let (k1, _, k3) = uniqueness_minors(&p, 1.0).unwrap();
        assert_eq!(k1, b[(0, 0)]);
        assert!((k3 - b.determinant()).abs() < 1e-12 * k3.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LossParams::new(-1.0, 1.0, 0.0).unwrap();
        assert!(matrix_a(&p, 0.0).is_err());
        assert!(variance_table(&p, 1.0, &[0]).is_err());
    }
}
