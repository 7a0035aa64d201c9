use esh::asymptotics::{
    asymptotic_cov, expected_rho, expected_scores, ges, influence_theta_known_nuisance, matrix_a, matrix_b,
    uniqueness_minors, variance_table,
};
use esh::LossParams;
use esh_oracle::{central_diff4, integrate_line};
use proptest::prelude::*;

const TOL: f64 = 1e-7;

fn esn_pdf(x: f64, sigma: f64, eps: f64) -> f64 {
    let q = if x < 0.0 { 1.0 + eps } else { 1.0 - eps };
    let z = x / (sigma * q);
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= TOL * want.abs().max(1.0)
}

fn breaks(p: &LossParams, sigma: f64, theta: f64, eps: f64) -> Vec<f64> {
    vec![
        0.0,
        theta,
        theta + p.c1() * sigma * (1.0 + eps),
        theta + p.c2() * sigma * (1.0 - eps),
        p.c1() * sigma * (1.0 + p.eps()),
        p.c2() * sigma * (1.0 - p.eps()),
    ]
}

// E over X ~ ESN(0, sigma, p.eps) of score i at (theta, s, e).
fn mean_score(p: &LossParams, sigma: f64, i: usize, theta: f64, s: f64, e: f64) -> f64 {
    let pe = p.with_eps(e).unwrap();
    integrate_line(
        |x| pe.scores_at(x, theta, s)[i] * esn_pdf(x, sigma, p.eps()),
        &breaks(p, s, theta, e),
        1e-14,
    )
}

fn params() -> impl Strategy<Value = (LossParams, f64)> {
    (-3.0f64..-0.01, 0.01f64..7.0, -0.8f64..0.8, 0.3f64..3.0)
        .prop_map(|(c1, c2, e, s)| (LossParams::new(c1, c2, e).unwrap(), s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn a_entries_match_quadrature((p, sigma) in params()) {
        let a = matrix_a(&p, sigma).unwrap();
        for i in 0..3 {
            for j in i..3 {
                let q = integrate_line(
                    |x| {
                        let s = p.scores_at(x, 0.0, sigma);
                        s[i] * s[j] * esn_pdf(x, sigma, p.eps())
                    },
                    &breaks(&p, sigma, 0.0, p.eps()),
                    1e-14,
                );
                prop_assert!(close(a[(i, j)], q), "A[{i}{j}] {} vs {}", a[(i, j)], q);
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn b_entries_match_differentiated_expectations((p, sigma) in params()) {
        let b = match matrix_b(&p, sigma) {
            Ok(b) => b,
            Err(_) => return Ok(()),
        };
        let e = p.eps();
        for i in 0..3 {
            let h = 1e-3;
            let d = [
                central_diff4(|t| mean_score(&p, sigma, i, t, sigma, e), 0.0, h * sigma),
                central_diff4(|s| mean_score(&p, sigma, i, 0.0, s, e), sigma, h * sigma),
                central_diff4(|ee| mean_score(&p, sigma, i, 0.0, sigma, ee), e, h * (1.0 - e.abs())),
            ];
            for j in 0..3 {
                prop_assert!(
                    (b[(i, j)] - d[j]).abs() <= 1e-6 * d[j].abs().max(1.0),
                    "B[{i}{j}] {} vs {}", b[(i, j)], d[j]
                );
            }
        }
    }

    #[test]
    fn second_score_integrals_match_b((p, sigma) in params()) {
        let b = match matrix_b(&p, sigma) {
            Ok(b) => b,
            Err(_) => return Ok(()),
        };
        for i in 0..3 {
            for j in 0..3 {
                let q = integrate_line(
                    |x| p.second_scores_at(x, 0.0, sigma)[i][j] * esn_pdf(x, sigma, p.eps()),
                    &breaks(&p, sigma, 0.0, p.eps()),
                    1e-14,
                );
                prop_assert!(close(b[(i, j)], q), "B[{i}{j}] {} vs {}", b[(i, j)], q);
            }
        }
    }

    #[test]
    fn expected_scores_and_rho_match_quadrature((p, sigma) in params()) {
        let s = expected_scores(&p, sigma).unwrap();
        for (i, si) in s.iter().enumerate() {
            let q = mean_score(&p, sigma, i, 0.0, sigma, p.eps());
            prop_assert!(close(*si, q), "E[psi_{i}] {} vs {}", si, q);
        }
        let r = expected_rho(&p, sigma).unwrap();
        let q = integrate_line(
            |x| p.rho(x / sigma) * esn_pdf(x, sigma, p.eps()),
            &[0.0, p.c1() * sigma, p.c2() * sigma],
            1e-14,
        );
        prop_assert!(close(r, q), "E[rho] {} vs {}", r, q);
    }

    #[test]
    fn a_and_cov_are_psd((p, sigma) in params()) {
        let a = matrix_a(&p, sigma).unwrap();
        let scale = a.abs().max().max(1.0);
        prop_assert!(a.symmetric_eigenvalues().min() >= -1e-10 * scale);
        if let Ok(c) = asymptotic_cov(&p, sigma) {
            let cs = c.abs().max().max(1.0);
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12 * cs);
            prop_assert!(c.symmetric_eigenvalues().min() >= -1e-10 * cs);
        }
    }
}

#[test]
fn variance_table_scales_as_one_over_n() {
    let p = LossParams::new(-1.1, 3.7, -0.2).unwrap();
    let t = variance_table(&p, 1.0, &[30, 50, 100, 150]).unwrap();
    assert!((t[0].theta * 30.0 - t[3].theta * 150.0).abs() <= 1e-12 * t[0].theta * 30.0);
    assert!((t[0].eps * 30.0 - t[2].eps * 100.0).abs() <= 1e-12 * t[0].eps * 30.0);
}

#[test]
fn minors_nonzero_at_paper_tuning_triples() {
    let triples = [
        (-0.2, -1.1, 3.7),
        (-0.5, -0.7, 5.0),
        (-0.8, -0.1, 6.4),
        (-0.2, -1.1, 5.2),
        (-0.5, -0.3, 5.3),
        (-0.8, -0.01, 6.2),
    ];
    for (e, c1, c2) in triples {
        let p = LossParams::new(c1, c2, e).unwrap();
        let (k1, k2, k3) = uniqueness_minors(&p, 1.0).unwrap();
        assert!(k1 != 0.0 && k2 != 0.0 && k3 != 0.0, "{e} {c1} {c2}: {k1} {k2} {k3}");
        let b = matrix_b(&p, 1.0).unwrap();
        assert_eq!(k1, b[(0, 0)]);
    }
}

#[test]
fn ges_grows_without_bound() {
    for (i, (e, c1, c2)) in [
        (-0.2, -1.1, 3.7),
        (-0.5, -0.7, 5.0),
        (-0.8, -0.1, 6.4),
        (0.0, -1.345, 1.345),
        (0.3, -2.0, 1.0),
        (0.6, -0.5, 0.5),
        (-0.4, -3.0, 7.0),
        (0.1, -0.01, 0.01),
        (0.8, -1.0, 2.0),
        (-0.7, -2.5, 0.2),
    ]
    .into_iter()
    .enumerate()
    {
        let p = LossParams::new(c1, c2, e).unwrap();
        let g = ges(&[-1e6, -1e3, -10.0, 10.0, 1e3, 1e6], &p, 1.0).unwrap();
        assert!(g[0] > g[1] && g[1] > g[2], "set {i}: {g:?}");
        assert!(g[5] > g[4] && g[4] > g[3], "set {i}: {g:?}");
        let bound = (0..=16)
            .flat_map(|k| [10f64.powf(k as f64 * 0.5), -(10f64.powf(k as f64 * 0.5))])
            .map(|x| influence_theta_known_nuisance(x, &p, 1.0).unwrap().abs())
            .fold(0.0, f64::max);
        let b11 = matrix_b(&p, 1.0).unwrap()[(0, 0)];
        let cap = (c1.abs() / (1.0 + e).powi(3)).max(c2 / (1.0 - e).powi(3));
        assert!(bound.is_finite() && bound <= cap / b11.abs() * 1.0000001, "set {i}");
    }
}
