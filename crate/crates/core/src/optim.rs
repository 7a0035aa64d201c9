//! Small derivative-free and bracketing solvers.

pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Nelder–Mead with the standard coefficients (1, 2, 1/2, 1/2). Stops when
/// the spread of function values over the simplex drops below `ftol`
/// (relative to the best value plus one) and the simplex has collapsed.
pub(crate) fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    steps: &[f64],
    ftol: f64,
    max_eval: usize,
) -> NmResult {
    let d = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = d + 1;
    let mut converged = false;

    while evals < max_eval {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();

        let spread = (vals[d] - vals[0]).abs();
        let size = (1..=d)
            .map(|i| pts[i].iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= ftol * (vals[0].abs() + 1.0) && size < 1e-7 {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d).map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (pts[d][j] - centroid[j])).collect() };

        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let x = along(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = f(&x);
            (x, v)
        };
        evals += 1;
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        for i in 1..=d {
            for j in 0..d {
                pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
            }
            vals[i] = f(&pts[i]);
        }
        evals += d;
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    NmResult { x: pts[best].clone(), value: vals[best], converged, evaluations: evals }
}

/// Root of a function known to be negative at `lo` and positive at `hi`,
/// by Newton steps that fall back to bisection when they leave the bracket.
/// `fd` returns (g, g').
pub(crate) fn bracketed_newton<F: Fn(f64) -> (f64, f64)>(fd: F, mut lo: f64, mut hi: f64, x0: f64, xtol: f64) -> f64 {
    let mut x = x0.clamp(lo, hi);
    for _ in 0..200 {
        let (g, dg) = fd(x);
        if g == 0.0 {
            return x;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - g / dg;
        let next = if dg > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= xtol || hi - lo <= xtol {
            return next;
        }
        x = next;
    }
    x
}
