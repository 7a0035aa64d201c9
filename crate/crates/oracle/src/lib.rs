//! Reference numerics for checking closed forms.
//!
//! Nothing here shares code with the `esh` crate: integrals are computed by
//! brute-force adaptive Gauss-Kronrod quadrature, derivatives by central
//! differences and minima by exhaustive grids.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = WGK[7] * fc;
    let mut rg = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (left, el) = kronrod(f, a, m);
    let (right, er) = kronrod(f, m, b);
    let sum = left + right;
    if depth == 0 || (el + er) <= tol.max(1e-15 * sum.abs()) || (sum - whole).abs() <= 1e-16 {
        return sum;
    }
    adapt(f, a, m, left, 0.5 * tol, depth - 1) + adapt(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive G7-K15 quadrature of `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (whole, _) = kronrod(&f, a, b);
    adapt(&f, a, b, whole, tol, 40)
}

/// Integral over `[a, +inf)` via the substitution `x = a + t / (1 - t)`.
pub fn integrate_upper<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - t;
        let v = f(a + t / d) / (d * d);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, tol)
}

/// Integral over `(-inf, b]`.
pub fn integrate_lower<F: Fn(f64) -> f64>(f: F, b: f64, tol: f64) -> f64 {
    integrate_upper(|x| f(-x), -b, tol)
}

/// Integral over the whole real line, split at the given breakpoints
/// (kinks or discontinuities of the integrand).
pub fn integrate_line<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|x| x.is_finite()).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.is_empty() {
        pts.push(0.0);
    }
    let mut total = integrate_lower(&f, pts[0], tol) + integrate_upper(&f, pts[pts.len() - 1], tol);
    for w in pts.windows(2) {
        total += integrate(&f, w[0], w[1], tol);
    }
    total
}

/// Central finite difference with step `h`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order central difference; used when the second-order error would
/// dominate a 1e-6 comparison.
pub fn central_diff4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Exhaustive search over the Cartesian product of three axes.
/// Returns the best point and its value.
pub fn grid_min3<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    ax: &[f64],
    ay: &[f64],
    az: &[f64],
) -> ([f64; 3], f64) {
    let mut best = ([f64::NAN; 3], f64::INFINITY);
    for &x in ax {
        for &y in ay {
            for &z in az {
                let v = f(x, y, z);
                if v < best.1 {
                    best = ([x, y, z], v);
                }
            }
        }
    }
    best
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Maclaurin series of the error function; converges for all x, used only
/// for moderate arguments.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    for n in 1..400 {
        term *= -x2 / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_integral() {
        let v = integrate_line(|x| (-0.5 * x * x).exp(), &[0.0], 1e-12);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - x, -1.0, 2.0, 1e-12);
        assert!((v - 2.25).abs() < 1e-12);
    }

    #[test]
    fn erf_known_value() {
        assert!((erf_series(1.0) - 0.842_700_792_949_714_9).abs() < 1e-14);
    }
}
