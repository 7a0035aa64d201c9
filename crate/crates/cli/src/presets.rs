use esh::LossParams;

use crate::error::CliError;
use crate::LossArgs;

/// (ε0, c1, c2) pairs from the table captions.
pub const UNIVARIATE: [(f64, f64, f64); 3] = [(-0.2, -1.10, 3.70), (-0.5, -0.70, 5.00), (-0.8, -0.10, 6.40)];
pub const REGRESSION: [(f64, f64, f64); 3] = [(-0.2, -1.10, 5.20), (-0.5, -0.30, 5.30), (-0.8, -0.01, 6.20)];

pub const DEFAULT_PRESET: f64 = -0.2;

pub fn lookup(eps0: f64, regression: bool) -> Option<(f64, f64)> {
    let table = if regression { &REGRESSION } else { &UNIVARIATE };
    table.iter().find(|r| (r.0 - eps0).abs() < 1e-9).map(|r| (r.1, r.2))
}

/// Effective (c1, c2) and the preset row consulted, if any. Explicit knots win;
/// otherwise the row is `--preset`, then `hint`, then the default.
pub fn resolve(args: &LossArgs, regression: bool, hint: Option<f64>) -> Result<(LossParams, Option<f64>), CliError> {
    let (c1, c2, used) = match (args.c1, args.c2) {
        (Some(c1), Some(c2)) => (c1, c2, None),
        _ => {
            let key = args.preset.or(hint.filter(|h| lookup(*h, regression).is_some())).unwrap_or(DEFAULT_PRESET);
            let (d1, d2) = lookup(key, regression).ok_or_else(|| {
                CliError::Usage(format!("no preset for eps0 = {key}; use -0.2, -0.5, -0.8 or pass --c1 and --c2"))
            })?;
            (args.c1.unwrap_or(d1), args.c2.unwrap_or(d2), Some(key))
        }
    };
    Ok((LossParams::new(c1, c2, 0.0)?, used))
}
