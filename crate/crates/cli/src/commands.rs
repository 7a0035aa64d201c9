use clap::Args;
use serde_json::{json, Map, Value};

use esh::asymptotics;
use esh::distributions::{self, aic_bic, Family, MixtureSpec, SkewFamilyParams};
use esh::loss::{self, Branch, HuberParams, LossParams};
use esh::montecarlo::{self, SimulationConfig, TableFormat};
use esh::regression::{self, RegressionData};
use esh::univariate::{self, FitConfig, UnivariateFit};

use crate::error::CliError;
use crate::input::{parse_table, read_column, read_source};
use crate::{presets, write_output, LossArgs};

pub const SEED_ENV: &str = "ESH_SEED";

fn provenance(subcommand: &str, input: Option<&str>, params: Value) -> Value {
    json!({
        "tool": "esh",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "input": input,
        "parameters": params,
    })
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn default_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be a nonnegative integer, got {s:?}"))),
        Err(_) => Ok(1),
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

fn check_eps(eps: Option<f64>) -> Result<(), CliError> {
    match eps {
        Some(e) if !(e > -1.0 && e < 1.0) => Err(CliError::Usage(format!("--eps must lie in (-1, 1), got {e}"))),
        _ => Ok(()),
    }
}

fn loss_json(p: &LossParams, preset: Option<f64>) -> Value {
    json!({ "c1": p.c1(), "c2": p.c2(), "preset": preset })
}

/// Weight range and the number of points on the linear (downweighted) branches.
fn weights_summary(weights: &[f64], residuals: impl Iterator<Item = f64>, sigma: f64, lp: &LossParams) -> Value {
    let mut w = weights.to_vec();
    w.sort_by(f64::total_cmp);
    let downweighted = residuals
        .filter(|&r| {
            let u = r / (sigma * (1.0 - loss::sign(r) * lp.eps()));
            matches!(lp.branch(u), Branch::LeftLinear | Branch::RightLinear)
        })
        .count();
    json!({
        "min": w.first(),
        "median": univariate::median(&w),
        "max": w.last(),
        "downweighted": downweighted,
    })
}

fn convergence_json(converged: bool, iterations: usize, step: f64, clamped: bool, violations: usize, tie: Option<&univariate::TieSplit>) -> Value {
    json!({
        "converged": converged,
        "iterations": iterations,
        "final_step_norm": step,
        "eps_clamped": clamped,
        "descent_violations": violations,
        "tie": tie.map(|t| json!({ "index": t.index, "positive": t.positive })),
    })
}

#[derive(Args, Debug, Clone)]
pub struct FitOptions {
    #[command(flatten)]
    pub loss: LossArgs,
    /// Hold ε at this value instead of estimating it
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    /// Step-norm convergence threshold
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Output file; stdout when absent or "-"
    #[arg(short, long)]
    pub output: Option<String>,
}

impl FitOptions {
    fn config(&self, regression: bool) -> Result<(FitConfig, Option<f64>), CliError> {
        check_eps(self.eps)?;
        check_positive("tol", self.tol)?;
        if self.max_iter == 0 {
            return Err(CliError::Usage("--max-iter must be at least 1".into()));
        }
        let (lp, preset) = presets::resolve(&self.loss, regression, self.eps)?;
        let mut cfg = FitConfig::new(lp);
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg.hold_eps = self.eps.is_some();
        Ok((cfg, preset))
    }

    fn params(&self, cfg: &FitConfig, preset: Option<f64>) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("loss".into(), loss_json(&cfg.loss, preset));
        m.insert("eps_fixed".into(), json!(self.eps));
        m.insert("tol".into(), json!(cfg.tol));
        m.insert("max_iter".into(), json!(cfg.max_iter));
        m
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// One-column CSV, or "-" for stdin
    pub input: String,
    #[command(flatten)]
    pub opts: FitOptions,
    /// Add the model comparison table
    #[arg(long)]
    pub compare: bool,
    #[command(flatten)]
    pub cmp: CompareOptions,
}

#[derive(Args, Debug, Clone)]
pub struct CompareOptions {
    /// Huber k for the HuberM column
    #[arg(long, default_value_t = 1.4)]
    pub huber_k: f64,
    /// Degrees of freedom for the ESt column (fixed)
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,
}

fn univariate_fit(data: &[f64], cfg: &FitConfig) -> Result<UnivariateFit, CliError> {
    let mut cfg = *cfg;
    if cfg.hold_eps {
        // FitOptions::config only sets hold_eps together with an explicit ε
        cfg.init = Some((univariate::median(data), univariate::mad(data), cfg.loss.eps()));
    }
    Ok(univariate::fit_univariate(data, &cfg)?)
}

fn hold(cfg: FitConfig, eps: Option<f64>) -> Result<FitConfig, CliError> {
    let mut cfg = cfg;
    if let Some(e) = eps {
        cfg.loss = cfg.loss.with_eps(e)?;
    }
    Ok(cfg)
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let (cfg, preset) = a.opts.config(false)?;
    let cfg = hold(cfg, a.opts.eps)?;
    if a.compare {
        check_positive("huber-k", a.cmp.huber_k)?;
        check_positive("nu", a.cmp.nu)?;
    }
    let data = read_column(&a.input)?;
    let f = univariate_fit(&data, &cfg)?;
    let lp = cfg.loss.with_eps(f.eps)?;
    let n = data.len();
    let k = if cfg.hold_eps { 2 } else { 3 };
    let log_lik = univariate::esh_log_likelihood(&data, f.theta, f.sigma, f.eps, &cfg.loss)?;
    let (aic, bic) = aic_bic(log_lik, k, n as f64);

    let mut params = a.opts.params(&cfg, preset);
    if a.compare {
        params.insert("huber_k".into(), json!(a.cmp.huber_k));
        params.insert("nu".into(), json!(a.cmp.nu));
    }
    let mut out = json!({
        "provenance": provenance("fit", Some(&a.input), Value::Object(params)),
        "n": n,
        "estimates": { "theta": f.theta, "sigma": f.sigma, "eps": f.eps },
        "convergence": convergence_json(f.converged, f.iterations, f.final_step_norm, f.eps_clamped, f.descent_violations, f.tie.as_ref()),
        "objective": f.objective,
        "log_lik": log_lik,
        "k": k,
        "aic": aic,
        "bic": bic,
        "weights": weights_summary(&f.weights, data.iter().map(|x| x - f.theta), f.sigma, &lp),
    });
    if a.compare {
        let rows = comparison(&data, &cfg, &f, &a.cmp)?;
        out["comparison"] = rows_json(&rows);
        out["best_aic"] = json!(best(&rows).map(|r| r.model));
    }
    write_output(a.opts.output.as_deref(), &to_json(&out))?;
    if !f.converged {
        return Err(CliError::Numerical(format!("fit did not converge in {} iterations", f.iterations)));
    }
    Ok(())
}

#[derive(Debug)]
struct ModelRow {
    model: &'static str,
    theta: f64,
    sigma: f64,
    eps: Option<f64>,
    nu: Option<f64>,
    k: usize,
    log_lik: f64,
    aic: f64,
    bic: f64,
    converged: bool,
}

fn model_row(model: &'static str, (theta, sigma, eps, nu): (f64, f64, Option<f64>, Option<f64>), k: usize, log_lik: f64, n: usize, converged: bool) -> ModelRow {
    let (aic, bic) = aic_bic(log_lik, k, n as f64);
    ModelRow { model, theta, sigma, eps, nu, k, log_lik, aic, bic, converged }
}

// ESH and HuberM likelihoods use the density exp(−ρ)/(σ q Z) of their own loss.
fn comparison(data: &[f64], cfg: &FitConfig, esh_fit: &UnivariateFit, o: &CompareOptions) -> Result<Vec<ModelRow>, CliError> {
    let n = data.len();
    let mut rows = Vec::new();
    let k_esh = if cfg.hold_eps { 2 } else { 3 };
    let ll = univariate::esh_log_likelihood(data, esh_fit.theta, esh_fit.sigma, esh_fit.eps, &cfg.loss)?;
    rows.push(model_row("ESH", (esh_fit.theta, esh_fit.sigma, Some(esh_fit.eps), None), k_esh, ll, n, esh_fit.converged));
    for (name, fam, nu) in [("ESN", Family::Esn, None), ("ESL", Family::Esl, None), ("ESt", Family::Est, Some(o.nu))] {
        let m = distributions::fit_ml(data, fam, nu)?;
        rows.push(model_row(name, (m.params.theta, m.params.sigma, Some(m.params.eps), nu), 3, m.log_lik, n, m.converged));
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let normal_ll = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
    rows.push(model_row("Normal", (mean, var.sqrt(), None, None), 2, normal_ll, n, true));
    let h = HuberParams::new(o.huber_k)?;
    let hf = univariate::fit_huber_location_scale(data, &h, cfg.tol, cfg.max_iter)?;
    let hll = univariate::esh_log_likelihood(data, hf.theta, hf.sigma, 0.0, &h.as_esh())?;
    rows.push(model_row("HuberM", (hf.theta, hf.sigma, None, None), 2, hll, n, hf.converged));
    Ok(rows)
}

fn best(rows: &[ModelRow]) -> Option<&ModelRow> {
    rows.iter().filter(|r| r.aic.is_finite()).min_by(|a, b| a.aic.total_cmp(&b.aic))
}

fn rows_json(rows: &[ModelRow]) -> Value {
    let best = best(rows).map(|r| r.model);
    Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "model": r.model,
                    "theta": r.theta,
                    "sigma": r.sigma,
                    "eps": r.eps,
                    "nu": r.nu,
                    "k": r.k,
                    "log_lik": r.log_lik,
                    "aic": r.aic,
                    "bic": r.bic,
                    "converged": r.converged,
                    "best": Some(r.model) == best,
                })
            })
            .collect(),
    )
}

fn rows_markdown(rows: &[ModelRow]) -> String {
    let best = best(rows).map(|r| r.model);
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("|");
    for r in rows {
        s += &format!(" {}{} |", r.model, if Some(r.model) == best { " *" } else { "" });
    }
    s = format!("| |{}\n|---|{}\n", &s[1..], "---|".repeat(rows.len()));
    type Cell<'a> = Box<dyn Fn(&ModelRow) -> String + 'a>;
    let lines: [(&str, Cell<'_>); 9] = [
        ("theta", Box::new(|r| format!("{:.4}", r.theta))),
        ("sigma", Box::new(|r| format!("{:.4}", r.sigma))),
        ("eps", Box::new(|r| opt(r.eps))),
        ("nu", Box::new(|r| opt(r.nu))),
        ("k", Box::new(|r| r.k.to_string())),
        ("logL", Box::new(|r| format!("{:.4}", r.log_lik))),
        ("AIC", Box::new(|r| format!("{:.4}", r.aic))),
        ("BIC", Box::new(|r| format!("{:.4}", r.bic))),
        ("converged", Box::new(|r| r.converged.to_string())),
    ];
    for (name, f) in lines.iter() {
        s += &format!("| {name} |");
        for r in rows {
            s += &format!(" {} |", f(r));
        }
        s.push('\n');
    }
    s
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// One-column CSV, or "-" for stdin
    pub input: String,
    #[command(flatten)]
    pub opts: FitOptions,
    #[command(flatten)]
    pub cmp: CompareOptions,
    /// json or markdown (models as columns, lowest AIC starred)
    #[arg(long, default_value = "json")]
    pub format: String,
}

pub fn compare(a: &CompareArgs) -> Result<(), CliError> {
    let (cfg, preset) = a.opts.config(false)?;
    let cfg = hold(cfg, a.opts.eps)?;
    check_positive("huber-k", a.cmp.huber_k)?;
    check_positive("nu", a.cmp.nu)?;
    let markdown = match a.format.as_str() {
        "json" => false,
        "markdown" | "md" => true,
        f => return Err(CliError::Usage(format!("unknown format {f:?}; use json or markdown"))),
    };
    let data = read_column(&a.input)?;
    let f = univariate_fit(&data, &cfg)?;
    let rows = comparison(&data, &cfg, &f, &a.cmp)?;
    let text = if markdown {
        rows_markdown(&rows)
    } else {
        let mut params = a.opts.params(&cfg, preset);
        params.insert("huber_k".into(), json!(a.cmp.huber_k));
        params.insert("nu".into(), json!(a.cmp.nu));
        to_json(&json!({
            "provenance": provenance("compare", Some(&a.input), Value::Object(params)),
            "n": data.len(),
            "models": rows_json(&rows),
            "best_aic": best(&rows).map(|r| r.model),
        }))
    };
    write_output(a.opts.output.as_deref(), &text)
}

#[derive(Args, Debug)]
pub struct FitRegArgs {
    /// CSV with y in the first column and covariates after it, or "-" for stdin
    pub input: String,
    #[command(flatten)]
    pub opts: FitOptions,
    /// Do not prepend a column of ones
    #[arg(long)]
    pub no_intercept: bool,
}

pub fn fit_reg(a: &FitRegArgs) -> Result<(), CliError> {
    let (cfg, preset) = a.opts.config(true)?;
    let cfg = hold(cfg, a.opts.eps)?;
    let table = parse_table(&read_source(&a.input)?, &a.input)?;
    let width = table.rows[0].len();
    if width < 2 && a.no_intercept {
        return Err(CliError::Data(format!("{}: need y and at least one covariate", a.input)));
    }
    let y: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let xs: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
    let intercept = !a.no_intercept;
    let d = RegressionData::from_rows(y, &xs, intercept).map_err(|e| match e {
        esh::EshError::InvalidParams(m) => CliError::Data(format!("{}: {m}", a.input)),
        e => e.into(),
    })?;
    let f = if cfg.hold_eps {
        let b0 = regression::ols(&d)?;
        let r = d.residuals(&b0);
        let s0 = univariate::mad(&r).max(1e-8);
        regression::fit_regression_from(&d, &cfg, &b0, s0, cfg.loss.eps())?
    } else {
        regression::fit_regression(&d, &cfg)?
    };
    let mut names: Vec<String> = Vec::new();
    if intercept {
        names.push("(intercept)".into());
    }
    for j in 1..width {
        names.push(table.header.as_ref().and_then(|h| h.get(j).cloned()).unwrap_or(format!("x{j}")));
    }
    let coef: Map<String, Value> = names.iter().cloned().zip(f.b.iter().map(|&b| json!(b))).collect();
    let lp = cfg.loss.with_eps(f.eps)?;
    let k = d.p() + if cfg.hold_eps { 1 } else { 2 };
    let log_lik = regression::regression_log_likelihood(&d, &f.b, f.sigma, f.eps, &cfg.loss)?;
    let (aic, bic) = aic_bic(log_lik, k, d.n() as f64);
    let mut params = a.opts.params(&cfg, preset);
    params.insert("intercept".into(), json!(intercept));
    let out = json!({
        "provenance": provenance("fit-reg", Some(&a.input), Value::Object(params)),
        "n": d.n(),
        "p": d.p(),
        "coefficients": coef,
        "b": f.b,
        "sigma": f.sigma,
        "eps": f.eps,
        "convergence": convergence_json(f.converged, f.iterations, f.final_step_norm, f.eps_clamped, f.descent_violations, f.tie.as_ref()),
        "objective": f.objective,
        "log_lik": log_lik,
        "k": k,
        "aic": aic,
        "bic": bic,
        "weights": weights_summary(&f.weights, d.residuals(&f.b).into_iter(), f.sigma, &lp),
    });
    write_output(a.opts.output.as_deref(), &to_json(&out))?;
    if !f.converged {
        return Err(CliError::Numerical(format!("fit did not converge in {} iterations", f.iterations)));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// key = value config file (see README), or "-" for stdin
    #[arg(long)]
    pub config: String,
    /// csv or markdown
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Overrides the config seed; without either, ESH_SEED or 1 is used
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config replication count
    #[arg(long)]
    pub replications: Option<usize>,
    /// Print the effective config instead of running
    #[arg(long)]
    pub print_config: bool,
    #[arg(short, long)]
    pub output: Option<String>,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let format: TableFormat = a.format.parse()?;
    let text = read_source(&a.config)?;
    let mut cfg = SimulationConfig::parse_kv_with_seed(&text, default_seed()?)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    cfg.validate()?;
    if a.print_config {
        return write_output(a.output.as_deref(), &cfg.to_kv());
    }
    let report = montecarlo::run_simulation(&cfg)?;
    write_output(a.output.as_deref(), &montecarlo::emit_table(&report, format))
}

fn parse_n_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("--n: expected positive integers, got {t:?}"))),
        })
        .collect()
}

fn rows3<M: std::ops::Index<(usize, usize), Output = f64>>(x: &M) -> Vec<Vec<f64>> {
    (0..3).map(|i| (0..3).map(|j| x[(i, j)]).collect()).collect()
}

#[derive(Args, Debug)]
pub struct AsymvarArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Comma-separated sample sizes
    #[arg(long, default_value = "30,50,100,150")]
    pub n: String,
    /// csv, or json with A, B, the covariance and the uniqueness minors
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(short, long)]
    pub output: Option<String>,
}

pub fn asymvar(a: &AsymvarArgs) -> Result<(), CliError> {
    check_eps(Some(a.eps))?;
    check_positive("sigma", a.sigma)?;
    let n_list = parse_n_list(&a.n)?;
    let (lp, preset) = presets::resolve(&a.loss, false, Some(a.eps))?;
    let lp = lp.with_eps(a.eps)?;
    let rows = asymptotics::variance_table(&lp, a.sigma, &n_list)?;
    let text = match a.format.as_str() {
        "csv" => {
            let mut s = String::from("n,theta,sigma,eps\n");
            for r in &rows {
                s += &format!("{},{},{},{}\n", r.n, r.theta, r.sigma, r.eps);
            }
            s
        }
        "json" => {
            let rep = asymptotics::report(&lp, a.sigma)?;
            to_json(&json!({
                "provenance": provenance("asymvar", None, json!({
                    "loss": loss_json(&lp, preset),
                    "eps": a.eps,
                    "sigma": a.sigma,
                    "n": n_list,
                })),
                "a": rows3(&rep.a),
                "b": rows3(&rep.b),
                "cov": rows3(&rep.cov),
                "minors": [rep.minors.0, rep.minors.1, rep.minors.2],
                "rows": rows.iter().map(|r| json!({ "n": r.n, "theta": r.theta, "sigma": r.sigma, "eps": r.eps })).collect::<Vec<_>>(),
            }))
        }
        f => return Err(CliError::Usage(format!("unknown format {f:?}; use csv or json"))),
    };
    write_output(a.output.as_deref(), &text)
}

#[derive(Args, Debug)]
pub struct LossTableArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub from: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub to: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(short, long)]
    pub output: Option<String>,
}

pub fn loss_table(a: &LossTableArgs) -> Result<(), CliError> {
    check_eps(Some(a.eps))?;
    let (lp, _) = presets::resolve(&a.loss, false, Some(a.eps))?;
    let lp = lp.with_eps(a.eps)?;
    let rows = loss::loss_table(&lp, a.from, a.to, a.step)?;
    let mut s = String::from("u,rho,psi,w\n");
    for r in rows {
        s += &format!("{},{},{},{}\n", r.u, r.rho, r.psi, r.weight);
    }
    write_output(a.output.as_deref(), &s)
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// esn, esl, est, or mixture (0.9 ESN + 0.1 ESL at θ = 0, σ = 1, ε = --eps)
    #[arg(long, default_value = "esn")]
    pub family: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Defaults to ESH_SEED, then 1
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<String>,
}

pub fn sample(a: &SampleArgs) -> Result<(), CliError> {
    check_eps(Some(a.eps))?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let xs = match a.family.to_ascii_lowercase().as_str() {
        "mixture" => distributions::sample_mixture(&MixtureSpec::contaminated_esn(a.eps)?, a.n, seed)?,
        f => {
            let p = match f {
                "esn" => SkewFamilyParams::esn(a.theta, a.sigma, a.eps)?,
                "esl" => SkewFamilyParams::esl(a.theta, a.sigma, a.eps)?,
                "est" => SkewFamilyParams::est(a.theta, a.sigma, a.eps, a.nu)?,
                _ => return Err(CliError::Usage(format!("unknown family {f:?}"))),
            };
            distributions::sample(&p, a.n, seed)?
        }
    };
    let mut s = String::from("x\n");
    for x in xs {
        s += &format!("{x}\n");
    }
    write_output(a.output.as_deref(), &s)
}
