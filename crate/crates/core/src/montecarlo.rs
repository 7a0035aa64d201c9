//! Replicated simulation comparing ESH with likelihood fits and the
//! symmetric Huber M-estimator.
//!
//! Each (n, replication) pair draws its sample from its own ChaCha stream,
//! so the report does not depend on how rayon schedules the work.
//! Replications where an estimator fails are counted and left out of that
//! estimator's moments.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{fit_ml, sample_mixture, Family, MixtureSpec};
use crate::error::{EshError, Result};
use crate::loss::{HuberParams, LossParams};
use crate::regression::{fit_ml_regression, fit_regression, generate_regression_sample, TRUE_COEFFICIENTS};
use crate::univariate::{fit_huber_location_scale, fit_univariate, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "ESH")]
    Esh,
    #[serde(rename = "ESN")]
    Esn,
    #[serde(rename = "ESL")]
    Esl,
    #[serde(rename = "ESt")]
    Est,
    #[serde(rename = "HuberM")]
    HuberM,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [Estimator::Esh, Estimator::Esn, Estimator::Esl, Estimator::Est, Estimator::HuberM];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Esh => "ESH",
            Estimator::Esn => "ESN",
            Estimator::Esl => "ESL",
            Estimator::Est => "ESt",
            Estimator::HuberM => "HuberM",
        }
    }
}

impl FromStr for Estimator {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EshError::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Univariate,
    Regression,
}

impl FromStr for Setting {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "univariate" => Ok(Setting::Univariate),
            "regression" => Ok(Setting::Regression),
            _ => Err(EshError::Config(format!("unknown setting {s:?}"))),
        }
    }
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Univariate => "univariate",
            Setting::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub eps0: f64,
    pub loss: LossParams,
    pub huber_k: f64,
    pub nu: f64,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
}

impl SimulationConfig {
    pub fn new(setting: Setting, eps0: f64, loss: LossParams) -> Self {
        Self {
            setting,
            eps0,
            loss,
            huber_k: 1.4,
            nu: 5.0,
            n_list: vec![30, 50, 100, 150],
            replications: 1000,
            seed: 1,
            estimators: Estimator::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > -1.0 && self.eps0 < 1.0) {
            return Err(EshError::Config(format!("eps0 must lie in (-1, 1), got {}", self.eps0)));
        }
        if !(self.huber_k > 0.0 && self.huber_k.is_finite()) {
            return Err(EshError::Config(format!("huber_k must be positive, got {}", self.huber_k)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(EshError::Config(format!("nu must be positive, got {}", self.nu)));
        }
        if self.replications == 0 {
            return Err(EshError::Config("replications must be at least 1".into()));
        }
        if self.n_list.is_empty() {
            return Err(EshError::Config("n_list must not be empty".into()));
        }
        let min_n = match self.setting {
            Setting::Univariate => 3,
            Setting::Regression => 10,
        };
        if let Some(n) = self.n_list.iter().find(|&&n| n < min_n) {
            return Err(EshError::Config(format!("sample size {n} below the minimum {min_n}")));
        }
        if self.estimators.is_empty() {
            return Err(EshError::Config("no estimators requested".into()));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(EshError::Config("estimators listed more than once".into()));
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment. `c1`, `c2`,
    /// `setting` and `eps0` are required, everything else has a default.
    pub fn parse_kv(text: &str) -> Result<Self> {
        Self::parse_kv_with_seed(text, 1)
    }

    /// As [`Self::parse_kv`], with `default_seed` used when the text has no seed key.
    pub fn parse_kv_with_seed(text: &str, default_seed: u64) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EshError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(EshError::Config(format!("line {}: duplicate key {}", lineno + 1, k.trim())));
            }
        }
        let take = |kv: &mut std::collections::BTreeMap<String, String>, k: &str| kv.remove(k);
        let num = |k: &str, v: String| -> Result<f64> {
            v.parse::<f64>().map_err(|_| EshError::Config(format!("{k}: not a number: {v:?}")))
        };
        let int = |k: &str, v: String| -> Result<u64> {
            v.parse::<u64>().map_err(|_| EshError::Config(format!("{k}: not a nonnegative integer: {v:?}")))
        };
        let need = |kv: &mut std::collections::BTreeMap<String, String>, k: &str| {
            take(kv, k).ok_or_else(|| EshError::Config(format!("missing key {k}")))
        };
        let setting: Setting = need(&mut kv, "setting")?.parse()?;
        let eps0 = num("eps0", need(&mut kv, "eps0")?)?;
        let c1 = num("c1", need(&mut kv, "c1")?)?;
        let c2 = num("c2", need(&mut kv, "c2")?)?;
        let loss = LossParams::new(c1, c2, 0.0).map_err(|e| EshError::Config(e.to_string()))?;
        let mut cfg = Self::new(setting, eps0, loss);
        cfg.seed = default_seed;
        if let Some(v) = take(&mut kv, "huber_k") {
            cfg.huber_k = num("huber_k", v)?;
        }
        if let Some(v) = take(&mut kv, "nu") {
            cfg.nu = num("nu", v)?;
        }
        if let Some(v) = take(&mut kv, "replications") {
            cfg.replications = int("replications", v)? as usize;
        }
        if let Some(v) = take(&mut kv, "seed") {
            cfg.seed = int("seed", v)?;
        }
        if let Some(v) = take(&mut kv, "n_list") {
            cfg.n_list = v.split(',').map(|s| int("n_list", s.trim().to_string()).map(|n| n as usize)).collect::<Result<_>>()?;
        }
        if let Some(v) = take(&mut kv, "estimators") {
            cfg.estimators = v.split(',').map(str::parse).collect::<Result<_>>()?;
        }
        if let Some(k) = kv.keys().next() {
            return Err(EshError::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let join = |it: Vec<String>| it.join(",");
        format!(
            "setting = {}\neps0 = {}\nc1 = {}\nc2 = {}\nhuber_k = {}\nnu = {}\nn_list = {}\nreplications = {}\nseed = {}\nestimators = {}\n",
            self.setting.name(),
            self.eps0,
            self.loss.c1(),
            self.loss.c2(),
            self.huber_k,
            self.nu,
            join(self.n_list.iter().map(|n| n.to_string()).collect()),
            self.replications,
            self.seed,
            join(self.estimators.iter().map(|e| e.name().to_string()).collect()),
        )
    }

    /// Parameter names and true values for one estimator.
    pub fn truth(&self, est: Estimator) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = match self.setting {
            Setting::Univariate => vec![("theta".into(), 0.0)],
            Setting::Regression => TRUE_COEFFICIENTS.iter().enumerate().map(|(j, &b)| (format!("b{j}"), b)).collect(),
        };
        out.push(("sigma".into(), 1.0));
        if est != Estimator::HuberM {
            out.push(("eps".into(), self.eps0));
        }
        out
    }
}

/// Summary of one (estimator, parameter, n) cell. Moments use the
/// converged replications only; `var` has divisor `converged`, so
/// `mse = var + bias²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimator: Estimator,
    pub parameter: String,
    pub n: usize,
    pub estimate: Option<f64>,
    #[serde(rename = "Var")]
    pub var: Option<f64>,
    #[serde(rename = "MSE")]
    pub mse: Option<f64>,
    /// 100·MSE_ESH/MSE_this; absent when ESH was not run or has no data.
    #[serde(rename = "RE")]
    pub re: Option<f64>,
    pub converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub cells: Vec<Cell>,
}

impl SimulationReport {
    pub fn cell(&self, est: Estimator, parameter: &str, n: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.estimator == est && c.parameter == parameter && c.n == n)
    }
}

// Stream id for replication `rep` at the `ni`-th sample size.
fn replication_seed(seed: u64, ni: usize, rep: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((ni as u64) << 40) | rep as u64);
    rng.next_u64()
}

fn run_one(cfg: &SimulationConfig, est: Estimator, data: &Sample) -> Option<Vec<f64>> {
    let fit_cfg = FitConfig::new(cfg.loss);
    let huber = HuberParams::new(cfg.huber_k).ok()?;
    let family = |e: Estimator| match e {
        Estimator::Esn => Some((Family::Esn, None)),
        Estimator::Esl => Some((Family::Esl, None)),
        Estimator::Est => Some((Family::Est, Some(cfg.nu))),
        _ => None,
    };
    let v = match (data, est) {
        (Sample::Uni(x), Estimator::Esh) => {
            let f = fit_univariate(x, &fit_cfg).ok().filter(|f| f.converged)?;
            vec![f.theta, f.sigma, f.eps]
        }
        (Sample::Uni(x), Estimator::HuberM) => {
            let f = fit_huber_location_scale(x, &huber, fit_cfg.tol, fit_cfg.max_iter).ok().filter(|f| f.converged)?;
            vec![f.theta, f.sigma]
        }
        (Sample::Uni(x), e) => {
            let (fam, nu) = family(e)?;
            let f = fit_ml(x, fam, nu).ok().filter(|f| f.converged)?;
            vec![f.params.theta, f.params.sigma, f.params.eps]
        }
        (Sample::Reg(d), Estimator::Esh) => {
            let f = fit_regression(d, &fit_cfg).ok().filter(|f| f.converged)?;
            f.b.iter().copied().chain([f.sigma, f.eps]).collect()
        }
        (Sample::Reg(d), Estimator::HuberM) => {
            let c = FitConfig { loss: huber.as_esh(), hold_eps: true, ..fit_cfg };
            let f = fit_regression(d, &c).ok().filter(|f| f.converged)?;
            f.b.iter().copied().chain([f.sigma]).collect()
        }
        (Sample::Reg(d), e) => {
            let (fam, nu) = family(e)?;
            let f = fit_ml_regression(d, fam, nu).ok().filter(|f| f.converged)?;
            f.b.iter().copied().chain([f.sigma, f.eps]).collect()
        }
    };
    v.iter().all(|x| x.is_finite()).then_some(v)
}

enum Sample {
    Uni(Vec<f64>),
    Reg(crate::regression::RegressionData),
}

fn draw(cfg: &SimulationConfig, n: usize, seed: u64) -> Result<Sample> {
    Ok(match cfg.setting {
        Setting::Univariate => Sample::Uni(sample_mixture(&MixtureSpec::contaminated_esn(cfg.eps0)?, n, seed)?),
        Setting::Regression => Sample::Reg(generate_regression_sample(n, cfg.eps0, seed)?),
    })
}

/// Raw per-replication estimates: `out[ni][rep][k]` is estimator `k`'s
/// parameter vector (None on failure) at `cfg.n_list[ni]`.
pub type RawEstimates = Vec<Vec<Vec<Option<Vec<f64>>>>>;

pub fn replicate(cfg: &SimulationConfig) -> Result<RawEstimates> {
    cfg.validate()?;
    cfg.n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let data = draw(cfg, n, replication_seed(cfg.seed, ni, rep))?;
                    Ok(cfg.estimators.iter().map(|&e| run_one(cfg, e, &data)).collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationReport> {
    let raw = replicate(cfg)?;
    let mut cells = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let start = cells.len();
        for (k, &est) in cfg.estimators.iter().enumerate() {
            let ok: Vec<&Vec<f64>> = raw[ni].iter().filter_map(|r| r[k].as_ref()).collect();
            let failed = cfg.replications - ok.len();
            for (j, (name, truth)) in cfg.truth(est).into_iter().enumerate() {
                let (estimate, var, mse) = if ok.is_empty() {
                    (None, None, None)
                } else {
                    let m = ok.len() as f64;
                    let mean = ok.iter().map(|v| v[j]).sum::<f64>() / m;
                    let var = ok.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / m;
                    let mse = ok.iter().map(|v| (v[j] - truth).powi(2)).sum::<f64>() / m;
                    (Some(mean), Some(var), Some(mse))
                };
                cells.push(Cell { estimator: est, parameter: name, n, estimate, var, mse, re: None, converged: ok.len(), failed });
            }
        }
        let block = &mut cells[start..];
        let esh: Vec<(String, f64)> = block
            .iter()
            .filter(|c| c.estimator == Estimator::Esh)
            .filter_map(|c| c.mse.map(|m| (c.parameter.clone(), m)))
            .collect();
        for c in block.iter_mut() {
            let base = esh.iter().find(|(p, _)| *p == c.parameter).map(|(_, m)| *m);
            c.re = match (base, c.mse) {
                (Some(_), Some(_)) if c.estimator == Estimator::Esh => Some(100.0),
                (Some(b), Some(m)) if m > 0.0 => Some(100.0 * b / m),
                _ => None,
            };
        }
    }
    Ok(SimulationReport { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(EshError::Config(format!("unknown table format {s:?}"))),
        }
    }
}

pub fn emit_table(report: &SimulationReport, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if report.cells.is_empty() {
                w.write_record(["estimator", "parameter", "n", "estimate", "Var", "MSE", "RE", "converged", "failed"])
                    .expect("write to memory");
            }
            for c in &report.cells {
                w.serialize(c).expect("write to memory");
            }
            String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
        }
        TableFormat::Markdown => {
            let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
            let mut out = String::from(
                "| estimator | parameter | n | estimate | Var | MSE | RE | converged | failed |\n|---|---|---:|---:|---:|---:|---:|---:|---:|\n",
            );
            for c in &report.cells {
                let re = c.re.map_or_else(|| "-".to_string(), |x| format!("{x:.0}"));
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    c.estimator.name(),
                    c.parameter,
                    c.n,
                    f(c.estimate),
                    f(c.var),
                    f(c.mse),
                    re,
                    c.converged,
                    c.failed
                );
            }
            out
        }
    }
}

pub fn parse_csv_table(text: &str) -> Result<SimulationReport> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let cells = r
        .deserialize()
        .collect::<std::result::Result<Vec<Cell>, _>>()
        .map_err(|e| EshError::Config(format!("bad simulation table: {e}")))?;
    Ok(SimulationReport { cells })
}
