mod commands;
mod error;
mod input;
mod presets;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "esh", version, about = "Epsilon-skew Huber M-estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit (θ, σ, ε) to a one-column CSV
    Fit(commands::FitArgs),
    /// Fit a linear regression with ESH errors; first CSV column is y
    FitReg(commands::FitRegArgs),
    /// Compare ESH, ESN, ESL, ESt, Normal and HuberM fits by logL, AIC and BIC
    Compare(commands::CompareArgs),
    /// Run a Monte Carlo study from a key = value config file
    Simulate(commands::SimulateArgs),
    /// Asymptotic variances diag(cov)/n for a list of sample sizes
    Asymvar(commands::AsymvarArgs),
    /// Tabulate ρ, ψ and w on a grid
    LossTable(commands::LossTableArgs),
    /// Draw a seeded sample as a one-column CSV
    Sample(commands::SampleArgs),
}

/// Tuning constants; unset values come from the defaults table.
#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    /// Left knot (negative)
    #[arg(long, allow_negative_numbers = true)]
    pub c1: Option<f64>,
    /// Right knot (positive)
    #[arg(long, allow_negative_numbers = true)]
    pub c2: Option<f64>,
    /// Row of the defaults table to take c1, c2 from: -0.2, -0.5 or -0.8
    #[arg(long, allow_negative_numbers = true)]
    pub preset: Option<f64>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::FitReg(a) => commands::fit_reg(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Asymvar(a) => commands::asymvar(&a),
        Command::LossTable(a) => commands::loss_table(&a),
        Command::Sample(a) => commands::sample(&a),
    };
    if let Err(e) = result {
        eprintln!("esh: {e}");
        std::process::exit(e.exit_code());
    }
}

pub fn write_output(path: Option<&str>, text: &str) -> Result<(), CliError> {
    match path {
        None | Some("-") => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Data(format!("{p}: {e}"))),
    }
}
