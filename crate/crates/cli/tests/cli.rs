use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use esh::asymptotics::variance_table;
use esh::montecarlo::{emit_table, parse_csv_table, run_simulation, Estimator, SimulationConfig, TableFormat};
use esh::regression::{fit_regression, generate_regression_sample};
use esh::univariate::{fit_univariate, FitConfig};
use esh::LossParams;
use serde_json::Value;

fn esh(args: &[&str]) -> Output {
    esh_with(args, None, &[])
}

fn esh_with(args: &[&str], stdin: Option<&str>, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_esh"));
    cmd.args(args).env_remove("ESH_SEED").stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().expect("binary runs");
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn column(xs: &[f64]) -> String {
    let mut s = String::from("x\n");
    for x in xs {
        s += &format!("{x}\n");
    }
    s
}

fn config_path(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).to_str().unwrap().to_string()
}

fn mixture_file(dir: &Path, eps: &str, n: &str, seed: &str) -> String {
    let path = dir.join(format!("mix_{eps}_{n}_{seed}.csv")).to_str().unwrap().to_string();
    let o = esh(&["sample", "--family", "mixture", "--eps", eps, "--n", n, "--seed", seed, "-o", &path]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

fn read_column(path: &str) -> Vec<f64> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.parse().unwrap()).collect()
}

#[test]
fn constant_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.csv", "x\n2\n2\n2\n2\n2\n");
    let o = esh(&["fit", &f]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let o = esh(&["fit", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let f = write(dir.path(), "bad.csv", "x\n1.0\n2.5\noops\n3\n");
    let o = esh(&["fit", &f]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let f = write(dir.path(), "two.csv", "1,2\n3,4\n5,6\n");
    assert_eq!(code(&esh(&["fit", &f])), 2);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&esh(&["fit"])), 1);
    assert_eq!(code(&esh(&["no-such-command"])), 1);
    assert_eq!(code(&esh(&["asymvar", "--eps", "1.5", "--c1", "-1", "--c2", "2"])), 1);
    assert_eq!(code(&esh(&["asymvar", "--eps", "-0.3", "--preset", "-0.3"])), 1);
    assert_eq!(code(&esh(&["loss-table", "--c1", "1", "--c2", "2"])), 1);
    assert_eq!(code(&esh(&["loss-table", "--step", "0"])), 1);
    assert_eq!(code(&esh(&["simulate", "--config", "-"])), 1, "empty config");
    assert_eq!(code(&esh(&["--help"])), 0);
    assert_eq!(code(&esh(&["--version"])), 0);
}

#[test]
fn fit_matches_library_and_echoes_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let f = mixture_file(dir.path(), "-0.5", "300", "11");
    let o = esh(&["fit", &f, "--c1", "-1.1", "--c2", "3.7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let p = &v["provenance"];
    assert_eq!(p["tool"], "esh");
    assert_eq!(p["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(p["parameters"]["loss"]["c1"], -1.1);
    assert_eq!(p["parameters"]["loss"]["c2"], 3.7);
    assert_eq!(p["parameters"]["tol"], 1e-8);
    let eps = v["estimates"]["eps"].as_f64().unwrap();
    let lib = fit_univariate(&read_column(&f), &FitConfig::new(LossParams::new(-1.1, 3.7, 0.0).unwrap())).unwrap();
    assert!(eps < 0.0, "eps-hat {eps}");
    assert!((eps - lib.eps).abs() < 0.1, "{eps} vs {}", lib.eps);
    assert_eq!(v["n"], 300);
    let w = &v["weights"];
    assert!(w["min"].as_f64().unwrap() <= w["max"].as_f64().unwrap());
}

#[test]
fn fit_reads_stdin_and_uses_presets() {
    let dir = tempfile::tempdir().unwrap();
    let xs = read_column(&mixture_file(dir.path(), "-0.5", "80", "2"));
    let o = esh_with(&["fit", "-", "--preset", "-0.5"], Some(&column(&xs)), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["provenance"]["input"], "-");
    assert_eq!(v["provenance"]["parameters"]["loss"]["c1"], -0.7);
    assert_eq!(v["provenance"]["parameters"]["loss"]["c2"], 5.0);
    assert_eq!(v["provenance"]["parameters"]["loss"]["preset"], -0.5);

    let o = esh_with(&["fit", "-", "--eps", "-0.8"], Some(&column(&xs)), &[]);
    let v = json(&o);
    assert_eq!(v["provenance"]["parameters"]["loss"]["c1"], -0.1);
    assert_eq!(v["estimates"]["eps"], -0.8);
    assert_eq!(v["k"], 2);
}

fn check_aic(rows: &[Value], n: f64) {
    for r in rows {
        let (k, ll) = (r["k"].as_f64().unwrap(), r["log_lik"].as_f64().unwrap());
        let (aic, bic) = (r["aic"].as_f64().unwrap(), r["bic"].as_f64().unwrap());
        assert!((aic - (2.0 * k - 2.0 * ll)).abs() < 1e-9 * (1.0 + aic.abs()), "{r}");
        assert!((bic - (k * n.ln() - 2.0 * ll)).abs() < 1e-9 * (1.0 + bic.abs()), "{r}");
    }
    let best: Vec<&Value> = rows.iter().filter(|r| r["best"] == true).collect();
    assert_eq!(best.len(), 1);
    let min = rows.iter().map(|r| r["aic"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(best[0]["aic"].as_f64().unwrap(), min);
}

#[test]
fn compare_columns_satisfy_aic_identity() {
    let dir = tempfile::tempdir().unwrap();
    let f = mixture_file(dir.path(), "-0.5", "150", "5");
    let o = esh(&["compare", &f]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let rows = v["models"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["ESH", "ESN", "ESL", "ESt", "Normal", "HuberM"]);
    assert_eq!(rows[0]["k"], 3);
    assert_eq!(rows[4]["k"], 2);
    assert_eq!(rows[5]["k"], 2);
    assert_eq!(rows[3]["nu"], 5.0);
    check_aic(rows, 150.0);
    assert_eq!(v["best_aic"], rows.iter().find(|r| r["best"] == true).unwrap()["model"]);

    let o = esh(&["fit", &f, "--compare"]);
    check_aic(json(&o)["comparison"].as_array().unwrap(), 150.0);

    let md = stdout(&esh(&["compare", &f, "--format", "markdown"]));
    assert!(md.starts_with("| | ESH"), "{md}");
    assert_eq!(md.matches(" * |").count(), 1, "{md}");
}

// The fitted ESH triple does not maximise its own likelihood (ε-equation and
// the missing normaliser), so ML families win; see README.
#[test]
#[ignore]
fn strict_esh_wins_aic_on_skewed_contaminated_sample() {
    let dir = tempfile::tempdir().unwrap();
    let f = mixture_file(dir.path(), "-0.8", "200", "3");
    let v = json(&esh(&["compare", &f, "--preset", "-0.8"]));
    assert_eq!(v["best_aic"], "ESH", "{}", v["models"]);
}

#[test]
fn fit_reg_matches_library() {
    let d = generate_regression_sample(100, -0.5, 3).unwrap();
    let mut s = String::from("y,x1,x2,x3,x4,x5\n");
    for i in 0..d.n() {
        s += &format!("{}", d.y()[i]);
        for j in 1..d.p() {
            s += &format!(",{}", d.x()[(i, j)]);
        }
        s.push('\n');
    }
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "reg.csv", &s);
    let o = esh(&["fit-reg", &f, "--preset", "-0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let lib = fit_regression(&d, &FitConfig::new(LossParams::new(-0.3, 5.3, 0.0).unwrap())).unwrap();
    assert_eq!(v["provenance"]["parameters"]["loss"]["c1"], -0.3);
    let b: Vec<f64> = v["b"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(b.len(), 6);
    assert!(v["coefficients"]["x3"].is_number());
    assert!(v["coefficients"]["(intercept)"].is_number());
    for (a, l) in b.iter().zip(&lib.b) {
        assert!((a - l).abs() < 1e-6, "{b:?} vs {:?}", lib.b);
    }

    let dup = write(dir.path(), "dup.csv", "y,a,b\n1,1,1\n2,2,2\n3,3,3\n5,4,4\n4,5,5\n");
    assert_eq!(code(&esh(&["fit-reg", &dup])), 2);
}

#[test]
fn asymvar_emits_table1_rows() {
    let o = esh(&["asymvar", "--eps", "-0.2", "--c1", "-1.1", "--c2", "3.7", "--n", "30,50,100,150"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,theta,sigma,eps");
    assert_eq!(lines.len(), 5);
    let lib = variance_table(&LossParams::new(-1.1, 3.7, -0.2).unwrap(), 1.0, &[30, 50, 100, 150]).unwrap();
    for (line, r) in lines[1..].iter().zip(&lib) {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(v, vec![r.n as f64, r.theta, r.sigma, r.eps]);
    }
    // --eps alone picks the matching preset row
    assert_eq!(stdout(&esh(&["asymvar", "--eps", "-0.2"])), text);

    let v = json(&esh(&["asymvar", "--eps", "-0.2", "--format", "json"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    assert!(v["minors"][2].as_f64().unwrap().abs() > 0.0);
}

#[test]
fn loss_table_rows_satisfy_weight_identity() {
    let o = esh(&["loss-table", "--c1", "-1", "--c2", "2", "--eps", "0.2", "--from", "-5", "--to", "5", "--step", "0.1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|t| t.parse().unwrap()).collect()).collect();
    assert_eq!(text.lines().next(), Some("u,rho,psi,w"));
    assert_eq!(rows.len(), 101);
    for r in &rows {
        assert!((r[3] * r[0] - r[2]).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let f = mixture_file(dir.path(), "-0.2", "120", "9");
    for args in [
        vec!["fit", f.as_str(), "--compare"],
        vec!["fit-reg", f.as_str(), "--eps", "-0.2"],
        vec!["asymvar", "--eps", "-0.8", "--format", "json"],
        vec!["sample", "--family", "est", "--n", "50"],
    ] {
        let (a, b) = (esh(&args), esh(&args));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(code(&a), code(&b));
    }
    let cfg = "setting = univariate\neps0 = -0.5\nc1 = -0.7\nc2 = 5\nn_list = 30\nreplications = 20\n";
    let a = esh_with(&["simulate", "--config", "-"], Some(cfg), &[("ESH_SEED", "4")]);
    let b = esh_with(&["simulate", "--config", "-"], Some(cfg), &[("ESH_SEED", "4")]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_precedence() {
    let by_flag = esh(&["sample", "--n", "5", "--seed", "7"]);
    let by_env = esh_with(&["sample", "--n", "5"], None, &[("ESH_SEED", "7")]);
    assert_eq!(by_flag.stdout, by_env.stdout);
    assert_ne!(by_flag.stdout, esh(&["sample", "--n", "5"]).stdout);
    assert_eq!(code(&esh_with(&["sample"], None, &[("ESH_SEED", "x")])), 1);

    let seed_of = |o: &Output| SimulationConfig::parse_kv(&stdout(o)).unwrap().seed;
    let base = "setting = univariate\neps0 = -0.5\nc1 = -0.7\nc2 = 5\n";
    let with = format!("{base}seed = 12\n");
    let env = [("ESH_SEED", "99")];
    assert_eq!(seed_of(&esh_with(&["simulate", "--config", "-", "--print-config"], Some(base), &env)), 99);
    assert_eq!(seed_of(&esh_with(&["simulate", "--config", "-", "--print-config"], Some(&with), &env)), 12);
    assert_eq!(seed_of(&esh_with(&["simulate", "--config", "-", "--print-config", "--seed", "5"], Some(&with), &env)), 5);
    assert_eq!(seed_of(&esh_with(&["simulate", "--config", "-", "--print-config"], Some(base), &[])), 1);
}

#[test]
fn simulate_checked_in_config_reproduces_ordering() {
    let path = config_path("criterion2.conf");
    let o = esh(&["simulate", "--config", &path]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = parse_csv_table(&stdout(&o)).unwrap();
    let mse = |e, p| report.cell(e, p, 100).and_then(|c| c.mse).unwrap();
    assert!(mse(Estimator::Esh, "theta") < 0.5 * mse(Estimator::HuberM, "theta"));
    assert!(mse(Estimator::Esh, "sigma") < mse(Estimator::Esn, "sigma"));

    let cfg = SimulationConfig::parse_kv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stdout(&o), emit_table(&run_simulation(&cfg).unwrap(), TableFormat::Csv));

    let md = stdout(&esh(&["simulate", "--config", &path, "--format", "markdown", "--replications", "10"]));
    assert!(md.starts_with('|'), "{md}");
}

#[test]
fn checked_in_configs_parse() {
    for name in ["criterion2.conf", "criterion4.conf", "table3.conf"] {
        let text = std::fs::read_to_string(config_path(name)).unwrap();
        assert!(SimulationConfig::parse_kv(&text).is_ok(), "{name}");
    }
}
