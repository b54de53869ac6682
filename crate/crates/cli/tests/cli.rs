use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tsdml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsdml")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn body_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

const SMALL_SVAR: &str = "
[svar]
n = 7
band = 2
[simulate]
t = 200
";

#[test]
fn simulate_is_deterministic_and_sidecar_matches_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "svar.toml", SMALL_SVAR);
    let a = dir.path().join("a");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = tsdml(&["simulate", "--config", &cfg, "--seed", "1", "--out", a.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(["data.csv", "data.json"].map(|f| std::fs::read(a.join(f)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    let csv = std::fs::read_to_string(a.join("data.csv")).unwrap();
    assert!(csv.starts_with("# tsdml"));
    assert!(csv.contains("# seed = 1"));
    assert!(csv.contains("[svar]"));

    let side = read_json(&a.join("data.json"));
    let spec = tsdml::dgp::SvarSpec { n: 7, band: 2, ..Default::default() };
    let model = tsdml::dgp::SvarModel::new(&spec, 1).unwrap();
    assert_eq!(side["theta_true"].as_f64().unwrap(), model.theta_true);
    assert_eq!(side["t"].as_u64().unwrap(), 200);
    assert_eq!(side["spec_fingerprint"].as_str().unwrap(), tsdml::dgp::fingerprint(&spec).unwrap());
    assert_eq!(side["roles"]["roles"]["y6"], "policy");
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[svar]\nn = 7\nshock_scale = 2.0\n[simulate]\nt = 100\n");
    let o = tsdml(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shock_scale"));

    let cfg = write_config(dir.path(), "bad2.toml", "sed = 3\n");
    let o = tsdml(&["estimate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "io.toml",
        "[dataset]\npath = \"/nonexistent/x.csv\"\nroles = { y = \"outcome\", d = \"policy\" }\n",
    );
    let o = tsdml(&["estimate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn zero_noise_plr_pipeline_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let text = format!(
        "seed = 3
out = \"{}\"
[plr]
p = 5
rho = 0.5
cor = 0.3
outcome_noise_sd = 0.0
[simulate]
t = 200
[estimator]
k = 4
grid_values = [0.0, 1e-9, 2e-9]
tol = 1e-12
max_iter = 100000
[dataset]
path = \"{}\"
",
        run.display(),
        run.join("data.csv").display()
    );
    let cfg = write_config(dir.path(), "plr.toml", &text);
    assert!(tsdml(&["simulate", "--config", &cfg]).status.success());
    let o = tsdml(&["estimate", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = read_json(&run.join("data.json"))["theta_true"].as_f64().unwrap();
    let report = read_json(&run.join("estimate.json"));
    let theta = report["report"]["theta_hat"].as_f64().unwrap();
    assert!((theta - truth).abs() < 1e-6, "{theta} vs {truth}");
    assert_eq!(report["config"]["seed"], 3);
    assert!(std::fs::read_to_string(run.join("estimate.csv")).unwrap().contains("# seed = 3"));
}

#[test]
fn lp_at_horizon_zero_matches_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lp.toml",
        "seed = 5\n[plr]\np = 8\n[simulate]\nt = 160\n[estimator]\nk = 4\n[lp]\nhorizons = 0\n",
    );
    let out = dir.path().to_str().unwrap();
    assert!(tsdml(&["estimate", "--config", &cfg, "--out", out]).status.success());
    let o = tsdml(&["lp", "--config", &cfg, "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = read_json(&dir.path().join("estimate.json"))["report"].clone();
    let lp = read_json(&dir.path().join("lp.json"))["report"].clone();
    let a = est["theta_hat"].as_f64().unwrap();
    let b = lp["theta_h"][0].as_f64().unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    let (sa, sb) = (est["se"].as_f64().unwrap(), lp["se_h"][0].as_f64().unwrap());
    assert!((sa - sb).abs() < 1e-10, "{sa} vs {sb}");
}

#[test]
fn montecarlo_output_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mc.toml",
        "seed = 11
[plr]
p = 6
[estimator]
k = 4
[montecarlo]
t_values = [80, 120]
k_values = [4, 5]
schemes = [\"rcf\", \"nlo\"]
criteria = [\"rmse\", \"goldilocks\"]
replications = 50
lp_horizons = 2
",
    );
    let mut bodies = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = tsdml(&[
            "montecarlo",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--replications",
            "12",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let json = read_json(&out.join("montecarlo.json"));
        assert_eq!(json["config"]["montecarlo"]["replications"], 12);
        bodies.push((
            body_lines(&out.join("montecarlo.csv")),
            body_lines(&out.join("montecarlo_lp.csv")),
            json["cells"].clone(),
        ));
    }
    assert_eq!(bodies[0].0.len(), 1 + 2 * 2 * 2 * 2);
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn montecarlo_without_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "nomc.toml", "[plr]\np = 4\n");
    let o = tsdml(&["montecarlo", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let o = tsdml(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--out", "--seed", "--threads", "--replications"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
