//! `tsdml`: simulate, estimate and run Monte Carlo grids from a TOML file.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use tsdml::dgp::{fingerprint, simulate_plr, SvarModel};
use tsdml::empirical_io::{load_csv, role_map_of, transform_and_lag, write_csv, RoleMap};
use tsdml::error::ErrorKind;
use tsdml::estimator::{estimate_dataset, estimate_lp};
use tsdml::montecarlo::{grid_csv, lp_grid, lp_grid_csv, run_grid, ExperimentGrid, Generator};
use tsdml::numerics::RngStream;
use tsdml::TimeSeriesDataset;

use config::{Overrides, RunConfig, Source};

const TIME_COLUMN: &str = "t";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(tsdml::Error),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<tsdml::Error> for CliError {
    fn from(e: tsdml::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tsdml", version, about = "Cross-fitted double machine learning for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; overrides `threads`. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Monte Carlo replications; overrides `montecarlo.replications`.
    #[arg(long, global = true, value_name = "N")]
    replications: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one sample from [svar] or [plr]; writes CSV and a JSON sidecar.
    Simulate,
    /// Cross-fitted estimate on [dataset], or on a sample drawn from the generator.
    Estimate,
    /// Local projections for horizons 0..=lp.horizons.
    Lp,
    /// Bias and coverage over the [montecarlo] grid.
    Montecarlo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsdml: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => return Err(CliError::Config("--config PATH is required".into())),
    };
    cfg.apply(&Overrides { out: cli.out, seed: cli.seed, threads: cli.threads, replications: cli.replications });
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    match cli.command {
        Command::Simulate => cmd_simulate(cfg, &out),
        Command::Estimate => cmd_estimate(cfg, &out),
        Command::Lp => cmd_lp(cfg, &out),
        Command::Montecarlo => cmd_montecarlo(cfg, &out),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `# ` lines naming the command, seed and full resolved configuration.
fn header(command: &str, cfg: &RunConfig) -> Vec<String> {
    let mut lines = vec![
        format!("tsdml {} {command}", env!("CARGO_PKG_VERSION")),
        format!("seed = {}", cfg.seed()),
        "resolved configuration:".to_owned(),
    ];
    lines.extend(cfg.to_toml().lines().map(|l| format!("  {l}")));
    lines
}

fn write_text(path: &Path, comments: &[String], body: &str) -> Result<(), CliError> {
    let mut text = String::new();
    for c in comments {
        text.push_str("# ");
        text.push_str(c);
        text.push('\n');
    }
    text.push_str(body);
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("configuration serializes")
}

fn simulate_t(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.simulate.as_ref().map(|s| s.t).ok_or_else(|| CliError::Config("need a [simulate] section with t".into()))
}

struct Drawn {
    data: TimeSeriesDataset,
    theta_true: f64,
    irf_true: Option<Vec<f64>>,
    fingerprint: String,
}

/// Replication stream 0 of the configured seed.
fn draw(cfg: &RunConfig, h_max: usize) -> Result<Drawn, CliError> {
    let t = simulate_t(cfg)?;
    let rng = RngStream::new(cfg.seed(), 0);
    let dgp = cfg.dgp()?;
    match &dgp {
        tsdml::montecarlo::DgpSpec::Svar(spec) => {
            let model = SvarModel::new(spec, cfg.seed())?;
            let s = model.simulate(t, &rng)?;
            Ok(Drawn {
                data: s.dataset,
                theta_true: s.theta_true,
                irf_true: Some(model.irf(h_max)?),
                fingerprint: s.fingerprint,
            })
        }
        tsdml::montecarlo::DgpSpec::Plr(spec) => {
            let s = simulate_plr(spec, t, &rng)?;
            Ok(Drawn { data: s.dataset, theta_true: s.theta_true, irf_true: s.irf_true, fingerprint: s.fingerprint })
        }
    }
}

fn cmd_simulate(mut cfg: RunConfig, out: &Path) -> Result<(), CliError> {
    let source = cfg.source(false)?;
    cfg.seed.get_or_insert(0);
    let name = cfg.simulate.as_ref().map(|s| s.name.clone()).unwrap_or_default();
    let drawn = draw(&cfg, 20)?;
    let csv_path = out.join(format!("{name}.csv"));
    write_csv(&csv_path, &drawn.data, TIME_COLUMN, &header("simulate", &cfg)).map_err(|e| match e.kind() {
        ErrorKind::Io => io_err(&csv_path, e),
        _ => e.into(),
    })?;
    let spec_fingerprint = match source {
        Source::Svar => fingerprint(cfg.svar.as_ref().unwrap())?,
        _ => fingerprint(cfg.plr.as_ref().unwrap())?,
    };
    let sidecar = json!({
        "data": csv_path.file_name().and_then(|n| n.to_str()),
        "roles": role_map_of(&drawn.data, TIME_COLUMN),
        "t": drawn.data.len(),
        "seed": cfg.seed(),
        "theta_true": drawn.theta_true,
        "irf_true": drawn.irf_true,
        "spec_fingerprint": spec_fingerprint,
        "sample_fingerprint": drawn.fingerprint,
        "config": config_json(&cfg),
    });
    write_json(&out.join(format!("{name}.json")), &sidecar)?;
    println!("wrote {} (T = {}, theta_true = {})", csv_path.display(), drawn.data.len(), drawn.theta_true);
    Ok(())
}

/// Roles from the config, or else from the sidecar next to the CSV.
fn dataset_roles(section: &config::DatasetSection) -> Result<RoleMap, CliError> {
    if let Some(roles) = &section.roles {
        return Ok(RoleMap::from_names(section.time_column.clone(), roles)?);
    }
    let sidecar = section.path.with_extension("json");
    let text = std::fs::read_to_string(&sidecar).map_err(|_| {
        CliError::Config(format!("dataset.roles is missing and no sidecar {} was found", sidecar.display()))
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", sidecar.display())))?;
    let mut map: RoleMap = serde_json::from_value(value["roles"].clone())
        .map_err(|e| CliError::Config(format!("{}: roles: {e}", sidecar.display())))?;
    if section.time_column.is_some() {
        map.time_column = section.time_column.clone();
    }
    Ok(map)
}

/// The data to estimate on: the configured dataset, or a generator draw.
fn load_data(cfg: &RunConfig, source: Source) -> Result<(TimeSeriesDataset, Option<f64>), CliError> {
    if source != Source::Dataset {
        let d = draw(cfg, 0)?;
        return Ok((d.data, Some(d.theta_true)));
    }
    let section = cfg.dataset.as_ref().unwrap();
    let roles = dataset_roles(section)?;
    let data = load_csv(&section.path, &roles).map_err(|e| match e.kind() {
        ErrorKind::Io => io_err(&section.path, e),
        _ => e.into(),
    })?;
    let data = match &section.transform {
        Some(spec) => transform_and_lag(&data, spec)?,
        None => data,
    };
    Ok((data, None))
}

fn cmd_estimate(mut cfg: RunConfig, out: &Path) -> Result<(), CliError> {
    let source = cfg.source(true)?;
    cfg.resolve(source);
    let est = cfg.estimator_config()?;
    let (data, theta_true) = load_data(&cfg, source)?;
    let report = estimate_dataset(&data, &est)?;
    write_json(
        &out.join("estimate.json"),
        &json!({ "seed": cfg.seed(), "config": config_json(&cfg), "theta_true": theta_true, "report": report }),
    )?;
    let mut body = String::from("theta_hat,se,ci_lo,ci_hi,n_obs,k,scheme,criterion,bandwidth,n_nonconverged_fits\n");
    body.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        report.theta_hat,
        report.se,
        report.ci95.0,
        report.ci95.1,
        report.n_obs,
        report.k,
        report.scheme,
        report.criterion,
        report.bandwidth_used,
        report.n_nonconverged_fits
    ));
    write_text(&out.join("estimate.csv"), &header("estimate", &cfg), &body)?;
    let mut folds = String::from("fold,theta\n");
    for (k, th) in report.per_fold_thetas.iter().enumerate() {
        folds.push_str(&format!("{k},{th}\n"));
    }
    write_text(&out.join("estimate_folds.csv"), &header("estimate", &cfg), &folds)?;
    println!("theta_hat = {} (se {}), 95% CI [{}, {}]", report.theta_hat, report.se, report.ci95.0, report.ci95.1);
    Ok(())
}

fn cmd_lp(mut cfg: RunConfig, out: &Path) -> Result<(), CliError> {
    let source = cfg.source(true)?;
    cfg.lp.get_or_insert_with(Default::default);
    cfg.resolve(source);
    let h_max = cfg.lp.as_ref().and_then(|l| l.horizons).unwrap();
    let est = cfg.estimator_config()?;
    let (data, _) = load_data(&cfg, source)?;
    let irf_true = match source {
        Source::Dataset => None,
        _ => Some(Generator::new(&cfg.dgp()?, cfg.seed())?.irf_true(h_max)?),
    };
    let report = estimate_lp(&data, &est.plan(data.len())?, &est, h_max)?;
    write_json(
        &out.join("lp.json"),
        &json!({ "seed": cfg.seed(), "config": config_json(&cfg), "irf_true": irf_true, "report": report }),
    )?;
    write_text(&out.join("lp_irf.csv"), &header("lp", &cfg), &report.irf_csv()?)?;
    for h in 0..=h_max {
        println!("h = {h}: theta = {} (se {})", report.theta_h[h], report.se_h[h]);
    }
    Ok(())
}

fn cmd_montecarlo(mut cfg: RunConfig, out: &Path) -> Result<(), CliError> {
    let source = cfg.source(false)?;
    if cfg.montecarlo.is_none() {
        return Err(CliError::Config("need a [montecarlo] section".into()));
    }
    cfg.resolve(source);
    let est = cfg.estimator_config()?;
    let mc = cfg.montecarlo.clone().unwrap();
    let grid = ExperimentGrid {
        dgp: cfg.dgp()?,
        t_values: mc.t_values.clone(),
        k_values: mc.k_values.clone().unwrap(),
        schemes: mc.schemes.clone().unwrap(),
        criteria: mc.criteria.clone().unwrap(),
        replications: mc.replications.unwrap(),
        base_seed: cfg.seed(),
        estimator: est.clone(),
        bias_mode: mc.bias_mode.unwrap(),
    };
    let cache = mc.cache.as_ref().map(|c| out.join(c));
    let results = run_grid(&grid, cache.as_deref())?;
    write_text(&out.join("montecarlo.csv"), &header("montecarlo", &cfg), &grid_csv(&results)?)?;
    let mut lp_results = None;
    if let Some(h_max) = mc.lp_horizons {
        let k = grid.k_values[0];
        let mut lp_est = est.clone();
        lp_est.k = k;
        lp_est.scheme = grid.schemes[0];
        lp_est.criterion = grid.criteria[0];
        let r = lp_grid(&grid.dgp, &grid.t_values, &lp_est, h_max, grid.replications, grid.base_seed)?;
        write_text(&out.join("montecarlo_lp.csv"), &header("montecarlo", &cfg), &lp_grid_csv(&r)?)?;
        lp_results = Some(r);
    }
    write_json(
        &out.join("montecarlo.json"),
        &json!({ "seed": cfg.seed(), "config": config_json(&cfg), "cells": results, "lp": lp_results }),
    )?;
    for r in &results {
        let flag = if r.low_success { "  [LOW SUCCESS]" } else { "" };
        println!(
            "T={} K={} {} {}: bias {:.2}%, coverage {:.1}%, mean se {:.4}, failed {}{flag}",
            r.t,
            r.k,
            r.scheme,
            r.criterion,
            r.pct_bias,
            100.0 * r.coverage,
            r.mean_se,
            r.n_failed
        );
    }
    Ok(())
}
