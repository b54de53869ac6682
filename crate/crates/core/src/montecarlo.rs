//! Reproducible Monte Carlo replications of the estimator.
//!
//! Replication `r` of a cell draws its data from `RngStream(base_seed, r)`.
//! Replications run in parallel but are merged by index, so a cell's result
//! does not depend on the number of threads. Failed replications are
//! counted and excluded, never retried.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{fingerprint, simulate_plr, PlrSpec, SvarModel, SvarSpec};
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, estimate_lp, EstimatorConfig, Z_95};
use crate::folds::Scheme;
use crate::numerics::RngStream;
use crate::tuning::Criterion;
use crate::TimeSeriesDataset;

/// A cell without at least this share of successful replications is flagged.
pub const MIN_SUCCESS_SHARE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DgpSpec {
    Svar(SvarSpec),
    Plr(PlrSpec),
}

impl DgpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DgpSpec::Svar(_) => "svar",
            DgpSpec::Plr(_) => "plr",
        }
    }
}

/// A data generator bound to a base seed: SVAR matrices are drawn once.
pub enum Generator {
    Svar(Box<SvarModel>),
    Plr(PlrSpec),
}

impl Generator {
    pub fn new(dgp: &DgpSpec, base_seed: u64) -> Result<Self> {
        Ok(match dgp {
            DgpSpec::Svar(s) => Generator::Svar(Box::new(SvarModel::new(s, base_seed)?)),
            DgpSpec::Plr(p) => {
                p.validate()?;
                Generator::Plr(p.clone())
            }
        })
    }

    pub fn theta_true(&self) -> f64 {
        match self {
            Generator::Svar(m) => m.theta_true,
            Generator::Plr(p) => p.theta0,
        }
    }

    /// True responses at horizons `0..=h_max`. The PLR has no dynamic
    /// effect of the policy beyond impact.
    pub fn irf_true(&self, h_max: usize) -> Result<Vec<f64>> {
        match self {
            Generator::Svar(m) => m.irf(h_max),
            Generator::Plr(p) => Ok((0..=h_max).map(|h| if h == 0 { p.theta0 } else { 0.0 }).collect()),
        }
    }

    pub fn sample(&self, t_len: usize, rng: &RngStream) -> Result<TimeSeriesDataset> {
        Ok(match self {
            Generator::Svar(m) => m.simulate(t_len, rng)?.dataset,
            Generator::Plr(p) => simulate_plr(p, t_len, rng)?.dataset,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// `100·|mean θ̂ − θ₀| / |θ₀|`.
    #[default]
    BiasOfMean,
    /// `100·mean(|θ̂ − θ₀|) / |θ₀|`.
    MeanAbsolutePercentage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub dgp: DgpSpec,
    pub t: usize,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub theta_hat: f64,
    pub se: f64,
    pub n_nonconverged_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: String,
    pub t: usize,
    pub k: usize,
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub replications: usize,
    pub base_seed: u64,
    pub theta_true: f64,
    pub mean_theta: f64,
    pub bias_mode: BiasMode,
    pub pct_bias: f64,
    pub coverage: f64,
    pub mc_se_coverage: f64,
    pub mean_se: f64,
    pub n_converged: usize,
    pub n_failed: usize,
    pub n_nonconverged_fits: usize,
    pub low_success: bool,
    pub first_error: Option<String>,
    pub fingerprint: String,
}

/// Per-replication results, in replication order.
pub fn replicate(
    generator: &Generator,
    cell: &CellSpec,
    replications: usize,
    base_seed: u64,
) -> Vec<std::result::Result<ReplicationOutcome, String>> {
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<ReplicationOutcome> {
                let data = generator.sample(cell.t, &RngStream::new(base_seed, r))?;
                let plan = cell.estimator.plan(data.len())?;
                let rep = estimate(&data, &plan, &cell.estimator)?;
                Ok(ReplicationOutcome {
                    theta_hat: rep.theta_hat,
                    se: rep.se,
                    n_nonconverged_fits: rep.n_nonconverged_fits,
                })
            };
            run().map_err(|e| e.to_string())
        })
        .collect()
}

fn summarize(
    cell: &CellSpec,
    theta_true: f64,
    outcomes: &[std::result::Result<ReplicationOutcome, String>],
    base_seed: u64,
    bias_mode: BiasMode,
) -> Result<CellResult> {
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
    if ok.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} replications failed; first error: {}",
            outcomes.len(),
            first_error.unwrap_or_default()
        )));
    }
    let n = ok.len() as f64;
    let mean_theta = ok.iter().map(|o| o.theta_hat).sum::<f64>() / n;
    let pct_bias = match bias_mode {
        BiasMode::BiasOfMean => 100.0 * (mean_theta - theta_true).abs() / theta_true.abs(),
        BiasMode::MeanAbsolutePercentage => {
            100.0 * ok.iter().map(|o| (o.theta_hat - theta_true).abs()).sum::<f64>() / n / theta_true.abs()
        }
    };
    let covered = ok.iter().filter(|o| (o.theta_hat - theta_true).abs() <= Z_95 * o.se).count();
    let coverage = covered as f64 / n;
    Ok(CellResult {
        dgp: cell.dgp.name().into(),
        t: cell.t,
        k: cell.estimator.k,
        scheme: cell.estimator.scheme,
        criterion: cell.estimator.criterion,
        replications: outcomes.len(),
        base_seed,
        theta_true,
        mean_theta,
        bias_mode,
        pct_bias,
        coverage,
        mc_se_coverage: (coverage * (1.0 - coverage) / n).sqrt(),
        mean_se: ok.iter().map(|o| o.se).sum::<f64>() / n,
        n_converged: ok.len(),
        n_failed: outcomes.len() - ok.len(),
        n_nonconverged_fits: ok.iter().map(|o| o.n_nonconverged_fits).sum(),
        low_success: (ok.len() as f64) < MIN_SUCCESS_SHARE * outcomes.len() as f64,
        first_error,
        fingerprint: cell_fingerprint(cell, outcomes.len(), base_seed, bias_mode)?,
    })
}

pub fn cell_fingerprint(cell: &CellSpec, replications: usize, base_seed: u64, bias_mode: BiasMode) -> Result<String> {
    fingerprint(&(env!("CARGO_PKG_VERSION"), cell, replications, base_seed, bias_mode))
}

pub fn run_cell(cell: &CellSpec, replications: usize, base_seed: u64, bias_mode: BiasMode) -> Result<CellResult> {
    if replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    let generator = Generator::new(&cell.dgp, base_seed)?;
    let outcomes = replicate(&generator, cell, replications, base_seed);
    summarize(cell, generator.theta_true(), &outcomes, base_seed, bias_mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub dgp: DgpSpec,
    pub t_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub criteria: Vec<Criterion>,
    pub replications: usize,
    pub base_seed: u64,
    /// Template for every cell; `k`, `scheme` and `criterion` are overridden.
    pub estimator: EstimatorConfig,
    pub bias_mode: BiasMode,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("need at least one replication"));
        }
        if self.t_values.is_empty() || self.k_values.is_empty() || self.schemes.is_empty() || self.criteria.is_empty() {
            return Err(invalid("every grid dimension needs at least one value"));
        }
        let t_min = *self.t_values.iter().min().unwrap();
        if let Some(k) = self.k_values.iter().find(|&&k| 2 * k > t_min) {
            return Err(invalid(format!("K = {k} exceeds half the smallest sample size {t_min}")));
        }
        Ok(())
    }

    /// Cells in row order: T, then K, then scheme, then criterion.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &t in &self.t_values {
            for &k in &self.k_values {
                for &scheme in &self.schemes {
                    for &criterion in &self.criteria {
                        let mut estimator = self.estimator.clone();
                        estimator.k = k;
                        estimator.scheme = scheme;
                        estimator.criterion = criterion;
                        out.push(CellSpec { dgp: self.dgp.clone(), t, estimator });
                    }
                }
            }
        }
        out
    }
}

fn cache_path(dir: &Path, fp: &str) -> PathBuf {
    dir.join(format!("{fp}.json"))
}

/// Runs every cell of the grid. With a cache directory, each finished cell
/// is stored as `<fingerprint>.json` and reloaded on later runs.
pub fn run_grid(grid: &ExperimentGrid, cache_dir: Option<&Path>) -> Result<Vec<CellResult>> {
    grid.validate()?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let generator = Generator::new(&grid.dgp, grid.base_seed)?;
    let mut results = Vec::new();
    for cell in grid.cells() {
        let fp = cell_fingerprint(&cell, grid.replications, grid.base_seed, grid.bias_mode)?;
        if let Some(dir) = cache_dir {
            let path = cache_path(dir, &fp);
            if path.exists() {
                let cached: CellResult = serde_json::from_slice(&std::fs::read(&path)?)?;
                results.push(cached);
                continue;
            }
        }
        let outcomes = replicate(&generator, &cell, grid.replications, grid.base_seed);
        let result = summarize(&cell, generator.theta_true(), &outcomes, grid.base_seed, grid.bias_mode)?;
        if let Some(dir) = cache_dir {
            let tmp = dir.join(format!("{fp}.json.tmp"));
            std::fs::write(&tmp, serde_json::to_vec_pretty(&result)?)?;
            std::fs::rename(&tmp, cache_path(dir, &fp))?;
        }
        results.push(result);
    }
    Ok(results)
}

pub const GRID_CSV_HEADER: [&str; 20] = [
    "dgp",
    "T",
    "K",
    "scheme",
    "criterion",
    "replications",
    "base_seed",
    "theta_true",
    "mean_theta",
    "bias_mode",
    "bias",
    "coverage",
    "mc_se_coverage",
    "mean_se",
    "n_converged",
    "n_failed",
    "n_nonconverged_fits",
    "low_success",
    "fingerprint",
    "first_error",
];

/// One row per cell; bias and coverage are in percent.
pub fn grid_csv(results: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRID_CSV_HEADER)?;
    for r in results {
        w.write_record(&[
            r.dgp.clone(),
            r.t.to_string(),
            r.k.to_string(),
            r.scheme.to_string(),
            r.criterion.to_string(),
            r.replications.to_string(),
            r.base_seed.to_string(),
            r.theta_true.to_string(),
            r.mean_theta.to_string(),
            serde_json::to_value(r.bias_mode)?.as_str().unwrap_or_default().to_owned(),
            r.pct_bias.to_string(),
            (100.0 * r.coverage).to_string(),
            (100.0 * r.mc_se_coverage).to_string(),
            r.mean_se.to_string(),
            r.n_converged.to_string(),
            r.n_failed.to_string(),
            r.n_nonconverged_fits.to_string(),
            r.low_success.to_string(),
            r.fingerprint.clone(),
            r.first_error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpCellResult {
    pub t: usize,
    pub horizon: usize,
    pub irf_true: f64,
    pub mean_theta: f64,
    /// `|mean θ̂ₕ − θₕ|`, in levels.
    pub abs_bias: f64,
    /// `mean |θ̂ₕ − θₕ|`.
    pub mean_abs_error: f64,
    pub coverage: f64,
    pub mc_se_coverage: f64,
    pub mean_se: f64,
    pub n_converged: usize,
    pub n_failed: usize,
    pub low_success: bool,
}

/// Per-horizon absolute bias and coverage of the local-projections
/// estimator over `replications` draws, for each sample size.
pub fn lp_grid(
    dgp: &DgpSpec,
    t_values: &[usize],
    estimator: &EstimatorConfig,
    h_max: usize,
    replications: usize,
    base_seed: u64,
) -> Result<Vec<LpCellResult>> {
    if replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    let generator = Generator::new(dgp, base_seed)?;
    let irf = generator.irf_true(h_max)?;
    let mut out = Vec::new();
    for &t in t_values {
        let reps: Vec<std::result::Result<(Vec<f64>, Vec<f64>), String>> = (0..replications as u64)
            .into_par_iter()
            .map(|r| {
                let run = || -> Result<(Vec<f64>, Vec<f64>)> {
                    let data = generator.sample(t, &RngStream::new(base_seed, r))?;
                    let plan = estimator.plan(data.len())?;
                    let lp = estimate_lp(&data, &plan, estimator, h_max)?;
                    Ok((lp.theta_h, lp.se_h))
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        let ok: Vec<&(Vec<f64>, Vec<f64>)> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
        if ok.is_empty() {
            let err = reps.iter().find_map(|r| r.as_ref().err().cloned()).unwrap_or_default();
            return Err(Error::Numerical(format!("all LP replications failed at T = {t}: {err}")));
        }
        let n = ok.len() as f64;
        for h in 0..=h_max {
            let mean_theta = ok.iter().map(|(th, _)| th[h]).sum::<f64>() / n;
            let covered = ok.iter().filter(|(th, se)| (th[h] - irf[h]).abs() <= Z_95 * se[h]).count() as f64 / n;
            out.push(LpCellResult {
                t,
                horizon: h,
                irf_true: irf[h],
                mean_theta,
                abs_bias: (mean_theta - irf[h]).abs(),
                mean_abs_error: ok.iter().map(|(th, _)| (th[h] - irf[h]).abs()).sum::<f64>() / n,
                coverage: covered,
                mc_se_coverage: (covered * (1.0 - covered) / n).sqrt(),
                mean_se: ok.iter().map(|(_, se)| se[h]).sum::<f64>() / n,
                n_converged: ok.len(),
                n_failed: reps.len() - ok.len(),
                low_success: n < MIN_SUCCESS_SHARE * reps.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Rows `T,horizon,irf_true,mean_theta,abs_bias,mean_abs_error,coverage,mc_se_coverage,mean_se,n_converged,n_failed,low_success`.
pub fn lp_grid_csv(results: &[LpCellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "T",
        "horizon",
        "irf_true",
        "mean_theta",
        "abs_bias",
        "mean_abs_error",
        "coverage",
        "mc_se_coverage",
        "mean_se",
        "n_converged",
        "n_failed",
        "low_success",
    ])?;
    for r in results {
        w.write_record(&[
            r.t.to_string(),
            r.horizon.to_string(),
            r.irf_true.to_string(),
            r.mean_theta.to_string(),
            r.abs_bias.to_string(),
            r.mean_abs_error.to_string(),
            (100.0 * r.coverage).to_string(),
            (100.0 * r.mc_se_coverage).to_string(),
            r.mean_se.to_string(),
            r.n_converged.to_string(),
            r.n_failed.to_string(),
            r.low_success.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::TuningGrid;

    fn small_plr() -> DgpSpec {
        DgpSpec::Plr(PlrSpec { p: 6, rho: 0.5, cor: 0.3, ..PlrSpec::default() })
    }

    fn est(k: usize) -> EstimatorConfig {
        EstimatorConfig::new(k, Scheme::Rcf, Criterion::Rmse, TuningGrid::linspace(0.01, 0.1, 5).unwrap(), 0.99)
    }

    #[test]
    fn no_confounding_cell_is_calibrated() {
        let dgp = DgpSpec::Plr(PlrSpec { p: 5, rho: 0.3, cor: 0.0, confounding: false, ..PlrSpec::default() });
        let cell = CellSpec { dgp, t: 2000, estimator: est(4) };
        let r = run_cell(&cell, 200, 1, BiasMode::BiasOfMean).unwrap();
        assert!(r.pct_bias < 1.0, "bias {}", r.pct_bias);
        assert!((0.90..=0.99).contains(&r.coverage), "coverage {}", r.coverage);
        assert_eq!(r.n_converged + r.n_failed, 200);
        assert!(!r.low_success);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let cell = CellSpec { dgp: small_plr(), t: 80, estimator: est(4) };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_cell(&cell, 12, 7, BiasMode::BiasOfMean).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert_eq!(a.mean_theta.to_bits(), b.mean_theta.to_bits());
    }

    #[test]
    fn grid_shape_and_cache() {
        let grid = ExperimentGrid {
            dgp: small_plr(),
            t_values: vec![40, 60, 80],
            k_values: vec![4, 5, 6],
            schemes: vec![Scheme::Rcf],
            criteria: vec![Criterion::Rmse, Criterion::Goldilocks],
            replications: 2,
            base_seed: 3,
            estimator: est(4),
            bias_mode: BiasMode::BiasOfMean,
        };
        let dir = tempfile::tempdir().unwrap();
        let first = run_grid(&grid, Some(dir.path())).unwrap();
        assert_eq!(first.len(), 18);
        let csv = grid_csv(&first).unwrap();
        assert_eq!(csv.lines().count(), 19);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 18);
        // A second run is served from the cache.
        let again = run_grid(&grid, Some(dir.path())).unwrap();
        assert_eq!(first, again);
        let bad = ExperimentGrid { k_values: vec![30], ..grid };
        assert!(run_grid(&bad, None).is_err());
    }

    #[test]
    fn bias_modes_differ() {
        let cell = CellSpec { dgp: small_plr(), t: 60, estimator: est(4) };
        let a = run_cell(&cell, 10, 2, BiasMode::BiasOfMean).unwrap();
        let b = run_cell(&cell, 10, 2, BiasMode::MeanAbsolutePercentage).unwrap();
        assert!(b.pct_bias >= a.pct_bias);
        assert_eq!(a.mean_theta, b.mean_theta);
    }

    #[test]
    fn lp_horizon_zero_matches_static_cell() {
        let cell = CellSpec { dgp: small_plr(), t: 80, estimator: est(4) };
        let s = run_cell(&cell, 6, 9, BiasMode::BiasOfMean).unwrap();
        let lp = lp_grid(&cell.dgp, &[80], &cell.estimator, 2, 6, 9).unwrap();
        assert_eq!(lp.len(), 3);
        assert!((lp[0].mean_theta - s.mean_theta).abs() < 1e-10);
        assert_eq!(lp[0].coverage, s.coverage);
        assert_eq!(lp[1].irf_true, 0.0);
        assert!(lp_grid_csv(&lp).unwrap().starts_with("T,horizon,"));
    }
}
