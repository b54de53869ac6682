//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsdml::dgp::{PlrSpec, SvarSpec};
use tsdml::empirical_io::TransformSpec;
use tsdml::estimator::{EstimatorConfig, NuisanceSettings};
use tsdml::folds::Scheme;
use tsdml::learners::SolverOptions;
use tsdml::montecarlo::{BiasMode, DgpSpec};
use tsdml::tuning::{Criterion, TuningGrid, DEFAULT_WINDOW};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub svar: Option<SvarSpec>,
    pub plr: Option<PlrSpec>,
    pub dataset: Option<DatasetSection>,
    pub simulate: Option<SimulateSection>,
    pub estimator: Option<EstimatorSection>,
    pub lp: Option<LpSection>,
    pub montecarlo: Option<MonteCarloSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub time_column: Option<String>,
    /// Column name to role. When absent, roles are read from the JSON
    /// sidecar written by `simulate` next to the CSV.
    pub roles: Option<BTreeMap<String, String>>,
    /// When absent the data are used as they are.
    pub transform: Option<TransformSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub t: usize,
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_name() -> String {
    "data".to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridRange {
    fn build(&self) -> Result<TuningGrid, CliError> {
        Ok(TuningGrid::linspace(self.lo, self.hi, self.points)?)
    }
}

/// Every field is optional; [`RunConfig::resolve`] fills the defaults of
/// the data source in use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub k: Option<usize>,
    pub scheme: Option<Scheme>,
    pub criterion: Option<Criterion>,
    pub window: Option<usize>,
    pub l1_ratio: Option<f64>,
    pub grid: Option<GridRange>,
    /// Explicit grid values; takes precedence over `grid`.
    pub grid_values: Option<Vec<f64>>,
    /// Separate grids for the two nuisances, overriding `grid`.
    pub policy_grid: Option<GridRange>,
    pub outcome_grid: Option<GridRange>,
    pub bandwidth: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpSection {
    pub horizons: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub t_values: Vec<usize>,
    pub k_values: Option<Vec<usize>>,
    pub schemes: Option<Vec<Scheme>>,
    pub criteria: Option<Vec<Criterion>>,
    pub replications: Option<usize>,
    pub bias_mode: Option<BiasMode>,
    /// Cache directory for finished cells, relative to the output directory.
    pub cache: Option<PathBuf>,
    /// Also run the local-projections grid up to this horizon.
    pub lp_horizons: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Svar,
    Plr,
    Dataset,
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub replications: Option<usize>,
}

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const DEFAULT_EMPIRICAL_GRID: GridRange = GridRange { lo: 0.001, hi: 1.0, points: 10_000 };

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let (Some(r), Some(mc)) = (o.replications, self.montecarlo.as_mut()) {
            mc.replications = Some(r);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// The data source; a dataset takes precedence over a generator only
    /// when `prefer_dataset` is set.
    pub fn source(&self, prefer_dataset: bool) -> Result<Source, CliError> {
        if self.svar.is_some() && self.plr.is_some() {
            return Err(CliError::Config("give at most one of [svar] and [plr]".into()));
        }
        let dgp = if self.svar.is_some() {
            Some(Source::Svar)
        } else if self.plr.is_some() {
            Some(Source::Plr)
        } else {
            None
        };
        match (prefer_dataset && self.dataset.is_some(), dgp) {
            (true, _) => Ok(Source::Dataset),
            (false, Some(s)) => Ok(s),
            (false, None) if prefer_dataset => {
                Err(CliError::Config("need a [dataset], [svar] or [plr] section".into()))
            }
            (false, None) => Err(CliError::Config("need an [svar] or [plr] section".into())),
        }
    }

    pub fn dgp(&self) -> Result<DgpSpec, CliError> {
        match self.source(false)? {
            Source::Svar => Ok(DgpSpec::Svar(self.svar.clone().unwrap())),
            Source::Plr => Ok(DgpSpec::Plr(self.plr.clone().unwrap())),
            Source::Dataset => unreachable!(),
        }
    }

    /// Fills every unset estimator, LP and Monte Carlo setting so that the
    /// configuration written to the outputs is complete.
    pub fn resolve(&mut self, source: Source) {
        let est = self.estimator.get_or_insert_with(Default::default);
        let (grid, l1, criterion) = match source {
            Source::Svar => (GridRange { lo: 0.1, hi: 1.0, points: 10 }, 1.0, Criterion::Rmse),
            Source::Plr => (GridRange { lo: 0.01, hi: 0.1, points: 10 }, 0.99, Criterion::Rmse),
            Source::Dataset => (DEFAULT_EMPIRICAL_GRID, 1.0, Criterion::Goldilocks),
        };
        est.k.get_or_insert(8);
        est.scheme.get_or_insert(Scheme::Rcf);
        est.criterion.get_or_insert(criterion);
        est.window.get_or_insert(DEFAULT_WINDOW);
        est.l1_ratio.get_or_insert(l1);
        if est.grid_values.is_none() {
            est.grid.get_or_insert(grid);
        }
        let solver = SolverOptions::default();
        est.tol.get_or_insert(solver.tol);
        est.max_iter.get_or_insert(solver.max_iter);
        if let Some(lp) = self.lp.as_mut() {
            lp.horizons.get_or_insert(8);
        }
        if let Some(mc) = self.montecarlo.as_mut() {
            let est = self.estimator.as_ref().unwrap();
            mc.k_values.get_or_insert_with(|| vec![est.k.unwrap()]);
            mc.schemes.get_or_insert_with(|| vec![est.scheme.unwrap()]);
            mc.criteria.get_or_insert_with(|| vec![est.criterion.unwrap()]);
            mc.replications.get_or_insert(DEFAULT_REPLICATIONS);
            mc.bias_mode.get_or_insert(BiasMode::default());
        }
        self.seed.get_or_insert(0);
    }

    /// The estimator settings; call after [`resolve`](Self::resolve).
    pub fn estimator_config(&self) -> Result<EstimatorConfig, CliError> {
        let est = self.estimator.as_ref().expect("resolved");
        let l1 = est.l1_ratio.unwrap();
        if !(0.0..=1.0).contains(&l1) {
            return Err(CliError::Config(format!("estimator.l1_ratio must lie in [0, 1], got {l1}")));
        }
        let base = match &est.grid_values {
            Some(v) => TuningGrid::new(v.clone())?,
            None => est.grid.unwrap().build()?,
        };
        let policy = match &est.policy_grid {
            Some(g) => g.build()?,
            None => base.clone(),
        };
        let outcome = match &est.outcome_grid {
            Some(g) => g.build()?,
            None => base,
        };
        let mut cfg = EstimatorConfig::new(est.k.unwrap(), est.scheme.unwrap(), est.criterion.unwrap(), outcome, l1);
        cfg.policy = NuisanceSettings { grid: policy, l1_ratio: l1 };
        cfg.window = est.window.unwrap();
        cfg.bandwidth = est.bandwidth;
        cfg.solver = SolverOptions { tol: est.tol.unwrap(), max_iter: est.max_iter.unwrap() };
        Ok(cfg)
    }
}
