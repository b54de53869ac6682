//! Cross-fitted residual-on-residual estimation with HAC inference, and its
//! local-projections extension.
//!
//! For each fold the policy nuisance `m̂` (policy on controls) and the
//! outcome nuisance `ĝ` (outcome on controls) are fitted on the auxiliary
//! rows only, tuned by RMSE on the main block, and used to residualize the
//! main block: `χₜ = yₜ − ĝ(Xₜ)`, `ξₜ = dₜ − m̂(Xₜ)`. The fold estimate is
//! `θ̂ₖ = Σχξ / Σξ²` and `θ̂` is their average. Inference uses the stacked,
//! time-ordered scores `sₜ = ξₜ(χₜ − θ̂ξₜ)`.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{invalid, Error, Result};
use crate::folds::{BlockPartition, FoldPlan, Scheme};
use crate::learners::{predict_rows, rmse, GramDesign, LinearFit, SolverOptions};
use crate::numerics::{dot, Matrix};
use crate::tuning::{select, Criterion, TuningGrid, TuningTrace, DEFAULT_WINDOW};

/// Floor applied to a non-positive long-run variance.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// A fold aborts when `Σξ² < WEAK_RESIDUAL_RATIO · T`.
pub const WEAK_RESIDUAL_RATIO: f64 = 1e-10;
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSettings {
    pub grid: TuningGrid,
    pub l1_ratio: f64,
}

impl NuisanceSettings {
    pub fn lasso(grid: TuningGrid) -> Self {
        Self { grid, l1_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub k: usize,
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub window: usize,
    pub outcome: NuisanceSettings,
    pub policy: NuisanceSettings,
    pub solver: SolverOptions,
    /// HAC bandwidth; `None` uses [`default_bandwidth`].
    pub bandwidth: Option<usize>,
}

impl EstimatorConfig {
    /// Same settings for both nuisances.
    pub fn new(k: usize, scheme: Scheme, criterion: Criterion, grid: TuningGrid, l1_ratio: f64) -> Self {
        let n = NuisanceSettings { grid, l1_ratio };
        Self {
            k,
            scheme,
            criterion,
            window: DEFAULT_WINDOW,
            outcome: n.clone(),
            policy: n,
            solver: SolverOptions::default(),
            bandwidth: None,
        }
    }

    pub fn plan(&self, len: usize) -> Result<FoldPlan> {
        FoldPlan::build(self.scheme, &BlockPartition::new(len, self.k)?)
    }
}

/// Residuals and scores stacked in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub chi: Vec<f64>,
    pub xi: Vec<f64>,
    pub fold_of_t: Vec<usize>,
    pub theta_hat: f64,
    pub scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(chi: Vec<f64>, xi: Vec<f64>, fold_of_t: Vec<usize>, theta_hat: f64) -> Self {
        let scores = orthogonal_scores(&chi, &xi, theta_hat);
        Self { chi, xi, fold_of_t, theta_hat, scores }
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }
}

pub fn orthogonal_scores(chi: &[f64], xi: &[f64], theta: f64) -> Vec<f64> {
    chi.iter().zip(xi).map(|(c, x)| x * (c - theta * x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub trace: TuningTrace,
    pub fit: LinearFit,
    pub n_nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub main: Range<usize>,
    pub n_train: usize,
    pub policy: NuisanceDiagnostics,
    pub outcome: NuisanceDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HacResult {
    pub a_hat: f64,
    pub sigma_hat: f64,
    pub se: f64,
    pub bandwidth: usize,
    /// The kernel estimate was non-positive and replaced by [`SIGMA_FLOOR`].
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta_hat: f64,
    pub per_fold_thetas: Vec<f64>,
    pub se: f64,
    pub ci95: (f64, f64),
    pub a_hat: f64,
    pub sigma_hat: f64,
    pub sigma_floored: bool,
    pub bandwidth_used: usize,
    pub n_obs: usize,
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub k: usize,
    /// Learner fits (over all folds, grid points and both nuisances) that
    /// stopped at the iteration cap.
    pub n_nonconverged_fits: usize,
    pub tuning_traces: Vec<FoldDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub horizons: Vec<usize>,
    pub theta_h: Vec<f64>,
    pub se_h: Vec<f64>,
    pub n_obs_h: Vec<usize>,
    pub folds_used_h: Vec<usize>,
    pub cumulative_theta: Vec<f64>,
    pub cumulative_se: Vec<f64>,
    pub cumulative_ci: Vec<(f64, f64)>,
    pub cumulative_ci_note: String,
    pub bandwidth_used: Vec<usize>,
    pub n_nonconverged_fits: usize,
    pub horizon_reports: Vec<EstimateReport>,
}

impl LpReport {
    /// Rows `horizon,theta,se,cum_theta,cum_lo95,cum_hi95`.
    pub fn irf_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["horizon", "theta", "se", "cum_theta", "cum_lo95", "cum_hi95"])?;
        for i in 0..self.horizons.len() {
            w.write_record(&[
                self.horizons[i].to_string(),
                self.theta_h[i].to_string(),
                self.se_h[i].to_string(),
                self.cumulative_theta[i].to_string(),
                self.cumulative_ci[i].0.to_string(),
                self.cumulative_ci[i].1.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn default_bandwidth(t: usize) -> usize {
    (1.3 * (t as f64).powf(0.25)).floor() as usize
}

/// Bartlett weight `1 − h/H` for lag `h` at bandwidth `H`.
pub fn bartlett_weight(h: usize, bandwidth: usize) -> f64 {
    if bandwidth == 0 || h >= bandwidth {
        0.0
    } else {
        1.0 - h as f64 / bandwidth as f64
    }
}

/// Sample autocovariance at lag `h`, centred at the sample mean and
/// divided by `T`.
pub fn autocovariance(s: &[f64], h: usize) -> f64 {
    let t = s.len();
    let m = s.iter().sum::<f64>() / t as f64;
    (h..t).map(|i| (s[i] - m) * (s[i - h] - m)).sum::<f64>() / t as f64
}

/// `Γ̂(0) + 2 Σ_{h=1}^{H} k(h/H) Γ̂(h)` with the Bartlett kernel. Returns
/// the (possibly floored) estimate and whether the floor was applied.
pub fn long_run_variance(s: &[f64], bandwidth: usize) -> Result<(f64, bool)> {
    if s.len() < 4 {
        return Err(invalid(format!("HAC needs at least 4 scores, got {}", s.len())));
    }
    if bandwidth >= s.len() {
        return Err(invalid(format!("bandwidth {bandwidth} must be below the sample length {}", s.len())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score series".into()));
    }
    let t = s.len();
    let m = s.iter().sum::<f64>() / t as f64;
    let c: Vec<f64> = s.iter().map(|v| v - m).collect();
    let gamma = |h: usize| dot(&c[h..], &c[..t - h]) / t as f64;
    let mut sigma = gamma(0);
    for h in 1..=bandwidth {
        let w = bartlett_weight(h, bandwidth);
        if w > 0.0 {
            sigma += 2.0 * w * gamma(h);
        }
    }
    if sigma > SIGMA_FLOOR {
        Ok((sigma, false))
    } else {
        Ok((SIGMA_FLOOR, true))
    }
}

/// `Â = mean(ξ²)`, `Σ̂` from [`long_run_variance`], `se = √(Σ̂ / (T Â²))`.
pub fn hac_inference(series: &ScoreSeries, bandwidth: Option<usize>) -> Result<HacResult> {
    let t = series.len();
    let bandwidth = bandwidth.unwrap_or_else(|| default_bandwidth(t));
    let (sigma_hat, floored) = long_run_variance(&series.scores, bandwidth)?;
    let a_hat = dot(&series.xi, &series.xi) / t as f64;
    if !(a_hat > 0.0) {
        return Err(Error::Numerical("policy residuals are identically zero".into()));
    }
    let se = (sigma_hat / (t as f64 * a_hat * a_hat)).sqrt();
    Ok(HacResult { a_hat, sigma_hat, se, bandwidth, floored })
}

/// Residual-on-residual slope `Σχξ / Σξ²` on one block.
pub fn fold_theta(chi: &[f64], xi: &[f64]) -> Result<f64> {
    if chi.len() != xi.len() || chi.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} outcome vs {} policy residuals", chi.len(), xi.len())));
    }
    let sxx = dot(xi, xi);
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(Error::WeakResidualization { fold: 0, sum_sq: sxx, threshold: 0.0 });
    }
    Ok(dot(chi, xi) / sxx)
}

/// Elastic-net fits of `target` (aligned with `train_rows`) on the rows
/// `train_rows` of `x`, for every penalty of the grid.
pub fn fit_nuisance_path(
    x: &Matrix,
    target: &[f64],
    train_rows: &[usize],
    settings: &NuisanceSettings,
    opts: SolverOptions,
) -> Result<Vec<LinearFit>> {
    let design = GramDesign::from_rows(x, train_rows)?;
    let prepared = design.prepare(target)?;
    design.fit_path(&prepared, settings.grid.values(), settings.l1_ratio, opts)
}

struct Tuned {
    diag: NuisanceDiagnostics,
    predictions: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn tune_and_predict(
    design: &GramDesign,
    x: &Matrix,
    train_target: &[f64],
    main_rows: &[usize],
    main_truth: &[f64],
    settings: &NuisanceSettings,
    cfg: &EstimatorConfig,
) -> Result<Tuned> {
    let prepared = design.prepare(train_target)?;
    let path = design.fit_path(&prepared, settings.grid.values(), settings.l1_ratio, cfg.solver)?;
    let mut preds = Vec::with_capacity(path.len());
    let mut errors = Vec::with_capacity(path.len());
    for fit in &path {
        let p = predict_rows(fit, x, main_rows)?;
        errors.push(rmse(&p, main_truth)?);
        preds.push(p);
    }
    let trace = select(cfg.criterion, &errors, &settings.grid, cfg.window)?;
    let n_nonconverged = path.iter().filter(|f| !f.converged).count();
    let i = trace.chosen_index;
    let predictions = preds.swap_remove(i);
    let fit = path.into_iter().nth(i).expect("chosen index within grid");
    Ok(Tuned { diag: NuisanceDiagnostics { trace, fit, n_nonconverged }, predictions })
}

/// Per-fold policy stage, shared by every horizon.
struct PolicyFold {
    fold: usize,
    main: Range<usize>,
    train: Vec<usize>,
    design: GramDesign,
    xi: Vec<f64>,
    diag: NuisanceDiagnostics,
}

fn policy_stage(x: &Matrix, d: &[f64], plan: &FoldPlan, cfg: &EstimatorConfig) -> Result<Vec<PolicyFold>> {
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let train = fold.training_indices();
            if train.is_empty() {
                return Err(invalid(format!("fold {} has an empty auxiliary sample", k + 1)));
            }
            let main = fold.main_indices();
            let design = GramDesign::from_rows(x, &train)?;
            let target: Vec<f64> = train.iter().map(|&t| d[t]).collect();
            let truth: Vec<f64> = main.iter().map(|&t| d[t]).collect();
            let tuned = tune_and_predict(&design, x, &target, &main, &truth, &cfg.policy, cfg)?;
            let xi: Vec<f64> = truth.iter().zip(&tuned.predictions).map(|(a, b)| a - b).collect();
            Ok(PolicyFold { fold: k, main: fold.main.clone(), train, design, xi, diag: tuned.diag })
        })
        .collect()
}

/// Estimate at horizon `h`: outcome `yₜ₊ₕ` on controls `Xₜ`, on the
/// aligned sample `t < T − h`.
fn horizon_stage(
    x: &Matrix,
    y: &[f64],
    policy: &[PolicyFold],
    h: usize,
    cfg: &EstimatorConfig,
) -> Result<(EstimateReport, ScoreSeries)> {
    let t_len = y.len();
    let n_obs = t_len - h;
    let per_fold: Vec<Option<(Vec<f64>, Vec<f64>, FoldDiagnostics)>> = policy
        .par_iter()
        .map(|pf| {
            let main_end = pf.main.end.min(n_obs);
            if main_end <= pf.main.start || (h > 0 && main_end - pf.main.start < 2) {
                return Ok(None);
            }
            let main: Vec<usize> = (pf.main.start..main_end).collect();
            let train: Vec<usize> = pf.train.iter().copied().filter(|&t| t + h < t_len).collect();
            let rebuilt;
            let design = if train.len() == pf.train.len() {
                &pf.design
            } else {
                rebuilt = GramDesign::from_rows(x, &train)?;
                &rebuilt
            };
            let target: Vec<f64> = train.iter().map(|&t| y[t + h]).collect();
            let truth: Vec<f64> = main.iter().map(|&t| y[t + h]).collect();
            let tuned = tune_and_predict(design, x, &target, &main, &truth, &cfg.outcome, cfg)?;
            let chi: Vec<f64> = truth.iter().zip(&tuned.predictions).map(|(a, b)| a - b).collect();
            let xi = pf.xi[..main.len()].to_vec();
            let diag = FoldDiagnostics {
                fold: pf.fold,
                main: pf.main.start..main_end,
                n_train: train.len(),
                policy: pf.diag.clone(),
                outcome: tuned.diag,
            };
            Ok(Some((chi, xi, diag)))
        })
        .collect::<Result<_>>()?;

    let mut chi = Vec::with_capacity(n_obs);
    let mut xi = Vec::with_capacity(n_obs);
    let mut fold_of_t = Vec::with_capacity(n_obs);
    let mut thetas = Vec::new();
    let mut diags = Vec::new();
    let threshold = WEAK_RESIDUAL_RATIO * n_obs as f64;
    for (c, x_res, diag) in per_fold.into_iter().flatten() {
        let sxx = dot(&x_res, &x_res);
        if !(sxx >= threshold) {
            return Err(Error::WeakResidualization { fold: diag.fold + 1, sum_sq: sxx, threshold });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome residuals of fold {}", diag.fold + 1)));
        }
        thetas.push(dot(&c, &x_res) / sxx);
        fold_of_t.extend(std::iter::repeat_n(diag.fold, c.len()));
        chi.extend(c);
        xi.extend(x_res);
        diags.push(diag);
    }
    if thetas.is_empty() {
        return Err(invalid(format!("no fold has enough observations at horizon {h}")));
    }
    let theta_hat = thetas.iter().sum::<f64>() / thetas.len() as f64;
    let series = ScoreSeries::new(chi, xi, fold_of_t, theta_hat);
    let hac = hac_inference(&series, cfg.bandwidth)?;
    let n_nonconverged_fits = diags.iter().map(|d| d.policy.n_nonconverged + d.outcome.n_nonconverged).sum();
    let report = EstimateReport {
        theta_hat,
        per_fold_thetas: thetas,
        se: hac.se,
        ci95: (theta_hat - Z_95 * hac.se, theta_hat + Z_95 * hac.se),
        a_hat: hac.a_hat,
        sigma_hat: hac.sigma_hat,
        sigma_floored: hac.floored,
        bandwidth_used: hac.bandwidth,
        n_obs: series.len(),
        scheme: cfg.scheme,
        criterion: cfg.criterion,
        k: cfg.k,
        n_nonconverged_fits,
        tuning_traces: diags,
    };
    Ok((report, series))
}

struct Prepared {
    x: Matrix,
    plan: FoldPlan,
}

fn prepare(data: &TimeSeriesDataset, plan: &FoldPlan) -> Result<Prepared> {
    if plan.len != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} observations, dataset has {}",
            plan.len,
            data.len()
        )));
    }
    Ok(Prepared { x: data.controls()?, plan: plan.clone() })
}

/// Cross-fitted estimate with its stacked score series.
pub fn estimate_detailed(
    data: &TimeSeriesDataset,
    plan: &FoldPlan,
    cfg: &EstimatorConfig,
) -> Result<(EstimateReport, ScoreSeries)> {
    let p = prepare(data, plan)?;
    let policy = policy_stage(&p.x, data.policy(), &p.plan, cfg)?;
    let (mut report, series) = horizon_stage(&p.x, data.outcome(), &policy, 0, cfg)?;
    report.k = plan.k();
    report.scheme = plan.scheme;
    Ok((report, series))
}

pub fn estimate(data: &TimeSeriesDataset, plan: &FoldPlan, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    estimate_detailed(data, plan, cfg).map(|(r, _)| r)
}

/// Builds the fold plan from `cfg` and estimates.
pub fn estimate_dataset(data: &TimeSeriesDataset, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    estimate(data, &cfg.plan(data.len())?, cfg)
}

/// Residualized local projections for horizons `0..=h_max`.
///
/// The policy residual is computed once per fold; the outcome nuisance is
/// refitted per horizon on auxiliary pairs `(Xₜ, yₜ₊ₕ)` with `t + h < T`.
/// At horizon `h` the sample is `t < T − h`; a fold left with fewer than
/// two main observations after that truncation is dropped for the horizon.
pub fn estimate_lp(data: &TimeSeriesDataset, plan: &FoldPlan, cfg: &EstimatorConfig, h_max: usize) -> Result<LpReport> {
    let p = prepare(data, plan)?;
    let min_block = plan.folds.iter().map(|f| f.main.len()).min().unwrap_or(0);
    if data.len() <= h_max + min_block {
        return Err(invalid(format!(
            "horizon {h_max} too large for T = {} with smallest block {min_block}",
            data.len()
        )));
    }
    let policy = policy_stage(&p.x, data.policy(), &p.plan, cfg)?;
    let mut reports = Vec::with_capacity(h_max + 1);
    for h in 0..=h_max {
        let (mut r, _) = horizon_stage(&p.x, data.outcome(), &policy, h, cfg)?;
        r.k = plan.k();
        r.scheme = plan.scheme;
        reports.push(r);
    }
    let theta_h: Vec<f64> = reports.iter().map(|r| r.theta_hat).collect();
    let se_h: Vec<f64> = reports.iter().map(|r| r.se).collect();
    let mut cumulative_theta = Vec::with_capacity(theta_h.len());
    let mut cumulative_se = Vec::with_capacity(theta_h.len());
    let (mut acc, mut var) = (0.0, 0.0);
    for (t, s) in theta_h.iter().zip(&se_h) {
        acc += t;
        var += s * s;
        cumulative_theta.push(acc);
        cumulative_se.push(var.sqrt());
    }
    let cumulative_ci =
        cumulative_theta.iter().zip(&cumulative_se).map(|(t, s)| (t - Z_95 * s, t + Z_95 * s)).collect();
    Ok(LpReport {
        horizons: (0..=h_max).collect(),
        n_obs_h: reports.iter().map(|r| r.n_obs).collect(),
        folds_used_h: reports.iter().map(|r| r.per_fold_thetas.len()).collect(),
        bandwidth_used: reports.iter().map(|r| r.bandwidth_used).collect(),
        n_nonconverged_fits: reports.iter().map(|r| r.n_nonconverged_fits).sum(),
        theta_h,
        se_h,
        cumulative_theta,
        cumulative_se,
        cumulative_ci,
        cumulative_ci_note:
            "cumulative variance is the sum of per-horizon variances; cross-horizon covariance is ignored".into(),
        horizon_reports: reports,
    })
}
