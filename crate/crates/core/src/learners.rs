//! Penalized linear nuisance learners.
//!
//! Minimizes over `(β₀, β)`
//!
//! ```text
//! (1/(2n)) ‖y − β₀ − Zβ‖² + α · ( l1_ratio ‖β‖₁ + ½ (1 − l1_ratio) ‖β‖₂² )
//! ```
//!
//! where `Z` is the column-standardized design (population standard
//! deviation). The intercept is never penalized. Coefficients are reported
//! on the original scale of `X`.
//!
//! The solver is cyclic coordinate descent with covariance updates: the Gram
//! matrix `ZᵀZ/n` is formed once per design, so a whole penalty grid (and
//! several responses sharing the same controls) reuse it. After each sweep
//! that moves no coefficient by more than `tol · sd(y)` the KKT conditions
//! are checked at the same tolerance before convergence is declared.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, Matrix, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub alpha: f64,
    pub l1_ratio: f64,
}

impl PenaltySpec {
    pub fn new(alpha: f64, l1_ratio: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("penalty alpha must be finite and >= 0, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&l1_ratio) {
            return Err(invalid(format!("l1_ratio must lie in [0, 1], got {l1_ratio}")));
        }
        Ok(Self { alpha, l1_ratio })
    }

    pub fn lasso(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    fn l1(&self) -> f64 {
        self.alpha * self.l1_ratio
    }

    fn l2(&self) -> f64 {
        self.alpha * (1.0 - self.l1_ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: PenaltySpec,
    pub n_iterations: usize,
    pub converged: bool,
    /// In-sample fitted values, kept only by [`fit_elastic_net`].
    #[serde(skip)]
    pub fitted: Option<Vec<f64>>,
}

impl LinearFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Standardized design with its Gram matrix, reusable across responses
/// and penalties.
#[derive(Debug, Clone)]
pub struct GramDesign {
    n: usize,
    p: usize,
    standardizer: Standardizer,
    /// Standardized rows, row-major `n × p`.
    z: Vec<f64>,
    /// `ZᵀZ / n`, full symmetric `p × p`.
    gram: Vec<f64>,
}

/// A centred response projected onto a [`GramDesign`].
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    mean: f64,
    sd: f64,
    /// `Zᵀ(y − ȳ) / n`
    xty: Vec<f64>,
    /// `‖y − ȳ‖² / n`
    yy: f64,
}

struct Solution {
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl GramDesign {
    pub fn new(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(invalid(format!("learner needs at least 2 rows, got {}", x.rows())));
        }
        if x.cols() == 0 {
            return Err(invalid("learner needs at least one predictor"));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("learner design".into()));
        }
        let standardizer = Standardizer::fit(x)?;
        let (n, p) = (x.rows(), x.cols());
        let mut z = Vec::with_capacity(n * p);
        for i in 0..n {
            for (j, v) in x.row(i).iter().enumerate() {
                z.push(if standardizer.constant[j] {
                    0.0
                } else {
                    (v - standardizer.means[j]) / standardizer.scales[j]
                });
            }
        }
        let mut gram = vec![0.0; p * p];
        for i in 0..n {
            let row = &z[i * p..(i + 1) * p];
            for (a, &za) in row.iter().enumerate() {
                if za == 0.0 {
                    continue;
                }
                let g = &mut gram[a * p..(a + 1) * p];
                for (gb, &zb) in g[a..].iter_mut().zip(&row[a..]) {
                    *gb += za * zb;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for a in 0..p {
            for b in a..p {
                let v = gram[a * p + b] * inv_n;
                gram[a * p + b] = v;
                gram[b * p + a] = v;
            }
        }
        Ok(Self { n, p, standardizer, z, gram })
    }

    /// Design built from the rows of `x` listed in `rows`, in that order.
    pub fn from_rows(x: &Matrix, rows: &[usize]) -> Result<Self> {
        Self::new(&x.select_rows(rows))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn prepare(&self, y: &[f64]) -> Result<PreparedTarget> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!("design has {} rows, response has {}", self.n, y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("learner response".into()));
        }
        let n = self.n as f64;
        let mean = y.iter().sum::<f64>() / n;
        let centred: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let yy = dot(&centred, &centred) / n;
        let mut xty = vec![0.0; self.p];
        for (i, r) in centred.iter().enumerate() {
            let row = &self.z[i * self.p..(i + 1) * self.p];
            for (acc, zij) in xty.iter_mut().zip(row) {
                *acc += zij * r;
            }
        }
        xty.iter_mut().for_each(|v| *v /= n);
        Ok(PreparedTarget { mean, sd: yy.sqrt(), xty, yy })
    }

    fn solve(
        &self,
        target: &PreparedTarget,
        penalty: PenaltySpec,
        warm: Option<&[f64]>,
        opts: SolverOptions,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Solution {
        let p = self.p;
        let (l1, l2) = (penalty.l1(), penalty.l2());
        let tol = opts.tol * if target.sd > 0.0 { target.sd } else { 1.0 };
        let mut beta = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
        let mut q = vec![0.0; p];
        for (k, &bk) in beta.iter().enumerate() {
            if bk != 0.0 {
                for (qj, g) in q.iter_mut().zip(&self.gram[k * p..(k + 1) * p]) {
                    *qj += g * bk;
                }
            }
        }

        let gram = &self.gram;
        let xty = &target.xty;
        let update = |j: usize, beta: &mut [f64], q: &mut [f64]| -> f64 {
            let gjj = gram[j * p + j];
            let denom = gjj + l2;
            let old = beta[j];
            let new = if denom > 0.0 { soft_threshold(xty[j] - q[j] + gjj * old, l1) / denom } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                for (qk, g) in q.iter_mut().zip(&gram[j * p..(j + 1) * p]) {
                    *qk += delta * g;
                }
            }
            delta.abs()
        };
        let objective = |beta: &[f64], q: &[f64]| -> f64 {
            let quad = 0.5 * (target.yy - 2.0 * dot(xty, beta) + dot(beta, q));
            let pen = l1 * beta.iter().map(|b| b.abs()).sum::<f64>() + 0.5 * l2 * dot(beta, beta);
            quad + pen
        };
        let kkt_ok = |beta: &[f64], q: &[f64]| -> bool {
            (0..p).all(|j| {
                let g = xty[j] - q[j] - l2 * beta[j];
                if beta[j] != 0.0 {
                    (g - l1 * beta[j].signum()).abs() <= tol
                } else {
                    g.abs() <= l1 + tol
                }
            })
        };

        let mut iterations = 0;
        let mut converged = false;
        let mut active: Vec<usize> = Vec::with_capacity(p);
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(&beta, &q));
        }
        while iterations < opts.max_iter {
            let mut max_change: f64 = 0.0;
            for j in 0..p {
                max_change = max_change.max(update(j, &mut beta, &mut q));
            }
            iterations += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(objective(&beta, &q));
            }
            if max_change <= tol && kkt_ok(&beta, &q) {
                converged = true;
                break;
            }
            active.clear();
            active.extend((0..p).filter(|&j| beta[j] != 0.0));
            while iterations < opts.max_iter {
                let mut change: f64 = 0.0;
                for &j in &active {
                    change = change.max(update(j, &mut beta, &mut q));
                }
                iterations += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(objective(&beta, &q));
                }
                if change <= tol {
                    break;
                }
            }
        }
        Solution { beta, iterations, converged }
    }

    fn to_fit(&self, target: &PreparedTarget, penalty: PenaltySpec, sol: &Solution) -> LinearFit {
        let s = &self.standardizer;
        let coefficients: Vec<f64> =
            sol.beta.iter().enumerate().map(|(j, b)| if s.constant[j] { 0.0 } else { b / s.scales[j] }).collect();
        let intercept = target.mean - dot(&s.means, &coefficients);
        LinearFit {
            intercept,
            coefficients,
            penalty,
            n_iterations: sol.iterations,
            converged: sol.converged,
            fitted: None,
        }
    }

    /// Cold-started fit at a single penalty.
    pub fn fit(&self, target: &PreparedTarget, penalty: PenaltySpec, opts: SolverOptions) -> LinearFit {
        let sol = self.solve(target, penalty, None, opts, None);
        self.to_fit(target, penalty, &sol)
    }

    /// Fits every penalty in `alphas`, sweeping from the largest to the
    /// smallest with warm starts. Results are returned in the order of
    /// `alphas`.
    pub fn fit_path(
        &self,
        target: &PreparedTarget,
        alphas: &[f64],
        l1_ratio: f64,
        opts: SolverOptions,
    ) -> Result<Vec<LinearFit>> {
        let penalties = alphas.iter().map(|&a| PenaltySpec::new(a, l1_ratio)).collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..alphas.len()).collect();
        order.sort_by(|&a, &b| alphas[b].total_cmp(&alphas[a]));
        let mut out: Vec<Option<LinearFit>> = vec![None; alphas.len()];
        let mut warm: Option<Vec<f64>> = None;
        for i in order {
            let sol = self.solve(target, penalties[i], warm.as_deref(), opts, None);
            out[i] = Some(self.to_fit(target, penalties[i], &sol));
            warm = Some(sol.beta);
        }
        Ok(out.into_iter().map(|f| f.expect("every penalty visited")).collect())
    }
}

fn fit_impl(
    x: &Matrix,
    y: &[f64],
    penalty: PenaltySpec,
    opts: SolverOptions,
    trace: Option<&mut Vec<f64>>,
) -> Result<LinearFit> {
    let design = GramDesign::new(x)?;
    let target = design.prepare(y)?;
    let sol = design.solve(&target, penalty, None, opts, trace);
    let mut fit = design.to_fit(&target, penalty, &sol);
    let p = design.p;
    let fitted = (0..design.n).map(|i| target.mean + dot(&design.z[i * p..(i + 1) * p], &sol.beta)).collect();
    fit.fitted = Some(fitted);
    Ok(fit)
}

/// Elastic-net fit of `y` on `X` by coordinate descent.
///
/// A fit that hits `max_iter` is still returned, with `converged = false`.
pub fn fit_elastic_net(x: &Matrix, y: &[f64], penalty: PenaltySpec, opts: SolverOptions) -> Result<LinearFit> {
    fit_impl(x, y, penalty, opts, None)
}

/// Like [`fit_elastic_net`], also returning the objective value before the
/// first sweep and after every sweep.
pub fn fit_elastic_net_traced(
    x: &Matrix,
    y: &[f64],
    penalty: PenaltySpec,
    opts: SolverOptions,
) -> Result<(LinearFit, Vec<f64>)> {
    let mut trace = Vec::new();
    let fit = fit_impl(x, y, penalty, opts, Some(&mut trace))?;
    Ok((fit, trace))
}

pub fn predict(fit: &LinearFit, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != fit.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients, design has {} columns",
            fit.dim(),
            x.cols()
        )));
    }
    let nz: Vec<(usize, f64)> = fit.coefficients.iter().copied().enumerate().filter(|(_, b)| *b != 0.0).collect();
    Ok((0..x.rows())
        .map(|i| {
            let row = x.row(i);
            fit.intercept + nz.iter().map(|&(j, b)| row[j] * b).sum::<f64>()
        })
        .collect())
}

/// Predictions for selected rows of `x` only.
pub fn predict_rows(fit: &LinearFit, x: &Matrix, rows: &[usize]) -> Result<Vec<f64>> {
    if x.cols() != fit.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients, design has {} columns",
            fit.dim(),
            x.cols()
        )));
    }
    let nz: Vec<(usize, f64)> = fit.coefficients.iter().copied().enumerate().filter(|(_, b)| *b != 0.0).collect();
    Ok(rows
        .iter()
        .map(|&i| {
            let row = x.row(i);
            fit.intercept + nz.iter().map(|&(j, b)| row[j] * b).sum::<f64>()
        })
        .collect())
}

pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} observations",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(invalid("rmse of an empty sample"));
    }
    let ss: f64 = predictions.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / predictions.len() as f64).sqrt())
}

/// Largest violation of the elastic-net stationarity conditions, computed
/// from scratch on the standardized scale via explicit residuals.
pub fn kkt_violation(x: &Matrix, y: &[f64], fit: &LinearFit) -> Result<f64> {
    let s = Standardizer::fit(x)?;
    let n = x.rows() as f64;
    let beta_std: Vec<f64> = fit.coefficients.iter().zip(&s.scales).map(|(b, sc)| b * sc).collect();
    let ybar = y.iter().sum::<f64>() / n;
    let resid: Vec<f64> = (0..x.rows())
        .map(|i| {
            let fitted: f64 = x
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| if s.constant[j] { 0.0 } else { (v - s.means[j]) / s.scales[j] * beta_std[j] })
                .sum();
            y[i] - ybar - fitted
        })
        .collect();
    let (l1, l2) = (fit.penalty.l1(), fit.penalty.l2());
    let mut worst: f64 = 0.0;
    for j in 0..x.cols() {
        if s.constant[j] {
            continue;
        }
        let grad = (0..x.rows()).map(|i| (x.get(i, j) - s.means[j]) / s.scales[j] * resid[i]).sum::<f64>() / n
            - l2 * beta_std[j];
        let v = if beta_std[j] != 0.0 { (grad - l1 * beta_std[j].signum()).abs() } else { (grad.abs() - l1).max(0.0) };
        worst = worst.max(v);
    }
    Ok(worst)
}
