//! Penalty selection from a per-fold RMSE curve.
//!
//! Besides plain RMSE minimization this implements the "Goldilocks zone"
//! rule: slide a window of `S` adjacent grid points along the curve, score
//! each window by its min-max normalized variance plus its min-max
//! normalized mean, and pick the RMSE minimizer inside the best window.
//! A flat region of low error is preferred over an isolated dip.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_WINDOW: usize = 3;

/// Strictly increasing, equally spaced penalty values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TuningGrid {
    lambdas: Vec<f64>,
}

impl TuningGrid {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(invalid("tuning grid is empty"));
        }
        if lambdas.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("tuning grid values must be finite and non-negative"));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tuning grid must be strictly increasing"));
        }
        if lambdas.len() > 2 {
            let step = lambdas[1] - lambdas[0];
            let scale = lambdas.last().unwrap().abs().max(step);
            if lambdas.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-10 * scale) {
                return Err(invalid("tuning grid must be equally spaced"));
            }
        }
        Ok(Self { lambdas })
    }

    /// `m` equally spaced values from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, m: usize) -> Result<Self> {
        match m {
            0 => Err(invalid("tuning grid needs at least one value")),
            1 => Self::new(vec![lo]),
            _ => {
                if !(hi > lo) {
                    return Err(invalid(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
                }
                let step = (hi - lo) / (m - 1) as f64;
                Self::new((0..m).map(|i| if i + 1 == m { hi } else { lo + step * i as f64 }).collect())
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// The grid multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid("grid scale must be positive"));
        }
        Self::new(self.lambdas.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f64>> for TuningGrid {
    type Error = crate::error::Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TuningGrid> for Vec<f64> {
    fn from(g: TuningGrid) -> Self {
        g.lambdas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Rmse,
    Goldilocks,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Rmse => "rmse",
            Criterion::Goldilocks => "goldilocks",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTrace {
    pub grid: TuningGrid,
    pub rmse_per_lambda: Vec<f64>,
    pub chosen_window: Option<Range<usize>>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStat {
    /// Population variance of the RMSE values in the window.
    pub variance: f64,
    pub mean: f64,
}

pub fn window_stats(rmse: &[f64], window: usize) -> Result<Vec<WindowStat>> {
    if window < 2 {
        return Err(invalid(format!("window size must be at least 2, got {window}")));
    }
    if window > rmse.len() {
        return Err(invalid(format!("window size {window} exceeds grid length {}", rmse.len())));
    }
    Ok(rmse
        .windows(window)
        .map(|w| {
            let s = window as f64;
            let mean = w.iter().sum::<f64>() / s;
            let variance = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s;
            WindowStat { variance, mean }
        })
        .collect())
}

/// Min-max normalization; a degenerate vector maps to all zeros.
fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Index of the first minimum.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn check(rmse: &[f64], grid: &TuningGrid) -> Result<()> {
    if rmse.len() != grid.len() {
        return Err(invalid(format!("{} RMSE values for a grid of {}", rmse.len(), grid.len())));
    }
    if rmse.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::Error::NonFinite("RMSE curve".into()));
    }
    Ok(())
}

pub fn rmse_select(rmse: &[f64], grid: &TuningGrid) -> Result<TuningTrace> {
    check(rmse, grid)?;
    let i = argmin(rmse);
    Ok(TuningTrace {
        grid: grid.clone(),
        rmse_per_lambda: rmse.to_vec(),
        chosen_window: None,
        chosen_index: i,
        chosen_lambda: grid.values()[i],
        criterion: Criterion::Rmse,
    })
}

/// Window scores `Ṽⱼ + R̃ⱼ`, one per window.
pub fn window_scores(rmse: &[f64], window: usize) -> Result<Vec<f64>> {
    let stats = window_stats(rmse, window)?;
    let v = min_max(&stats.iter().map(|s| s.variance).collect::<Vec<_>>());
    let r = min_max(&stats.iter().map(|s| s.mean).collect::<Vec<_>>());
    Ok(v.iter().zip(&r).map(|(a, b)| a + b).collect())
}

pub fn goldilocks_select(rmse: &[f64], grid: &TuningGrid, window: usize) -> Result<TuningTrace> {
    check(rmse, grid)?;
    let scores = window_scores(rmse, window)?;
    let j = argmin(&scores);
    let i = j + argmin(&rmse[j..j + window]);
    Ok(TuningTrace {
        grid: grid.clone(),
        rmse_per_lambda: rmse.to_vec(),
        chosen_window: Some(j..j + window),
        chosen_index: i,
        chosen_lambda: grid.values()[i],
        criterion: Criterion::Goldilocks,
    })
}

pub fn select(criterion: Criterion, rmse: &[f64], grid: &TuningGrid, window: usize) -> Result<TuningTrace> {
    match criterion {
        Criterion::Rmse => rmse_select(rmse, grid),
        Criterion::Goldilocks => goldilocks_select(rmse, grid, window),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(m: usize) -> TuningGrid {
        TuningGrid::linspace(0.1, 0.1 * m as f64, m).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn window_stat_examples() {
        let s = window_stats(&[6.0, 6.0, 6.0], 3).unwrap();
        assert_eq!(s, vec![WindowStat { variance: 0.0, mean: 6.0 }]);
        let s = window_stats(&[10.0, 8.0, 6.0], 3).unwrap();
        assert!(close(s[0].variance, 8.0 / 3.0) && close(s[0].mean, 8.0));
        let s = window_stats(&[10.0, 8.0, 6.0, 6.0, 6.0], 3).unwrap();
        let v: Vec<f64> = s.iter().map(|w| w.variance).collect();
        let m: Vec<f64> = s.iter().map(|w| w.mean).collect();
        for (a, b) in v.iter().zip([8.0 / 3.0, 8.0 / 9.0, 0.0]) {
            assert!(close(*a, b));
        }
        for (a, b) in m.iter().zip([8.0, 20.0 / 3.0, 6.0]) {
            assert!(close(*a, b));
        }
        assert!(window_stats(&[1.0, 2.0], 3).is_err());
        assert!(window_stats(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn goldilocks_example() {
        let rmse = [10.0, 8.0, 6.0, 6.0, 6.0];
        let scores = window_scores(&rmse, 3).unwrap();
        for (a, b) in scores.iter().zip([2.0, 2.0 / 3.0, 0.0]) {
            assert!(close(*a, b));
        }
        let t = goldilocks_select(&rmse, &grid(5), 3).unwrap();
        assert_eq!(t.chosen_window, Some(2..5));
        assert_eq!(t.chosen_index, 2);
        assert!(close(t.chosen_lambda, 0.3));
    }

    #[test]
    fn flat_curve_picks_first_window() {
        let t = goldilocks_select(&[2.0; 6], &grid(6), 3).unwrap();
        assert_eq!(t.chosen_window, Some(0..3));
        assert_eq!(t.chosen_index, 0);
    }

    #[test]
    fn linear_increase_picks_leftmost() {
        let rmse: Vec<f64> = (0..8).map(|i| 1.0 + 0.5 * i as f64).collect();
        let t = goldilocks_select(&rmse, &grid(8), 3).unwrap();
        let scores = window_scores(&rmse, 3).unwrap();
        let brute = (0..scores.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(brute, 0);
        assert_eq!(t.chosen_window, Some(0..3));
    }

    #[test]
    fn rmse_select_examples() {
        assert_eq!(rmse_select(&[3.0, 1.0, 2.0], &grid(3)).unwrap().chosen_index, 1);
        assert_eq!(rmse_select(&[1.0; 4], &grid(4)).unwrap().chosen_index, 0);
        assert!(rmse_select(&[1.0; 3], &grid(4)).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(TuningGrid::new(vec![0.1, 0.3, 0.2]).is_err());
        assert!(TuningGrid::new(vec![0.1, 0.2, 0.4]).is_err());
        assert!(TuningGrid::new(vec![]).is_err());
        let g = TuningGrid::linspace(0.001, 1.0, 10_000).unwrap();
        assert_eq!(g.len(), 10_000);
        assert_eq!(*g.values().last().unwrap(), 1.0);
        let json = serde_json::to_string(&grid(3)).unwrap();
        assert_eq!(serde_json::from_str::<TuningGrid>(&json).unwrap(), grid(3));
        assert!(serde_json::from_str::<TuningGrid>("[0.3, 0.1]").is_err());
    }

    proptest! {
        #[test]
        fn rmse_select_matches_scan(v in prop::collection::vec(0.0f64..10.0, 1..30)) {
            let t = rmse_select(&v, &grid(v.len())).unwrap();
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] < v[best] { best = i; }
            }
            prop_assert_eq!(t.chosen_index, best);
        }

        #[test]
        fn chosen_lambda_minimizes_within_window(v in prop::collection::vec(0.0f64..10.0, 3..30)) {
            let t = goldilocks_select(&v, &grid(v.len()), 3).unwrap();
            let w = t.chosen_window.clone().unwrap();
            prop_assert!(w.contains(&t.chosen_index));
            let m = v[w].iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(v[t.chosen_index], m);
        }

        #[test]
        fn affine_invariance(
            v in prop::collection::vec(0.0f64..10.0, 3..30),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            // Keep ties exact under the transform: quantize to a coarse lattice.
            let v: Vec<f64> = v.iter().map(|x| (x * 4.0).round() / 4.0).collect();
            let a = (a * 4.0).round().max(1.0) / 4.0;
            let b = (b * 4.0).round() / 4.0;
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let g = grid(v.len());
            let s1 = window_scores(&v, 3).unwrap();
            let s2 = window_scores(&w, 3).unwrap();
            for (x, y) in s1.iter().zip(&s2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            // Window choice is stable unless two scores are within rounding.
            let t1 = goldilocks_select(&v, &g, 3).unwrap();
            let t2 = goldilocks_select(&w, &g, 3).unwrap();
            let j1 = t1.chosen_window.clone().unwrap().start;
            let near_tie = s1.iter().enumerate().any(|(j, s)| j != j1 && (s - s1[j1]).abs() < 1e-9);
            if !near_tie {
                prop_assert_eq!(t1.chosen_window, t2.chosen_window);
                prop_assert_eq!(t1.chosen_index, t2.chosen_index);
            }
        }

        #[test]
        fn single_window_reduces_to_rmse(v in prop::collection::vec(0.0f64..10.0, 2..20)) {
            let g = grid(v.len());
            let a = goldilocks_select(&v, &g, v.len()).unwrap();
            let b = rmse_select(&v, &g).unwrap();
            prop_assert_eq!(a.chosen_lambda, b.chosen_lambda);
        }
    }
}
