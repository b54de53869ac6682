//! Simulation designs and their ground-truth targets.
//!
//! * A recursive SVAR(1) `Yₜ = μ + Φ₁Yₜ₋₁ + P uₜ` with banded, asymmetric
//!   lag dynamics and a lower-triangular impact matrix, optionally with
//!   GARCH(1,1) structural shocks.
//! * An approximately sparse partially linear model with VAR(1) confounders.
//!
//! SVAR coefficient matrices are drawn from the design stream of the seed
//! and are therefore shared by every replication; innovations come from the
//! replication's own stream.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Column, Role, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::numerics::{cholesky_lower, spd_solve, spectral_radius, Matrix, RngStream};

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Policy is the second-to-last variable, outcome the last.
    #[default]
    Correct,
    /// Policy is the middle variable; every other variable except the
    /// outcome still enters as a contemporaneous control.
    Misspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GarchSpec {
    pub omega_g: f64,
    pub alpha_g: f64,
    pub beta_g: f64,
}

impl Default for GarchSpec {
    fn default() -> Self {
        Self { omega_g: 0.05, alpha_g: 0.10, beta_g: 0.85 }
    }
}

impl GarchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_g > 0.0) || self.alpha_g < 0.0 || self.beta_g < 0.0 {
            return Err(invalid("GARCH parameters need omega > 0 and alpha, beta >= 0"));
        }
        if self.alpha_g + self.beta_g >= 1.0 {
            return Err(invalid("GARCH alpha + beta must be below 1"));
        }
        Ok(())
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega_g / (1.0 - self.alpha_g - self.beta_g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvarSpec {
    pub n: usize,
    pub band: usize,
    pub kappa: f64,
    pub alpha_decay: f64,
    pub beta_decay: f64,
    pub delta: f64,
    pub omega: f64,
    pub gamma: f64,
    pub rho_star: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub burn_in: usize,
    pub mu: f64,
    pub ordering: Ordering,
    pub garch: Option<GarchSpec>,
}

impl Default for SvarSpec {
    fn default() -> Self {
        Self {
            n: 51,
            band: 5,
            kappa: 0.3,
            alpha_decay: 1.5,
            beta_decay: 2.0,
            delta: 1.5,
            omega: 0.7,
            gamma: 0.5,
            rho_star: 0.95,
            d_min: 0.8,
            d_max: 1.2,
            burn_in: 300,
            mu: 0.0,
            ordering: Ordering::Correct,
            garch: None,
        }
    }
}

impl SvarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("SVAR needs at least 2 variables, got {}", self.n)));
        }
        if self.ordering == Ordering::Misspecified && self.n < 3 {
            return Err(invalid("misspecified ordering needs at least 3 variables"));
        }
        if !(self.d_min > 0.0) || self.d_max < self.d_min {
            return Err(invalid(format!("need 0 < d_min <= d_max, got [{}, {}]", self.d_min, self.d_max)));
        }
        if !(self.rho_star > 0.0 && self.rho_star < 1.0) {
            return Err(invalid(format!("rho_star must lie in (0, 1), got {}", self.rho_star)));
        }
        if self.burn_in == 0 {
            return Err(invalid("burn-in must be at least 1 to provide the first lag"));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("alpha_decay", self.alpha_decay),
            ("beta_decay", self.beta_decay),
            ("delta", self.delta),
            ("omega", self.omega),
            ("gamma", self.gamma),
            ("mu", self.mu),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        if let Some(g) = &self.garch {
            g.validate()?;
        }
        Ok(())
    }

    /// Zero-based index of the middle variable.
    pub fn middle(&self) -> usize {
        (self.n - 1) / 2
    }

    pub fn policy_index(&self) -> usize {
        match self.ordering {
            Ordering::Correct => self.n - 2,
            Ordering::Misspecified => self.middle(),
        }
    }

    pub fn outcome_index(&self) -> usize {
        self.n - 1
    }
}

/// Draws `(Φ₁, P)`. Entries of `Φ₁` outside the band are exactly zero and
/// `Φ₁` is rescaled so its spectral radius is at most `rho_star`.
///
/// `γ` is written at the impact of the policy shock on the outcome for
/// both orderings, so `(Φ₁, P)` does not depend on the ordering.
pub fn build_svar_matrices(spec: &SvarSpec, rng: &RngStream) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    let n = spec.n;
    let mut g = rng.generator();
    let mut phi = Matrix::from_fn(n, n, |i, j| {
        let gap = i.abs_diff(j);
        if gap > spec.band {
            return 0.0;
        }
        let eta = g.random_range(0.8..1.2);
        let d = gap as f64;
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => spec.kappa * eta,
            std::cmp::Ordering::Greater => spec.kappa / (1.0 + d.powf(spec.alpha_decay)) * eta,
            std::cmp::Ordering::Less => 0.6 * spec.kappa / (1.0 + d.powf(spec.beta_decay)) * eta,
        }
    });
    let rho = spectral_radius(&phi)?;
    if rho > 0.0 {
        phi = phi.scale((spec.rho_star / rho).min(1.0));
    }

    let mut p = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            g.random_range(spec.d_min..=spec.d_max)
        } else if j < i {
            let xi = g.random_range(0.4..1.6);
            spec.omega * xi / (1.0 + ((i - j) as f64).powf(spec.delta))
        } else {
            0.0
        }
    });
    let out = spec.outcome_index();
    let mut data = p.data().to_vec();
    data[out * n + (n - 2)] = spec.gamma;
    if n >= 3 {
        data[out * n + spec.middle()] = spec.gamma;
    }
    p = Matrix::new(n, n, data)?;
    Ok((phi, p))
}

/// Solves `S = A S Aᵀ + Q` by doubling: `S ← S + AₖSAₖᵀ`, `Aₖ₊₁ = Aₖ²`.
pub fn lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.rows() != q.rows() || !q.is_square() {
        return Err(Error::DimensionMismatch("Lyapunov equation needs square, conformable matrices".into()));
    }
    let mut s = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let step = ak.matmul(&s)?.matmul(&ak.transpose())?;
        s = s.add(&step)?;
        let scale = s.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let inc = step.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if inc <= 1e-15 * scale.max(1.0) {
            return Ok(s);
        }
        ak = ak.matmul(&ak)?;
    }
    Err(Error::Numerical("Lyapunov doubling did not converge; is the system stable?".into()))
}

/// Stationary covariance of `Yₜ` for innovations with covariance `PPᵀ`.
pub fn stationary_covariance(phi: &Matrix, p: &Matrix) -> Result<Matrix> {
    lyapunov(phi, &p.matmul(&p.transpose())?)
}

/// Population coefficient on the policy in the linear projection of the
/// outcome on the policy, the remaining contemporaneous variables except
/// the outcome, and one lag of every variable.
pub fn population_projection(phi: &Matrix, p: &Matrix, policy: usize, outcome: usize) -> Result<f64> {
    let n = phi.rows();
    let s0 = stationary_covariance(phi, p)?;
    let s1 = phi.matmul(&s0)?; // Cov(Yₜ, Yₜ₋₁)
                               // Regressor k is (contemporaneous?, index).
    let mut regs: Vec<(bool, usize)> = vec![(true, policy)];
    regs.extend((0..n).filter(|&i| i != policy && i != outcome).map(|i| (true, i)));
    regs.extend((0..n).map(|i| (false, i)));
    let cov = |a: (bool, usize), b: (bool, usize)| -> f64 {
        match (a.0, b.0) {
            (true, true) | (false, false) => s0.get(a.1, b.1),
            (true, false) => s1.get(a.1, b.1),
            (false, true) => s1.get(b.1, a.1),
        }
    };
    let m = regs.len();
    let szz = Matrix::from_fn(m, m, |i, j| cov(regs[i], regs[j]));
    let szy: Vec<f64> = regs.iter().map(|&r| cov(r, (true, outcome))).collect();
    let b = spd_solve(&szz, &szy).map_err(|e| Error::SingularProjection(e.to_string()))?;
    Ok(b[0])
}

/// Impact on the outcome of a shock that moves the policy variable by one
/// unit on impact.
pub fn structural_ratio(p: &Matrix, policy: usize, outcome: usize) -> f64 {
    p.get(outcome, policy) / p.get(policy, policy)
}

/// Ground truth for the estimated coefficient. Under the correct ordering
/// this is the population projection, which coincides with the structural
/// ratio; under the misspecified ordering it is the structural ratio.
pub fn true_theta_svar(phi: &Matrix, p: &Matrix, spec: &SvarSpec) -> Result<f64> {
    let (pol, out) = (spec.policy_index(), spec.outcome_index());
    match spec.ordering {
        Ordering::Correct => population_projection(phi, p, pol, out),
        Ordering::Misspecified => Ok(structural_ratio(p, pol, out)),
    }
}

/// Outcome response at horizons `0..=h_max` to a unit policy-variable
/// impulse: `(Φ₁ʰ P[:, pol] / P[pol, pol])[out]`.
pub fn true_irf_svar(phi: &Matrix, p: &Matrix, policy: usize, outcome: usize, h_max: usize) -> Result<Vec<f64>> {
    let mut v = p.column(policy);
    let scale = v[policy];
    v.iter_mut().for_each(|x| *x /= scale);
    let mut out = Vec::with_capacity(h_max + 1);
    for h in 0..=h_max {
        out.push(v[outcome]);
        if h < h_max {
            v = phi.matvec(&v)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSample {
    pub dataset: TimeSeriesDataset,
    pub theta_true: f64,
    pub irf_true: Option<Vec<f64>>,
    pub fingerprint: String,
}

/// Structural shocks, `len × n`. With GARCH each series follows
/// `hₜ = ω + α uₜ₋₁² + β hₜ₋₁`, started at the unconditional variance.
pub fn structural_shocks(n: usize, len: usize, garch: Option<&GarchSpec>, rng: &mut impl Rng) -> Matrix {
    let mut data: Vec<f64> = (0..n * len).map(|_| StandardNormal.sample(rng)).collect();
    if let Some(g) = garch {
        let mut h = vec![g.unconditional_variance(); n];
        let mut u_prev = vec![0.0; n];
        for t in 0..len {
            for i in 0..n {
                if t > 0 {
                    h[i] = g.omega_g + g.alpha_g * u_prev[i] * u_prev[i] + g.beta_g * h[i];
                }
                assert!(h[i] > 0.0, "GARCH variance must stay positive");
                let u = h[i].sqrt() * data[t * n + i];
                data[t * n + i] = u;
                u_prev[i] = u;
            }
        }
    }
    Matrix::new(len, n, data).expect("finite draws")
}

/// A drawn SVAR: coefficient matrices and their targets.
#[derive(Debug, Clone)]
pub struct SvarModel {
    pub spec: SvarSpec,
    pub phi: Matrix,
    pub p: Matrix,
    pub theta_true: f64,
}

impl SvarModel {
    /// Draws the matrices from the design stream of `seed`.
    pub fn new(spec: &SvarSpec, seed: u64) -> Result<Self> {
        let (phi, p) = build_svar_matrices(spec, &RngStream::design(seed))?;
        let theta_true = true_theta_svar(&phi, &p, spec)?;
        Ok(Self { spec: spec.clone(), phi, p, theta_true })
    }

    pub fn irf(&self, h_max: usize) -> Result<Vec<f64>> {
        true_irf_svar(&self.phi, &self.p, self.spec.policy_index(), self.spec.outcome_index(), h_max)
    }

    /// Simulates `t_len` observations from a zero initial state after
    /// discarding the burn-in. Lags of every variable are appended as
    /// controls, taken from the last burn-in observation for `t = 1`.
    pub fn simulate(&self, t_len: usize, rng: &RngStream) -> Result<SimulatedSample> {
        if t_len < 10 {
            return Err(invalid(format!("SVAR simulation needs T >= 10, got {t_len}")));
        }
        let spec = &self.spec;
        let n = spec.n;
        let total = t_len + spec.burn_in;
        let mut g = rng.generator();
        let u = structural_shocks(n, total, spec.garch.as_ref(), &mut g);
        let phi = self.phi.data();
        let p = self.p.data();
        // Rows 0..=total hold Y₀ = 0, Y₁, ..., Y_total.
        let mut y = vec![0.0; (total + 1) * n];
        for t in 1..=total {
            let (prev, cur) = y.split_at_mut(t * n);
            let prev = &prev[(t - 1) * n..];
            let ut = u.row(t - 1);
            for i in 0..n {
                let ar: f64 = phi[i * n..(i + 1) * n].iter().zip(prev).map(|(a, b)| a * b).sum();
                let shock: f64 = p[i * n..i * n + i + 1].iter().zip(ut).map(|(a, b)| a * b).sum();
                cur[i] = spec.mu + ar + shock;
            }
        }
        let first = spec.burn_in + 1;
        let series = |i: usize, lag: usize| -> Vec<f64> { (first..=total).map(|t| y[(t - lag) * n + i]).collect() };
        let (pol, out) = (spec.policy_index(), spec.outcome_index());
        let mut columns = Vec::with_capacity(2 * n);
        for i in 0..n {
            let role = if i == pol {
                Role::Policy
            } else if i == out {
                Role::Outcome
            } else {
                Role::Control
            };
            columns.push(Column { name: format!("y{}", i + 1), role, values: series(i, 0) });
        }
        for i in 0..n {
            columns.push(Column { name: format!("y{}_lag1", i + 1), role: Role::Control, values: series(i, 1) });
        }
        let dataset = TimeSeriesDataset::with_row_index(columns)?;
        Ok(SimulatedSample {
            dataset,
            theta_true: self.theta_true,
            irf_true: None,
            fingerprint: fingerprint(&(spec, t_len, rng))?,
        })
    }
}

/// One SVAR sample: matrices from the design stream of `rng.seed`,
/// innovations from `rng`.
pub fn simulate_svar(spec: &SvarSpec, t_len: usize, rng: &RngStream) -> Result<SimulatedSample> {
    SvarModel::new(spec, rng.seed)?.simulate(t_len, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlrSpec {
    pub p: usize,
    pub rho: f64,
    pub cor: f64,
    pub theta0: f64,
    pub burn_in: usize,
    /// When false, `β = γ = 0` and the controls are irrelevant.
    pub confounding: bool,
    pub policy_noise_sd: f64,
    pub outcome_noise_sd: f64,
}

impl Default for PlrSpec {
    fn default() -> Self {
        Self {
            p: 100,
            rho: 0.9,
            cor: 0.7,
            theta0: 0.5,
            burn_in: 300,
            confounding: true,
            policy_noise_sd: 1.0,
            outcome_noise_sd: 1.0,
        }
    }
}

impl PlrSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(invalid("PLR needs at least one confounder"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(invalid(format!("|rho| must be below 1, got {}", self.rho)));
        }
        if !(self.cor.abs() < 1.0) {
            return Err(invalid(format!("|cor| must be below 1, got {}", self.cor)));
        }
        if !self.theta0.is_finite() {
            return Err(invalid("theta0 must be finite"));
        }
        if !(self.policy_noise_sd >= 0.0) || !(self.outcome_noise_sd >= 0.0) {
            return Err(invalid("noise standard deviations must be non-negative"));
        }
        Ok(())
    }

    /// `Ωᵢⱼ = cor^|i−j|`.
    pub fn omega(&self) -> Matrix {
        Matrix::from_fn(self.p, self.p, |i, j| self.cor.powi(i.abs_diff(j) as i32))
    }
}

/// `(β, γ)` with `βᵢ = ιᵢ/i²`, `γᵢ = 4ζᵢ/i²`.
pub fn plr_coefficients(spec: &PlrSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !spec.confounding {
        return Ok((vec![0.0; spec.p], vec![0.0; spec.p]));
    }
    let iota = Beta::new(1.0, 0.7).map_err(|e| Error::Numerical(e.to_string()))?;
    let zeta = Beta::new(0.25, 0.8).map_err(|e| Error::Numerical(e.to_string()))?;
    let beta = (1..=spec.p).map(|i| iota.sample(rng) / (i * i) as f64).collect();
    let gamma = (1..=spec.p).map(|i| zeta.sample(rng) * 4.0 / (i * i) as f64).collect();
    Ok((beta, gamma))
}

pub fn simulate_plr(spec: &PlrSpec, t_len: usize, rng: &RngStream) -> Result<SimulatedSample> {
    spec.validate()?;
    if t_len < 10 {
        return Err(invalid(format!("PLR simulation needs T >= 10, got {t_len}")));
    }
    let p = spec.p;
    let chol = cholesky_lower(&spec.omega())?;
    let l = chol.data();
    let mut g = rng.generator();
    let (beta, gamma) = plr_coefficients(spec, &mut g)?;

    let mut x = vec![0.0; p];
    let mut e = vec![0.0; p];
    let mut xs = vec![Vec::with_capacity(t_len); p];
    let mut d = Vec::with_capacity(t_len);
    let mut y = Vec::with_capacity(t_len);
    for t in 0..t_len + spec.burn_in {
        e.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut g));
        for i in 0..p {
            let shock: f64 = l[i * p..i * p + i + 1].iter().zip(&e).map(|(a, b)| a * b).sum();
            x[i] = spec.rho * x[i] + shock;
        }
        let xi: f64 = StandardNormal.sample(&mut g);
        let eps: f64 = StandardNormal.sample(&mut g);
        if t >= spec.burn_in {
            let dt = crate::numerics::dot(&x, &beta) + spec.policy_noise_sd * xi;
            let yt = spec.theta0 * dt + crate::numerics::dot(&x, &gamma) + spec.outcome_noise_sd * eps;
            d.push(dt);
            y.push(yt);
            for (col, v) in xs.iter_mut().zip(&x) {
                col.push(*v);
            }
        }
    }
    let mut columns: Vec<Column> = xs
        .into_iter()
        .enumerate()
        .map(|(i, values)| Column { name: format!("x{}", i + 1), role: Role::Control, values })
        .collect();
    columns.push(Column { name: "d".into(), role: Role::Policy, values: d });
    columns.push(Column { name: "y".into(), role: Role::Outcome, values: y });
    Ok(SimulatedSample {
        dataset: TimeSeriesDataset::with_row_index(columns)?,
        theta_true: spec.theta0,
        irf_true: None,
        fingerprint: fingerprint(&(spec, t_len, rng))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ols_solve;

    fn small(n: usize) -> SvarSpec {
        SvarSpec { n, ..SvarSpec::default() }
    }

    /// Plain fixed-point iteration of the Lyapunov recursion.
    fn lyapunov_iterate(a: &Matrix, q: &Matrix) -> Matrix {
        let mut s = q.clone();
        for _ in 0..100_000 {
            let next = a.matmul(&s).unwrap().matmul(&a.transpose()).unwrap().add(q).unwrap();
            let diff = next.max_abs_diff(&s);
            s = next;
            if diff < 1e-13 {
                break;
            }
        }
        s
    }

    #[test]
    fn matrices_respect_structure() {
        for seed in 0..5 {
            let spec = SvarSpec { n: 30, kappa: 0.5, ..SvarSpec::default() };
            let (phi, p) = build_svar_matrices(&spec, &RngStream::design(seed)).unwrap();
            assert!(spectral_radius(&phi).unwrap() <= 0.95 + 1e-10);
            for i in 0..30usize {
                for j in 0..30 {
                    if i.abs_diff(j) > spec.band {
                        assert_eq!(phi.get(i, j), 0.0);
                    }
                    if j > i {
                        assert_eq!(p.get(i, j), 0.0);
                    }
                }
                assert!((0.8..=1.2).contains(&p.get(i, i)));
            }
            assert_eq!(p.get(29, 28), 0.5);
            assert_eq!(p.get(29, spec.middle()), 0.5);
        }
        assert!(build_svar_matrices(&SvarSpec { d_min: 0.0, ..small(4) }, &RngStream::design(0)).is_err());
    }

    #[test]
    fn doubling_matches_plain_iteration() {
        let spec = small(12);
        let (phi, p) = build_svar_matrices(&spec, &RngStream::design(3)).unwrap();
        let q = p.matmul(&p.transpose()).unwrap();
        let fast = lyapunov(&phi, &q).unwrap();
        let slow = lyapunov_iterate(&phi, &q);
        assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn sample_covariance_matches_lyapunov() {
        let spec = small(5);
        let model = SvarModel::new(&spec, 11).unwrap();
        let sample = model.simulate(200_000, &RngStream::new(11, 0)).unwrap();
        let s = stationary_covariance(&model.phi, &model.p).unwrap();
        let cols: Vec<Vec<f64>> =
            (1..=5).map(|i| sample.dataset.column(&format!("y{i}")).unwrap().values.clone()).collect();
        let t = 200_000.0;
        let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / t).collect();
        for i in 0..5 {
            for j in 0..5 {
                let c = cols[i].iter().zip(&cols[j]).map(|(a, b)| (a - means[i]) * (b - means[j])).sum::<f64>() / t;
                let tol = 0.05 * (s.get(i, i) * s.get(j, j)).sqrt();
                assert!((c - s.get(i, j)).abs() <= tol, "({i},{j}): {c} vs {}", s.get(i, j));
            }
        }
    }

    #[test]
    fn garch_shocks_have_unit_variance() {
        let g = GarchSpec::default();
        assert!((g.unconditional_variance() - 1.0).abs() < 1e-12);
        let mut rng = RngStream::new(5, 0).generator();
        let u = structural_shocks(3, 200_000, Some(&g), &mut rng);
        for i in 0..3 {
            let col = u.column(i);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!((v - 1.0).abs() < 0.05, "series {i}: variance {v}");
        }
        assert!(GarchSpec { alpha_g: 0.5, beta_g: 0.5, ..g }.validate().is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_orderings_share_data() {
        let spec = SvarSpec { garch: Some(GarchSpec::default()), ..small(7) };
        let a = simulate_svar(&spec, 50, &RngStream::new(9, 2)).unwrap();
        let b = simulate_svar(&spec, 50, &RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.len(), 50);
        let mis = SvarSpec { ordering: Ordering::Misspecified, ..spec.clone() };
        let c = simulate_svar(&mis, 50, &RngStream::new(9, 2)).unwrap();
        assert_eq!(a.dataset.index(), c.dataset.index());
        for (x, y) in a.dataset.columns().iter().zip(c.dataset.columns()) {
            assert_eq!((&x.name, &x.values), (&y.name, &y.values));
        }
        assert_eq!(c.dataset.policy_name(), "y4");
        assert_eq!(a.dataset.policy_name(), "y6");
        assert_eq!(a.dataset.outcome_name(), "y7");
        assert_eq!(a.dataset.control_names().len(), 5 + 7);
        // The lag column is the previous contemporaneous value.
        let y3 = &a.dataset.column("y3").unwrap().values;
        let y3l = &a.dataset.column("y3_lag1").unwrap().values;
        assert_eq!(&y3[..49], &y3l[1..]);
    }

    #[test]
    fn projection_equals_structural_ratio_under_correct_ordering() {
        for seed in 0..4 {
            let spec = small(10);
            let model = SvarModel::new(&spec, seed).unwrap();
            let ratio = structural_ratio(&model.p, 8, 9);
            assert!((model.theta_true - ratio).abs() < 1e-8);
        }
    }

    #[test]
    fn two_variable_static_projection() {
        // Φ₁ = 0: y₂ = c u₁ + b u₂, y₁ = a u₁, so the slope is ac/a² = c/a.
        let phi = Matrix::zeros(2, 2);
        let p = Matrix::new(2, 2, vec![0.9, 0.0, 0.45, 1.1]).unwrap();
        let theta = population_projection(&phi, &p, 0, 1).unwrap();
        assert!((theta - 0.5).abs() < 1e-12);
        let spec = SvarSpec { n: 2, kappa: 0.0, ..SvarSpec::default() };
        let model = SvarModel::new(&spec, 0).unwrap();
        assert_eq!(model.phi, Matrix::zeros(2, 2));
        assert!((model.theta_true - model.p.get(1, 0) / model.p.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn misspecified_truth_is_the_structural_ratio() {
        let spec = SvarSpec { ordering: Ordering::Misspecified, ..small(9) };
        let model = SvarModel::new(&spec, 1).unwrap();
        assert_eq!(model.theta_true, 0.5 / model.p.get(4, 4));
        let irf = model.irf(0).unwrap();
        assert!((irf[0] - model.theta_true).abs() < 1e-15);
    }

    #[test]
    fn irf_properties() {
        let model = SvarModel::new(&small(10), 4).unwrap();
        let irf = model.irf(200).unwrap();
        assert!((irf[0] - model.theta_true).abs() < 1e-10);
        let ratio: Vec<f64> = irf.iter().enumerate().map(|(h, v)| v.abs() / 0.95f64.powi(h as i32)).collect();
        let c = ratio[..100].iter().copied().fold(0.0, f64::max);
        assert!(ratio[100..].iter().all(|r| *r <= 2.0 * c));
        assert!(irf[200].abs() < 1e-3);

        let flat = SvarModel::new(&SvarSpec { kappa: 0.0, ..small(6) }, 4).unwrap();
        let irf = flat.irf(5).unwrap();
        assert!(irf[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn plr_coefficient_envelope() {
        let spec = PlrSpec { p: 20, ..PlrSpec::default() };
        for seed in 0..20 {
            let (b, g) = plr_coefficients(&spec, &mut RngStream::new(seed, 0).generator()).unwrap();
            assert!(b[0] <= 1.0 && b[3] <= 1.0 / 16.0);
            assert!(g.iter().enumerate().all(|(i, v)| *v >= 0.0 && *v <= 4.0 / ((i + 1) * (i + 1)) as f64));
        }
    }

    #[test]
    fn plr_without_confounding_recovers_theta() {
        let spec = PlrSpec { p: 5, rho: 0.0, cor: 0.0, confounding: false, ..PlrSpec::default() };
        let s = simulate_plr(&spec, 10_000, &RngStream::new(2, 0)).unwrap();
        let d = s.dataset.policy();
        let y = s.dataset.outcome();
        let x = Matrix::from_fn(d.len(), 2, |i, j| if j == 0 { 1.0 } else { d[i] });
        let b = ols_solve(&x, y).unwrap();
        let resid: Vec<f64> = (0..d.len()).map(|i| y[i] - b[0] - b[1] * d[i]).collect();
        let sigma2 = resid.iter().map(|r| r * r).sum::<f64>() / (d.len() - 2) as f64;
        let dm = d.iter().sum::<f64>() / d.len() as f64;
        let sxx: f64 = d.iter().map(|v| (v - dm) * (v - dm)).sum();
        let se = (sigma2 / sxx).sqrt();
        assert!((b[1] - 0.5).abs() < 3.0 * se, "{} vs 0.5 (se {se})", b[1]);
    }

    #[test]
    fn plr_confounders_are_stationary() {
        let spec = PlrSpec { p: 5, rho: 0.9, cor: 0.7, ..PlrSpec::default() };
        let s = simulate_plr(&spec, 200_000, &RngStream::new(3, 0)).unwrap();
        for i in 1..=5 {
            let v = &s.dataset.column(&format!("x{i}")).unwrap().values;
            let (a, b) = v.split_at(v.len() / 2);
            let va = crate::numerics::population_variance(a);
            let vb = crate::numerics::population_variance(b);
            assert!((va / vb - 1.0).abs() < 0.10, "x{i}: {va} vs {vb}");
        }
        assert_eq!(s.dataset.control_names().len(), 5);
        assert_eq!(s.theta_true, 0.5);
    }
}
