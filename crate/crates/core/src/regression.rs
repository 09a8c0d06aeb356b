//! Kernel-ridge / GP posteriors.
//!
//! [`PosteriorState`] keeps the data and an incrementally extended Cholesky
//! factor of `K + λI`. [`GridPosterior`] tracks mean and covariance on a fixed
//! finite grid, which is what the bandit algorithms actually query; one
//! observation costs `O(N²)` there regardless of how many came before.

use thiserror::Error;

use crate::kernels::{gram_matrix, KernelSpec, JITTER};
use crate::linalg::Cholesky;

pub const DEFAULT_LAMBDA: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("K + lambda*I is not numerically positive definite (pivot {pivot}, residual {value:e})")]
    FactorizationFailure { pivot: usize, value: f64 },
    #[error("points and targets differ in length ({points} vs {targets})")]
    LengthMismatch { points: usize, targets: usize },
    #[error("regularizer must be non-negative and finite, got {0}")]
    BadRegularizer(f64),
}

#[derive(Debug, Clone)]
pub struct PosteriorState {
    kernel: KernelSpec,
    points: Vec<f64>,
    targets: Vec<f64>,
    lambda: f64,
    chol: Cholesky,
    /// `L⁻¹ y`
    whitened: Vec<f64>,
}

impl PosteriorState {
    pub fn empty(kernel: KernelSpec, lambda: f64) -> Result<Self, RegressionError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(RegressionError::BadRegularizer(lambda));
        }
        Ok(Self {
            kernel,
            points: Vec::new(),
            targets: Vec::new(),
            lambda,
            chol: Cholesky::empty(),
            whitened: Vec::new(),
        })
    }

    pub fn fit(
        kernel: KernelSpec,
        points: &[f64],
        targets: &[f64],
        lambda: f64,
    ) -> Result<Self, RegressionError> {
        if points.len() != targets.len() {
            return Err(RegressionError::LengthMismatch {
                points: points.len(),
                targets: targets.len(),
            });
        }
        let mut state = Self::empty(kernel, lambda)?;
        let mut a = gram_matrix(&kernel, points);
        a.add_diagonal(lambda + JITTER);
        state.chol = Cholesky::factor(&a).map_err(|e| RegressionError::FactorizationFailure {
            pivot: e.pivot,
            value: e.value,
        })?;
        state.points = points.to_vec();
        state.targets = targets.to_vec();
        state.whitened = state.chol.forward_solve(targets);
        Ok(state)
    }

    /// Adds one observation by extending the factor with a new row; falls back
    /// to a full refit if the extension loses positive definiteness.
    pub fn update(&self, x: f64, y: f64) -> Result<Self, RegressionError> {
        let mut next = self.clone();
        let cross: Vec<f64> = self.points.iter().map(|&p| self.kernel.between(p, x)).collect();
        let diag = self.kernel.eval(0.0) + self.lambda + JITTER;
        next.points.push(x);
        next.targets.push(y);
        match next.chol.push_row(&cross, diag) {
            Ok(()) => {
                let n = self.points.len();
                let row = next.chol.row(n);
                let s: f64 = row[..n].iter().zip(&self.whitened).map(|(l, w)| l * w).sum();
                next.whitened.push((y - s) / row[n]);
                Ok(next)
            }
            Err(_) => Self::fit(self.kernel, &next.points, &next.targets, self.lambda),
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Posterior mean and variance of `f(x)`.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let kx: Vec<f64> = self.points.iter().map(|&p| self.kernel.between(p, x)).collect();
        let v = self.chol.forward_solve(&kx);
        let mean = v.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
        let var = self.kernel.eval(0.0) - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// `½ log det(I + K/λ)`, using the jittered regulariser when `λ = 0`.
    pub fn info_gain(&self) -> f64 {
        let lam = self.lambda + JITTER;
        let n = self.points.len() as f64;
        (0.5 * self.chol.log_det() - 0.5 * n * lam.ln()).max(0.0)
    }
}

/// Posterior restricted to a fixed grid, updated by rank-1 conditioning.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    grid: Vec<f64>,
    prior_cov: Vec<f64>,
    mean: Vec<f64>,
    cov: Vec<f64>,
    lambda: f64,
    info_gain: f64,
    n_obs: usize,
}

impl GridPosterior {
    pub fn new(kernel: &KernelSpec, grid: Vec<f64>, lambda: f64) -> Result<Self, RegressionError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(RegressionError::BadRegularizer(lambda));
        }
        let n = grid.len();
        let mut cov = Vec::with_capacity(n * n);
        for &a in &grid {
            for &b in &grid {
                cov.push(kernel.between(a, b));
            }
        }
        Ok(Self {
            grid,
            prior_cov: cov.clone(),
            mean: vec![0.0; n],
            cov,
            lambda,
            info_gain: 0.0,
            n_obs: 0,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[i * self.grid.len() + i].max(0.0)
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        self.variance(i).sqrt()
    }

    pub fn info_gain(&self) -> f64 {
        self.info_gain
    }

    /// Conditions on `y = f(grid[i]) + noise`.
    pub fn observe(&mut self, i: usize, y: f64) {
        let n = self.grid.len();
        let lam = self.lambda + JITTER;
        let var_i = self.variance(i);
        let s = var_i + lam;
        let c: Vec<f64> = self.cov[i * n..(i + 1) * n].to_vec();
        let resid = (y - self.mean[i]) / s;
        for (m, ci) in self.mean.iter_mut().zip(&c) {
            *m += ci * resid;
        }
        for (a, ca) in c.iter().enumerate() {
            let f = ca / s;
            if f == 0.0 {
                continue;
            }
            let row = &mut self.cov[a * n..(a + 1) * n];
            for (r, cb) in row.iter_mut().zip(&c) {
                *r -= f * cb;
            }
        }
        self.info_gain += 0.5 * (1.0 + var_i / lam).ln();
        self.n_obs += 1;
    }

    /// Back to the prior.
    pub fn reset(&mut self) {
        self.cov.copy_from_slice(&self.prior_cov);
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.info_gain = 0.0;
        self.n_obs = 0;
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        nearest_index(&self.grid, x)
    }
}

/// Index of the entry of a sorted grid closest to `x` (smallest index on ties).
pub fn nearest_index(grid: &[f64], x: f64) -> usize {
    let pos = grid.partition_point(|&g| g < x);
    if pos == 0 {
        return 0;
    }
    if pos == grid.len() {
        return grid.len() - 1;
    }
    if x - grid[pos - 1] <= grid[pos] - x {
        pos - 1
    } else {
        pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Regularity;

    fn k32() -> KernelSpec {
        KernelSpec::matern(Regularity::THREE_HALVES).unwrap()
    }

    #[test]
    fn empty_state_is_prior() {
        let s = PosteriorState::empty(k32(), DEFAULT_LAMBDA).unwrap();
        assert_eq!(s.predict(0.3), (0.0, 1.0));
        assert_eq!(s.info_gain(), 0.0);
    }

    #[test]
    fn one_point_interpolates_without_regulariser() {
        let s = PosteriorState::fit(k32(), &[0.4], &[1.7], 0.0).unwrap();
        let (m, v) = s.predict(0.4);
        assert!((m - 1.7).abs() < 1e-8);
        assert!(v <= 1e-6);
    }

    #[test]
    fn scalar_info_gain() {
        let s = PosteriorState::fit(k32(), &[0.2], &[0.0], 1.0).unwrap();
        assert!((s.info_gain() - 0.5 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn one_point_shrinkage() {
        let lam = 0.25;
        let s = PosteriorState::empty(k32(), lam).unwrap().update(0.5, 2.0).unwrap();
        let (m, v) = s.predict(0.5);
        assert!((m - 2.0 / (1.0 + lam)).abs() < 1e-9);
        assert!((v - (1.0 - 1.0 / (1.0 + lam))).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            PosteriorState::fit(k32(), &[0.1, 0.2], &[1.0], 0.1),
            Err(RegressionError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn grid_posterior_matches_exact_posterior() {
        let grid: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let mut gp = GridPosterior::new(&k32(), grid.clone(), 0.25).unwrap();
        let mut exact = PosteriorState::empty(k32(), 0.25).unwrap();
        for (t, &(i, y)) in [(3usize, 0.5), (17, -0.2), (3, 0.1), (10, 1.0)].iter().enumerate() {
            gp.observe(i, y);
            exact = exact.update(grid[i], y).unwrap();
            for (j, &x) in grid.iter().enumerate() {
                let (m, v) = exact.predict(x);
                assert!((gp.mean(j) - m).abs() < 1e-9, "step {t}");
                assert!((gp.variance(j) - v).abs() < 1e-9, "step {t}");
            }
            assert!((gp.info_gain() - exact.info_gain()).abs() < 1e-9);
        }
        gp.reset();
        assert_eq!(gp.mean(4), 0.0);
        assert!((gp.variance(4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_index_ties_and_edges() {
        let g = [0.0, 0.5, 1.0];
        assert_eq!(nearest_index(&g, -1.0), 0);
        assert_eq!(nearest_index(&g, 0.25), 0);
        assert_eq!(nearest_index(&g, 0.26), 1);
        assert_eq!(nearest_index(&g, 2.0), 2);
    }
}
