//! Model-selection masters over a nested family of base algorithms:
//! smoothed CORRAL (log-barrier mirror descent with restarts) and regret
//! bound balancing with elimination (RBBE).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base_algorithms::{AlgoError, BanditAlgorithm, CandidateBound};
use crate::kernels::Regularity;
use crate::metrics::{Environment, NoiseStream};

pub const BISECTION_TOL: f64 = 1e-10;
pub const BISECTION_MAX_ITER: usize = 200;

/// Default nested candidates: smoothest first, radii non-decreasing.
pub fn nested_grid(b: f64) -> Vec<(Regularity, f64)> {
    vec![
        (Regularity::FIVE_HALVES, b),
        (Regularity::THREE_HALVES, 2.0 * b),
        (Regularity::HALF, 4.0 * b),
    ]
}

/// `T^{−(1+ν̃)/(1+2ν̃)}`.
pub fn corral_learning_rate(nu_tilde: Regularity, horizon: usize) -> f64 {
    let v = nu_tilde.value();
    (horizon as f64).powf(-(1.0 + v) / (1.0 + 2.0 * v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorralState {
    pub probs: Vec<f64>,
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
    /// Restart count per base.
    pub restarts: Vec<usize>,
}

impl CorralState {
    /// Uniform weights, `η = T^{−(1+ν̃)/(1+2ν̃)}`, `ρ = 2M`, `γ = 1/T`.
    pub fn init(nu_tilde: Regularity, horizon: usize, m: usize) -> Result<Self, AlgoError> {
        if m < 2 {
            return Err(AlgoError::InvalidConfig(format!("CORRAL needs M >= 2 bases, got {m}")));
        }
        if horizon < m {
            return Err(AlgoError::InvalidConfig(format!(
                "CORRAL needs T >= M, got T = {horizon}, M = {m}"
            )));
        }
        let eta = corral_learning_rate(nu_tilde, horizon);
        Ok(Self {
            probs: vec![1.0 / m as f64; m],
            eta: vec![eta; m],
            rho: vec![2.0 * m as f64; m],
            gamma: 1.0 / horizon as f64,
            horizon,
            restarts: vec![0; m],
        })
    }

    pub fn num_bases(&self) -> usize {
        self.probs.len()
    }

    /// Mirror-descent step on the loss estimates, γ-mixing, then threshold checks.
    /// Returns the bases that must be restarted.
    pub fn update(&mut self, loss_hat: &[f64]) -> Result<Vec<usize>, AlgoError> {
        let m = self.num_bases() as f64;
        let mut p = log_barrier_update(&self.probs, &self.eta, loss_hat)?;
        for v in p.iter_mut() {
            *v = (1.0 - self.gamma) * *v + self.gamma / m;
        }
        self.probs = p;
        let inflate = (1.0 / (self.horizon.max(3) as f64).ln()).exp();
        let mut restart = Vec::new();
        for i in 0..self.probs.len() {
            if 1.0 / self.probs[i] > self.rho[i] {
                self.rho[i] = 2.0 / self.probs[i];
                self.eta[i] *= inflate;
                self.restarts[i] += 1;
                restart.push(i);
            }
        }
        Ok(restart)
    }
}

fn barrier_sum(probs: &[f64], eta: &[f64], loss: &[f64], lambda: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..probs.len() {
        let d = 1.0 / probs[j] + eta[j] * (loss[j] - lambda);
        if !(d > 0.0) {
            return f64::INFINITY;
        }
        s += 1.0 / d;
    }
    s
}

/// Solves `Σ 1/(1/p_j + η_j(ℓ_j − λ)) = 1` for `λ` by bisection and returns the
/// renormalised new weights.
pub fn log_barrier_update(probs: &[f64], eta: &[f64], loss: &[f64]) -> Result<Vec<f64>, AlgoError> {
    assert_eq!(probs.len(), eta.len());
    assert_eq!(probs.len(), loss.len());
    let lmin = loss.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = loss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pole = (0..probs.len())
        .map(|j| loss[j] + 1.0 / (eta[j] * probs[j]))
        .fold(f64::INFINITY, f64::min);
    let mut lo = lmin;
    let mut hi = lmax.min(pole);
    let mut lambda = lo;
    let mut err = barrier_sum(probs, eta, loss, lo) - 1.0;
    if err.abs() > BISECTION_TOL {
        let mut found = false;
        for _ in 0..BISECTION_MAX_ITER {
            lambda = 0.5 * (lo + hi);
            let s = barrier_sum(probs, eta, loss, lambda);
            err = s - 1.0;
            if err.abs() <= BISECTION_TOL {
                found = true;
                break;
            }
            if err > 0.0 {
                hi = lambda;
            } else {
                lo = lambda;
            }
            if hi - lo <= f64::EPSILON * lambda.abs().max(1.0) {
                // float resolution reached
                found = err.abs() <= 1e-6;
                break;
            }
        }
        if !found {
            return Err(AlgoError::NormalizerNotFound {
                iterations: BISECTION_MAX_ITER,
            });
        }
    }
    let mut p: Vec<f64> = (0..probs.len())
        .map(|j| 1.0 / (1.0 / probs[j] + eta[j] * (loss[j] - lambda)))
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Affine reward map onto `[0,1]` with a sanity window `[−0.5, 1.5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for RewardRange {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

impl RewardRange {
    /// Loss in `[0,1]`; errors when the reward is far outside the declared range.
    pub fn loss(&self, reward: f64) -> Result<f64, AlgoError> {
        let mapped = (reward - self.lo) / (self.hi - self.lo);
        if !(-0.5..=1.5).contains(&mapped) {
            return Err(AlgoError::RewardOutOfRange { reward, mapped });
        }
        Ok(1.0 - mapped.clamp(0.0, 1.0))
    }
}

/// One round of [`Corral::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorralStep {
    pub base: usize,
    pub action: f64,
    pub reward: f64,
}

pub struct Corral {
    pub state: CorralState,
    bases: Vec<Box<dyn BanditAlgorithm>>,
    plays: Vec<usize>,
    range: RewardRange,
    rng: ChaCha8Rng,
    seed: u64,
    pending: Option<usize>,
    initial: CorralState,
}

impl Corral {
    pub fn new(
        nu_tilde: Regularity,
        horizon: usize,
        bases: Vec<Box<dyn BanditAlgorithm>>,
        range: RewardRange,
        seed: u64,
    ) -> Result<Self, AlgoError> {
        let state = CorralState::init(nu_tilde, horizon, bases.len())?;
        if !(range.hi > range.lo) {
            return Err(AlgoError::InvalidConfig("reward range must have hi > lo".into()));
        }
        Ok(Self {
            initial: state.clone(),
            state,
            plays: vec![0; bases.len()],
            bases,
            range,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            pending: None,
        })
    }

    /// Overrides the initial learning rate for every base.
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.state.eta.iter_mut().for_each(|e| *e = eta);
        self.initial = self.state.clone();
        self
    }

    /// Overrides the mixing coefficient.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.state.gamma = gamma;
        self.initial = self.state.clone();
        self
    }

    fn sample_base(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.state.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.state.probs.len() - 1
    }

    /// Plays one round directly against an environment.
    pub fn step(
        &mut self,
        env: &Environment,
        t: usize,
        noise: &NoiseStream,
    ) -> Result<CorralStep, AlgoError> {
        let x = self.select_action(t);
        let base = self.pending.expect("set by select_action");
        let reward = env.eval(x) + noise.sample(t);
        self.observe(x, reward)?;
        Ok(CorralStep {
            base,
            action: x,
            reward,
        })
    }
}

impl BanditAlgorithm for Corral {
    fn select_action(&mut self, _t: usize) -> f64 {
        let i = self.sample_base();
        self.pending = Some(i);
        self.bases[i].select_action(self.plays[i] + 1)
    }

    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        let i = self.pending.take().expect("observe follows select_action");
        self.bases[i].observe(x, y)?;
        self.plays[i] += 1;
        let loss = self.range.loss(y)?;
        let mut loss_hat = vec![0.0; self.bases.len()];
        loss_hat[i] = loss / self.state.probs[i];
        for j in self.state.update(&loss_hat)? {
            self.bases[j].reset();
            self.plays[j] = 0;
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.state = self.initial.clone();
        self.bases.iter_mut().for_each(|b| b.reset());
        self.plays.iter_mut().for_each(|p| *p = 0);
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.pending = None;
    }

    fn name(&self) -> String {
        format!("corral[{}]", self.bases.len())
    }
}

/// `max{(2θ_j/θ_i)^{1/β_i}·n_j^{β_j/β_i − 1}, 2}`.
pub fn play_ratio_bound(theta_i: f64, theta_j: f64, beta_i: f64, beta_j: f64, n_j: f64) -> f64 {
    let r = (2.0 * theta_j / theta_i).powf(1.0 / beta_i) * n_j.powf(beta_j / beta_i - 1.0);
    r.max(2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbbeState {
    pub active: Vec<bool>,
    pub n: Vec<u64>,
    pub cum_reward: Vec<f64>,
    pub bounds: Vec<CandidateBound>,
    pub delta: f64,
}

impl RbbeState {
    pub fn new(bounds: Vec<CandidateBound>, delta: f64) -> Result<Self, AlgoError> {
        if bounds.is_empty() {
            return Err(AlgoError::InvalidConfig("RBBE needs at least one base".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AlgoError::InvalidConfig(format!("delta must lie in (0,1), got {delta}")));
        }
        let m = bounds.len();
        Ok(Self {
            active: vec![true; m],
            n: vec![0; m],
            cum_reward: vec![0.0; m],
            bounds,
            delta,
        })
    }

    pub fn num_bases(&self) -> usize {
        self.bounds.len()
    }

    pub fn total_plays(&self) -> u64 {
        self.n.iter().sum()
    }

    /// Active base with the smallest presumed regret `bound_i(max(n_i, 1))`.
    pub fn select(&self) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for i in 0..self.num_bases() {
            if !self.active[i] {
                continue;
            }
            let v = self.bounds[i].eval(self.n[i].max(1) as f64);
            if v < best.0 || best.1 == usize::MAX {
                best = (v, i);
            }
        }
        best.1
    }

    /// `√(ln(M·ln(e·t)/δ)/(2n))`.
    pub fn confidence(&self, n: u64, t: usize) -> f64 {
        let m = self.num_bases() as f64;
        let inner = (m * (1.0 + (t.max(1) as f64).ln()) / self.delta).ln().max(0.0);
        (inner / (2.0 * n as f64)).sqrt()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.cum_reward[i] / self.n[i] as f64
    }

    /// Removes every active base whose optimistic value falls below the best
    /// pessimistic value. Bases never played are kept. Returns the removed ones.
    pub fn eliminate(&mut self, t: usize) -> Vec<usize> {
        let m = self.num_bases();
        let best_lcb = (0..m)
            .filter(|&j| self.active[j] && self.n[j] > 0)
            .map(|j| self.mean(j) - self.confidence(self.n[j], t))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut removed = Vec::new();
        for i in 0..m {
            if !self.active[i] || self.n[i] == 0 {
                continue;
            }
            let n = self.n[i] as f64;
            let optimistic =
                self.mean(i) + self.bounds[i].eval(n) / n + self.confidence(self.n[i], t);
            if optimistic < best_lcb {
                removed.push(i);
            }
        }
        // never empty the active set
        if removed.len() == self.active.iter().filter(|a| **a).count() {
            removed.clear();
        }
        for &i in &removed {
            self.active[i] = false;
        }
        removed
    }

    pub fn record(&mut self, i: usize, reward: f64) {
        self.n[i] += 1;
        self.cum_reward[i] += reward;
    }

    /// Largest `(n_i/n_j) / play_ratio_bound(θ_i, θ_j, β_i, β_j, n_j)` over
    /// ordered pairs with `j` active and `n_j ≥ 1`; at most 1 when the bound holds.
    pub fn worst_play_ratio(&self) -> f64 {
        let m = self.num_bases();
        let mut worst: f64 = 0.0;
        for j in 0..m {
            if !self.active[j] || self.n[j] == 0 {
                continue;
            }
            for i in 0..m {
                if i == j {
                    continue;
                }
                let (bi, bj) = (&self.bounds[i], &self.bounds[j]);
                let nj = self.n[j] as f64;
                let cap = play_ratio_bound(bi.theta(), bj.theta(), bi.beta(), bj.beta(), nj);
                worst = worst.max(self.n[i] as f64 / nj / cap);
            }
        }
        worst
    }
}

pub struct Rbbe {
    pub state: RbbeState,
    bases: Vec<Box<dyn BanditAlgorithm>>,
    initial: RbbeState,
    pending: Option<usize>,
    round: usize,
    /// `(round, removed bases)` for every elimination.
    pub eliminations: Vec<(usize, Vec<usize>)>,
    audit: bool,
    /// Largest normalised play ratio seen at any audited step.
    pub worst_ratio_seen: f64,
}

impl Rbbe {
    pub fn new(
        bounds: Vec<CandidateBound>,
        bases: Vec<Box<dyn BanditAlgorithm>>,
        delta: f64,
    ) -> Result<Self, AlgoError> {
        if bounds.len() != bases.len() {
            return Err(AlgoError::InvalidConfig("one candidate bound per base".into()));
        }
        let state = RbbeState::new(bounds, delta)?;
        Ok(Self {
            initial: state.clone(),
            state,
            bases,
            pending: None,
            round: 0,
            eliminations: Vec::new(),
            audit: false,
            worst_ratio_seen: 0.0,
        })
    }

    /// Checks the play-ratio bound after every step.
    pub fn with_audit(mut self) -> Self {
        self.audit = true;
        self
    }
}

impl BanditAlgorithm for Rbbe {
    fn select_action(&mut self, t: usize) -> f64 {
        self.round += 1;
        let removed = self.state.eliminate(t);
        if !removed.is_empty() {
            self.eliminations.push((self.round, removed));
        }
        let i = self.state.select();
        self.pending = Some(i);
        let local = self.state.n[i] as usize + 1;
        self.bases[i].select_action(local)
    }

    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        let i = self.pending.take().expect("observe follows select_action");
        self.bases[i].observe(x, y)?;
        self.state.record(i, y);
        if self.audit {
            self.worst_ratio_seen = self.worst_ratio_seen.max(self.state.worst_play_ratio());
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.state = self.initial.clone();
        self.bases.iter_mut().for_each(|b| b.reset());
        self.pending = None;
        self.round = 0;
        self.eliminations.clear();
        self.worst_ratio_seen = 0.0;
    }

    fn name(&self) -> String {
        format!("rbbe[{}]", self.bases.len())
    }
}
