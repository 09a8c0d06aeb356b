//! Base bandit algorithms over a uniform discretisation of `[0,1]`:
//! GP-UCB, a Sup-style SupKernelUCB, the doubling wrapper, and a couple of
//! trivial baselines used by tests and the trade-off experiment.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec, Regularity};
use crate::metrics::{run_episode, Environment, RegretTrace};
use crate::regression::{nearest_index, GridPosterior, PosteriorState, RegressionError};
use crate::seeding::mix_seed;

/// Upper cap on the default grid size (memory is `O(N²)` per posterior).
pub const MAX_DEFAULT_GRID: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgoError {
    #[error("horizon {0} too small (need T >= 2)")]
    HorizonTooSmall(usize),
    #[error("invalid algorithm config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("reward {reward} maps to {mapped} outside [-0.5, 1.5]; check the declared reward range")]
    RewardOutOfRange { reward: f64, mapped: f64 },
    #[error("log-barrier normaliser not found after {iterations} bisection steps")]
    NormalizerNotFound { iterations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub nu_input: Regularity,
    pub b_input: f64,
    pub grid_size: usize,
    pub delta: f64,
    pub ucb_scale: f64,
    pub lambda: f64,
    /// `None` means the default `√(2ν)`.
    pub lengthscale: Option<f64>,
}

impl AlgoConfig {
    pub fn new(nu_input: Regularity, b_input: f64, grid_size: usize) -> Self {
        Self {
            nu_input,
            b_input,
            grid_size,
            delta: 0.05,
            ucb_scale: 0.5,
            lambda: crate::regression::DEFAULT_LAMBDA,
            lengthscale: None,
        }
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        if self.grid_size < 2 {
            return Err(AlgoError::InvalidConfig(format!(
                "grid_size must be >= 2, got {}",
                self.grid_size
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(AlgoError::InvalidConfig(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.b_input > 0.0) || !(self.ucb_scale > 0.0) {
            return Err(AlgoError::InvalidConfig(
                "B_input and ucb_scale must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(AlgoError::InvalidConfig("lambda must be non-negative".into()));
        }
        self.kernel()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelSpec, KernelError> {
        match self.lengthscale {
            Some(l) => KernelSpec::matern_with_lengthscale(self.nu_input, l),
            None => KernelSpec::matern(self.nu_input),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_size)
    }
}

/// `min(4T, 1024)` uniform points (at least 2).
pub fn default_grid_size(horizon: usize) -> usize {
    (4 * horizon).clamp(2, MAX_DEFAULT_GRID)
}

/// `N` equispaced points `i/(N−1)`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

pub trait BanditAlgorithm: Send {
    fn select_action(&mut self, t: usize) -> f64;
    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError>;
    fn reset(&mut self);
    fn name(&self) -> String;
}

/// Builds a fresh instance for a given horizon and seed.
pub type AlgoFactory =
    Arc<dyn Fn(usize, u64) -> Result<Box<dyn BanditAlgorithm>, AlgoError> + Send + Sync>;

/// `B + c·√(2(γ + 1 + ln(1/δ)))`.
pub fn gpucb_width(cfg: &AlgoConfig, info_gain: f64) -> f64 {
    cfg.b_input + cfg.ucb_scale * (2.0 * (info_gain + 1.0 + (1.0 / cfg.delta).ln())).sqrt()
}

/// GP-UCB choice on the configured grid from an exact posterior.
pub fn gpucb_select(state: &PosteriorState, cfg: &AlgoConfig, t: usize) -> f64 {
    debug_assert!(t >= 1);
    let w = gpucb_width(cfg, state.info_gain());
    let grid = cfg.grid();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, &x) in grid.iter().enumerate() {
        let (m, v) = state.predict(x);
        let u = m + w * v.sqrt();
        if u > best.0 {
            best = (u, i);
        }
    }
    grid[best.1]
}

/// GP-UCB driven by a grid posterior.
pub struct GpUcb {
    cfg: AlgoConfig,
    post: GridPosterior,
}

impl GpUcb {
    pub fn new(cfg: AlgoConfig) -> Result<Self, AlgoError> {
        cfg.validate()?;
        let post = GridPosterior::new(&cfg.kernel()?, cfg.grid(), cfg.lambda)?;
        Ok(Self { cfg, post })
    }

    pub fn posterior(&self) -> &GridPosterior {
        &self.post
    }

    pub fn ucb(&self, i: usize) -> f64 {
        let w = gpucb_width(&self.cfg, self.post.info_gain());
        self.post.mean(i) + w * self.post.std_dev(i)
    }
}

impl BanditAlgorithm for GpUcb {
    fn select_action(&mut self, _t: usize) -> f64 {
        let w = gpucb_width(&self.cfg, self.post.info_gain());
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..self.post.len() {
            let u = self.post.mean(i) + w * self.post.std_dev(i);
            if u > best.0 {
                best = (u, i);
            }
        }
        self.post.grid()[best.1]
    }

    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        let i = self.post.nearest_index(x);
        self.post.observe(i, y);
        Ok(())
    }

    fn reset(&mut self) {
        self.post.reset();
    }

    fn name(&self) -> String {
        format!("gpucb(nu={},B={})", self.cfg.nu_input, self.cfg.b_input)
    }
}

/// One elimination event inside a SupKernelUCB round.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationEvent {
    pub round: usize,
    pub stage: usize,
    pub survivors: Vec<usize>,
    pub eliminated: Vec<usize>,
}

/// Sup-style elimination over a uniform grid with stage-local posteriors.
///
/// Each round walks stages `s = 1..=S`, `S = ⌈log₂ T⌉`, starting from the
/// full grid. Widths are `β·σ_s` with `β = B + c·√(2 ln(2TN/δ))`:
/// if every width is below `1/√T` the round exploits (argmax UCB, not
/// recorded); if every width is below `2^{-s}` arms whose UCB is more than
/// `2·2^{-s}` under the best LCB are dropped and the round descends; otherwise
/// the widest arm is played and recorded in stage `s`.
pub struct SupKernelUcb {
    cfg: AlgoConfig,
    kernel: KernelSpec,
    grid: Vec<f64>,
    horizon: usize,
    stages: Vec<Option<GridPosterior>>,
    beta: f64,
    pending: Option<(usize, usize)>,
    active: Vec<usize>,
    round: usize,
    audit: Option<Vec<EliminationEvent>>,
}

impl SupKernelUcb {
    pub fn new(cfg: AlgoConfig, horizon: usize) -> Result<Self, AlgoError> {
        cfg.validate()?;
        if horizon < 2 {
            return Err(AlgoError::HorizonTooSmall(horizon));
        }
        let n_stages = (horizon as f64).log2().ceil().max(1.0) as usize;
        let n = cfg.grid_size as f64;
        let beta = cfg.b_input
            + cfg.ucb_scale * (2.0 * (2.0 * horizon as f64 * n / cfg.delta).ln()).sqrt();
        Ok(Self {
            kernel: cfg.kernel()?,
            grid: cfg.grid(),
            cfg,
            horizon,
            stages: vec![None; n_stages],
            beta,
            pending: None,
            active: Vec::new(),
            round: 0,
            audit: None,
        })
    }

    /// Records every elimination for later inspection.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Vec::new());
        self
    }

    pub fn audit(&self) -> Option<&[EliminationEvent]> {
        self.audit.as_deref()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Observations recorded per stage.
    pub fn stage_counts(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| s.as_ref().map_or(0, |p| p.n_obs()))
            .collect()
    }

    fn stage(&mut self, s: usize) -> &GridPosterior {
        if self.stages[s].is_none() {
            // lambda already validated, grid fixed
            self.stages[s] = Some(
                GridPosterior::new(&self.kernel, self.grid.clone(), self.cfg.lambda)
                    .expect("validated config"),
            );
        }
        self.stages[s].as_ref().unwrap()
    }

    fn argmax_ucb(post: &GridPosterior, active: &[usize], beta: f64) -> usize {
        let mut best = (f64::NEG_INFINITY, active[0]);
        for &i in active {
            let u = post.mean(i) + beta * post.std_dev(i);
            if u > best.0 {
                best = (u, i);
            }
        }
        best.1
    }
}

impl BanditAlgorithm for SupKernelUcb {
    fn select_action(&mut self, _t: usize) -> f64 {
        self.round += 1;
        let beta = self.beta;
        let exploit_width = 1.0 / (self.horizon as f64).sqrt();
        let mut active = std::mem::take(&mut self.active);
        active.clear();
        active.extend(0..self.grid.len());
        let n_stages = self.stages.len();
        let mut choice = None;
        for s in 0..n_stages {
            let threshold = 0.5f64.powi(s as i32 + 1);
            let post = self.stage(s);
            let mut widest = (f64::NEG_INFINITY, active[0]);
            for &i in &active {
                let w = beta * post.std_dev(i);
                if w > widest.0 {
                    widest = (w, i);
                }
            }
            if widest.0 <= exploit_width {
                choice = Some((Self::argmax_ucb(post, &active, beta), None));
                break;
            }
            if widest.0 > threshold {
                choice = Some((widest.1, Some(s)));
                break;
            }
            let ucb = |i: usize| post.mean(i) + beta * post.std_dev(i);
            let best_lcb = active
                .iter()
                .map(|&i| post.mean(i) - beta * post.std_dev(i))
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = best_lcb - 2.0 * threshold;
            let before = active.len();
            let mut dropped = Vec::new();
            active.retain(|&i| {
                let keep = ucb(i) >= cut;
                if !keep {
                    dropped.push(i);
                }
                keep
            });
            if before != active.len() {
                if let Some(log) = self.audit.as_mut() {
                    log.push(EliminationEvent {
                        round: self.round,
                        stage: s + 1,
                        survivors: active.clone(),
                        eliminated: dropped,
                    });
                }
            }
        }
        let (idx, stage) = choice.unwrap_or_else(|| {
            let last = self.stage(n_stages - 1);
            (Self::argmax_ucb(last, &active, beta), None)
        });
        self.active = active;
        self.pending = stage.map(|s| (s, idx));
        self.grid[idx]
    }

    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        if let Some((s, idx)) = self.pending.take() {
            debug_assert_eq!(nearest_index(&self.grid, x), idx);
            self.stages[s]
                .as_mut()
                .expect("stage allocated at selection")
                .observe(idx, y);
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.stages.iter_mut().for_each(|s| *s = None);
        self.pending = None;
        self.round = 0;
        if let Some(log) = self.audit.as_mut() {
            log.clear();
        }
    }

    fn name(&self) -> String {
        format!("supkernelucb(nu={},B={})", self.cfg.nu_input, self.cfg.b_input)
    }
}

/// Runs SupKernelUCB for `horizon` steps on `env`.
pub fn supkernelucb_run(
    env: &Environment,
    cfg: &AlgoConfig,
    horizon: usize,
    seed: u64,
) -> Result<RegretTrace, AlgoError> {
    let mut algo = SupKernelUcb::new(cfg.clone(), horizon)?;
    run_episode(&mut algo, env, horizon, seed)
}

/// Epoch lengths `1, 2, 4, …` covering exactly `total` steps.
pub fn doubling_epochs(total: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut covered = 0;
    let mut len = 1;
    while covered < total {
        let l = len.min(total - covered);
        out.push(l);
        covered += l;
        len *= 2;
    }
    out
}

/// Restarts a fresh instance on epochs of doubling length.
///
/// Within the budget the final epoch is truncated; past it the wrapper keeps
/// doubling, so it can be run for any number of steps.
pub struct Doubling {
    factory: AlgoFactory,
    budget: usize,
    seed: u64,
    epoch: usize,
    epoch_start: usize,
    epoch_len: usize,
    steps: usize,
    inner: Option<Box<dyn BanditAlgorithm>>,
    label: String,
}

impl Doubling {
    pub fn new(factory: AlgoFactory, budget: usize, seed: u64) -> Result<Self, AlgoError> {
        if budget < 1 {
            return Err(AlgoError::HorizonTooSmall(budget));
        }
        let label = factory(2, seed)?.name();
        Ok(Self {
            factory,
            budget,
            seed,
            epoch: 0,
            epoch_start: 0,
            epoch_len: 0,
            steps: 0,
            inner: None,
            label,
        })
    }

    /// Number of epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn start_epoch(&mut self) -> Result<(), AlgoError> {
        let nominal = 1usize << self.epoch;
        let len = if self.steps < self.budget {
            nominal.min(self.budget - self.steps)
        } else {
            nominal
        };
        self.epoch_start = self.steps;
        self.epoch_len = len;
        // fixed-horizon algorithms need T >= 2, so a 1-step epoch still gets horizon 2
        self.inner = Some((self.factory)(len.max(2), mix_seed(&[self.seed, self.epoch as u64]))?);
        self.epoch += 1;
        Ok(())
    }
}

impl BanditAlgorithm for Doubling {
    fn select_action(&mut self, _t: usize) -> f64 {
        if self.inner.is_none() || self.steps >= self.epoch_start + self.epoch_len {
            self.start_epoch().expect("factory succeeded for the first epoch");
        }
        let local = self.steps - self.epoch_start + 1;
        self.inner.as_mut().unwrap().select_action(local)
    }

    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        self.steps += 1;
        self.inner
            .as_mut()
            .expect("observe follows select_action")
            .observe(x, y)
    }

    fn reset(&mut self) {
        self.epoch = 0;
        self.epoch_start = 0;
        self.epoch_len = 0;
        self.steps = 0;
        self.inner = None;
    }

    fn name(&self) -> String {
        format!("doubling[{}]", self.label)
    }
}

pub fn doubling_wrap(factory: AlgoFactory, budget: usize, seed: u64) -> Result<Doubling, AlgoError> {
    Doubling::new(factory, budget, seed)
}

/// Growth exponent `(ν+1)/(2ν+1)` of the minimax regret rate.
pub fn minimax_beta(nu: Regularity) -> f64 {
    (nu.value() + 1.0) / (2.0 * nu.value() + 1.0)
}

/// Presumed regret bound of one candidate base, consumed by the balancing master.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateBound {
    pub nu: Regularity,
    pub b: f64,
    pub delta: f64,
    pub num_bases: usize,
    pub constant: f64,
}

impl CandidateBound {
    pub fn beta(&self) -> f64 {
        minimax_beta(self.nu)
    }

    /// `C·√B`.
    pub fn theta(&self) -> f64 {
        self.constant * self.b.sqrt()
    }

    pub fn eval(&self, t: f64) -> f64 {
        candidate_bound(self.nu, self.b, t, self.delta, self.num_bases, self.constant)
    }
}

/// `C·√B·t^β·ln(e·t)·√(ln(M·ln(e·t)/δ))`.
pub fn candidate_bound(
    nu: Regularity,
    b: f64,
    t: f64,
    delta: f64,
    num_bases: usize,
    constant: f64,
) -> f64 {
    let t = t.max(1.0);
    let log_et = 1.0 + t.ln();
    let inner = ((num_bases as f64) * log_et / delta).ln().max(0.0);
    constant * b.sqrt() * t.powf(minimax_beta(nu)) * log_et * inner.sqrt()
}

/// Always plays the same point.
pub struct FixedAction {
    pub x: f64,
}

impl BanditAlgorithm for FixedAction {
    fn select_action(&mut self, _t: usize) -> f64 {
        self.x
    }
    fn observe(&mut self, _x: f64, _y: f64) -> Result<(), AlgoError> {
        Ok(())
    }
    fn reset(&mut self) {}
    fn name(&self) -> String {
        format!("fixed({})", self.x)
    }
}

/// Uniform play on `[0,1]`.
pub struct UniformRandom {
    seed: u64,
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl BanditAlgorithm for UniformRandom {
    fn select_action(&mut self, _t: usize) -> f64 {
        self.rng.gen::<f64>()
    }
    fn observe(&mut self, _x: f64, _y: f64) -> Result<(), AlgoError> {
        Ok(())
    }
    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }
    fn name(&self) -> String {
        "uniform".into()
    }
}
