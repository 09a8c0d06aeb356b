//! Environments, noise, regret traces, exponent fitting, theory rates and the
//! bin-occupancy trade-off experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::adversary::AdversaryInstance;
use crate::base_algorithms::{AlgoError, AlgoFactory, BanditAlgorithm};
use crate::kernels::{gram_matrix, KernelSpec, Regularity};
use crate::seeding::{hash_str, mix_seed};

/// Resolution of the grid used to locate `f*`.
pub const CERT_GRID_LOG2: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("need at least 4 horizons, got {0}")]
    TooFewHorizons(usize),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("instance is not certified")]
    UncertifiedInstance,
    #[error(transparent)]
    Algo(#[from] AlgoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// `±scale` with equal probability.
    Rademacher { scale: f64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Gaussian { sigma: 0.5 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::Gaussian { sigma: 0.0 }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::Uniform { half_width } => half_width / 3f64.sqrt(),
            NoiseModel::Rademacher { scale } => scale,
        }
    }
}

/// Noise keyed by `(experiment, seed, t)`: the draw at step `t` does not
/// depend on what was drawn before or on scheduling.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    key: u64,
    model: NoiseModel,
}

impl NoiseStream {
    pub fn new(experiment: u64, seed: u64, model: NoiseModel) -> Self {
        Self {
            key: mix_seed(&[experiment, seed]),
            model,
        }
    }

    pub fn sample(&self, t: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.key, t as u64]));
        match self.model {
            NoiseModel::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                }
            }
            NoiseModel::Uniform { half_width } => rng.gen_range(-1.0..=1.0) * half_width,
            NoiseModel::Rademacher { scale } => {
                if rng.gen::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }
}

/// Bins `H_1..H_M` tiling `[0, 1/2)` plus `H_0 = [1/2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinLayout {
    pub m: usize,
}

impl BinLayout {
    pub fn bin_of(&self, x: f64) -> usize {
        if x >= 0.5 {
            0
        } else {
            ((x * 2.0 * self.m as f64).floor() as usize + 1).clamp(1, self.m)
        }
    }
}

type RewardFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Environment {
    pub id: String,
    reward_fn: RewardFn,
    pub f_star: f64,
    pub x_star: f64,
    pub noise: NoiseModel,
    pub bins: Option<BinLayout>,
    pub metadata: BTreeMap<String, String>,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("id", &self.id)
            .field("f_star", &self.f_star)
            .field("x_star", &self.x_star)
            .field("noise", &self.noise)
            .field("bins", &self.bins)
            .finish()
    }
}

impl Environment {
    /// Locates the maximiser on a `2^16` grid plus `extra` candidate points,
    /// then polishes it with a golden-section search in the neighbouring cells.
    pub fn new(
        id: impl Into<String>,
        reward_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
        noise: NoiseModel,
        extra: &[f64],
    ) -> Self {
        let f: RewardFn = Arc::new(reward_fn);
        let (x_star, f_star) = locate_max(&*f, extra);
        Self {
            id: id.into(),
            reward_fn: f,
            f_star,
            x_star,
            noise,
            bins: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_bins(mut self, bins: BinLayout) -> Self {
        self.bins = Some(bins);
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.reward_fn)(x)
    }

    /// Key feeding the noise stream.
    pub fn experiment_key(&self) -> u64 {
        hash_str(&self.id)
    }

    pub fn kernel_expansion(id: impl Into<String>, f: KernelExpansion, noise: NoiseModel) -> Self {
        let meta_nu = f.kernel.nu().to_string();
        let meta_b = f.rkhs_norm();
        Self::new(id, move |x| f.eval(x), noise, &[])
            .with_meta("space", "rkhs")
            .with_meta("nu", meta_nu)
            .with_meta("B", meta_b)
    }

    /// Environment for `φ_s` of an adversarial instance (`s = 0` is the smooth one).
    pub fn adversary(instance: &AdversaryInstance, s: usize, noise: NoiseModel) -> Self {
        let inst = instance.clone();
        let m = instance.params.m;
        let peaks: Vec<f64> = (0..=m).map(|k| instance.midpoint(k)).collect();
        Self::new(
            format!("adversary-s{s}"),
            move |x| inst.phi(s, x),
            noise,
            &peaks,
        )
        .with_bins(BinLayout { m })
        .with_meta("space", "sobolev")
        .with_meta("s", s)
    }
}

fn locate_max(f: &dyn Fn(f64) -> f64, extra: &[f64]) -> (f64, f64) {
    let n = 1usize << CERT_GRID_LOG2;
    let h = 1.0 / n as f64;
    let mut best = (0.0, f(0.0));
    for i in 1..=n {
        let x = i as f64 * h;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    for &x in extra {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    // golden-section polish around the incumbent
    let (mut a, mut b) = ((best.0 - h).max(0.0), (best.0 + h).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v > best.1 {
        best = (x, v);
    }
    best
}

/// `f = Σ αᵢ k(·, cᵢ)`, an exact member of the RKHS with norm `√(αᵀKα)`.
#[derive(Debug, Clone)]
pub struct KernelExpansion {
    pub kernel: KernelSpec,
    pub centers: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl KernelExpansion {
    /// Random centres in `[0,1]` and Gaussian weights, rescaled to norm exactly `b`.
    pub fn random(kernel: KernelSpec, n_centers: usize, b: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..n_centers).map(|_| rng.gen::<f64>()).collect();
        let alphas: Vec<f64> = (0..n_centers)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut f = Self {
            kernel,
            centers,
            alphas,
        };
        let scale = b / f.rkhs_norm();
        f.alphas.iter_mut().for_each(|a| *a *= scale);
        f
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.alphas)
            .map(|(&c, &a)| a * self.kernel.between(x, c))
            .sum()
    }

    pub fn rkhs_norm(&self) -> f64 {
        let k = gram_matrix(&self.kernel, &self.centers);
        let n = self.centers.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += self.alphas[i] * k.get(i, j) * self.alphas[j];
            }
        }
        q.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub cum_regret: Vec<f64>,
    /// Bin index per step, when the environment has bins.
    pub bins: Option<Vec<usize>>,
    pub bin_counts: BTreeMap<usize, usize>,
    pub seed: u64,
}

impl RegretTrace {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn bin_count(&self, s: usize) -> usize {
        self.bin_counts.get(&s).copied().unwrap_or(0)
    }

    /// `t,x,y,regret_cum,bin` with `bin = -1` when there are no bins.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,regret_cum,bin\n");
        for t in 0..self.horizon() {
            let bin = self
                .bins
                .as_ref()
                .map_or(-1, |b| b[t] as i64);
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t + 1,
                fmt_float(self.actions[t]),
                fmt_float(self.rewards[t]),
                fmt_float(self.cum_regret[t]),
                bin
            );
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Plays `algo` for `horizon` steps against `env`.
pub fn run_episode(
    algo: &mut dyn BanditAlgorithm,
    env: &Environment,
    horizon: usize,
    seed: u64,
) -> Result<RegretTrace, AlgoError> {
    let noise = NoiseStream::new(env.experiment_key(), seed, env.noise);
    let mut trace = RegretTrace {
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        cum_regret: Vec::with_capacity(horizon),
        bins: env.bins.map(|_| Vec::with_capacity(horizon)),
        bin_counts: BTreeMap::new(),
        seed,
    };
    let mut cum = 0.0;
    for t in 1..=horizon {
        let x = algo.select_action(t).clamp(0.0, 1.0);
        let fx = env.eval(x);
        let y = fx + noise.sample(t);
        algo.observe(x, y)?;
        cum += (env.f_star - fx).max(0.0);
        trace.actions.push(x);
        trace.rewards.push(y);
        trace.cum_regret.push(cum);
        if let Some(layout) = env.bins {
            let b = layout.bin_of(x);
            trace.bins.as_mut().unwrap().push(b);
            *trace.bin_counts.entry(b).or_insert(0) += 1;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// OLS of `log(regret)` on `log(T)`.
pub fn estimate_exponent(horizons: &[f64], regrets: &[f64]) -> Result<ExponentFit, MetricsError> {
    if horizons.len() != regrets.len() {
        return Err(MetricsError::InvalidArgs(
            "horizons and regrets differ in length".into(),
        ));
    }
    if horizons.len() < 4 {
        return Err(MetricsError::TooFewHorizons(horizons.len()));
    }
    if let Some(r) = regrets.iter().find(|r| !(**r > 0.0)) {
        return Err(MetricsError::DegenerateFit(format!("non-positive regret {r}")));
    }
    if horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(MetricsError::DegenerateFit("non-positive horizon".into()));
    }
    let xs: Vec<f64> = horizons.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateFit("all horizons equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryRate {
    Minimax(Regularity),
    /// Adaptivity lower bound for `(ν₁, ν₂)` with `ν₁ ≤ ν₂`.
    Lower(Regularity, Regularity),
    Corral {
        nu_tilde: Regularity,
        nu_star: Regularity,
    },
    Rbbe(Regularity),
}

/// Regret exponents as exact rationals.
pub fn theory_exponent(kind: TheoryRate) -> Result<Ratio<i64>, MetricsError> {
    let one = Ratio::from_integer(1);
    let two = Ratio::from_integer(2);
    Ok(match kind {
        TheoryRate::Minimax(nu) => {
            let v = nu.ratio();
            (v + one) / (two * v + one)
        }
        TheoryRate::Lower(nu1, nu2) => {
            if nu1 > nu2 {
                return Err(MetricsError::InvalidArgs(format!(
                    "lower bound needs nu1 <= nu2, got nu1 = {nu1}, nu2 = {nu2}"
                )));
            }
            let (a, b) = (nu1.ratio(), nu2.ratio());
            (a * b + two * b + one) / ((a + one) * (two * b + one))
        }
        TheoryRate::Corral { nu_tilde, nu_star } => {
            let (a, b) = (nu_tilde.ratio(), nu_star.ratio());
            let first = (one + a) / (one + two * a);
            let second = (one + two * a + a * b) / ((one + two * a) * (one + b));
            first.max(second)
        }
        TheoryRate::Rbbe(nu) => {
            let v = nu.ratio();
            (one + Ratio::from_integer(4) * v + two * v * v) / ((one + two * v) * (one + two * v))
        }
    })
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffReport {
    pub horizon: usize,
    pub seeds: usize,
    pub m: usize,
    pub delta_peak: f64,
    /// Mean regret on `φ₀`.
    pub rtilde_measured: f64,
    /// Mean regret on `φ_s`, index `s−1`.
    pub mean_regret_s: Vec<f64>,
    /// Mean `N_{H_s}(T)` when playing `φ₀`, index `s−1`.
    pub mean_occupancy_phi0: Vec<f64>,
    /// Mean `N_{H_s}(T)` when playing `φ_s`, index `s−1`.
    pub mean_occupancy_phi_s: Vec<f64>,
    /// Traces violating `R_{T,s} ≥ (Δ/2)(T − N_{H_s}(T))`.
    pub accounting_violations: usize,
    pub traces_checked: usize,
    pub mean_over_s_regret: f64,
    /// `(ΔT/2)(1/2 − √(Δ·R̃_measured/M))`.
    pub bound: f64,
    pub slack: f64,
    pub bound_holds: bool,
}

/// Runs an algorithm on `φ₀` and on every `φ_s` of a certified instance.
pub fn tradeoff_experiment(
    instance: &AdversaryInstance,
    factory: &AlgoFactory,
    horizon: usize,
    seeds: &[u64],
    noise: NoiseModel,
    slack: f64,
) -> Result<TradeoffReport, MetricsError> {
    if !instance.certified {
        return Err(MetricsError::UncertifiedInstance);
    }
    if seeds.is_empty() || horizon == 0 {
        return Err(MetricsError::InvalidArgs("need seeds and T >= 1".into()));
    }
    let m = instance.params.m;
    let delta = instance.params.delta;
    let n_seeds = seeds.len() as f64;
    let mut r0 = 0.0;
    let mut occ0 = vec![0.0; m];
    let mut rs = vec![0.0; m];
    let mut occs = vec![0.0; m];
    let mut violations = 0;
    let mut checked = 0;

    let env0 = Environment::adversary(instance, 0, noise);
    for &seed in seeds {
        let mut algo = factory(horizon, seed)?;
        let tr = run_episode(algo.as_mut(), &env0, horizon, seed)?;
        r0 += tr.final_regret() / n_seeds;
        for s in 1..=m {
            occ0[s - 1] += tr.bin_count(s) as f64 / n_seeds;
        }
    }
    for s in 1..=m {
        let env = Environment::adversary(instance, s, noise);
        for &seed in seeds {
            let mut algo = factory(horizon, seed)?;
            let tr = run_episode(algo.as_mut(), &env, horizon, seed)?;
            let n_hs = tr.bin_count(s) as f64;
            let r = tr.final_regret();
            let floor = 0.5 * delta * (horizon as f64 - n_hs);
            checked += 1;
            if r < floor - 1e-9 * (1.0 + floor) {
                violations += 1;
            }
            rs[s - 1] += r / n_seeds;
            occs[s - 1] += n_hs / n_seeds;
        }
    }
    let mean_over_s = rs.iter().sum::<f64>() / m as f64;
    let bound = 0.5 * delta * horizon as f64 * (0.5 - (delta * r0 / m as f64).sqrt());
    let bound_holds = mean_over_s >= bound - slack * bound.abs();
    Ok(TradeoffReport {
        horizon,
        seeds: seeds.len(),
        m,
        delta_peak: delta,
        rtilde_measured: r0,
        mean_regret_s: rs,
        mean_occupancy_phi0: occ0,
        mean_occupancy_phi_s: occs,
        accounting_violations: violations,
        traces_checked: checked,
        mean_over_s_regret: mean_over_s,
        bound,
        slack,
        bound_holds,
    })
}
