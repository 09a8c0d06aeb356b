//! Sweep execution: environments × algorithms × horizons × replicates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use kbandit::adversary::{admissible_l1_range, construct_instance};
use kbandit::base_algorithms::*;
use kbandit::kernels::{KernelSpec, Regularity};
use kbandit::metrics::*;
use kbandit::model_selection::{nested_grid, Corral, Rbbe, RewardRange};
use kbandit::seeding::mix_seed;

use crate::config::{AlgoKind, AlgoSpec, Auto, Config, EnvKind, EnvSpec};
use crate::CliError;

/// Points used to estimate `min f` for the automatic reward range.
const RANGE_PROBE: usize = 4096;

/// Builds (and for adversaries, certifies) one environment.
pub fn build_env(spec: &EnvSpec) -> Result<Environment, CliError> {
    match spec.kind {
        EnvKind::KernelExpansion {
            nu,
            lengthscale,
            centers,
            norm,
            seed,
        } => {
            let k = match lengthscale {
                Auto::Auto => KernelSpec::matern(nu),
                Auto::Value(l) => KernelSpec::matern_with_lengthscale(nu, l),
            }
            .map_err(|e| CliError::Usage(format!("env `{}`: {e}", spec.id)))?;
            let f = KernelExpansion::random(k, centers, norm, seed);
            Ok(Environment::kernel_expansion(spec.id.clone(), f, spec.noise))
        }
        EnvKind::Adversary {
            m1,
            m2,
            l1,
            l2,
            r_tilde,
            s,
            cert_grid,
        } => {
            let l1 = match l1 {
                Auto::Auto => {
                    let (lo, hi) = admissible_l1_range(m1, m2, l2, r_tilde)?;
                    0.5 * (lo + hi)
                }
                Auto::Value(v) => v,
            };
            let mut inst = construct_instance(m1, m2, l1, l2, r_tilde)?;
            if s > inst.params.m {
                return Err(CliError::Usage(format!(
                    "env `{}`: s = {s} but the instance has M = {}",
                    spec.id, inst.params.m
                )));
            }
            let report = inst.certify(cert_grid);
            if !report.certified {
                return Err(CliError::Constraint(format!(
                    "env `{}` failed certification: {}",
                    spec.id,
                    report.failures.join("; ")
                )));
            }
            Ok(Environment::adversary(&inst, s, spec.noise).with_meta("env_id", &spec.id))
        }
    }
}

fn algo_config(spec: &AlgoSpec, nu: Regularity, b: f64, horizon: usize) -> AlgoConfig {
    let grid = match spec.grid {
        Auto::Auto => default_grid_size(horizon),
        Auto::Value(g) => g,
    };
    let mut c = AlgoConfig::new(nu, b, grid);
    c.delta = spec.delta;
    c.ucb_scale = spec.ucb_scale;
    c.lambda = spec.lambda;
    c.lengthscale = match spec.lengthscale {
        Auto::Auto => None,
        Auto::Value(l) => Some(l),
    };
    c
}

fn single(
    spec: &AlgoSpec,
    kind: AlgoKind,
    nu: Regularity,
    b: f64,
    horizon: usize,
    seed: u64,
) -> Result<Box<dyn BanditAlgorithm>, AlgoError> {
    Ok(match kind {
        AlgoKind::GpUcb => Box::new(GpUcb::new(algo_config(spec, nu, b, horizon))?),
        AlgoKind::SupKernelUcb if spec.doubling => {
            let s = spec.clone();
            let factory: AlgoFactory = Arc::new(move |h, _| {
                Ok(Box::new(SupKernelUcb::new(algo_config(&s, nu, b, h), h)?) as Box<dyn BanditAlgorithm>)
            });
            Box::new(Doubling::new(factory, horizon, seed)?)
        }
        AlgoKind::SupKernelUcb => Box::new(SupKernelUcb::new(algo_config(spec, nu, b, horizon), horizon)?),
        AlgoKind::Uniform => Box::new(UniformRandom::new(seed)),
        AlgoKind::Corral | AlgoKind::Rbbe => unreachable!("masters are built by build_algo"),
    })
}

/// `[min f − 3σ, max f + 3σ]`, with `min f` probed on a grid.
pub fn auto_reward_range(env: &Environment) -> RewardRange {
    let lo = (0..=RANGE_PROBE)
        .map(|i| env.eval(i as f64 / RANGE_PROBE as f64))
        .fold(f64::INFINITY, f64::min);
    let s = 3.0 * env.noise.std_dev();
    let (lo, hi) = (lo - s, env.f_star + s);
    if hi > lo {
        RewardRange { lo, hi }
    } else {
        RewardRange { lo: lo - 0.5, hi: hi + 0.5 }
    }
}

/// A fresh algorithm for one `(horizon, seed)` cell.
pub fn build_algo(
    spec: &AlgoSpec,
    env: &Environment,
    horizon: usize,
    seed: u64,
) -> Result<Box<dyn BanditAlgorithm>, AlgoError> {
    if !spec.kind.is_master() {
        return single(spec, spec.kind, spec.nu, spec.b, horizon, seed);
    }
    let grid = nested_grid(spec.b);
    let bases = grid
        .iter()
        .enumerate()
        .map(|(i, &(nu, b))| single(spec, spec.base, nu, b, horizon, mix_seed(&[seed, i as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    if spec.kind == AlgoKind::Corral {
        let range = match spec.reward_range {
            Auto::Auto => auto_reward_range(env),
            Auto::Value(r) => RewardRange { lo: r.0, hi: r.1 },
        };
        Ok(Box::new(Corral::new(spec.nu_tilde, horizon, bases, range, seed)?))
    } else {
        let bounds = grid
            .iter()
            .map(|&(nu, b)| CandidateBound {
                nu,
                b,
                delta: spec.delta,
                num_bases: grid.len(),
                constant: spec.bound_constant,
            })
            .collect();
        Ok(Box::new(Rbbe::new(bounds, bases, spec.delta)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env_id: String,
    pub algo_id: String,
    pub horizon: usize,
    pub seed: u64,
    pub final_regret: f64,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SummaryRow>,
    /// `(env_id, algo_id, fit)` in config order; `None` with fewer than 4 horizons.
    pub fits: Vec<(String, String, Option<ExponentFit>)>,
    pub summary_csv: String,
    /// `(file name, contents)` per trace, empty when traces are off.
    pub traces: Vec<(String, String)>,
}

struct Cell {
    env: usize,
    algo: usize,
    horizon: usize,
    replicate: usize,
}

/// Seed of replicate `r`; shared by every cell with that replicate index.
pub fn replicate_seed(seed_base: u64, r: usize) -> u64 {
    mix_seed(&[seed_base, r as u64])
}

/// Runs every cell on `workers` threads, then assembles outputs in config order.
pub fn run_sweep(cfg: &Config) -> Result<SweepOutput, CliError> {
    let exp = &cfg.experiment;
    if cfg.envs.is_empty() || cfg.algos.is_empty() {
        return Err(CliError::Usage("config needs at least one env and one algo".into()));
    }
    let envs: Vec<Environment> = cfg.envs.iter().map(build_env).collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for e in 0..envs.len() {
        for a in 0..cfg.algos.len() {
            for &horizon in &exp.horizons {
                for replicate in 0..exp.replicates {
                    cells.push(Cell {
                        env: e,
                        algo: a,
                        horizon,
                        replicate,
                    });
                }
            }
        }
    }
    type Outcome = Result<(f64, Option<String>), AlgoError>;
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_cell = |c: &Cell| -> Outcome {
        let seed = replicate_seed(exp.seed_base, c.replicate);
        let mut algo = build_algo(&cfg.algos[c.algo], &envs[c.env], c.horizon, seed)?;
        let tr = run_episode(algo.as_mut(), &envs[c.env], c.horizon, seed)?;
        Ok((tr.final_regret(), exp.traces.then(|| tr.to_csv())))
    };
    let workers = exp.workers.max(1).min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = run_cell(&cells[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().unwrap();

    let mut finals = Vec::with_capacity(cells.len());
    let mut traces = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        let (regret, csv) = r.expect("every cell ran").map_err(|e| {
            CliError::from_algo(e, &format!("{} / {}", cfg.envs[c.env].id, cfg.algos[c.algo].id))
        })?;
        finals.push(regret);
        if let Some(csv) = csv {
            let name = format!(
                "{}__{}__T{}__rep{}.csv",
                cfg.envs[c.env].id, cfg.algos[c.algo].id, c.horizon, c.replicate
            );
            traces.push((name, csv));
        }
    }

    // cells are laid out env-major, then algo, horizon, replicate
    let per_group = exp.horizons.len() * exp.replicates;
    let mut fits = Vec::new();
    let mut rows = Vec::with_capacity(cells.len());
    for (g, chunk) in finals.chunks(per_group).enumerate() {
        let (e, a) = (g / cfg.algos.len(), g % cfg.algos.len());
        let hs: Vec<f64> = exp.horizons.iter().map(|&h| h as f64).collect();
        let means: Vec<f64> = chunk
            .chunks(exp.replicates)
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect();
        let fit = estimate_exponent(&hs, &means).ok();
        for (k, &regret) in chunk.iter().enumerate() {
            rows.push(SummaryRow {
                env_id: cfg.envs[e].id.clone(),
                algo_id: cfg.algos[a].id.clone(),
                horizon: exp.horizons[k / exp.replicates],
                seed: replicate_seed(exp.seed_base, k % exp.replicates),
                final_regret: regret,
                slope: fit.map(|f| f.slope),
                stderr: fit.map(|f| f.stderr),
            });
        }
        fits.push((cfg.envs[e].id.clone(), cfg.algos[a].id.clone(), fit));
    }
    let summary_csv = summary_csv(&rows);
    Ok(SweepOutput {
        rows,
        fits,
        summary_csv,
        traces,
    })
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    let mut out = String::from("env_id,algo_id,T,seed,final_regret,slope,stderr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.env_id,
            r.algo_id,
            r.horizon,
            r.seed,
            fmt_float(r.final_regret),
            opt(r.slope),
            opt(r.stderr)
        );
    }
    out
}

/// Writes `summary.csv` and `traces/*.csv` under `dir`.
pub fn write_outputs(out: &SweepOutput, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), &out.summary_csv)?;
    if !out.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for (name, csv) in &out.traces {
            fs::write(tdir.join(name), csv)?;
        }
    }
    Ok(())
}
