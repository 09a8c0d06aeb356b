//! Flat sectioned `key = value` experiment files.
//!
//! ```text
//! [experiment]
//! horizons = 256, 512, 1024, 2048
//! replicates = 20
//!
//! [env.smooth]
//! kind = kernel_expansion
//! nu = 3/2
//!
//! [algo.sup]
//! kind = supkernelucb
//! doubling = true
//! ```
//!
//! `#` starts a comment. Every key has a default except `kind`.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use kbandit::kernels::Regularity;
use kbandit::metrics::NoiseModel;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, field `{field}`: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub field: String,
    pub message: String,
}

fn err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub horizons: Vec<usize>,
    pub replicates: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Write one CSV per trace besides the summary.
    pub traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            horizons: vec![256],
            replicates: 1,
            seed_base: 0,
            output_dir: PathBuf::from("out"),
            workers: 1,
            traces: true,
        }
    }
}

/// `auto` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: fmt::Display> fmt::Display for Auto<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => v.fmt(f),
        }
    }
}

impl<T: FromStr> FromStr for Auto<T> {
    type Err = T::Err;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Auto::Auto)
        } else {
            s.parse().map(Auto::Value)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    /// `f = Σ αᵢ k(·, cᵢ)` with random centres, rescaled to RKHS norm `norm`.
    KernelExpansion {
        nu: Regularity,
        lengthscale: Auto<f64>,
        centers: usize,
        norm: f64,
        seed: u64,
    },
    /// `φ_s` of a constructed and certified lower-bound instance.
    Adversary {
        m1: u32,
        m2: u32,
        l1: Auto<f64>,
        l2: f64,
        r_tilde: f64,
        s: usize,
        cert_grid: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: String,
    pub kind: EnvKind,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoKind {
    GpUcb,
    SupKernelUcb,
    Uniform,
    Corral,
    Rbbe,
}

impl AlgoKind {
    fn as_str(self) -> &'static str {
        match self {
            AlgoKind::GpUcb => "gpucb",
            AlgoKind::SupKernelUcb => "supkernelucb",
            AlgoKind::Uniform => "uniform",
            AlgoKind::Corral => "corral",
            AlgoKind::Rbbe => "rbbe",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gpucb" => AlgoKind::GpUcb,
            "supkernelucb" => AlgoKind::SupKernelUcb,
            "uniform" => AlgoKind::Uniform,
            "corral" => AlgoKind::Corral,
            "rbbe" => AlgoKind::Rbbe,
            _ => return None,
        })
    }

    pub fn is_master(self) -> bool {
        matches!(self, AlgoKind::Corral | AlgoKind::Rbbe)
    }
}

/// `[lo, hi]` for CORRAL's reward-to-loss map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range(pub f64, pub f64);

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

impl FromStr for Range {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
        let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        if !(hi > lo) {
            return Err("need lo < hi".into());
        }
        Ok(Range(lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSpec {
    pub id: String,
    pub kind: AlgoKind,
    pub nu: Regularity,
    pub b: f64,
    pub grid: Auto<usize>,
    pub lambda: f64,
    pub delta: f64,
    pub ucb_scale: f64,
    pub lengthscale: Auto<f64>,
    /// Wrap SupKernelUCB bases in the doubling trick.
    pub doubling: bool,
    /// Base learner for masters; candidates come from the nested grid around `b`.
    pub base: AlgoKind,
    pub nu_tilde: Regularity,
    pub bound_constant: f64,
    pub reward_range: Auto<Range>,
}

impl AlgoSpec {
    pub fn new(id: &str, kind: AlgoKind) -> Self {
        Self {
            id: id.to_string(),
            kind,
            nu: Regularity::THREE_HALVES,
            b: 1.0,
            grid: Auto::Auto,
            lambda: 1.0,
            delta: 0.05,
            ucb_scale: 0.5,
            lengthscale: Auto::Auto,
            doubling: false,
            base: AlgoKind::GpUcb,
            nu_tilde: Regularity::THREE_HALVES,
            bound_constant: 1.0,
            reward_range: Auto::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub envs: Vec<EnvSpec>,
    pub algos: Vec<AlgoSpec>,
}

pub fn format_noise(n: &NoiseModel) -> String {
    match *n {
        NoiseModel::Gaussian { sigma } if sigma == 0.0 => "none".into(),
        NoiseModel::Gaussian { sigma } => format!("gaussian:{sigma}"),
        NoiseModel::Uniform { half_width } => format!("uniform:{half_width}"),
        NoiseModel::Rademacher { scale } => format!("rademacher:{scale}"),
    }
}

pub fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    if s == "none" {
        return Ok(NoiseModel::none());
    }
    let (name, v) = s.split_once(':').ok_or("expected none or <family>:<scale>")?;
    let v: f64 = v.parse().map_err(|e| format!("{e}"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err("scale must be finite and non-negative".into());
    }
    match name {
        "gaussian" => Ok(NoiseModel::Gaussian { sigma: v }),
        "uniform" => Ok(NoiseModel::Uniform { half_width: v }),
        "rademacher" => Ok(NoiseModel::Rademacher { scale: v }),
        _ => Err(format!("unknown noise family `{name}`")),
    }
}

enum Section {
    None,
    Experiment,
    Env(usize),
    Algo(usize),
}

/// Raw `key = value` pairs of one `[env.*]` / `[algo.*]` block, resolved once `kind` is known.
struct Block {
    line: usize,
    id: String,
    pairs: Vec<(usize, String, String)>,
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| err(line, key, format!("cannot parse `{v}`: {e}")))
}

fn positive(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = value(line, key, v)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(err(line, key, format!("must be positive, got {v}")));
    }
    Ok(x)
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(line, key, format!("expected true or false, got `{v}`"))),
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut exp = ExperimentConfig::default();
        let mut env_blocks: Vec<Block> = Vec::new();
        let mut algo_blocks: Vec<Block> = Vec::new();
        let mut section = Section::None;
        let mut seen_experiment = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, "section", "missing `]`"))?
                    .trim();
                section = if name == "experiment" {
                    if seen_experiment {
                        return Err(err(line, "experiment", "duplicate section"));
                    }
                    seen_experiment = true;
                    Section::Experiment
                } else if let Some(id) = name.strip_prefix("env.") {
                    if !valid_id(id) {
                        return Err(err(line, "env", format!("invalid id `{id}`")));
                    }
                    if env_blocks.iter().any(|b| b.id == id) {
                        return Err(err(line, "env", format!("duplicate id `{id}`")));
                    }
                    env_blocks.push(Block {
                        line,
                        id: id.to_string(),
                        pairs: Vec::new(),
                    });
                    Section::Env(env_blocks.len() - 1)
                } else if let Some(id) = name.strip_prefix("algo.") {
                    if !valid_id(id) {
                        return Err(err(line, "algo", format!("invalid id `{id}`")));
                    }
                    if algo_blocks.iter().any(|b| b.id == id) {
                        return Err(err(line, "algo", format!("duplicate id `{id}`")));
                    }
                    algo_blocks.push(Block {
                        line,
                        id: id.to_string(),
                        pairs: Vec::new(),
                    });
                    Section::Algo(algo_blocks.len() - 1)
                } else {
                    return Err(err(line, "section", format!("unknown section `{name}`")));
                };
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(line, content, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            match section {
                Section::None => return Err(err(line, k, "key outside any section")),
                Section::Experiment => set_experiment(&mut exp, line, k, v)?,
                Section::Env(j) => env_blocks[j].pairs.push((line, k.into(), v.into())),
                Section::Algo(j) => algo_blocks[j].pairs.push((line, k.into(), v.into())),
            }
        }
        if exp.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err(0, "horizons", "must be strictly increasing"));
        }
        let envs = env_blocks.iter().map(resolve_env).collect::<Result<_, _>>()?;
        let algos = algo_blocks.iter().map(resolve_algo).collect::<Result<_, _>>()?;
        Ok(Config {
            experiment: exp,
            envs,
            algos,
        })
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let e = &self.experiment;
        let mut out = String::from("[experiment]\n");
        let hs: Vec<String> = e.horizons.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "horizons = {}", hs.join(", "));
        let _ = writeln!(out, "replicates = {}", e.replicates);
        let _ = writeln!(out, "seed_base = {}", e.seed_base);
        let _ = writeln!(out, "output_dir = {}", e.output_dir.display());
        let _ = writeln!(out, "workers = {}", e.workers);
        let _ = writeln!(out, "traces = {}", e.traces);
        for env in &self.envs {
            let _ = writeln!(out, "\n[env.{}]", env.id);
            match &env.kind {
                EnvKind::KernelExpansion {
                    nu,
                    lengthscale,
                    centers,
                    norm,
                    seed,
                } => {
                    out.push_str("kind = kernel_expansion\n");
                    let _ = writeln!(out, "nu = {nu}");
                    let _ = writeln!(out, "lengthscale = {lengthscale}");
                    let _ = writeln!(out, "centers = {centers}");
                    let _ = writeln!(out, "norm = {norm}");
                    let _ = writeln!(out, "seed = {seed}");
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
                    out.push_str("kind = adversary\n");
                    let _ = writeln!(out, "m1 = {m1}");
                    let _ = writeln!(out, "m2 = {m2}");
                    let _ = writeln!(out, "L1 = {l1}");
                    let _ = writeln!(out, "L2 = {l2}");
                    let _ = writeln!(out, "rtilde = {r_tilde}");
                    let _ = writeln!(out, "s = {s}");
                    let _ = writeln!(out, "cert_grid = {cert_grid}");
                }
            }
            let _ = writeln!(out, "noise = {}", format_noise(&env.noise));
        }
        for a in &self.algos {
            let _ = writeln!(out, "\n[algo.{}]", a.id);
            let _ = writeln!(out, "kind = {}", a.kind.as_str());
            let _ = writeln!(out, "nu = {}", a.nu);
            let _ = writeln!(out, "B = {}", a.b);
            let _ = writeln!(out, "grid = {}", a.grid);
            let _ = writeln!(out, "lambda = {}", a.lambda);
            let _ = writeln!(out, "delta = {}", a.delta);
            let _ = writeln!(out, "ucb_scale = {}", a.ucb_scale);
            let _ = writeln!(out, "lengthscale = {}", a.lengthscale);
            let _ = writeln!(out, "doubling = {}", a.doubling);
            let _ = writeln!(out, "base = {}", a.base.as_str());
            let _ = writeln!(out, "nu_tilde = {}", a.nu_tilde);
            let _ = writeln!(out, "bound_constant = {}", a.bound_constant);
            let _ = writeln!(out, "reward_range = {}", a.reward_range);
        }
        out
    }
}

fn set_experiment(e: &mut ExperimentConfig, line: usize, k: &str, v: &str) -> Result<(), ConfigError> {
    match k {
        "horizons" => {
            let hs: Vec<usize> = v
                .split(',')
                .map(|h| value::<usize>(line, k, h.trim()))
                .collect::<Result<_, _>>()?;
            if hs.is_empty() || hs.iter().any(|&h| h < 2) {
                return Err(err(line, k, "need at least one horizon, each >= 2"));
            }
            if hs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(err(line, k, "must be strictly increasing"));
            }
            e.horizons = hs;
        }
        "replicates" => {
            e.replicates = value(line, k, v)?;
            if e.replicates < 1 {
                return Err(err(line, k, "must be >= 1"));
            }
        }
        "seed_base" => e.seed_base = value(line, k, v)?,
        "output_dir" => e.output_dir = PathBuf::from(v),
        "workers" => {
            e.workers = value(line, k, v)?;
            if e.workers < 1 {
                return Err(err(line, k, "must be >= 1"));
            }
        }
        "traces" => e.traces = parse_bool(line, k, v)?,
        _ => return Err(err(line, k, "unknown experiment key")),
    }
    Ok(())
}

fn kind_of(b: &Block, what: &str) -> Result<String, ConfigError> {
    b.pairs
        .iter()
        .find(|(_, k, _)| k == "kind")
        .map(|(_, _, v)| v.clone())
        .ok_or_else(|| err(b.line, "kind", format!("{what} `{}` has no kind", b.id)))
}

fn resolve_env(b: &Block) -> Result<EnvSpec, ConfigError> {
    let kind = kind_of(b, "environment")?;
    let mut noise = NoiseModel::default();
    let mut nu = Regularity::THREE_HALVES;
    let mut lengthscale: Auto<f64> = Auto::Auto;
    let mut centers = 12usize;
    let mut norm = 1.0;
    let mut seed = 0u64;
    let (mut m1, mut m2) = (1u32, 2u32);
    let mut l1: Auto<f64> = Auto::Auto;
    let (mut l2, mut r_tilde) = (50.0, 200.0);
    let mut s = 0usize;
    let mut cert_grid = 1usize << 14;
    let expansion = match kind.as_str() {
        "kernel_expansion" => true,
        "adversary" => false,
        other => return Err(err(b.line, "kind", format!("unknown environment kind `{other}`"))),
    };
    for (line, k, v) in &b.pairs {
        let (line, k, v) = (*line, k.as_str(), v.as_str());
        match (k, expansion) {
            ("kind", _) => {}
            ("noise", _) => noise = parse_noise(v).map_err(|m| err(line, k, m))?,
            ("nu", true) => nu = value(line, k, v)?,
            ("lengthscale", true) => {
                lengthscale = value(line, k, v)?;
                if let Auto::Value(l) = lengthscale {
                    positive(line, k, &l.to_string())?;
                }
            }
            ("centers", true) => {
                centers = value(line, k, v)?;
                if centers < 1 {
                    return Err(err(line, k, "must be >= 1"));
                }
            }
            ("norm", true) => norm = positive(line, k, v)?,
            ("seed", true) => seed = value(line, k, v)?,
            ("m1", false) => m1 = value(line, k, v)?,
            ("m2", false) => m2 = value(line, k, v)?,
            ("L1", false) => {
                l1 = value(line, k, v)?;
                if let Auto::Value(x) = l1 {
                    positive(line, k, &x.to_string())?;
                }
            }
            ("L2", false) => l2 = positive(line, k, v)?,
            ("rtilde", false) => r_tilde = positive(line, k, v)?,
            ("s", false) => s = value(line, k, v)?,
            ("cert_grid", false) => {
                cert_grid = value(line, k, v)?;
                if cert_grid < 1 << 14 {
                    return Err(err(line, k, "certification needs at least 16384 intervals"));
                }
            }
            _ => return Err(err(line, k, format!("unknown key for a {kind} environment"))),
        }
    }
    let kind = if expansion {
        EnvKind::KernelExpansion {
            nu,
            lengthscale,
            centers,
            norm,
            seed,
        }
    } else {
        EnvKind::Adversary {
            m1,
            m2,
            l1,
            l2,
            r_tilde,
            s,
            cert_grid,
        }
    };
    Ok(EnvSpec {
        id: b.id.clone(),
        kind,
        noise,
    })
}

fn resolve_algo(b: &Block) -> Result<AlgoSpec, ConfigError> {
    let kind_text = kind_of(b, "algorithm")?;
    let kind = AlgoKind::parse(&kind_text)
        .ok_or_else(|| err(b.line, "kind", format!("unknown algorithm kind `{kind_text}`")))?;
    let mut a = AlgoSpec::new(&b.id, kind);
    for (line, k, v) in &b.pairs {
        let (line, k, v) = (*line, k.as_str(), v.as_str());
        match k {
            "kind" => {}
            "nu" => a.nu = value(line, k, v)?,
            "B" => a.b = positive(line, k, v)?,
            "grid" => {
                a.grid = value(line, k, v)?;
                if matches!(a.grid, Auto::Value(g) if g < 2) {
                    return Err(err(line, k, "grid must have at least 2 points"));
                }
            }
            "lambda" => {
                a.lambda = value(line, k, v)?;
                if !(a.lambda >= 0.0) {
                    return Err(err(line, k, "must be non-negative"));
                }
            }
            "delta" => {
                a.delta = value(line, k, v)?;
                if !(a.delta > 0.0 && a.delta < 1.0) {
                    return Err(err(line, k, "must lie in (0, 1)"));
                }
            }
            "ucb_scale" => a.ucb_scale = positive(line, k, v)?,
            "lengthscale" => {
                a.lengthscale = value(line, k, v)?;
                if let Auto::Value(l) = a.lengthscale {
                    positive(line, k, &l.to_string())?;
                }
            }
            "doubling" => a.doubling = parse_bool(line, k, v)?,
            "base" => {
                a.base = AlgoKind::parse(v)
                    .filter(|b| matches!(b, AlgoKind::GpUcb | AlgoKind::SupKernelUcb))
                    .ok_or_else(|| err(line, k, "base must be gpucb or supkernelucb"))?
            }
            "nu_tilde" => a.nu_tilde = value(line, k, v)?,
            "bound_constant" => a.bound_constant = positive(line, k, v)?,
            "reward_range" => a.reward_range = value(line, k, v)?,
            _ => return Err(err(line, k, "unknown algorithm key")),
        }
    }
    Ok(a)
}
