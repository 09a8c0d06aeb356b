//! Half-integer Matérn kernels on the real line.
//!
//! For `ν = p + 1/2` the Matérn kernel has the closed form
//! `k(z) = e^{-z} · p!/(2p)! · Σ_{i=0..p} (p+i)!/(i!(p-i)!) · (2z)^{p-i}`
//! in the scaled distance `z = √(2ν)·r/l`. No Bessel functions needed.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::linalg::SquareMatrix;

/// Diagonal jitter added before every Cholesky factorisation.
pub const JITTER: f64 = 1e-10;

/// Largest supported `2ν` (i.e. `ν = 7/2`).
pub const MAX_TWICE_NU: u32 = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("regularity {0} is not a positive half-integer")]
    NotHalfInteger(String),
    #[error("regularity nu = {0} exceeds the largest supported closed form (7/2)")]
    UnsupportedRegularity(Regularity),
    #[error("lengthscale must be positive and finite, got {0}")]
    BadLengthscale(f64),
    #[error("grid size {0} must be a power of two")]
    InvalidGridSize(usize),
    #[error("grid too coarse for a reliable tail fit: {0}")]
    GridTooCoarse(String),
    #[error("kernel spec parse error: {0}")]
    Parse(String),
}

/// A positive half-integer `ν ∈ {1/2, 3/2, 5/2, …}`, stored as the odd integer `2ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Regularity {
    twice: u32,
}

impl Regularity {
    pub const HALF: Regularity = Regularity { twice: 1 };
    pub const THREE_HALVES: Regularity = Regularity { twice: 3 };
    pub const FIVE_HALVES: Regularity = Regularity { twice: 5 };
    pub const SEVEN_HALVES: Regularity = Regularity { twice: 7 };

    /// Builds `ν = twice_nu / 2`; `twice_nu` must be odd.
    pub fn from_twice(twice_nu: u32) -> Result<Self, KernelError> {
        if twice_nu % 2 == 1 {
            Ok(Self { twice: twice_nu })
        } else {
            Err(KernelError::NotHalfInteger(format!("{twice_nu}/2")))
        }
    }

    /// `ν = p + 1/2`.
    pub fn from_order(p: u32) -> Self {
        Self { twice: 2 * p + 1 }
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    /// Integer part `p = ν − 1/2`.
    pub fn order(self) -> u32 {
        self.twice / 2
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    pub fn ratio(self) -> Ratio<i64> {
        Ratio::new(self.twice as i64, 2)
    }

    /// Fourier decay exponent `ν + d/2` for `d = 1`, an integer.
    pub fn fourier_rate(self) -> u32 {
        self.order() + 1
    }
}

impl fmt::Display for Regularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2", self.twice)
    }
}

impl FromStr for Regularity {
    type Err = KernelError;

    /// Accepts rational literals (`3/2`) and decimals (`1.5`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || KernelError::NotHalfInteger(t.to_string());
        let twice: Ratio<i64> = if t.contains('/') {
            let r: Ratio<i64> = t.parse().map_err(|_| bad())?;
            r * 2
        } else {
            let v: f64 = t.parse().map_err(|_| bad())?;
            let tv = 2.0 * v;
            if !tv.is_finite() || tv.fract() != 0.0 || tv.abs() > 1e6 {
                return Err(bad());
            }
            Ratio::from_integer(tv as i64)
        };
        if !twice.is_integer() || *twice.numer() <= 0 {
            return Err(bad());
        }
        Self::from_twice(*twice.numer() as u32).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    MaternHalfInteger,
}

/// A translation-invariant kernel on `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    nu: Regularity,
    lengthscale: f64,
}

impl KernelSpec {
    /// Matérn kernel with the default lengthscale `l = √(2ν)`, so that `z = r`.
    pub fn matern(nu: Regularity) -> Result<Self, KernelError> {
        Self::matern_with_lengthscale(nu, (nu.twice as f64).sqrt())
    }

    pub fn matern_with_lengthscale(nu: Regularity, lengthscale: f64) -> Result<Self, KernelError> {
        if nu.twice > MAX_TWICE_NU {
            return Err(KernelError::UnsupportedRegularity(nu));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(KernelError::BadLengthscale(lengthscale));
        }
        Ok(Self {
            family: KernelFamily::MaternHalfInteger,
            nu,
            lengthscale,
        })
    }

    pub fn nu(&self) -> Regularity {
        self.nu
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn dim(&self) -> usize {
        1
    }

    /// `√(2ν)/l`, the factor mapping distances to scaled distances.
    pub fn inverse_scale(&self) -> f64 {
        (self.nu.twice as f64).sqrt() / self.lengthscale
    }

    pub fn eval(&self, r: f64) -> f64 {
        matern_eval(self, r)
    }

    pub fn between(&self, x: f64, y: f64) -> f64 {
        matern_eval(self, (x - y).abs())
    }

    /// `family=matern`, `nu=3/2`, `lengthscale=...`, one per line.
    pub fn to_kv(&self) -> String {
        format!(
            "family=matern\nnu={}\nlengthscale={}\n",
            self.nu, self.lengthscale
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, KernelError> {
        let mut family = None;
        let mut nu = None;
        let mut lengthscale = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| KernelError::Parse(format!("expected key=value, got `{line}`")))?;
            match k.trim() {
                "family" => family = Some(v.trim().to_string()),
                "nu" => nu = Some(v.parse::<Regularity>()?),
                "lengthscale" => {
                    lengthscale = Some(v.trim().parse::<f64>().map_err(|e| {
                        KernelError::Parse(format!("lengthscale `{}`: {e}", v.trim()))
                    })?)
                }
                "dim" => {
                    if v.trim() != "1" {
                        return Err(KernelError::Parse("only dim=1 is supported".into()));
                    }
                }
                other => return Err(KernelError::Parse(format!("unknown key `{other}`"))),
            }
        }
        match family.as_deref() {
            Some("matern") | None => {}
            Some(f) => return Err(KernelError::Parse(format!("unknown family `{f}`"))),
        }
        let nu = nu.ok_or_else(|| KernelError::Parse("missing nu".into()))?;
        match lengthscale {
            Some(l) => Self::matern_with_lengthscale(nu, l),
            None => Self::matern(nu),
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Polynomial coefficients of the half-integer closed form, ascending powers of `z`.
fn closed_form_coefficients(p: u32) -> Vec<f64> {
    // coefficient of (2z)^{p-i} is p!/(2p)! * (p+i)!/(i!(p-i)!)
    let lead = factorial(p) / factorial(2 * p);
    let mut c = vec![0.0; p as usize + 1];
    for i in 0..=p {
        let power = p - i;
        let w = factorial(p + i) / (factorial(i) * factorial(p - i));
        c[power as usize] = lead * w * 2f64.powi(power as i32);
    }
    c
}

/// Kernel value as a function of the scaled distance `z ≥ 0`.
pub fn matern_scaled(nu: Regularity, z: f64) -> f64 {
    let z = z.abs();
    let poly = match nu.order() {
        0 => 1.0,
        1 => 1.0 + z,
        2 => 1.0 + z + z * z / 3.0,
        3 => 1.0 + z + 0.4 * z * z + z * z * z / 15.0,
        p => closed_form_coefficients(p)
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * z + c),
    };
    poly * (-z).exp()
}

/// `k(r)` for distance `r = |x − x'|`.
pub fn matern_eval(spec: &KernelSpec, r: f64) -> f64 {
    matern_scaled(spec.nu, spec.inverse_scale() * r.abs())
}

/// Fourier transform `κ̂(ω) = ∫ k(r) e^{-iωr} dr = c₁ (2ν/l² + ω²)^{-(ν+1/2)}`.
pub fn matern_fourier(spec: &KernelSpec, omega: f64) -> f64 {
    let p = spec.nu.order();
    let nu = spec.nu.value();
    let l = spec.lengthscale;
    // Γ(ν+1/2)/Γ(ν) = p!·4^p·p!/((2p)!·√π)
    let gamma_ratio = factorial(p).powi(2) * 4f64.powi(p as i32) / factorial(2 * p);
    let c1 = 2.0 * gamma_ratio * (2.0 * nu).powf(nu) / l.powf(2.0 * nu);
    c1 * (2.0 * nu / (l * l) + omega * omega).powf(-(nu + 0.5))
}

/// The decay exponent `ν + d/2` of [`matern_fourier`].
pub fn fourier_decay_rate(spec: &KernelSpec) -> f64 {
    spec.nu.value() + 0.5
}

pub fn gram_matrix(spec: &KernelSpec, points: &[f64]) -> SquareMatrix {
    SquareMatrix::from_fn(points.len(), |i, j| spec.between(points[i], points[j]))
}

/// Result of [`empirical_fourier_decay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierDecayFit {
    /// `m̂ = −slope/2`.
    pub exponent: f64,
    pub slope: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub bins_used: usize,
}

/// Half-width of the sampling window, in scaled units.
const DECAY_WINDOW: f64 = 40.0;
/// Frequency band of the tail fit, in scaled units.
const DECAY_BAND: (f64, f64) = (8.0, 32.0);
const DECAY_MAX_RESIDUAL: f64 = 0.05;

/// Estimates the Fourier decay exponent of the kernel from a DFT of sampled values.
///
/// Works in the scaled variable, where the transform is `∝ (1 + ω²)^{-(ν+1/2)}`
/// regardless of the lengthscale.
pub fn empirical_fourier_decay(
    spec: &KernelSpec,
    grid_size: usize,
) -> Result<FourierDecayFit, KernelError> {
    if !grid_size.is_power_of_two() {
        return Err(KernelError::InvalidGridSize(grid_size));
    }
    let n = grid_size;
    let dz = 2.0 * DECAY_WINDOW / n as f64;
    let nyquist = std::f64::consts::PI / dz;
    if nyquist < 4.0 * DECAY_BAND.1 {
        return Err(KernelError::GridTooCoarse(format!(
            "Nyquist frequency {nyquist:.1} below 4x the fit band"
        )));
    }
    // wrap-around symmetric layout so the transform is real
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|j| {
            let z = if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * dz;
            Complex::new(matern_scaled(spec.nu, z) * dz, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let d_omega = 2.0 * std::f64::consts::PI / (n as f64 * dz);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, c) in buf.iter().enumerate().take(n / 2).skip(1) {
        let w = k as f64 * d_omega;
        if w < DECAY_BAND.0 || w > DECAY_BAND.1 {
            continue;
        }
        if !(c.re > 0.0) {
            return Err(KernelError::GridTooCoarse(format!(
                "non-positive spectrum at omega = {w:.3}"
            )));
        }
        xs.push(w.ln());
        ys.push(c.re.ln());
    }
    if xs.len() < 8 {
        return Err(KernelError::GridTooCoarse("too few frequencies in the fit band".into()));
    }
    let (slope, intercept) = ols(&xs, &ys);
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    if residual > DECAY_MAX_RESIDUAL {
        return Err(KernelError::GridTooCoarse(format!(
            "tail fit residual {residual:.3e} exceeds {DECAY_MAX_RESIDUAL}"
        )));
    }
    Ok(FourierDecayFit {
        exponent: -slope / 2.0,
        slope,
        residual,
        bins_used: xs.len(),
    })
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
