//! Bump-function hard instances for the adaptivity lower bound.
//!
//! The domain is split into `M` bins `H_s = [(s−1)/(2M), s/(2M)]` covering
//! `[0, 1/2]` and one bin `H_0 = [1/2, 1]`. A smooth bump `f_0` of height
//! `Δ/2` sits at `3/4` and a rougher bump `f_s` of height `Δ` at each bin
//! midpoint; `φ_0 = f_0` and `φ_s = f_s + f_0`.
//!
//! Throughout, the constant multiplying `L1^{2/(2m1−1)} Δ^{−2/(2m1−1)}` in the
//! choice of `M` is `C_eff = C(m1)^{2/(2m1−1)}`, which is what the
//! unsimplified choice `M = ⌊(C(m1)·L1/Δ)^{1/(m1−1/2)}⌋` reduces to. The same
//! constant then enters `Δ`, the `L1` limits and `C′`.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::kernels::{matern_fourier, KernelSpec};

/// Support guard: `bump(x) = 0` once `|x| ≥ 1 − BUMP_EDGE`.
pub const BUMP_EDGE: f64 = 1e-12;
/// `K₀* = bump(0) = e⁻¹`.
pub const K0_STAR: f64 = 0.367_879_441_171_442_33;
pub const MAX_ORDER: u32 = 4;
/// Relative disagreement tolerated between two quadrature refinements.
pub const REFINEMENT_TOL: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Orders,
    PositiveInputs,
    L1Lower,
    L1Upper,
    MAtLeastTwo,
    BLowerCap,
    BTildeLowerCap,
}

impl Constraint {
    pub fn describe(self) -> &'static str {
        match self {
            Constraint::Orders => "derivative orders: 1 <= m1 < m2 <= 4",
            Constraint::PositiveInputs => "radii: L1, L2, R_tilde > 0",
            Constraint::L1Lower => {
                "L1 lower bound: L1 >= 3^(m1+1/2)/32 * C_eff^(1/2-m1) / R_tilde"
            }
            Constraint::L1Upper => {
                "L1 upper bound: L1 <= C'^-(m1+1/2) * L2^(m1+1/2) * R_tilde^(m1-1/2)"
            }
            Constraint::MAtLeastTwo => "number of rough hypotheses: M >= 2",
            Constraint::BLowerCap => "support of f_s inside H_s: b >= 2",
            Constraint::BTildeLowerCap => "support of f_0 inside H_0: b_tilde >= 4h",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("constraint violated ({}): {detail}", .which.describe())]
    ConstraintViolation { which: Constraint, detail: String },
    #[error("quadrature not converged: {0}")]
    QuadratureNotConverged(String),
    #[error("unsupported derivative order {0} (supported 0..=4)")]
    UnsupportedOrder(u32),
    #[error("invalid artifact: {0}")]
    Artifact(String),
}

fn violation(which: Constraint, detail: impl Into<String>) -> AdversaryError {
    AdversaryError::ConstraintViolation {
        which,
        detail: detail.into(),
    }
}

/// `exp(−1/(1−x²))` on `(−1, 1)`, zero elsewhere.
pub fn bump(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 1.0 - BUMP_EDGE {
        return 0.0;
    }
    (-1.0 / (1.0 - x * x)).exp()
}

/// Ascending coefficients of `P_m`, where `bump^{(m)}(u) = P_m(u)/(1−u²)^{2m}·bump(u)`.
///
/// Built from `P_{m+1} = P_m′(1−u²)² + 4mu(1−u²)P_m − 2uP_m`.
pub fn bump_derivative_poly(m: u32) -> Vec<f64> {
    let mut p = vec![1.0];
    for k in 0..m {
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; p.len() + 4];
        // P' (1 - 2u² + u⁴)
        for (i, &c) in dp.iter().enumerate() {
            next[i] += c;
            next[i + 2] -= 2.0 * c;
            next[i + 4] += c;
        }
        // 4k u (1 - u²) P - 2u P
        for (i, &c) in p.iter().enumerate() {
            next[i + 1] += (4.0 * k as f64 - 2.0) * c;
            next[i + 3] -= 4.0 * k as f64 * c;
        }
        while next.len() > 1 && *next.last().unwrap() == 0.0 {
            next.pop();
        }
        p = next;
    }
    p
}

/// Analytic `m`-th derivative of [`bump`], `m ≤ 4`.
pub fn bump_derivative(m: u32, x: f64) -> Result<f64, AdversaryError> {
    if m > MAX_ORDER {
        return Err(AdversaryError::UnsupportedOrder(m));
    }
    let k = bump(x);
    if k == 0.0 {
        return Ok(0.0);
    }
    if m == 0 {
        return Ok(k);
    }
    let poly = bump_derivative_poly(m);
    let p = poly.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let q = 1.0 - x * x;
    Ok(p / q.powi(2 * m as i32) * k)
}

fn trapezoid_bump_sq(m: u32, n: usize) -> f64 {
    let poly = bump_derivative_poly(m);
    let h = 2.0 / n as f64;
    let mut s = 0.0;
    // endpoints vanish
    for i in 1..n {
        let u = -1.0 + i as f64 * h;
        let k = bump(u);
        if k == 0.0 {
            continue;
        }
        let p = poly.iter().rev().fold(0.0, |acc, c| acc * u + c);
        let d = p / (1.0 - u * u).powi(2 * m as i32) * k;
        s += d * d;
    }
    s * h
}

/// `I_m = ∫₋₁¹ [bump^{(m)}(u)]² du`, checked at `2^15` against `2^16` intervals.
pub fn bump_sq_derivative_integral(m: u32) -> Result<f64, AdversaryError> {
    if m > MAX_ORDER {
        return Err(AdversaryError::UnsupportedOrder(m));
    }
    let coarse = trapezoid_bump_sq(m, 1 << 15);
    let fine = trapezoid_bump_sq(m, 1 << 16);
    let rel = (fine - coarse).abs() / fine.abs();
    if !(rel <= REFINEMENT_TOL) {
        return Err(AdversaryError::QuadratureNotConverged(format!(
            "I_{m}: {coarse} vs {fine}"
        )));
    }
    Ok(fine)
}

/// `C(m) = K₀*/(2^{2m−1}√I_m)`.
pub fn bump_constant(m: u32) -> Result<f64, AdversaryError> {
    if m == 0 {
        return Err(AdversaryError::UnsupportedOrder(0));
    }
    let i_m = bump_sq_derivative_integral(m)?;
    Ok(K0_STAR / (2f64.powi(2 * m as i32 - 1) * i_m.sqrt()))
}

/// `C(m)^{2/(2m−1)}`.
pub fn effective_constant(m: u32) -> Result<f64, AdversaryError> {
    Ok(bump_constant(m)?.powf(2.0 / (2.0 * m as f64 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpConstants {
    pub k0_star: f64,
    pub i_m1: f64,
    pub i_m2: f64,
    /// `C(m1) = K₀*/(2^{2m1−1}√I_{m1})`.
    pub c_m1: f64,
    /// `C(m1)^{2/(2m1−1)}`.
    pub c_eff: f64,
    /// `2^{2m2−2}(C_eff/32)^{(m1−1/2)/(m1+1/2)}√I_{m2}/K₀*`.
    pub c_prime: f64,
}

fn check_orders(m1: u32, m2: u32) -> Result<(), AdversaryError> {
    if !(1 <= m1 && m1 < m2 && m2 <= MAX_ORDER) {
        return Err(violation(Constraint::Orders, format!("got m1 = {m1}, m2 = {m2}")));
    }
    Ok(())
}

fn rate_p(m1: u32) -> f64 {
    let m = m1 as f64;
    (m - 0.5) / (m + 0.5)
}

pub fn compute_constants(m1: u32, m2: u32) -> Result<BumpConstants, AdversaryError> {
    check_orders(m1, m2)?;
    let i_m1 = bump_sq_derivative_integral(m1)?;
    let i_m2 = bump_sq_derivative_integral(m2)?;
    let c_m1 = K0_STAR / (2f64.powi(2 * m1 as i32 - 1) * i_m1.sqrt());
    let c_eff = c_m1.powf(2.0 / (2.0 * m1 as f64 - 1.0));
    let c_prime =
        2f64.powi(2 * m2 as i32 - 2) * (c_eff / 32.0).powf(rate_p(m1)) * i_m2.sqrt() / K0_STAR;
    Ok(BumpConstants {
        k0_star: K0_STAR,
        i_m1,
        i_m2,
        c_m1,
        c_eff,
        c_prime,
    })
}

/// Closed interval of admissible `L1` for given `(m1, m2, L2, R̃)`.
pub fn admissible_l1_range(
    m1: u32,
    m2: u32,
    l2: f64,
    r_tilde: f64,
) -> Result<(f64, f64), AdversaryError> {
    let c = compute_constants(m1, m2)?;
    if !(l2 > 0.0 && r_tilde > 0.0) || !l2.is_finite() || !r_tilde.is_finite() {
        return Err(violation(Constraint::PositiveInputs, format!("L2 = {l2}, R_tilde = {r_tilde}")));
    }
    Ok(l1_bounds(&c, m1, l2, r_tilde))
}

fn l1_bounds(c: &BumpConstants, m1: u32, l2: f64, r_tilde: f64) -> (f64, f64) {
    let m = m1 as f64;
    let lo = 3f64.powf(m + 0.5) / 32.0 * c.c_eff.powf(0.5 - m) / r_tilde;
    let hi = c.c_prime.powf(-(m + 0.5)) * l2.powf(m + 0.5) * r_tilde.powf(m - 0.5);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructionParams {
    pub m1: u32,
    pub m2: u32,
    pub l1: f64,
    pub l2: f64,
    pub r_tilde: f64,
    pub delta: f64,
    pub m: usize,
    pub h: f64,
    pub a: f64,
    pub b: f64,
    pub a_tilde: f64,
    pub b_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryInstance {
    pub params: ConstructionParams,
    pub constants: BumpConstants,
    pub certified: bool,
}

/// `Δ = (C_eff/32)^{p}·L1^{1/(m1+1/2)}·R̃^{−p}` with `p = (m1−1/2)/(m1+1/2)`.
pub fn delta_formula(c_eff: f64, m1: u32, l1: f64, r_tilde: f64) -> f64 {
    let m = m1 as f64;
    (c_eff / 32.0).powf(rate_p(m1)) * l1.powf(1.0 / (m + 0.5)) * r_tilde.powf(-rate_p(m1))
}

/// `M = ⌊C_eff·L1^{2/(2m1−1)}·Δ^{−2/(2m1−1)}⌋`.
pub fn m_formula(c_eff: f64, m1: u32, l1: f64, delta: f64) -> usize {
    let e = 2.0 / (2.0 * m1 as f64 - 1.0);
    (c_eff * l1.powf(e) * delta.powf(-e)).floor() as usize
}

pub fn construct_instance(
    m1: u32,
    m2: u32,
    l1: f64,
    l2: f64,
    r_tilde: f64,
) -> Result<AdversaryInstance, AdversaryError> {
    let c = compute_constants(m1, m2)?;
    for (name, v) in [("L1", l1), ("L2", l2), ("R_tilde", r_tilde)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(violation(Constraint::PositiveInputs, format!("{name} = {v}")));
        }
    }
    let (lo, hi) = l1_bounds(&c, m1, l2, r_tilde);
    if l1 < lo {
        return Err(violation(
            Constraint::L1Lower,
            format!("L1 = {l1} is below {lo} for R_tilde = {r_tilde}"),
        ));
    }
    if l1 > hi {
        return Err(violation(
            Constraint::L1Upper,
            format!("L1 = {l1} is above {hi} for L2 = {l2}, R_tilde = {r_tilde}"),
        ));
    }
    let delta = delta_formula(c.c_eff, m1, l1, r_tilde);
    let m = m_formula(c.c_eff, m1, l1, delta);
    if m < 2 {
        return Err(violation(Constraint::MAtLeastTwo, format!("M = {m}")));
    }
    let params = derive_shape(m1, m2, l1, l2, r_tilde, delta, m, &c);
    if params.b < 2.0 * (1.0 - 1e-12) {
        return Err(violation(Constraint::BLowerCap, format!("b = {}", params.b)));
    }
    if params.b_tilde < 4.0 * params.h * (1.0 - 1e-12) {
        return Err(violation(
            Constraint::BTildeLowerCap,
            format!("b_tilde = {} < 4h = {}", params.b_tilde, 4.0 * params.h),
        ));
    }
    Ok(AdversaryInstance {
        params,
        constants: c,
        certified: false,
    })
}

#[allow(clippy::too_many_arguments)]
fn derive_shape(
    m1: u32,
    m2: u32,
    l1: f64,
    l2: f64,
    r_tilde: f64,
    delta: f64,
    m: usize,
    c: &BumpConstants,
) -> ConstructionParams {
    let two_m = 2.0 * m as f64;
    let (e1, e2) = (m1 as f64 - 0.5, m2 as f64 - 0.5);
    let a = delta * two_m.powf(e1) / K0_STAR;
    let a_tilde = delta * two_m.powf(e2) / (2.0 * K0_STAR);
    let b = (l1 * l1 * K0_STAR * K0_STAR / (delta * delta * two_m.powf(2.0 * e1) * c.i_m1))
        .powf(1.0 / (2.0 * e1));
    let b_tilde = (4.0 * l2 * l2 * K0_STAR * K0_STAR
        / (delta * delta * two_m.powf(2.0 * e2) * c.i_m2))
        .powf(1.0 / (2.0 * e2));
    ConstructionParams {
        m1,
        m2,
        l1,
        l2,
        r_tilde,
        delta,
        m,
        h: 1.0 / two_m,
        a,
        b,
        a_tilde,
        b_tilde,
    }
}

impl AdversaryInstance {
    /// Bin `H_s` as `(lo, hi)`.
    pub fn bin(&self, s: usize) -> (f64, f64) {
        if s == 0 {
            (0.5, 1.0)
        } else {
            let h = self.params.h;
            ((s - 1) as f64 * h, s as f64 * h)
        }
    }

    pub fn midpoint(&self, s: usize) -> f64 {
        if s == 0 {
            0.75
        } else {
            (s as f64 - 0.5) * self.params.h
        }
    }

    /// Open support of `f_s` as `(lo, hi)`.
    pub fn support(&self, s: usize) -> (f64, f64) {
        let p = &self.params;
        let half = if s == 0 { p.h / p.b_tilde } else { p.h / p.b };
        let c = self.midpoint(s);
        (c - half, c + half)
    }

    pub fn f_s(&self, s: usize, x: f64) -> f64 {
        let p = &self.params;
        if s == 0 {
            p.a_tilde
                * p.h.powf(p.m2 as f64 - 0.5)
                * bump(p.b_tilde * (x - self.midpoint(0)) / p.h)
        } else {
            p.a * p.h.powf(p.m1 as f64 - 0.5) * bump(p.b * (x - self.midpoint(s)) / p.h)
        }
    }

    pub fn f0(&self, x: f64) -> f64 {
        self.f_s(0, x)
    }

    /// `φ_0 = f_0`, `φ_s = f_s + f_0`.
    pub fn phi(&self, s: usize, x: f64) -> f64 {
        if s == 0 {
            self.f0(x)
        } else {
            self.f_s(s, x) + self.f0(x)
        }
    }

    pub fn in_bin(&self, s: usize, x: f64) -> bool {
        let (lo, hi) = self.bin(s);
        x >= lo && x <= hi
    }

    /// Runs [`verify_conditions`] and stores the verdict.
    pub fn certify(&mut self, grid_size: usize) -> CertificationReport {
        let report = verify_conditions(self, grid_size);
        self.certified = report.certified;
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub grid_size: usize,
    pub peak_phi0: f64,
    /// Smallest and largest `max φ_s` over `s ≥ 1`.
    pub peak_phi_s_range: (f64, f64),
    pub seminorm_f0: f64,
    pub seminorm_fs_max: f64,
    pub off_bin_max_diff: f64,
    pub off_bin_min_gap: f64,
    pub peaks_ok: bool,
    pub seminorms_ok: bool,
    pub shape_ok: bool,
    /// Fitted constant in `|f₀|_{m1} ≤ K·|f₀|_{m2}^{m1/m2}·‖f₀‖₂^{(m2−m1)/m2}`; reported only.
    pub nesting_constant: f64,
    pub failures: Vec<String>,
    pub certified: bool,
}

const PEAK_TOL: f64 = 1e-6;
const SEMINORM_SLACK: f64 = 1.01;
const OFF_BIN_EQ_TOL: f64 = 1e-12;
const GAP_TOL: f64 = 1e-9;
const LOCAL_POINTS: usize = 129;

fn local_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Checks peaks, seminorm membership and the off-bin shape conditions.
pub fn verify_conditions(inst: &AdversaryInstance, grid_size: usize) -> CertificationReport {
    let p = inst.params;
    let m = p.m;
    let mut failures = Vec::new();
    let global: Vec<f64> = (0..=grid_size).map(|i| i as f64 / grid_size as f64).collect();
    let phi0_global: Vec<f64> = global.iter().map(|&x| inst.f0(x)).collect();

    // (1) peaks
    let mut peak0 = phi0_global.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s0lo, s0hi) = inst.support(0);
    for x in local_grid(s0lo, s0hi, LOCAL_POINTS).chain([inst.midpoint(0)]) {
        peak0 = peak0.max(inst.f0(x));
    }
    let mut peak_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut peaks = vec![f64::NEG_INFINITY; m + 1];
    for s in 1..=m {
        let (lo, hi) = inst.support(s);
        let mut best = f64::NEG_INFINITY;
        for x in local_grid(lo, hi, LOCAL_POINTS).chain([inst.midpoint(s)]) {
            best = best.max(inst.phi(s, x));
        }
        peaks[s] = best;
    }
    // global grid contributions
    for (j, &x) in global.iter().enumerate() {
        if x < 0.5 {
            let s = ((x / p.h).floor() as usize + 1).min(m);
            for t in [s.saturating_sub(1), s, (s + 1).min(m)] {
                if t >= 1 {
                    peaks[t] = peaks[t].max(inst.f_s(t, x) + phi0_global[j]);
                }
            }
        }
    }
    // φ_s equals φ_0 away from its bump, and φ_0 ≤ peak0 there
    for s in 1..=m {
        let v = peaks[s].max(peak0);
        peaks[s] = v;
        peak_range.0 = peak_range.0.min(v);
        peak_range.1 = peak_range.1.max(v);
    }
    let peaks_ok = (peak0 - p.delta / 2.0).abs() <= PEAK_TOL
        && (peak_range.0 - p.delta).abs() <= PEAK_TOL
        && (peak_range.1 - p.delta).abs() <= PEAK_TOL;
    if !peaks_ok {
        failures.push(format!(
            "peaks: max phi_0 = {peak0:e} (want {:e}), max phi_s in [{:e}, {:e}] (want {:e})",
            p.delta / 2.0,
            peak_range.0,
            peak_range.1,
            p.delta
        ));
    }

    // (2) seminorms over each bump's support
    let mut seminorms_ok = true;
    let semi0 = sobolev_seminorm_on(&|x| inst.f0(x), p.m2, (s0lo, s0hi), grid_size);
    let seminorm_f0 = match semi0 {
        Ok(e) => e.value,
        Err(e) => {
            seminorms_ok = false;
            failures.push(format!("seminorm of f_0: {e}"));
            f64::NAN
        }
    };
    if !(seminorm_f0 <= p.l2 * SEMINORM_SLACK) {
        seminorms_ok = false;
        failures.push(format!(
            "seminorm: |f_0|_{{{},2}} = {seminorm_f0} exceeds L2 = {} (+1%)",
            p.m2, p.l2
        ));
    }
    let mut seminorm_fs_max: f64 = 0.0;
    for s in 1..=m {
        let sup = inst.support(s);
        match sobolev_seminorm_on(&|x| inst.f_s(s, x), p.m1, sup, grid_size) {
            Ok(e) => seminorm_fs_max = seminorm_fs_max.max(e.value),
            Err(e) => {
                seminorms_ok = false;
                failures.push(format!("seminorm of f_{s}: {e}"));
                break;
            }
        }
    }
    if !(seminorm_fs_max <= p.l1 * SEMINORM_SLACK) {
        seminorms_ok = false;
        failures.push(format!(
            "seminorm: max_s |f_s|_{{{},2}} = {seminorm_fs_max} exceeds L1 = {} (+1%)",
            p.m1, p.l1
        ));
    }

    // (3) off-bin equality and gap
    let mut max_diff: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut check = |s: usize, x: f64, phi0: f64| {
        if inst.in_bin(s, x) {
            return;
        }
        let v = inst.f_s(s, x) + phi0;
        max_diff = max_diff.max((v - phi0).abs());
        min_gap = min_gap.min(peaks[s] - v);
    };
    for s in 1..=m {
        for (j, &x) in global.iter().enumerate() {
            check(s, x, phi0_global[j]);
        }
        // neighbouring bins at local resolution, plus the smooth bump's support
        for nb in [s.saturating_sub(1), s + 1] {
            if nb >= 1 && nb <= m {
                let (lo, hi) = inst.bin(nb);
                for x in local_grid(lo, hi, LOCAL_POINTS) {
                    check(s, x, inst.f0(x));
                }
            }
        }
        for x in local_grid(s0lo, s0hi, LOCAL_POINTS).chain([inst.midpoint(0)]) {
            check(s, x, inst.f0(x));
        }
    }
    let shape_ok = max_diff <= OFF_BIN_EQ_TOL && min_gap >= p.delta / 2.0 - GAP_TOL;
    if !shape_ok {
        failures.push(format!(
            "off-bin shape: max |phi_s - phi_0| = {max_diff:e}, min gap = {min_gap:e} (want >= {:e})",
            p.delta / 2.0
        ));
    }

    let nesting_constant = nesting_ratio(inst, grid_size).unwrap_or(f64::NAN);
    let certified = peaks_ok && seminorms_ok && shape_ok;
    CertificationReport {
        grid_size,
        peak_phi0: peak0,
        peak_phi_s_range: peak_range,
        seminorm_f0,
        seminorm_fs_max,
        off_bin_max_diff: max_diff,
        off_bin_min_gap: min_gap,
        peaks_ok,
        seminorms_ok,
        shape_ok,
        nesting_constant,
        failures,
        certified,
    }
}

fn nesting_ratio(inst: &AdversaryInstance, grid_size: usize) -> Result<f64, AdversaryError> {
    let p = inst.params;
    let sup = inst.support(0);
    let f = |x: f64| inst.f0(x);
    let lo = sobolev_seminorm_on(&f, p.m1, sup, grid_size)?.value;
    let hi = sobolev_seminorm_on(&f, p.m2, sup, grid_size)?.value;
    let l2 = l2_norm(&f, sup, grid_size);
    let (m1, m2) = (p.m1 as f64, p.m2 as f64);
    Ok(lo / (hi.powf(m1 / m2) * l2.powf((m2 - m1) / m2)))
}

fn l2_norm(f: &dyn Fn(f64) -> f64, (a, b): (f64, f64), n: usize) -> f64 {
    let d = (b - a) / n as f64;
    let s: f64 = (0..=n)
        .map(|i| {
            let v = f(a + i as f64 * d);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * v * v
        })
        .sum();
    (s * d).sqrt()
}

/// A quadrature value with its two-grid refinement delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedValue {
    pub value: f64,
    pub coarse: f64,
    pub rel_delta: f64,
}

/// `‖f^{(m)}‖₂` on `[a, b]` with `n` trapezoid intervals, derivatives by central
/// differences on a lattice of spacing `(b−a)/n`.
fn seminorm_once(f: &dyn Fn(f64) -> f64, m: u32, (a, b): (f64, f64), n: usize) -> f64 {
    let d = (b - a) / n as f64;
    // step = 2k·d, the smallest such step not below the round-off optimum
    let target = 0.5 * (b - a) * f64::EPSILON.powf(1.0 / (m as f64 + 2.0));
    let k = ((target / (2.0 * d)).ceil() as usize).max(1);
    let step = 2.0 * k as f64 * d;
    let reach = m as usize * k;
    let vals: Vec<f64> = (0..n + 1 + 2 * reach)
        .map(|j| f(a + (j as f64 - reach as f64) * d))
        .collect();
    let mut stencil = vec![0.0; m as usize + 1];
    let scale = step.powi(m as i32);
    let mut sum = 0.0;
    for i in 0..=n {
        let centre = i + reach;
        // samples at offsets (2j − m)·k lattice cells, then m rounds of differencing
        for (j, slot) in stencil.iter_mut().enumerate() {
            let off = (2 * j as i64 - m as i64) * k as i64;
            *slot = vals[(centre as i64 + off) as usize];
        }
        for r in (1..=m as usize).rev() {
            for j in 0..r {
                stencil[j] = stencil[j + 1] - stencil[j];
            }
        }
        let dv = stencil[0] / scale;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * dv * dv;
    }
    (sum * d).sqrt()
}

/// `|f|_{m,2}` over `[a, b]`, accepted only if `n` and `2n` intervals agree within 0.5%.
pub fn sobolev_seminorm_on(
    f: &dyn Fn(f64) -> f64,
    m: u32,
    interval: (f64, f64),
    grid_size: usize,
) -> Result<RefinedValue, AdversaryError> {
    if m == 0 || m > MAX_ORDER {
        return Err(AdversaryError::UnsupportedOrder(m));
    }
    if !(interval.1 > interval.0) || grid_size < 2 {
        return Err(AdversaryError::QuadratureNotConverged(format!(
            "empty interval {interval:?} or grid {grid_size}"
        )));
    }
    let coarse = seminorm_once(f, m, interval, grid_size);
    let fine = seminorm_once(f, m, interval, 2 * grid_size);
    let rel_delta = if fine == 0.0 && coarse == 0.0 {
        0.0
    } else {
        (fine - coarse).abs() / fine.abs().max(coarse.abs())
    };
    if !(rel_delta <= REFINEMENT_TOL) || !fine.is_finite() {
        return Err(AdversaryError::QuadratureNotConverged(format!(
            "seminorm order {m}: {coarse} vs {fine}"
        )));
    }
    Ok(RefinedValue {
        value: fine,
        coarse,
        rel_delta,
    })
}

/// `|f|_{m,2}` over `[0, 1]`.
pub fn sobolev_seminorm(
    f: &dyn Fn(f64) -> f64,
    m: u32,
    grid_size: usize,
) -> Result<f64, AdversaryError> {
    Ok(sobolev_seminorm_on(f, m, (0.0, 1.0), grid_size)?.value)
}

const SPECTRUM_FLOOR: f64 = 1e-12;
const PAD_FACTOR: usize = 8;

fn rkhs_once(f: &dyn Fn(f64) -> f64, (a, b): (f64, f64), spec: &KernelSpec, n: usize) -> f64 {
    let d = (b - a) / n as f64;
    let len = (PAD_FACTOR * (n + 1)).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|j| {
            let v = if j <= n { f(a + j as f64 * d) * d } else { 0.0 };
            Complex::new(v, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let d_omega = 2.0 * std::f64::consts::PI / (len as f64 * d);
    let mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    // keep frequencies up to the last one above the round-off floor
    let half = len / 2;
    let cutoff = (0..=half)
        .rev()
        .find(|&k| mags[k] > SPECTRUM_FLOOR * peak)
        .unwrap_or(0);
    let mut sum = mags[0].powi(2) / matern_fourier(spec, 0.0);
    for k in 1..=cutoff {
        let w = k as f64 * d_omega;
        // ±ω contribute equally for real f
        sum += 2.0 * mags[k].powi(2) / matern_fourier(spec, w);
    }
    ((2.0 * std::f64::consts::PI).powf(-0.5) * sum * d_omega).sqrt()
}

/// Discrete `((2π)^{−1/2} ∫ |f̂|²/κ̂ dω)^{1/2}` for `f` supported in `interval`.
pub fn rkhs_norm_surrogate(
    f: &dyn Fn(f64) -> f64,
    interval: (f64, f64),
    spec: &KernelSpec,
    grid_size: usize,
) -> Result<RefinedValue, AdversaryError> {
    if !(interval.1 > interval.0) || grid_size < 8 {
        return Err(AdversaryError::QuadratureNotConverged(format!(
            "empty interval {interval:?} or grid {grid_size}"
        )));
    }
    let coarse = rkhs_once(f, interval, spec, grid_size);
    let fine = rkhs_once(f, interval, spec, 2 * grid_size);
    let rel_delta = if fine == 0.0 && coarse == 0.0 {
        0.0
    } else {
        (fine - coarse).abs() / fine.abs().max(coarse.abs())
    };
    if !(rel_delta <= 0.01) || !fine.is_finite() {
        return Err(AdversaryError::QuadratureNotConverged(format!(
            "rkhs surrogate: {coarse} vs {fine}"
        )));
    }
    Ok(RefinedValue {
        value: fine,
        coarse,
        rel_delta,
    })
}

/// `(T/8)·(C_eff/32)^{p}·L1^{1/(m1+1/2)}·R̃^{−p}`, i.e. `TΔ/8`.
pub fn lower_bound_value(m1: u32, l1: f64, r_tilde: f64, horizon: f64) -> Result<f64, AdversaryError> {
    let c_eff = effective_constant(m1)?;
    Ok(horizon * delta_formula(c_eff, m1, l1, r_tilde) / 8.0)
}

const ARTIFACT_MAGIC: &str = "# kbandit adversary instance";

/// Header of all construction parameters followed by `x,phi_0,…,phi_M` sampled on `grid + 1` points.
pub fn export_instance(inst: &AdversaryInstance, grid: usize) -> String {
    let p = &inst.params;
    let f = |v: f64| format!("{v:.16e}");
    let mut out = String::new();
    let _ = writeln!(out, "{ARTIFACT_MAGIC}");
    let _ = writeln!(out, "m1={}", p.m1);
    let _ = writeln!(out, "m2={}", p.m2);
    let _ = writeln!(out, "L1={}", f(p.l1));
    let _ = writeln!(out, "L2={}", f(p.l2));
    let _ = writeln!(out, "R_tilde={}", f(p.r_tilde));
    let _ = writeln!(out, "Delta={}", f(p.delta));
    let _ = writeln!(out, "M={}", p.m);
    let _ = writeln!(out, "h={}", f(p.h));
    let _ = writeln!(out, "a={}", f(p.a));
    let _ = writeln!(out, "b={}", f(p.b));
    let _ = writeln!(out, "a_tilde={}", f(p.a_tilde));
    let _ = writeln!(out, "b_tilde={}", f(p.b_tilde));
    let _ = writeln!(out, "certified={}", inst.certified);
    let _ = writeln!(out, "grid={grid}");
    out.push('x');
    for s in 0..=p.m {
        let _ = write!(out, ",phi_{s}");
    }
    out.push('\n');
    for i in 0..=grid {
        let x = i as f64 / grid as f64;
        out.push_str(&f(x));
        for s in 0..=p.m {
            out.push(',');
            out.push_str(&f(inst.phi(s, x)));
        }
        out.push('\n');
    }
    out
}

/// Parsed artifact: the header parameters and the sampled table.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceArtifact {
    pub params: ConstructionParams,
    pub grid: usize,
    pub xs: Vec<f64>,
    /// `table[i][s] = φ_s(xs[i])`.
    pub table: Vec<Vec<f64>>,
}

pub fn parse_artifact(text: &str) -> Result<InstanceArtifact, AdversaryError> {
    let bad = |m: String| AdversaryError::Artifact(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(ARTIFACT_MAGIC) {
        return Err(bad("missing header line".into()));
    }
    let mut kv = std::collections::BTreeMap::new();
    let mut header_cols = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.starts_with("x,") {
            header_cols = Some(line.to_string());
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<f64, AdversaryError> {
        kv.get(k)
            .ok_or_else(|| bad(format!("missing header field `{k}`")))?
            .parse::<f64>()
            .map_err(|e| bad(format!("field `{k}`: {e}")))
    };
    let geti = |k: &str| -> Result<usize, AdversaryError> {
        kv.get(k)
            .ok_or_else(|| bad(format!("missing header field `{k}`")))?
            .parse::<usize>()
            .map_err(|e| bad(format!("field `{k}`: {e}")))
    };
    let params = ConstructionParams {
        m1: geti("m1")? as u32,
        m2: geti("m2")? as u32,
        l1: get("L1")?,
        l2: get("L2")?,
        r_tilde: get("R_tilde")?,
        delta: get("Delta")?,
        m: geti("M")?,
        h: get("h")?,
        a: get("a")?,
        b: get("b")?,
        a_tilde: get("a_tilde")?,
        b_tilde: get("b_tilde")?,
    };
    let grid = geti("grid")?;
    let cols = header_cols.ok_or_else(|| bad("missing table header".into()))?;
    let n_cols = cols.split(',').count();
    if n_cols != params.m + 2 {
        return Err(bad(format!(
            "table has {} columns, expected {}",
            n_cols,
            params.m + 2
        )));
    }
    let mut xs = Vec::with_capacity(grid + 1);
    let mut table = Vec::with_capacity(grid + 1);
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = line.split(',').map(|v| v.trim().parse::<f64>());
        let x = vals
            .next()
            .unwrap()
            .map_err(|e| bad(format!("row {row}: {e}")))?;
        let phis: Vec<f64> = vals
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {row}: {e}")))?;
        if phis.len() != params.m + 1 {
            return Err(bad(format!("row {row} has {} values", phis.len() + 1)));
        }
        xs.push(x);
        table.push(phis);
    }
    if xs.len() != grid + 1 {
        return Err(bad(format!("expected {} rows, found {}", grid + 1, xs.len())));
    }
    Ok(InstanceArtifact {
        params,
        grid,
        xs,
        table,
    })
}

/// Rebuilds the instance from the header, compares every stored quantity, then certifies.
pub fn certify_artifact(
    text: &str,
    grid_size: usize,
) -> Result<(AdversaryInstance, CertificationReport), AdversaryError> {
    let art = parse_artifact(text)?;
    let p = art.params;
    let mut inst = construct_instance(p.m1, p.m2, p.l1, p.l2, p.r_tilde)?;
    let q = inst.params;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    let pairs = [
        ("Delta", p.delta, q.delta),
        ("h", p.h, q.h),
        ("a", p.a, q.a),
        ("b", p.b, q.b),
        ("a_tilde", p.a_tilde, q.a_tilde),
        ("b_tilde", p.b_tilde, q.b_tilde),
    ];
    for (name, stored, rebuilt) in pairs {
        if !close(stored, rebuilt) {
            return Err(AdversaryError::Artifact(format!(
                "header `{name}` = {stored} does not match the rebuilt value {rebuilt}"
            )));
        }
    }
    if p.m != q.m {
        return Err(AdversaryError::Artifact(format!(
            "header `M` = {} does not match the rebuilt value {}",
            p.m, q.m
        )));
    }
    for (i, &x) in art.xs.iter().enumerate() {
        let want_x = i as f64 / art.grid as f64;
        if !close(x, want_x) && x != want_x {
            return Err(AdversaryError::Artifact(format!("row {i}: x = {x}, expected {want_x}")));
        }
        for (s, &v) in art.table[i].iter().enumerate() {
            let want = inst.phi(s, x);
            if (v - want).abs() > 1e-12 * (1.0 + want.abs()) {
                return Err(AdversaryError::Artifact(format!(
                    "table value phi_{s}({x}) = {v} differs from {want}"
                )));
            }
        }
    }
    let report = inst.certify(grid_size);
    Ok((inst, report))
}
