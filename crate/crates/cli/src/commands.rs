//! `adversary`, `exponents` and `kernels check`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kbandit::adversary::*;
use kbandit::kernels::{
    empirical_fourier_decay, gram_matrix, KernelSpec, Regularity, JITTER,
};
use kbandit::linalg::Cholesky;
use kbandit::metrics::{ratio_to_f64, theory_exponent, TheoryRate};
use num_rational::Ratio;

use crate::CliError;

pub const DEFAULT_EXPORT_GRID: usize = 256;
pub const DEFAULT_CERT_GRID: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildArgs {
    pub m1: u32,
    pub m2: u32,
    pub l2: f64,
    pub r_tilde: f64,
    /// `None` picks the midpoint of the admissible interval.
    pub l1: Option<f64>,
    pub export_grid: usize,
    pub cert_grid: usize,
}

/// Constructs, certifies and writes an instance; returns the artifact path and a report.
pub fn adversary_build(args: &BuildArgs, out_dir: &Path) -> Result<(PathBuf, String), CliError> {
    let l1 = match args.l1 {
        Some(v) => v,
        None => {
            let (lo, hi) = admissible_l1_range(args.m1, args.m2, args.l2, args.r_tilde)?;
            // an empty interval: the largest L1 the upper limit allows is still below the lower one
            if lo > hi {
                hi
            } else {
                0.5 * (lo + hi)
            }
        }
    };
    let mut inst = construct_instance(args.m1, args.m2, l1, args.l2, args.r_tilde)?;
    let report = inst.certify(args.cert_grid);
    let text = describe(&inst, &report);
    if !report.certified {
        return Err(CliError::Constraint(format!(
            "instance failed certification: {}",
            report.failures.join("; ")
        )));
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("adversary_m{}_m{}.txt", args.m1, args.m2));
    fs::write(&path, export_instance(&inst, args.export_grid))?;
    Ok((path, text))
}

/// Re-checks an exported artifact: format, stored values, then conditions.
pub fn adversary_certify(file: &Path, cert_grid: usize) -> Result<String, CliError> {
    let text = fs::read_to_string(file)?;
    // malformed files are input errors, mismatches are constraint failures
    parse_artifact(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let (inst, report) = certify_artifact(&text, cert_grid)
        .map_err(|e| CliError::from_adversary(e, &file.display().to_string()))?;
    if !report.certified {
        return Err(CliError::Constraint(format!(
            "{}: {}",
            file.display(),
            report.failures.join("; ")
        )));
    }
    Ok(describe(&inst, &report))
}

fn describe(inst: &AdversaryInstance, r: &CertificationReport) -> String {
    let p = &inst.params;
    let mut s = String::new();
    let _ = writeln!(s, "m1={} m2={} L1={:e} L2={} R_tilde={}", p.m1, p.m2, p.l1, p.l2, p.r_tilde);
    let _ = writeln!(s, "Delta={:e} M={} h={:e} b={:.6} b_tilde={:.6}", p.delta, p.m, p.h, p.b, p.b_tilde);
    let _ = writeln!(
        s,
        "peaks: phi_0 {:e}, phi_s in [{:e}, {:e}] -> {}",
        r.peak_phi0,
        r.peak_phi_s_range.0,
        r.peak_phi_s_range.1,
        ok(r.peaks_ok)
    );
    let _ = writeln!(
        s,
        "seminorms: |f_0|_m2 = {:.6} (L2 {}), max |f_s|_m1 = {:.6} (L1 {:.6}) -> {}",
        r.seminorm_f0,
        p.l2,
        r.seminorm_fs_max,
        p.l1,
        ok(r.seminorms_ok)
    );
    let _ = writeln!(
        s,
        "off-bin: max diff {:e}, min gap {:e} (Delta/2 = {:e}) -> {}",
        r.off_bin_max_diff,
        r.off_bin_min_gap,
        p.delta / 2.0,
        ok(r.shape_ok)
    );
    let _ = writeln!(s, "fitted nesting constant (reported only): {:.6}", r.nesting_constant);
    let _ = writeln!(s, "certified={} at grid {}", r.certified, r.grid_size);
    s
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn fmt_ratio(r: Ratio<i64>) -> String {
    format!("{r} ({:.6})", ratio_to_f64(r))
}

/// Exponent table for `(ν₁, ν₂, ν̃)`, with `ν₁` the rougher regularity.
pub fn exponents(nu1: Regularity, nu2: Regularity, nu_tilde: Regularity) -> Result<String, CliError> {
    let get = |k| theory_exponent(k).map_err(|e| CliError::Usage(e.to_string()));
    let lower = get(TheoryRate::Lower(nu1, nu2))?;
    // upper rates at the rough regularity are the ones compared against the lower bound
    let rows = [
        (format!("minimax({nu1})"), get(TheoryRate::Minimax(nu1))?, false),
        (format!("minimax({nu2})"), get(TheoryRate::Minimax(nu2))?, false),
        (format!("lower({nu1},{nu2})"), lower, false),
        (
            format!("corral({nu_tilde},{nu1})"),
            get(TheoryRate::Corral {
                nu_tilde,
                nu_star: nu1,
            })?,
            true,
        ),
        (
            format!("corral({nu_tilde},{nu2})"),
            get(TheoryRate::Corral {
                nu_tilde,
                nu_star: nu2,
            })?,
            false,
        ),
        (format!("rbbe({nu1})"), get(TheoryRate::Rbbe(nu1))?, true),
        (format!("rbbe({nu2})"), get(TheoryRate::Rbbe(nu2))?, false),
    ];
    let mut out = String::new();
    for (name, v, compare) in &rows {
        let flag = match (compare, *v == lower) {
            (false, _) => "",
            (true, true) => "  matches lower bound",
            (true, false) => "  above lower bound",
        };
        let _ = writeln!(out, "{name:<20} {}{flag}", fmt_ratio(*v));
    }
    Ok(out)
}

/// Fourier-decay exponents and a Cholesky smoke test for the supported kernels.
pub fn kernels_check() -> Result<String, CliError> {
    let mut out = String::new();
    let mut failed = Vec::new();
    for nu in [Regularity::HALF, Regularity::THREE_HALVES, Regularity::FIVE_HALVES] {
        let spec = KernelSpec::matern(nu).map_err(|e| CliError::Numerical(e.to_string()))?;
        let fit = empirical_fourier_decay(&spec, 1 << 16).map_err(|e| CliError::Numerical(e.to_string()))?;
        let want = nu.value() + 0.5;
        let pass = (fit.exponent - want).abs() <= 0.1;
        let pts: Vec<f64> = (0..64).map(|i| (i as f64 * 0.618_033_988_75).fract()).collect();
        let mut g = gram_matrix(&spec, &pts);
        g.add_diagonal(JITTER);
        let chol = Cholesky::factor(&g).is_ok();
        let _ = writeln!(
            out,
            "matern nu={nu}: decay exponent {:.4} (want {want} +- 0.1) {}, gram cholesky {}",
            fit.exponent,
            ok(pass),
            ok(chol)
        );
        if !pass || !chol {
            failed.push(nu.to_string());
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Numerical(format!("{out}kernel checks failed for nu = {}", failed.join(", "))))
    }
}
