use kbandit::adversary::*;
use kbandit::kernels::{KernelSpec, Regularity};

mod oracle {
    //! Second implementation of the bump constants and the `(Δ, M)` choice,
    //! with hand-derived derivatives and Simpson quadrature.

    pub const K0: f64 = 0.367_879_441_171_442_33;

    fn bump(u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp()
        }
    }

    /// With `g = −1/(1−u²)`: `bump′ = g′e^g`, `bump″ = (g′² + g″)e^g`.
    fn derivative(m: u32, u: f64) -> f64 {
        let q = 1.0 - u * u;
        let g1 = -2.0 * u / (q * q);
        let g2 = -2.0 * (1.0 + 3.0 * u * u) / (q * q * q);
        match m {
            1 => g1 * bump(u),
            2 => (g1 * g1 + g2) * bump(u),
            _ => unreachable!(),
        }
    }

    pub fn i_m(m: u32) -> f64 {
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mut s = 0.0;
        for i in 1..n {
            let u = -1.0 + i as f64 * h;
            let d = derivative(m, u);
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * d * d;
        }
        s * h / 3.0
    }

    pub fn c_eff(m1: u32) -> f64 {
        let c = K0 / (2f64.powi(2 * m1 as i32 - 1) * i_m(m1).sqrt());
        c.powf(2.0 / (2.0 * m1 as f64 - 1.0))
    }

    pub fn delta(m1: u32, l1: f64, r: f64) -> f64 {
        let m = m1 as f64;
        let p = (m - 0.5) / (m + 0.5);
        (c_eff(m1) / 32.0).powf(p) * l1.powf(1.0 / (m + 0.5)) / r.powf(p)
    }

    pub fn count(m1: u32, l1: f64, delta: f64) -> usize {
        let e = 2.0 / (2.0 * m1 as f64 - 1.0);
        (c_eff(m1) * (l1 / delta).powf(e)).floor() as usize
    }
}

fn midpoint_instance(m1: u32, m2: u32, l2: f64, r: f64) -> AdversaryInstance {
    let (lo, hi) = admissible_l1_range(m1, m2, l2, r).unwrap();
    construct_instance(m1, m2, 0.5 * (lo + hi), l2, r).unwrap()
}

#[test]
fn bump_basics() {
    assert_eq!(bump(1.0), 0.0);
    assert_eq!(bump(-1.0), 0.0);
    assert_eq!(bump(2.0), 0.0);
    assert!((bump(0.5) - 0.263_597).abs() < 1e-6);
    assert_eq!(K0_STAR, (-1f64).exp());
}

#[test]
fn bump_integrals_match_oracle() {
    for m in [1, 2] {
        let ours = bump_sq_derivative_integral(m).unwrap();
        let theirs = oracle::i_m(m);
        assert!((ours - theirs).abs() < 1e-8 * theirs, "I_{m}: {ours} vs {theirs}");
    }
    let c = compute_constants(1, 2).unwrap();
    let c2 = compute_constants(2, 3).unwrap();
    // C(m) carries 1/2^{2m−1}
    let scale = c.c_m1 * c.i_m1.sqrt() / (c2.c_m1 * c2.i_m1.sqrt());
    assert!((scale - 4.0).abs() < 1e-12);
}

#[test]
fn instances_certify_and_reproduce_delta_and_m() {
    for (m1, m2, l2, r) in [(1, 2, 50.0, 20.0), (1, 3, 50.0, 200.0), (2, 3, 50.0, 200.0)] {
        let mut inst = midpoint_instance(m1, m2, l2, r);
        let p = inst.params;
        for grid in [1 << 14, 1 << 15] {
            let rep = inst.certify(grid);
            assert!(rep.certified, "({m1},{m2}) at {grid}: {:?}", rep.failures);
            assert!((rep.peak_phi0 - p.delta / 2.0).abs() <= 1e-6);
            assert!(rep.off_bin_max_diff <= 1e-12);
            assert!(rep.off_bin_min_gap >= p.delta / 2.0 - 1e-9);
        }
        let delta = oracle::delta(m1, p.l1, r);
        assert!((delta - p.delta).abs() < 1e-9 * delta, "({m1},{m2}): {delta} vs {}", p.delta);
        assert_eq!(oracle::count(m1, p.l1, p.delta), p.m);
        assert!((p.delta * r / p.m as f64).sqrt() <= 0.25);
        assert!(rep_support_exact(&inst));
    }
}

/// `f_s` vanishes outside `H_s`, `f_0` outside `H_0`.
fn rep_support_exact(inst: &AdversaryInstance) -> bool {
    let n = 4096;
    (0..=n).all(|i| {
        let x = i as f64 / n as f64;
        (0..=inst.params.m).all(|s| inst.in_bin(s, x) || inst.f_s(s, x) == 0.0)
    })
}

#[test]
fn small_r_tilde_violates_l1_lower_bound() {
    let (lo, _) = admissible_l1_range(1, 2, 50.0, 200.0).unwrap();
    let err = construct_instance(1, 2, lo * 1.5, 50.0, 1e-3).unwrap_err();
    match &err {
        AdversaryError::ConstraintViolation { which, .. } => assert_eq!(*which, Constraint::L1Lower),
        e => panic!("unexpected {e}"),
    }
    assert!(err.to_string().contains("L1 lower bound"));
    let too_big = construct_instance(1, 2, 1e9, 50.0, 200.0).unwrap_err();
    assert!(matches!(too_big, AdversaryError::ConstraintViolation { which: Constraint::L1Upper, .. }));
    assert!(matches!(
        construct_instance(2, 2, 1.0, 1.0, 1.0),
        Err(AdversaryError::ConstraintViolation { which: Constraint::Orders, .. })
    ));
}

#[test]
fn tampered_instances_fail_certification() {
    let inst = midpoint_instance(1, 3, 50.0, 200.0);
    let mut tall = inst.clone();
    tall.params.a *= 10.0;
    let rep = verify_conditions(&tall, 1 << 14);
    assert!(!rep.seminorms_ok && !rep.certified);

    let mut wide = inst.clone();
    wide.params.b *= 0.3;
    let rep = verify_conditions(&wide, 1 << 14);
    assert!(!rep.shape_ok && !rep.certified);
}

#[test]
fn seminorm_examples() {
    assert!((sobolev_seminorm(&|x| x, 1, 1 << 12).unwrap() - 1.0).abs() < 1e-6);
    let s = sobolev_seminorm(&|x| (2.0 * std::f64::consts::PI * x).sin(), 1, 1 << 12).unwrap();
    assert!((s - 4.442_883).abs() < 1e-4, "{s}");
    for m in 1..=4 {
        assert!(sobolev_seminorm(&|_| 0.7, m, 1 << 10).unwrap().abs() < 1e-9);
    }
    assert!(sobolev_seminorm(&|x| x, 5, 64).is_err());
}

#[test]
fn norms_are_homogeneous_and_refinement_stable() {
    let mut inst = midpoint_instance(1, 2, 50.0, 20.0);
    assert!(inst.certify(1 << 14).certified);
    let sup = inst.support(0);
    let spec = KernelSpec::matern(Regularity::THREE_HALVES).unwrap();
    let base = |c: f64| {
        let f = |x: f64| c * inst.f0(x);
        let semi = sobolev_seminorm_on(&f, 2, sup, 1 << 12).unwrap().value;
        let rkhs = rkhs_norm_surrogate(&f, sup, &spec, 1 << 10).unwrap();
        (semi, rkhs)
    };
    let (s1, r1) = base(1.0);
    assert!(r1.value.is_finite() && r1.rel_delta < 0.01);
    for c in [1e-3, 7.0] {
        let (sc, rc) = base(c);
        assert!((sc / (c * s1) - 1.0).abs() < 1e-6);
        assert!((rc.value / (c * r1.value) - 1.0).abs() < 1e-6);
        assert!(((rc.value / sc) / (r1.value / s1) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn lower_bound_value_scaling() {
    let v = lower_bound_value(1, 3.0, 100.0, 1000.0).unwrap();
    assert!((lower_bound_value(1, 3.0, 100.0, 2000.0).unwrap() / v - 2.0).abs() < 1e-12);
    let ratio = lower_bound_value(1, 3.0, 200.0, 1000.0).unwrap() / v;
    assert!((ratio - 2f64.powf(-1.0 / 3.0)).abs() < 1e-12);
    let theirs = 1000.0 * oracle::delta(1, 3.0, 100.0) / 8.0;
    assert!((v - theirs).abs() < 1e-9 * theirs);
}

#[test]
fn artifact_round_trip_and_corruption() {
    let mut inst = midpoint_instance(2, 3, 50.0, 200.0);
    assert!(inst.certify(1 << 14).certified);
    let text = export_instance(&inst, 257);
    let art = parse_artifact(&text).unwrap();
    assert_eq!(art.params, inst.params);
    assert_eq!(art.table.len(), 258);
    let (_, rep) = certify_artifact(&text, 1 << 14).unwrap();
    assert!(rep.certified);

    // flip one table value
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines.len() - 60;
    let mut cells: Vec<String> = lines[row].split(',').map(String::from).collect();
    cells[1] = format!("{:.16e}", cells[1].parse::<f64>().unwrap() + 1e-3);
    lines[row] = cells.join(",");
    let bad = lines.join("\n");
    assert!(matches!(certify_artifact(&bad, 1 << 14), Err(AdversaryError::Artifact(_))));

    let bad = text.replace(&format!("M={}", inst.params.m), &format!("M={}", inst.params.m + 1));
    assert!(certify_artifact(&bad, 1 << 14).is_err());
    assert!(parse_artifact("hello").is_err());
}
