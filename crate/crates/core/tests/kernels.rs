use kbandit::kernels::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

mod bessel {
    //! Matérn values through the modified Bessel function `K_ν`, independent of
    //! the closed forms under test.

    use std::f64::consts::PI;

    fn gamma(x: f64) -> f64 {
        // Lanczos, g = 7
        const G: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            return PI / ((PI * x).sin() * gamma(1.0 - x));
        }
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }

    fn bessel_i(nu: f64, z: f64) -> f64 {
        let half = z / 2.0;
        let mut term = half.powf(nu) / gamma(nu + 1.0);
        let mut sum = term;
        for k in 1..200 {
            let k = k as f64;
            term *= half * half / (k * (k + nu));
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// `K_ν(z)` by the reflection formula for small `z` and the integral
    /// `∫₀^∞ e^{−z cosh t} cosh(νt) dt` otherwise.
    pub fn bessel_k(nu: f64, z: f64) -> f64 {
        if z <= 2.0 {
            PI / 2.0 * (bessel_i(-nu, z) - bessel_i(nu, z)) / (nu * PI).sin()
        } else {
            let h: f64 = 1e-3;
            let mut sum = 0.5 * (-z).exp();
            let mut t: f64 = h;
            loop {
                let v = (-z * t.cosh()).exp() * (nu * t).cosh();
                sum += v;
                if v < 1e-300 || z * t.cosh() > 745.0 {
                    break;
                }
                t += h;
            }
            sum * h
        }
    }

    /// `2^{1−ν}/Γ(ν)·z^ν·K_ν(z)`.
    pub fn matern(nu: f64, z: f64) -> f64 {
        if z == 0.0 {
            return 1.0;
        }
        2f64.powf(1.0 - nu) / gamma(nu) * z.powf(nu) * bessel_k(nu, z)
    }
}

fn dense(spec: &KernelSpec, pts: &[f64]) -> DMatrix<f64> {
    let g = gram_matrix(spec, pts);
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| g.get(i, j))
}

#[test]
fn closed_forms_agree_with_bessel_oracle() {
    let mut worst: f64 = 0.0;
    for nu in [Regularity::HALF, Regularity::THREE_HALVES, Regularity::FIVE_HALVES] {
        for i in 0..=2000 {
            let z = 20.0 * i as f64 / 2000.0;
            let d = (matern_scaled(nu, z) - bessel::matern(nu.value(), z)).abs();
            worst = worst.max(d);
        }
    }
    assert!(worst < 1e-10, "max deviation {worst:e}");
}

#[test]
fn documented_kernel_values() {
    let half = KernelSpec::matern(Regularity::HALF).unwrap();
    assert_eq!(matern_eval(&half, 0.0), 1.0);
    assert!((matern_scaled(Regularity::HALF, 1.0) - (-1f64).exp()).abs() < 1e-15);
    assert!((matern_scaled(Regularity::THREE_HALVES, 2.0) - 3.0 * (-2f64).exp()).abs() < 1e-15);
    assert!((matern_scaled(Regularity::THREE_HALVES, 2.0) - 0.406_006).abs() < 1e-6);
    // default lengthscale makes z = r
    let k = KernelSpec::matern(Regularity::FIVE_HALVES).unwrap();
    assert!((matern_eval(&k, 0.7) - matern_scaled(Regularity::FIVE_HALVES, 0.7)).abs() < 1e-15);
}

#[test]
fn seven_halves_against_oracle() {
    for i in 0..=200 {
        let z = i as f64 / 10.0;
        let d = (matern_scaled(Regularity::SEVEN_HALVES, z) - bessel::matern(3.5, z)).abs();
        assert!(d < 1e-10, "z = {z}: {d:e}");
    }
}

#[test]
fn rejects_invalid_specs() {
    assert!(Regularity::from_twice(2).is_err());
    let nine = Regularity::from_twice(9).unwrap();
    assert!(matches!(KernelSpec::matern(nine), Err(KernelError::UnsupportedRegularity(_))));
    assert!(KernelSpec::matern_with_lengthscale(Regularity::HALF, 0.0).is_err());
    assert!(KernelSpec::matern_with_lengthscale(Regularity::HALF, f64::NAN).is_err());
}

#[test]
fn fourier_transform_matches_quadrature() {
    // κ̂(ω) = 2∫₀^∞ k(r) cos(ωr) dr
    for nu in [Regularity::HALF, Regularity::THREE_HALVES, Regularity::FIVE_HALVES] {
        let spec = KernelSpec::matern_with_lengthscale(nu, 0.8).unwrap();
        for omega in [0.0, 0.5, 2.0, 5.0] {
            let h = 1e-4;
            let n = 600_000;
            let mut s = 0.5 * matern_eval(&spec, 0.0);
            for i in 1..n {
                let r = i as f64 * h;
                s += matern_eval(&spec, r) * (omega * r).cos();
            }
            let quad = 2.0 * s * h;
            let exact = matern_fourier(&spec, omega);
            assert!((quad - exact).abs() < 1e-6 * exact.max(1.0), "nu {nu} omega {omega}: {quad} vs {exact}");
        }
    }
}

#[test]
fn fourier_rates_and_zero_frequency() {
    let spec = KernelSpec::matern(Regularity::HALF).unwrap();
    assert_eq!(fourier_decay_rate(&spec), 1.0);
    assert!((matern_fourier(&spec, 0.0) - 2.0).abs() < 1e-14);
    for nu in [Regularity::HALF, Regularity::THREE_HALVES, Regularity::FIVE_HALVES] {
        let spec = KernelSpec::matern_with_lengthscale(nu, 0.3).unwrap();
        let (w0, w1) = (1e2, 1e4);
        let slope = (matern_fourier(&spec, w1).ln() - matern_fourier(&spec, w0).ln()) / (w1 / w0).ln();
        assert!((slope + 2.0 * (nu.value() + 0.5)).abs() < 0.05, "nu {nu}: slope {slope}");
    }
}

#[test]
fn empirical_decay_exponents() {
    for (nu, want) in [(Regularity::HALF, 1.0), (Regularity::THREE_HALVES, 2.0), (Regularity::FIVE_HALVES, 3.0)] {
        let spec = KernelSpec::matern(nu).unwrap();
        let a = empirical_fourier_decay(&spec, 1 << 16).unwrap();
        let b = empirical_fourier_decay(&spec, 1 << 17).unwrap();
        assert!((a.exponent - want).abs() < 0.1, "nu {nu}: {}", a.exponent);
        assert!((a.exponent - b.exponent).abs() < 0.02);
    }
    let spec = KernelSpec::matern(Regularity::HALF).unwrap();
    assert!(matches!(empirical_fourier_decay(&spec, 3000), Err(KernelError::InvalidGridSize(3000))));
    assert!(matches!(empirical_fourier_decay(&spec, 1 << 8), Err(KernelError::GridTooCoarse(_))));
}

#[test]
fn small_gram_matrices() {
    let k = KernelSpec::matern(Regularity::THREE_HALVES).unwrap();
    let one = gram_matrix(&k, &[0.3]);
    assert_eq!(one.get(0, 0), 1.0);
    let two = dense(&k, &[0.4, 0.4]);
    let mut ev: Vec<f64> = two.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!(ev[0].abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
}

#[test]
fn kernel_spec_text_round_trip() {
    let k = KernelSpec::matern_with_lengthscale(Regularity::THREE_HALVES, 1.7320508).unwrap();
    let text = k.to_kv();
    assert!(text.contains("family=matern") && text.contains("nu=3/2"));
    assert_eq!(KernelSpec::from_kv(&text).unwrap(), k);
    assert_eq!("1.5".parse::<Regularity>().unwrap(), Regularity::THREE_HALVES);
}

fn any_nu() -> impl Strategy<Value = Regularity> {
    prop_oneof![
        Just(Regularity::HALF),
        Just(Regularity::THREE_HALVES),
        Just(Regularity::FIVE_HALVES),
        Just(Regularity::SEVEN_HALVES),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_bounded_and_decreasing(nu in any_nu(), l in 0.05f64..3.0, r in 0.0f64..5.0, dr in 1e-6f64..1.0) {
        let k = KernelSpec::matern_with_lengthscale(nu, l).unwrap();
        prop_assert_eq!(matern_eval(&k, 0.0), 1.0);
        let a = matern_eval(&k, r);
        let b = matern_eval(&k, r + dr);
        prop_assert!(a > 0.0 || r * k.inverse_scale() > 700.0);
        prop_assert!(a <= 1.0);
        prop_assert!(b < a || a == 0.0);
        prop_assert_eq!(k.between(0.2, 0.2 + r), k.between(0.2 + r, 0.2));
    }

    #[test]
    fn gram_is_psd(nu in any_nu(), l in 0.05f64..2.0, pts in prop::collection::vec(0.0f64..1.0, 1..200)) {
        let k = KernelSpec::matern_with_lengthscale(nu, l).unwrap();
        let mut g = dense(&k, &pts);
        for i in 0..pts.len() {
            g[(i, i)] += JITTER;
        }
        prop_assert!(gram_matrix(&k, &pts).is_symmetric(0.0));
        let min = g.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
    }
}
