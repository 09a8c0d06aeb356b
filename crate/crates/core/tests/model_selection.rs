use std::sync::{Arc, Mutex};

use kbandit::base_algorithms::*;
use kbandit::kernels::{KernelSpec, Regularity};
use kbandit::metrics::{run_episode, Environment, KernelExpansion, NoiseModel};
use kbandit::model_selection::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn corral_simplex_and_floor_over_random_steps() {
    let (t, m) = (10_000usize, 4usize);
    let mut s = CorralState::init(Regularity::THREE_HALVES, t, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let floor = s.gamma / m as f64;
    for step in 0..t {
        let i = rng.gen_range(0..m);
        let mut loss = vec![0.0; m];
        loss[i] = rng.gen::<f64>() / s.probs[i];
        s.update(&loss).unwrap();
        let total: f64 = s.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "step {step}: sum {total}");
        assert!(s.probs.iter().all(|&p| p >= floor * (1.0 - 1e-12)), "step {step}");
    }
    let cap = ((t * m) as f64).log2() + 1.0;
    assert!(s.restarts.iter().all(|&r| r as f64 <= cap), "{:?}", s.restarts);
}

#[test]
fn importance_weighted_losses_are_unbiased() {
    let probs = [0.5, 0.3, 0.15, 0.05];
    let losses = [0.2, 0.9, 0.5, 0.7];
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut i = 3;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                i = k;
                break;
            }
        }
        for j in 0..4 {
            let v = if j == i { losses[j] / probs[j] } else { 0.0 };
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    for j in 0..4 {
        let mean = sum[j] / n as f64;
        let var = sq[j] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - losses[j]).abs() <= 3.0 * se, "base {j}: {mean} vs {}", losses[j]);
    }
}

#[test]
fn equal_losses_keep_uniform_weights() {
    let mut s = CorralState::init(Regularity::HALF, 1000, 2).unwrap();
    for _ in 0..500 {
        s.update(&[0.4, 0.4]).unwrap();
        assert!((s.probs[0] - 0.5).abs() < 1e-12);
    }
    assert_eq!(s.restarts, vec![0, 0]);
}

#[test]
fn corral_runs_and_rejects_wild_rewards() {
    let k = KernelSpec::matern_with_lengthscale(Regularity::THREE_HALVES, 0.3).unwrap();
    let f = KernelExpansion::random(k, 8, 0.5, 3);
    let env = Environment::kernel_expansion("kx", f, NoiseModel::Gaussian { sigma: 0.1 });
    let bases: Vec<Box<dyn BanditAlgorithm>> = nested_grid(0.5)
        .into_iter()
        .map(|(nu, b)| {
            let mut c = AlgoConfig::new(nu, b, 64);
            c.lengthscale = Some(0.3);
            Box::new(GpUcb::new(c).unwrap()) as Box<dyn BanditAlgorithm>
        })
        .collect();
    let mut corral = Corral::new(Regularity::THREE_HALVES, 500, bases, RewardRange { lo: -2.0, hi: 2.0 }, 4).unwrap();
    let tr = run_episode(&mut corral, &env, 500, 4).unwrap();
    assert_eq!(tr.horizon(), 500);
    assert!((corral.state.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let big = Environment::new("big", |_| 10.0, NoiseModel::none(), &[]);
    let bases: Vec<Box<dyn BanditAlgorithm>> =
        vec![Box::new(FixedAction { x: 0.1 }), Box::new(FixedAction { x: 0.9 })];
    let mut corral = Corral::new(Regularity::HALF, 10, bases, RewardRange::default(), 0).unwrap();
    assert!(matches!(
        run_episode(&mut corral, &big, 10, 0),
        Err(AlgoError::RewardOutOfRange { .. })
    ));
}

/// Wraps a base and logs every action it plays.
struct Recording {
    inner: Box<dyn BanditAlgorithm>,
    log: Arc<Mutex<Vec<f64>>>,
}

impl BanditAlgorithm for Recording {
    fn select_action(&mut self, t: usize) -> f64 {
        self.inner.select_action(t)
    }
    fn observe(&mut self, x: f64, y: f64) -> Result<(), AlgoError> {
        self.log.lock().unwrap().push(x);
        self.inner.observe(x, y)
    }
    fn reset(&mut self) {
        self.inner.reset();
    }
    fn name(&self) -> String {
        self.inner.name()
    }
}

fn bound(nu: Regularity, constant: f64, m: usize) -> CandidateBound {
    CandidateBound {
        nu,
        b: 1.0,
        delta: 0.05,
        num_bases: m,
        constant,
    }
}

#[test]
fn rbbe_keeps_well_specified_bases_noiselessly() {
    let (mut violated, mut dropped) = (0, 0);
    let mut checked = 0;
    for trial in 0..100u64 {
        let k = KernelSpec::matern_with_lengthscale(Regularity::THREE_HALVES, 0.25).unwrap();
        let f = KernelExpansion::random(k, 10, 1.0, 1000 + trial);
        let env = Environment::kernel_expansion("kx", f, NoiseModel::none());
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut c = AlgoConfig::new(Regularity::THREE_HALVES, 1.0, 64);
        c.lengthscale = Some(0.25);
        c.lambda = 0.01;
        let bases: Vec<Box<dyn BanditAlgorithm>> = vec![
            Box::new(FixedAction { x: env.x_star }),
            Box::new(GpUcb::new(c).unwrap()),
            Box::new(FixedAction { x: rng.gen() }),
            Box::new(UniformRandom::new(trial)),
        ];
        let m = bases.len();
        let logs: Vec<Arc<Mutex<Vec<f64>>>> = (0..m).map(|_| Arc::default()).collect();
        let wrapped: Vec<Box<dyn BanditAlgorithm>> = bases
            .into_iter()
            .zip(&logs)
            .map(|(inner, log)| Box::new(Recording { inner, log: log.clone() }) as Box<dyn BanditAlgorithm>)
            .collect();
        let bounds = vec![
            bound(Regularity::FIVE_HALVES, 1.0, m),
            bound(Regularity::THREE_HALVES, 1.0, m),
            bound(Regularity::FIVE_HALVES, 0.2, m),
            bound(Regularity::HALF, 0.05, m),
        ];
        let mut rbbe = Rbbe::new(bounds.clone(), wrapped, 0.05).unwrap();
        run_episode(&mut rbbe, &env, 1500, trial).unwrap();
        let eliminated: Vec<usize> = rbbe.eliminations.iter().flat_map(|(_, v)| v.clone()).collect();
        for i in 0..m {
            let mut regret = 0.0;
            let mut within = true;
            for (n, &x) in logs[i].lock().unwrap().iter().enumerate() {
                regret += env.f_star - env.eval(x);
                within &= regret <= bounds[i].eval((n + 1) as f64);
            }
            if !within && i == 2 {
                violated += 1;
                dropped += eliminated.contains(&2) as usize;
            }
            if within {
                checked += 1;
                assert!(!eliminated.contains(&i), "trial {trial}: well-specified base {i} eliminated");
            }
        }
    }
    assert!(checked >= 100);
    eprintln!("misspecified base dropped in {dropped} of {violated} trials");
    assert!(violated > 0 && dropped * 2 > violated, "dropped {dropped} of {violated}");
}

#[test]
fn rbbe_play_counts_respect_ratio_bound() {
    for seed in 0..10u64 {
        let k = KernelSpec::matern_with_lengthscale(Regularity::HALF, 0.2).unwrap();
        let f = KernelExpansion::random(k, 10, 1.0, seed);
        let env = Environment::kernel_expansion("kx", f, NoiseModel::default());
        let grid = nested_grid(1.0);
        let bases: Vec<Box<dyn BanditAlgorithm>> = grid
            .iter()
            .map(|&(nu, b)| {
                let mut c = AlgoConfig::new(nu, b, 64);
                c.lengthscale = Some(0.2);
                Box::new(GpUcb::new(c).unwrap()) as Box<dyn BanditAlgorithm>
            })
            .collect();
        let bounds: Vec<CandidateBound> = grid
            .iter()
            .map(|&(nu, b)| CandidateBound {
                nu,
                b,
                delta: 0.05,
                num_bases: 3,
                constant: 1.0,
            })
            .collect();
        let mut rbbe = Rbbe::new(bounds, bases, 0.05).unwrap().with_audit();
        run_episode(&mut rbbe, &env, 2000, seed).unwrap();
        assert!(rbbe.worst_ratio_seen <= 1.0 + 1e-12, "seed {seed}: {}", rbbe.worst_ratio_seen);
        assert!(rbbe.worst_ratio_seen > 0.0);
    }
}

#[test]
fn rbbe_selects_smallest_presumed_regret() {
    let bounds = vec![bound(Regularity::HALF, 2.0, 2), bound(Regularity::HALF, 1.0, 2)];
    let mut s = RbbeState::new(bounds, 0.05).unwrap();
    assert_eq!(s.select(), 1);
    for _ in 0..5 {
        s.record(1, 0.0);
    }
    assert_eq!(s.select(), 0);
    assert!(RbbeState::new(vec![], 0.05).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn log_barrier_normaliser_exists(
        raw in prop::collection::vec(0.01f64..1.0, 2..6),
        loss in prop::collection::vec(0.0f64..50.0, 6),
        eta in 0.001f64..2.0,
    ) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let m = p.len();
        let out = log_barrier_update(&p, &vec![eta; m], &loss[..m]).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&v| v > 0.0));
        // the base with the largest loss never gains weight
        let worst = (0..m).max_by(|&a, &b| loss[a].total_cmp(&loss[b])).unwrap();
        prop_assert!(out[worst] <= p[worst] + 1e-9);
    }

    #[test]
    fn play_ratio_bound_is_at_least_two(ti in 0.1f64..10.0, tj in 0.1f64..10.0, bi in 0.5f64..1.0, bj in 0.5f64..1.0, n in 1.0f64..1e6) {
        prop_assert!(play_ratio_bound(ti, tj, bi, bj, n) >= 2.0);
    }
}
