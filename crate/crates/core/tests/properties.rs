use chaoslab_core::model::{granular_media_model, vlasov_fokker_planck_model, InitialLaw, ModelSpec, Potential, VectorMap};
use chaoslab_core::ot::{sample_wasserstein, wasserstein_1d, EmpiricalMeasure, Order};
use chaoslab_core::par;
use chaoslab_core::sde::{run_particle_system, simulate_particle_system, SimConfig};
use proptest::prelude::*;

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * d)
}

fn triple() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=12).prop_flat_map(|(d, n)| (Just(d), points(n, d), points(n, d), points(n, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_axioms((d, a, b, c) in triple()) {
        let (a, b, c) = (
            EmpiricalMeasure::uniform(d, a).unwrap(),
            EmpiricalMeasure::uniform(d, b).unwrap(),
            EmpiricalMeasure::uniform(d, c).unwrap(),
        );
        for order in [Order::W1, Order::W2] {
            let ab = sample_wasserstein(order, &a, &b).unwrap();
            let ba = sample_wasserstein(order, &b, &a).unwrap();
            let bc = sample_wasserstein(order, &b, &c).unwrap();
            let ac = sample_wasserstein(order, &a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(sample_wasserstein(order, &a, &a).unwrap().abs() <= 1e-12);
        }
        prop_assert!(sample_wasserstein(Order::W1, &a, &b).unwrap() <= sample_wasserstein(Order::W2, &a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn translation((d, a, b, _) in triple(), shift in prop::collection::vec(-3.0..3.0f64, 3)) {
        let mu = EmpiricalMeasure::uniform(d, a.clone()).unwrap();
        let nu = EmpiricalMeasure::uniform(d, b.clone()).unwrap();
        let moved = |p: &[f64]| p.iter().enumerate().map(|(i, x)| x + shift[i % d]).collect::<Vec<_>>();
        let mu_s = EmpiricalMeasure::uniform(d, moved(&a)).unwrap();
        let nu_s = EmpiricalMeasure::uniform(d, moved(&b)).unwrap();
        let w = sample_wasserstein(Order::W2, &mu, &nu).unwrap();
        prop_assert!((w - sample_wasserstein(Order::W2, &mu_s, &nu_s).unwrap()).abs() <= 1e-8);
        // a rigid shift costs exactly its length in W2
        let norm = shift[..d].iter().map(|s| s * s).sum::<f64>().sqrt();
        prop_assert!((sample_wasserstein(Order::W2, &mu, &mu_s).unwrap() - norm).abs() <= 1e-8);
    }

    #[test]
    fn one_d_matches_quantiles(a in points(9, 1), b in points(9, 1)) {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let direct = (sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 9.0).sqrt();
        let mu = EmpiricalMeasure::uniform(1, a).unwrap();
        let nu = EmpiricalMeasure::uniform(1, b).unwrap();
        prop_assert!((wasserstein_1d(Order::W2, &mu, &nu).unwrap().cost - direct).abs() <= 1e-9);
    }

    #[test]
    fn exchangeable(seed in 0u64..1000, perm_seed in 0u64..1000, cubic in any::<bool>(), d in 1usize..=2) {
        let w = if cubic { Potential::Cubic { strength: 1.0 } } else { Potential::Quadratic { strength: 1.0 } };
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, w, d).unwrap();
        let n = 8;
        let cfg = SimConfig::new(0.01, 0.1, n, seed);
        let noise = cfg.noise();
        let initial = model.initial_law.sample_many(&noise, 0, n);
        let keys: Vec<u32> = (0..n as u32).collect();
        let base = run_particle_system(&model, &cfg, &noise, 0, initial.clone(), Some(&keys), &mut |_, _| {}).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| initial[p * d..(p + 1) * d].to_vec()).collect();
        let pkeys: Vec<u32> = perm.iter().map(|&p| p as u32).collect();
        let out = run_particle_system(&model, &cfg, &noise, 0, permuted, Some(&pkeys), &mut |_, _| {}).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..d {
                prop_assert_eq!(out[i * d + k].to_bits(), base[p * d + k].to_bits());
            }
        }
    }
}

fn kinetic() -> ModelSpec {
    vlasov_fokker_planck_model(
        Potential::Quadratic { strength: 1.0 },
        VectorMap::Linear { coefficient: 1.0 },
        VectorMap::Linear { coefficient: 1.0 },
        1,
    )
    .unwrap()
}

#[test]
fn kinetic_position_moves_by_velocity() {
    let model = kinetic();
    let cfg = SimConfig::new(0.01, 0.05, 16, 5);
    let ens = simulate_particle_system(&model, &cfg, &cfg.noise()).unwrap();
    for w in ens.states.windows(2) {
        for (a, b) in w[0].chunks(2).zip(w[1].chunks(2)) {
            assert_eq!(b[0], a[0] + a[1] * cfg.dt);
        }
    }
}

#[test]
fn thread_count_does_not_change_paths() {
    // large enough that each step is split across workers
    let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Cubic { strength: 1.0 }, 2).unwrap();
    let cfg = SimConfig::new(0.01, 0.1, 600, 9);
    let one = par::with_threads(1, || simulate_particle_system(&model, &cfg, &cfg.noise()).unwrap());
    let many = par::with_threads(4, || simulate_particle_system(&model, &cfg, &cfg.noise()).unwrap());
    assert_eq!(one, many);
}

#[test]
fn cubic_interaction_stays_finite() {
    let model = granular_media_model(Potential::Zero, Potential::Cubic { strength: 1.0 }, 1)
        .unwrap()
        .with_initial_law(InitialLaw::uniform_box(vec![-20.0], vec![20.0]).unwrap())
        .unwrap();
    let cfg = SimConfig::new(0.01, 1.0, 128, 2);
    for r in 0..5 {
        let c = cfg.clone().with_replica(r);
        let ens = simulate_particle_system(&model, &c, &c.noise()).unwrap();
        assert!(ens.final_state().iter().all(|x| x.is_finite()));
    }
}
