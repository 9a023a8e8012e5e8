use epi_volterra::infectivity::{InfectivitySpec, LevelDistribution};
use epi_volterra::{InfectivityLaw, LifetimeDistribution, RateCurve};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exposed() -> InfectivityLaw {
    InfectivityLaw::new(InfectivitySpec::ExposedThenConstant {
        exposed: LifetimeDistribution::exponential(1.0).unwrap(),
        level: 1.2,
        period: LifetimeDistribution::gamma(3.0, 1.0).unwrap(),
    })
    .unwrap()
}

fn random_levels() -> InfectivityLaw {
    InfectivityLaw::new(InfectivitySpec::PiecewiseConstantRandom {
        levels: vec![
            LevelDistribution::Uniform { low: 0.5, high: 1.5 },
            LevelDistribution::Constant { value: 2.0 },
        ],
        durations: vec![
            LifetimeDistribution::exponential(2.0).unwrap(),
            LifetimeDistribution::deterministic(1.0).unwrap(),
        ],
        mc_samples: Some(100_000),
        mc_seed: Some(2),
    })
    .unwrap()
}

/// `λ̄(t)` against the sample mean of independently drawn profiles.
fn check_mean_against_sampling(law: &InfectivityLaw, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 40_000;
    let profiles: Vec<_> = (0..m).map(|_| law.sample_profile(&mut rng)).collect();
    for t in [0.2, 0.9, 1.7, 3.0] {
        let vals: Vec<f64> = profiles.iter().map(|p| p.evaluate(t)).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt() + law.mean_infectivity_std_err(t);
        let exact = law.mean_infectivity(t);
        assert!((mean - exact).abs() < 4.5 * se + 1e-9, "t={t}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn exposed_mean_curve() {
    check_mean_against_sampling(&exposed(), 10);
}

#[test]
fn random_level_mean_curve() {
    check_mean_against_sampling(&random_levels(), 11);
}

/// `E[∫λ] = R0`, estimated from exact profile integrals.
#[test]
fn integrated_profiles_average_to_r0() {
    for law in [exposed(), random_levels()] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 40_000;
        let vals: Vec<f64> = (0..m)
            .map(|_| {
                let p = law.sample_profile(&mut rng);
                p.integral(0.0, p.eta())
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        let r0 = law.integrated_mean();
        assert!((mean - r0).abs() < 4.5 * sd / (m as f64).sqrt() + 2e-3 * r0, "{mean} vs {r0}");
    }
}

proptest! {
    #[test]
    fn conditional_profiles_are_bounded_and_vanish_after_recovery(
        seed in 0u64..2000, age in 0.0f64..1.5, which in 0usize..3
    ) {
        let law = match which {
            0 => exposed(),
            1 => random_levels(),
            _ => InfectivityLaw::separable(
                RateCurve::from_knots(&[[0.0, 0.5], [2.0, 2.5], [5.0, 0.0]]).unwrap(),
                LifetimeDistribution::gamma(2.0, 1.0).unwrap(),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = law.sample_profile_conditional(age, &mut rng).unwrap();
        prop_assert!(p.eta() > age);
        for k in 0..50 {
            let t = k as f64 * 0.2;
            let v = p.evaluate(t);
            prop_assert!((0.0..=law.lambda_star()).contains(&v));
            if t >= p.eta() {
                prop_assert_eq!(v, 0.0);
            }
        }
        // exact integral against a fine midpoint sum
        let h = 1e-4;
        let n = (p.eta().min(8.0) / h) as usize;
        let mid: f64 = (0..n).map(|k| p.evaluate((k as f64 + 0.5) * h)).sum::<f64>() * h;
        prop_assert!((mid - p.integral(0.0, n as f64 * h)).abs() < 5e-3);
    }
}
