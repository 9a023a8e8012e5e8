use epi_volterra::abm::Model;
use epi_volterra::analysis::{r0, sis_equilibrium, verify_equilibrium};
use epi_volterra::limit_solver::{solve, InitialCondition, LimitConfig, Solver};
use epi_volterra::quadrature::adaptive_simpson;
use epi_volterra::{InfectivityLaw, LifetimeDistribution, RateCurve};

/// A non-Markov SIS run settles on `I* = 1 - 1/R0` and the density `I* β F^c`.
#[test]
fn gamma_sis_reaches_equilibrium() {
    let law = InfectivityLaw::constant_rate(1.5, LifetimeDistribution::gamma(2.0, 1.0).unwrap()).unwrap();
    assert!((r0(&law) - 3.0).abs() < 1e-9);
    let cfg = LimitConfig {
        law: law.clone(),
        model: Model::Sis,
        initial: InitialCondition {
            fraction: 0.01,
            age_distribution: LifetimeDistribution::piecewise_cdf(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
        },
        horizon: 300.0,
        dt: 0.02,
        solver: Solver::default(),
        iid_remaining: None,
    };
    let sol = solve(&cfg).unwrap();
    let eq = sis_equilibrium(&law, 0.02).unwrap();
    assert!((eq.i_star - 2.0 / 3.0).abs() < 1e-12);
    let cmp = verify_equilibrium(&eq, &sol, None).unwrap();
    assert!(cmp.i_error < 1e-3, "{cmp:?}");
    assert!(cmp.density_sup_error < 5e-3, "{cmp:?}");
}

/// `R0 = ∫ λ̃ F^c` by direct quadrature for a time-varying curve.
#[test]
fn r0_matches_quadrature() {
    let curve = RateCurve::from_knots(&[[0.0, 0.0], [1.0, 3.0], [4.0, 0.5]]).unwrap();
    let period = LifetimeDistribution::gamma(3.0, 0.8).unwrap();
    let law = InfectivityLaw::separable(curve.clone(), period.clone());
    let direct = adaptive_simpson(&|t| curve.eval(t) * period.survival(t), 0.0, 40.0, 1e-12);
    assert!((r0(&law) - direct).abs() < 1e-7, "{} vs {direct}", r0(&law));
}

#[test]
fn short_horizon_is_refused() {
    let law = InfectivityLaw::constant_rate(2.0, LifetimeDistribution::exponential(0.1).unwrap()).unwrap();
    let cfg = LimitConfig {
        law: law.clone(),
        model: Model::Sis,
        initial: InitialCondition {
            fraction: 0.01,
            age_distribution: LifetimeDistribution::piecewise_cdf(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
        },
        horizon: 50.0,
        dt: 0.05,
        solver: Solver::default(),
        iid_remaining: None,
    };
    let sol = solve(&cfg).unwrap();
    let eq = sis_equilibrium(&law, 0.05).unwrap();
    assert!(matches!(
        verify_equilibrium(&eq, &sol, None),
        Err(epi_volterra::Error::HorizonTooShort(_))
    ));
}
