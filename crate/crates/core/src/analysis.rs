//! Reproduction number and SIS endemic equilibrium.

use serde::Serialize;

use crate::abm::Model;
use crate::error::{Error, Result};
use crate::infectivity::InfectivityLaw;
use crate::lifetime::{Continuity, LifetimeDistribution};
use crate::limit_solver::LimitSolution;
use crate::pde::{density_from_solution, GridSpec};

/// `R₀ = ∫_0^∞ λ̄(t) dt`.
pub fn r0(law: &InfectivityLaw) -> f64 {
    law.integrated_mean()
}

/// SIS equilibrium: `I* = (1 - 1/R₀)^+`, age law `F_e`, density `I* β F^c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub r0: f64,
    pub i_star: f64,
    pub beta: f64,
    /// Age grid of the tabulated curves.
    pub ages: Vec<f64>,
    /// `𝔍*(x) / I* = F_e(x)`.
    pub equilibrium_age_cdf: Vec<f64>,
    /// `ī*(x)`.
    pub equilibrium_density: Vec<f64>,
    #[serde(skip)]
    period: LifetimeDistribution,
}

impl EquilibriumReport {
    pub fn age_cdf(&self, x: f64) -> f64 {
        self.period.equilibrium_cdf(x).unwrap_or(f64::NAN)
    }

    /// `𝔍*(x) = I* F_e(x)`.
    pub fn cumulative(&self, x: f64) -> f64 {
        self.i_star * self.age_cdf(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.i_star * self.beta * self.period.survival(x)
    }
}

/// Equilibrium quantities, tabulated on `[0, effective end]` with step `step`.
pub fn sis_equilibrium(law: &InfectivityLaw, step: f64) -> Result<EquilibriumReport> {
    let period = law.period().clone();
    let r0 = r0(law);
    let i_star = if r0 > 1.0 { 1.0 - 1.0 / r0 } else { 0.0 };
    let beta = period.rate();
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InfiniteMean);
    }
    let end = period.effective_end();
    let n = (end / step).ceil() as usize;
    let ages: Vec<f64> = (0..=n).map(|j| j as f64 * step).collect();
    let equilibrium_age_cdf = ages.iter().map(|&x| period.equilibrium_cdf(x)).collect::<Result<Vec<_>>>()?;
    let equilibrium_density = ages.iter().map(|&x| i_star * beta * period.survival(x)).collect();
    Ok(EquilibriumReport {
        r0,
        i_star,
        beta,
        ages,
        equilibrium_age_cdf,
        equilibrium_density,
        period,
    })
}

/// Observed distance between a long SIS run and the equilibrium formulas.
/// Nothing is asserted here: convergence to equilibrium is not a theorem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumComparison {
    pub horizon: f64,
    pub tail_window: f64,
    pub tail_mean_i: f64,
    pub final_i: f64,
    pub i_star: f64,
    pub i_error: f64,
    /// `sup_x |ī(T, x) - ī*(x)|` over lattice ages that are not atoms.
    pub density_sup_error: f64,
    pub density_sup_at: f64,
}

/// Compare the tail of `solution` with `report`. `tail_window` defaults to
/// the last tenth of the horizon.
pub fn verify_equilibrium(
    report: &EquilibriumReport,
    solution: &LimitSolution,
    tail_window: Option<f64>,
) -> Result<EquilibriumComparison> {
    if solution.model != Model::Sis {
        return Err(Error::config("equilibrium comparison needs an SIS solution"));
    }
    let horizon = solution.horizon();
    let mean = solution.period().mean();
    if horizon < 10.0 * mean {
        return Err(Error::HorizonTooShort(format!(
            "horizon {horizon} is shorter than 10 mean periods ({})",
            10.0 * mean
        )));
    }
    let window = tail_window.unwrap_or(0.1 * horizon).clamp(solution.dt, horizon);
    let first = ((horizon - window) / solution.dt).round() as usize;
    let tail = &solution.i[first..];
    let tail_mean_i = tail.iter().sum::<f64>() / tail.len() as f64;

    let last = solution.steps();
    let spec = GridSpec {
        dt: solution.dt,
        rows: Some(vec![last]),
        max_age: Some(horizon.min(solution.period().effective_end())),
    };
    let grid = density_from_solution(solution, &spec, Continuity::Right);
    let atoms: Vec<f64> = solution.period().atoms().into_iter().map(|(a, _)| a).collect();
    let mut sup = 0.0f64;
    let mut at = 0.0;
    for (j, x) in grid.ages().into_iter().enumerate() {
        if atoms.contains(&x) {
            continue;
        }
        let d = (grid.get(0, j) - report.density(x)).abs();
        if d > sup {
            sup = d;
            at = x;
        }
    }
    Ok(EquilibriumComparison {
        horizon,
        tail_window: window,
        tail_mean_i,
        final_i: solution.i[last],
        i_star: report.i_star,
        i_error: (tail_mean_i - report.i_star).abs(),
        density_sup_error: sup,
        density_sup_at: at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infectivity::RateCurve;
    use crate::quadrature::trapezoid;

    fn exp(rate: f64) -> LifetimeDistribution {
        LifetimeDistribution::exponential(rate).unwrap()
    }

    #[test]
    fn r0_examples() {
        let law = InfectivityLaw::constant_rate(0.5, exp(0.5)).unwrap();
        assert!((r0(&law) - 1.0).abs() < 1e-9);
        let gamma = LifetimeDistribution::gamma(3.0, 0.5).unwrap();
        let law = InfectivityLaw::constant_rate(2.0, gamma).unwrap();
        assert!((r0(&law) - 3.0).abs() < 1e-8);
        assert_eq!(r0(&InfectivityLaw::constant_rate(0.0, exp(1.0)).unwrap()), 0.0);
    }

    #[test]
    fn equilibrium_examples() {
        let rep = sis_equilibrium(&InfectivityLaw::constant_rate(2.0, exp(1.0)).unwrap(), 0.01).unwrap();
        assert!((rep.i_star - 0.5).abs() < 1e-9);
        assert!((rep.equilibrium_density[0] - 0.5).abs() < 1e-9);
        // d ī*/dx = -β ī* for exponential periods
        let h = 1e-5;
        let x = 0.7;
        let deriv = (rep.density(x + h) - rep.density(x - h)) / (2.0 * h);
        assert!((deriv + rep.density(x)).abs() < 1e-8);
        assert!((trapezoid(&rep.equilibrium_density, 0.01) - rep.i_star).abs() < 1e-4);

        let free = sis_equilibrium(&InfectivityLaw::constant_rate(0.8, exp(1.0)).unwrap(), 0.1).unwrap();
        assert_eq!(free.i_star, 0.0);
        assert!(free.equilibrium_density.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scale_coupling() {
        let curve = RateCurve::from_knots(&[[0.0, 1.0], [2.0, 0.4]]).unwrap();
        let doubled = RateCurve::from_knots(&[[0.0, 2.0], [2.0, 0.8]]).unwrap();
        let period = LifetimeDistribution::gamma(2.0, 1.0).unwrap();
        let a = sis_equilibrium(&InfectivityLaw::separable(curve, period.clone()), 0.1).unwrap();
        let b = sis_equilibrium(&InfectivityLaw::separable(doubled, period), 0.1).unwrap();
        assert!((b.r0 - 2.0 * a.r0).abs() < 1e-9);
        assert!((b.i_star - (1.0 - 1.0 / (2.0 * a.r0))).abs() < 1e-9);
    }
}
