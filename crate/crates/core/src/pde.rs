//! Age-density view of the limit.
//!
//! The density `ī(t, x)` of `𝔍̄(t, dx)` solves a transport equation with
//! hazard sink, whose solution along characteristics is explicit:
//!
//! ```text
//! ī(t, x) = F^c(x) ī(t - x, 0)                          x < t
//! ī(t, x) = F^c(x) / F^c(x - t) · ī(0, x - t)           x ≥ t
//! ```
//!
//! Grids are filled from these formulas; the checks here verify that a grid
//! satisfies the equation, the boundary condition and the jump relations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::infectivity::InfectivityLaw;
use crate::lifetime::{Continuity, Hazard, LifetimeDistribution};
use crate::limit_solver::LimitSolution;

/// Survival used to transport mass along characteristics.
#[derive(Debug, Clone, PartialEq)]
pub enum AgeLaw {
    Period {
        dist: LifetimeDistribution,
        continuity: Continuity,
    },
    /// No recovery: `F^c ≡ 1`, `μ ≡ 0`.
    Immortal,
}

impl AgeLaw {
    pub fn right(dist: &LifetimeDistribution) -> Self {
        AgeLaw::Period {
            dist: dist.clone(),
            continuity: Continuity::Right,
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        match self {
            AgeLaw::Period { dist, continuity } => dist.survival_at(x, *continuity),
            AgeLaw::Immortal => 1.0,
        }
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            AgeLaw::Period { dist, .. } => dist.atoms(),
            AgeLaw::Immortal => Vec::new(),
        }
    }

    fn hazard_rate(&self, x: f64) -> Option<f64> {
        match self {
            AgeLaw::Period { dist, .. } => match dist.hazard(x) {
                Ok(Hazard::Rate(r)) => Some(r),
                _ => None,
            },
            AgeLaw::Immortal => Some(0.0),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Lattice `(t_n, x_j) = (n dt, j dt)` shared by both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dt: f64,
    /// Time indices to materialize, ascending. `None` keeps every row.
    pub rows: Option<Vec<usize>>,
    /// Largest age column; defaults to the horizon plus the oldest initial age.
    pub max_age: Option<f64>,
}

impl GridSpec {
    pub fn full(dt: f64) -> Self {
        GridSpec {
            dt,
            rows: None,
            max_age: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub dt: f64,
    /// Time index of each stored row.
    pub rows: Vec<usize>,
    pub columns: usize,
    /// Row-major values, `rows.len() × (columns + 1)`.
    values: Vec<f64>,
    /// `ī(t_n, 0)` for every lattice time.
    pub boundary: Vec<f64>,
    pub age_law: AgeLaw,
}

impl DensityGrid {
    pub fn width(&self) -> usize {
        self.columns + 1
    }

    /// Value at stored row `k` and column `j`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.width() + j]
    }

    pub fn set(&mut self, k: usize, j: usize, v: f64) {
        let w = self.width();
        self.values[k * w + j] = v;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.values[k * w..(k + 1) * w]
    }

    /// Stored row index of lattice time `n`.
    pub fn row_of(&self, n: usize) -> Option<usize> {
        self.rows.binary_search(&n).ok()
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..=self.columns).map(|j| j as f64 * self.dt).collect()
    }
}

/// Fill a grid from a boundary series and initial density by the explicit
/// formulas. Points with `x = t > 0` take the `x < t` branch.
pub fn density_from_boundary(
    boundary: &[f64],
    initial: &dyn Fn(f64) -> f64,
    initial_max_age: f64,
    age_law: AgeLaw,
    spec: &GridSpec,
) -> DensityGrid {
    let dt = spec.dt;
    let steps = boundary.len().saturating_sub(1);
    let rows = spec.rows.clone().unwrap_or_else(|| (0..=steps).collect());
    let max_age = spec.max_age.unwrap_or(steps as f64 * dt + initial_max_age);
    let columns = (max_age / dt - 1e-9).ceil().max(0.0) as usize;
    let width = columns + 1;
    let survival: Vec<f64> = (0..=columns).map(|j| age_law.survival(j as f64 * dt)).collect();
    let mut values = vec![0.0; rows.len() * width];
    for (k, &n) in rows.iter().enumerate() {
        let out = &mut values[k * width..(k + 1) * width];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = if j < n || (j == n && n > 0) {
                survival[j] * boundary[n - j]
            } else {
                // x - t on the lattice, so characteristics are followed exactly
                let y = (j - n) as f64 * dt;
                let back = if j - n <= columns { survival[j - n] } else { age_law.survival(y) };
                ratio(survival[j], back) * initial(y)
            };
        }
    }
    DensityGrid {
        dt,
        rows,
        columns,
        values,
        boundary: boundary.to_vec(),
        age_law,
    }
}

/// Density grid of a limit solution, transported with the right-continuous
/// survival (or `G^c` when `continuity` is `Left`).
pub fn density_from_solution(solution: &LimitSolution, spec: &GridSpec, continuity: Continuity) -> DensityGrid {
    let init = solution.initial.clone();
    let density = move |y: f64| init.density(y);
    let age_law = AgeLaw::Period {
        dist: solution.period().clone(),
        continuity,
    };
    let spec = GridSpec {
        dt: solution.dt,
        rows: spec.rows.clone(),
        max_age: spec.max_age,
    };
    density_from_boundary(&solution.upsilon, &density, solution.initial.max_age(), age_law, &spec)
}

/// Largest absolute value of a check and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxReport {
    pub max: f64,
    pub t: f64,
    pub x: f64,
    pub points: usize,
}

impl MaxReport {
    fn empty() -> Self {
        MaxReport {
            max: 0.0,
            t: 0.0,
            x: 0.0,
            points: 0,
        }
    }

    fn offer(&mut self, v: f64, t: f64, x: f64) {
        self.points += 1;
        if v.abs() > self.max || v.is_nan() {
            self.max = v.abs();
            self.t = t;
            self.x = x;
        }
    }
}

/// Transport residual along characteristics,
/// `(ī(t + dt, x + dt) - ī(t, x)) / dt + μ(x + dt/2) · mean of the two values`,
/// over consecutive stored rows, skipping steps on the line `x = t`.
pub fn transport_residual(grid: &DensityGrid) -> Result<MaxReport> {
    if !grid.age_law.atoms().is_empty() {
        return Err(Error::NotAbsolutelyContinuous);
    }
    let dt = grid.dt;
    let mut report = MaxReport::empty();
    let hazards: Vec<Option<f64>> = (0..grid.columns)
        .map(|j| {
            let mid = (j as f64 + 0.5) * dt;
            if grid.age_law.survival(mid) > 0.0 {
                grid.age_law.hazard_rate(mid)
            } else {
                None
            }
        })
        .collect();
    for k in 0..grid.rows.len().saturating_sub(1) {
        let n = grid.rows[k];
        if grid.rows[k + 1] != n + 1 {
            continue;
        }
        for (j, mu) in hazards.iter().enumerate() {
            if j == n {
                continue;
            }
            let Some(mu) = mu else { continue };
            let a = grid.get(k, j);
            let b = grid.get(k + 1, j + 1);
            let res = (b - a) / dt + mu * 0.5 * (a + b);
            report.offer(res, n as f64 * dt, j as f64 * dt);
        }
    }
    Ok(report)
}

/// `ī(t, 0) - S̄(t) ∫ K(x) ī(t, x) dx` per stored row `t > 0`, where
/// `K(x) = E[λ(x) | η > x]` (`λ̃` for separable laws) and the integral is a
/// trapezoid over the age lattice.
pub fn boundary_condition_check(grid: &DensityGrid, sbar: &[f64], law: &InfectivityLaw) -> MaxReport {
    let kernel: Vec<f64> = grid.ages().iter().map(|&x| law.infectivity_given_alive(x)).collect();
    let mut report = MaxReport::empty();
    for (k, &n) in grid.rows.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let integral = weighted_trapezoid(grid.row(k), &kernel, grid.dt);
        let v = grid.boundary[n] - sbar[n] * integral;
        report.offer(v, n as f64 * grid.dt, 0.0);
    }
    report
}

fn weighted_trapezoid(values: &[f64], weights: &[f64], h: f64) -> f64 {
    let prod: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    crate::quadrature::trapezoid(&prod, h)
}

/// `𝓘̄(t) = ∫ K(y) ī(t, y) dy` for each stored row, with the same kernel as
/// [`boundary_condition_check`].
pub fn aggregate_from_density(grid: &DensityGrid, law: &InfectivityLaw) -> Vec<f64> {
    let kernel: Vec<f64> = grid.ages().iter().map(|&x| law.infectivity_given_alive(x)).collect();
    (0..grid.rows.len()).map(|k| weighted_trapezoid(grid.row(k), &kernel, grid.dt)).collect()
}

/// Largest `|∫_0^x ī(t, y) dy - 𝔍̄(t, x)|` over stored rows and every
/// `stride`-th age column.
pub fn reconstruction_defect(grid: &DensityGrid, solution: &LimitSolution, stride: usize) -> MaxReport {
    let mut report = MaxReport::empty();
    let dt = grid.dt;
    for (k, &n) in grid.rows.iter().enumerate() {
        let row = grid.row(k);
        let mut acc = 0.0;
        for j in 0..=grid.columns {
            if j > 0 {
                acc += 0.5 * dt * (row[j - 1] + row[j]);
            }
            if j % stride.max(1) == 0 {
                let x = j as f64 * dt;
                report.offer(acc - solution.cumulative(n, x), n as f64 * dt, x);
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomCheck {
    pub location: f64,
    pub mass: f64,
    /// `1 - ν({a}) / G^c(a)`, the fraction surviving the atom.
    pub atom_factor: f64,
    /// Largest `|ī(t + dt, x + dt) / ī(t, x) - S(x + dt) / S(x)|` over steps
    /// whose age interval crosses the atom.
    pub max_ratio_error: f64,
    pub crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpReport {
    pub atoms: Vec<AtomCheck>,
    /// Largest `|ī|` at ages where the transport survival vanishes.
    pub max_beyond_support: f64,
}

/// Check the multiplicative drop of the density where characteristics cross
/// an atom of the period law, and that nothing survives past the support.
pub fn jump_consistency(grid: &DensityGrid) -> Result<JumpReport> {
    let atoms = grid.age_law.atoms();
    if atoms.is_empty() {
        return Err(Error::NoAtoms);
    }
    let dt = grid.dt;
    let left = matches!(
        grid.age_law,
        AgeLaw::Period {
            continuity: Continuity::Left,
            ..
        }
    );
    let surv: Vec<f64> = grid.ages().iter().map(|&x| grid.age_law.survival(x)).collect();
    let mut checks = Vec::with_capacity(atoms.len());
    for &(a, mass) in &atoms {
        let gc = match &grid.age_law {
            AgeLaw::Period { dist, .. } => dist.survival_left(a),
            AgeLaw::Immortal => 1.0,
        };
        let mut check = AtomCheck {
            location: a,
            mass,
            atom_factor: 1.0 - ratio(mass, gc),
            max_ratio_error: 0.0,
            crossings: 0,
        };
        for j in 0..grid.columns {
            let (lo, hi) = (j as f64 * dt, (j + 1) as f64 * dt);
            let crosses = if left { lo <= a && a < hi } else { lo < a && a <= hi };
            if !crosses {
                continue;
            }
            let expected = ratio(surv[j + 1], surv[j]);
            for k in 0..grid.rows.len().saturating_sub(1) {
                let n = grid.rows[k];
                if grid.rows[k + 1] != n + 1 || j == n {
                    continue;
                }
                let before = grid.get(k, j);
                if before <= 0.0 {
                    continue;
                }
                let got = grid.get(k + 1, j + 1) / before;
                check.max_ratio_error = check.max_ratio_error.max((got - expected).abs());
                check.crossings += 1;
            }
        }
        checks.push(check);
    }
    let mut beyond = 0.0f64;
    for k in 0..grid.rows.len() {
        for (j, s) in surv.iter().enumerate() {
            if *s == 0.0 {
                beyond = beyond.max(grid.get(k, j).abs());
            }
        }
    }
    Ok(JumpReport {
        atoms: checks,
        max_beyond_support: beyond,
    })
}
