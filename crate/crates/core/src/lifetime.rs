//! Infectious-period laws.
//!
//! A [`LifetimeDistribution`] is the law `F` of the infectious period `η`.
//! Besides the CDF it exposes everything the simulators and solvers derive
//! from it: the right-continuous survival `F^c`, its left-continuous version
//! `G^c(x) = F^c(x-)`, the hazard (rate or atom), the stationary-excess law
//! `F_e`, and the law of the remaining period given the current infection age.
//!
//! Ratios with a zero survival in the denominator evaluate to zero throughout
//! the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::piecewise_simpson;

/// Serialized form of a distribution, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LifetimeKind {
    Exponential {
        rate: f64,
    },
    Deterministic {
        t_i: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Linear interpolation between `(x, F(x))` knots. `F = 0` left of the
    /// first knot, so a positive first value is an atom there.
    PiecewiseCdf {
        knots: Vec<[f64; 2]>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<LifetimeKind>,
    },
}

/// Which one-sided version of the survival function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Continuity {
    /// `F^c(x) = 1 - F(x)`.
    #[default]
    Right,
    /// `G^c(x) = F^c(x-)`.
    Left,
}

/// Hazard at a point: a rate for the absolutely continuous part, or the
/// conditional mass `ν({x}) / G^c(x)` of an atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hazard {
    Rate(f64),
    Atom(f64),
}

impl Hazard {
    pub fn value(self) -> f64 {
        match self {
            Hazard::Rate(v) | Hazard::Atom(v) => v,
        }
    }

    pub fn is_atom(self) -> bool {
        matches!(self, Hazard::Atom(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LifetimeKind", into = "LifetimeKind")]
pub struct LifetimeDistribution {
    law: Law,
    mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Law {
    Exponential { rate: f64 },
    Deterministic { t_i: f64 },
    Gamma { shape: f64, scale: f64 },
    Piecewise { xs: Vec<f64>, fs: Vec<f64> },
    Mixture { weights: Vec<f64>, components: Vec<LifetimeDistribution> },
}

impl TryFrom<LifetimeKind> for LifetimeDistribution {
    type Error = Error;

    fn try_from(kind: LifetimeKind) -> Result<Self> {
        match kind {
            LifetimeKind::Exponential { rate } => Self::exponential(rate),
            LifetimeKind::Deterministic { t_i } => Self::deterministic(t_i),
            LifetimeKind::Gamma { shape, scale } => Self::gamma(shape, scale),
            LifetimeKind::PiecewiseCdf { knots } => Self::piecewise_cdf(&knots),
            LifetimeKind::Mixture {
                weights,
                components,
            } => {
                let components = components
                    .into_iter()
                    .map(Self::try_from)
                    .collect::<Result<Vec<_>>>()?;
                Self::mixture(weights, components)
            }
        }
    }
}

impl From<LifetimeDistribution> for LifetimeKind {
    fn from(d: LifetimeDistribution) -> Self {
        d.kind()
    }
}

fn positive_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl LifetimeDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        let rate = positive_finite(rate, "exponential rate")?;
        Self::finish(Law::Exponential { rate })
    }

    pub fn deterministic(t_i: f64) -> Result<Self> {
        let t_i = positive_finite(t_i, "deterministic period t_i")?;
        Self::finish(Law::Deterministic { t_i })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        let shape = positive_finite(shape, "gamma shape")?;
        let scale = positive_finite(scale, "gamma scale")?;
        Self::finish(Law::Gamma { shape, scale })
    }

    /// Knots must be strictly increasing in `x >= 0`, nondecreasing in `F`,
    /// with `F` in `[0, 1]` and the last knot at `F = 1`.
    pub fn piecewise_cdf(knots: &[[f64; 2]]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::config("piecewise_cdf needs at least one knot"));
        }
        let mut xs = Vec::with_capacity(knots.len());
        let mut fs = Vec::with_capacity(knots.len());
        for (i, &[x, f]) in knots.iter().enumerate() {
            if !x.is_finite() || x < 0.0 || !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("piecewise_cdf knot {i} = ({x}, {f}) out of range")));
            }
            if i > 0 {
                if x <= xs[i - 1] {
                    return Err(Error::config("piecewise_cdf knots must be strictly increasing in x"));
                }
                if f < fs[i - 1] {
                    return Err(Error::config("piecewise_cdf values must be nondecreasing"));
                }
            }
            xs.push(x);
            fs.push(f);
        }
        let last = fs.len() - 1;
        if (fs[last] - 1.0).abs() > 1e-12 {
            return Err(Error::config("piecewise_cdf must reach F = 1 at its last knot"));
        }
        fs[last] = 1.0;
        Self::finish(Law::Piecewise { xs, fs })
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<LifetimeDistribution>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::config("mixture needs one weight per component"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::config("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("mixture weights sum to {total}, expected 1")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::finish(Law::Mixture {
            weights,
            components,
        })
    }

    fn finish(law: Law) -> Result<Self> {
        let mut d = LifetimeDistribution { law, mean: f64::NAN };
        let mean = d.integrated_survival(f64::INFINITY);
        if !(mean.is_finite()) {
            return Err(Error::InfiniteMean);
        }
        if mean <= 0.0 {
            return Err(Error::config("infectious period has zero mean"));
        }
        d.mean = mean;
        Ok(d)
    }

    pub fn kind(&self) -> LifetimeKind {
        match &self.law {
            Law::Exponential { rate } => LifetimeKind::Exponential { rate: *rate },
            Law::Deterministic { t_i } => LifetimeKind::Deterministic { t_i: *t_i },
            Law::Gamma { shape, scale } => LifetimeKind::Gamma {
                shape: *shape,
                scale: *scale,
            },
            Law::Piecewise { xs, fs } => LifetimeKind::PiecewiseCdf {
                knots: xs.iter().zip(fs).map(|(x, f)| [*x, *f]).collect(),
            },
            Law::Mixture {
                weights,
                components,
            } => LifetimeKind::Mixture {
                weights: weights.clone(),
                components: components.iter().map(|c| c.kind()).collect(),
            },
        }
    }

    /// `β⁻¹ = ∫ F^c`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `β`, the reciprocal of the mean period.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => -(-rate * x).exp_m1(),
            Law::Deterministic { t_i } => {
                if x >= *t_i {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Gamma { shape, scale } => gamma_lr(*shape, x / scale),
            Law::Piecewise { xs, fs } => piecewise_value(xs, fs, x),
            Law::Mixture {
                weights,
                components,
            } => weights.iter().zip(components).map(|(w, c)| w * c.cdf(x)).sum(),
        }
    }

    /// Right-continuous survival `F^c(x)`; equals 1 for `x < 0`.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match &self.law {
            Law::Exponential { rate } => (-rate * x).exp(),
            Law::Deterministic { t_i } => {
                if x < *t_i {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Gamma { shape, scale } => {
                if x == 0.0 {
                    1.0
                } else {
                    gamma_ur(*shape, x / scale)
                }
            }
            Law::Piecewise { xs, fs } => 1.0 - piecewise_value(xs, fs, x),
            Law::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.survival(x))
                .sum(),
        }
    }

    /// Left-continuous survival `G^c(x) = F^c(x-)`.
    pub fn survival_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match &self.law {
            Law::Deterministic { t_i } => {
                if x <= *t_i {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Piecewise { xs, .. } if x <= xs[0] => 1.0,
            Law::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.survival_left(x))
                .sum(),
            _ => self.survival(x),
        }
    }

    pub fn survival_at(&self, x: f64, continuity: Continuity) -> f64 {
        match continuity {
            Continuity::Right => self.survival(x),
            Continuity::Left => self.survival_left(x),
        }
    }

    /// Density of the absolutely continuous part (atoms excluded).
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => rate * (-rate * x).exp(),
            Law::Deterministic { .. } => 0.0,
            Law::Gamma { shape, scale } => {
                let z = x / scale;
                if z == 0.0 {
                    return match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    };
                }
                ((shape - 1.0) * z.ln() - z - ln_gamma(*shape)).exp() / scale
            }
            Law::Piecewise { xs, fs } => {
                let n = xs.len();
                if x < xs[0] || x >= xs[n - 1] {
                    return 0.0;
                }
                let i = xs.partition_point(|&k| k <= x);
                (fs[i] - fs[i - 1]) / (xs[i] - xs[i - 1])
            }
            Law::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.density(x))
                .sum(),
        }
    }

    /// Declared atoms as `(location, mass)`, sorted by location.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.law {
            Law::Exponential { .. } | Law::Gamma { .. } => Vec::new(),
            Law::Deterministic { t_i } => vec![(*t_i, 1.0)],
            Law::Piecewise { xs, fs } => {
                if fs[0] > 0.0 {
                    vec![(xs[0], fs[0])]
                } else {
                    Vec::new()
                }
            }
            Law::Mixture {
                weights,
                components,
            } => {
                let mut out: Vec<(f64, f64)> = Vec::new();
                for (w, c) in weights.iter().zip(components) {
                    for (a, m) in c.atoms() {
                        match out.iter_mut().find(|(b, _)| *b == a) {
                            Some(slot) => slot.1 += w * m,
                            None => out.push((a, w * m)),
                        }
                    }
                }
                out.sort_by(|p, q| p.0.total_cmp(&q.0));
                out
            }
        }
    }

    pub fn is_absolutely_continuous(&self) -> bool {
        self.atoms().is_empty()
    }

    /// Right end of the support, if bounded.
    pub fn support_end(&self) -> Option<f64> {
        match &self.law {
            Law::Exponential { .. } | Law::Gamma { .. } => None,
            Law::Deterministic { t_i } => Some(*t_i),
            Law::Piecewise { xs, .. } => xs.last().copied(),
            Law::Mixture { components, .. } => components
                .iter()
                .map(|c| c.support_end())
                .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e))),
        }
    }

    /// Points where `F` or its density may fail to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = match &self.law {
            Law::Exponential { .. } | Law::Gamma { .. } => Vec::new(),
            Law::Deterministic { t_i } => vec![*t_i],
            Law::Piecewise { xs, .. } => xs.clone(),
            Law::Mixture { components, .. } => {
                components.iter().flat_map(|c| c.breakpoints()).collect()
            }
        };
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// A point beyond which the survival is negligible (below `1e-16`).
    pub fn effective_end(&self) -> f64 {
        if let Some(end) = self.support_end() {
            return end;
        }
        let mut hi = self.mean.max(1e-3);
        while self.survival(hi) > 1e-16 {
            hi *= 2.0;
        }
        hi
    }

    /// `∫_0^x F^c(s) ds`, in closed form for every kind.
    pub fn integrated_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => {
                if x.is_infinite() {
                    1.0 / rate
                } else {
                    -(-rate * x).exp_m1() / rate
                }
            }
            Law::Deterministic { t_i } => x.min(*t_i),
            Law::Gamma { shape, scale } => {
                if x.is_infinite() {
                    shape * scale
                } else {
                    let z = x / scale;
                    x * gamma_ur(*shape, z) + shape * scale * gamma_lr(shape + 1.0, z)
                }
            }
            Law::Piecewise { xs, fs } => {
                let mut acc = x.min(xs[0]);
                for i in 1..xs.len() {
                    if x <= xs[i - 1] {
                        break;
                    }
                    let b = x.min(xs[i]);
                    let sa = 1.0 - fs[i - 1];
                    let sb = 1.0 - piecewise_value(xs, fs, b);
                    acc += 0.5 * (sa + sb) * (b - xs[i - 1]);
                }
                acc
            }
            Law::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.integrated_survival(x))
                .sum(),
        }
    }

    /// `E[η²]`.
    pub fn second_moment(&self) -> f64 {
        match &self.law {
            Law::Exponential { rate } => 2.0 / (rate * rate),
            Law::Deterministic { t_i } => t_i * t_i,
            Law::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            Law::Piecewise { xs, fs } => {
                let mut acc = fs[0] * xs[0] * xs[0];
                for i in 1..xs.len() {
                    let (a, b) = (xs[i - 1], xs[i]);
                    acc += (fs[i] - fs[i - 1]) * (a * a + a * b + b * b) / 3.0;
                }
                acc
            }
            Law::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.second_moment())
                .sum(),
        }
    }

    /// Stationary-excess CDF `F_e(x) = β ∫_0^x F^c`.
    pub fn equilibrium_cdf(&self, x: f64) -> Result<f64> {
        if !self.mean.is_finite() {
            return Err(Error::InfiniteMean);
        }
        Ok((self.integrated_survival(x) / self.mean).clamp(0.0, 1.0))
    }

    /// `P(η > age + t | η > age)`, i.e. `F^c(t + age) / F^c(age)`.
    ///
    /// When `F^c(age) = 0` but `G^c(age) > 0` (age sits on the final atom) the
    /// remaining period is zero and the value is 0. Ages with `G^c(age) = 0`
    /// are rejected.
    pub fn conditional_remaining_survival(&self, age: f64, t: f64) -> Result<f64> {
        if let Law::Exponential { rate } = self.law {
            return Ok((-rate * t.max(0.0)).exp());
        }
        if self.survival_left(age) <= 0.0 {
            return Err(Error::DegenerateAge { age });
        }
        if t < 0.0 {
            return Ok(1.0);
        }
        let den = self.survival(age);
        if den <= 0.0 {
            return Ok(0.0);
        }
        Ok((self.survival(age + t) / den).min(1.0))
    }

    /// Smallest `x` with `F(x) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.law {
            Law::Exponential { rate } => -(-p).ln_1p() / rate,
            Law::Deterministic { t_i } => *t_i,
            Law::Piecewise { xs, fs } => piecewise_quantile(xs, fs, p),
            _ => {
                if p <= 0.0 {
                    return 0.0;
                }
                self.invert_survival(1.0 - p, 0.0)
            }
        }
    }

    /// Smallest `x >= lower` with `F^c(x) <= level`, by bisection.
    fn invert_survival(&self, level: f64, lower: f64) -> f64 {
        let mut lo = lower;
        let mut hi = lower + self.mean.max(1e-6);
        while self.survival(hi) > level {
            lo = hi;
            hi = lower + 2.0 * (hi - lower);
            if !hi.is_finite() {
                return lo;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.survival(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Draws an infectious period.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_remaining(0.0, rng)
            .expect("age 0 is always inside the support")
    }

    /// Draws the remaining period of an individual currently of age `age`,
    /// by inverse transform on the conditional survival.
    pub fn sample_remaining<R: Rng + ?Sized>(&self, age: f64, rng: &mut R) -> Result<f64> {
        if let Law::Exponential { rate } = self.law {
            return Ok(-(1.0 - rng.random::<f64>()).ln() / rate);
        }
        if self.survival_left(age) <= 0.0 {
            return Err(Error::DegenerateAge { age });
        }
        let den = self.survival(age);
        if den <= 0.0 {
            return Ok(0.0);
        }
        // u in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        let remaining = match &self.law {
            Law::Exponential { rate } => -u.ln() / rate,
            Law::Deterministic { t_i } => t_i - age,
            Law::Piecewise { xs, fs } => {
                let p = (1.0 - u * den).clamp(0.0, 1.0);
                piecewise_quantile(xs, fs, p).max(age) - age
            }
            _ => self.invert_survival(u * den, age.max(0.0)) - age,
        };
        Ok(remaining.max(0.0))
    }

    /// Hazard at `x`: `f(x)/F^c(x)` off atoms, `ν({x})/G^c(x)` on an atom.
    pub fn hazard(&self, x: f64) -> Result<Hazard> {
        let x = x.max(0.0);
        if let Law::Exponential { rate } = self.law {
            return Ok(Hazard::Rate(rate));
        }
        if let Some((_, mass)) = self.atoms().into_iter().find(|(a, _)| *a == x) {
            let g = self.survival_left(x);
            return Ok(Hazard::Atom(if g > 0.0 { mass / g } else { 0.0 }));
        }
        let s = self.survival(x);
        if s <= 0.0 {
            return Err(Error::UndefinedHazard { x });
        }
        Ok(Hazard::Rate(self.density(x) / s))
    }

    /// `∫_{(a, b]} g(y) F(dy)`: atoms contribute point masses, the absolutely
    /// continuous part is integrated by adaptive Simpson split at breakpoints.
    pub fn integrate_against<G: Fn(f64) -> f64>(&self, g: G, a: f64, b: f64, tol: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(self.effective_end());
        if !(b > a) {
            return 0.0;
        }
        let atoms: f64 = self
            .atoms()
            .into_iter()
            .filter(|(x, _)| (*x > a || (a == 0.0 && *x == 0.0)) && *x <= b)
            .map(|(x, m)| m * g(x))
            .sum();
        if matches!(self.law, Law::Deterministic { .. }) {
            return atoms;
        }
        let mut pts = vec![a];
        pts.extend(self.breakpoints().into_iter().filter(|p| *p > a && *p < b));
        pts.push(b);
        let f = |y: f64| {
            let d = self.density(y);
            if d.is_finite() {
                g(y) * d
            } else {
                0.0
            }
        };
        atoms + piecewise_simpson(&f, &pts, tol)
    }
}

fn piecewise_value(xs: &[f64], fs: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x < xs[0] {
        return 0.0;
    }
    if x >= xs[n - 1] {
        return 1.0;
    }
    let i = xs.partition_point(|&k| k <= x);
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    fs[i - 1] + w * (fs[i] - fs[i - 1])
}

fn piecewise_quantile(xs: &[f64], fs: &[f64], p: f64) -> f64 {
    if p <= fs[0] {
        return xs[0];
    }
    let i = fs.partition_point(|&f| f < p);
    let i = i.min(xs.len() - 1);
    let (f0, f1) = (fs[i - 1], fs[i]);
    if f1 <= f0 {
        return xs[i];
    }
    xs[i - 1] + (p - f0) / (f1 - f0) * (xs[i] - xs[i - 1])
}
