//! Random infectivity profiles.
//!
//! A profile `λ(t)` is a sum of segment functions on random consecutive
//! intervals `[ζ^{ℓ-1}, ζ^ℓ)` starting at `ζ^0 = 0`; it vanishes for `t < 0`
//! and from `η = ζ^k` on, and never exceeds the law's bound `λ*`. Segments
//! are constants or piecewise-linear curves, which keeps them uniformly
//! continuous with a shared modulus.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifetime::LifetimeDistribution;
use crate::quadrature::{adaptive_simpson, piecewise_simpson};

/// Default cap on rejection attempts in [`InfectivityLaw::sample_profile_conditional`].
pub const DEFAULT_REJECTION_CAP: u64 = 1_000_000;

const DEFAULT_MC_SAMPLES: usize = 200_000;
const MEAN_TABLE_POINTS: usize = 4096;

/// Deterministic piecewise-linear rate curve, flat beyond its first and last knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateCurveSpec", into = "RateCurveSpec")]
pub struct RateCurve {
    ts: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateCurveSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knots: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constant: Option<f64>,
}

impl TryFrom<RateCurveSpec> for RateCurve {
    type Error = Error;

    fn try_from(spec: RateCurveSpec) -> Result<Self> {
        match (spec.knots, spec.constant) {
            (Some(k), None) => RateCurve::from_knots(&k),
            (None, Some(c)) => RateCurve::constant(c),
            _ => Err(Error::config("rate curve needs exactly one of `knots` or `constant`")),
        }
    }
}

impl From<RateCurve> for RateCurveSpec {
    fn from(c: RateCurve) -> Self {
        if c.ts.len() == 1 {
            RateCurveSpec {
                knots: None,
                constant: Some(c.rates[0]),
            }
        } else {
            RateCurveSpec {
                knots: Some(c.ts.iter().zip(&c.rates).map(|(t, r)| [*t, *r]).collect()),
                constant: None,
            }
        }
    }
}

impl RateCurve {
    pub fn constant(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::config(format!("rate must be finite and nonnegative, got {rate}")));
        }
        Ok(RateCurve {
            ts: vec![0.0],
            rates: vec![rate],
        })
    }

    pub fn from_knots(knots: &[[f64; 2]]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::config("rate curve needs at least one knot"));
        }
        for w in knots.windows(2) {
            if w[1][0] <= w[0][0] {
                return Err(Error::config("rate curve knots must be strictly increasing in t"));
            }
        }
        if knots.iter().any(|[t, r]| !t.is_finite() || !r.is_finite() || *r < 0.0) {
            return Err(Error::config("rate curve knots must be finite with nonnegative rates"));
        }
        Ok(RateCurve {
            ts: knots.iter().map(|k| k[0]).collect(),
            rates: knots.iter().map(|k| k[1]).collect(),
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return self.rates[0];
        }
        if t >= self.ts[n - 1] {
            return self.rates[n - 1];
        }
        let i = self.ts.partition_point(|&k| k <= t);
        let w = (t - self.ts[i - 1]) / (self.ts[i] - self.ts[i - 1]);
        self.rates[i - 1] + w * (self.rates[i] - self.rates[i - 1])
    }

    pub fn max(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn knots(&self) -> &[f64] {
        &self.ts
    }

    /// Exact `∫_a^b` of the curve.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let mut pts = vec![a];
        pts.extend(self.ts.iter().copied().filter(|t| *t > a && *t < b));
        pts.push(b);
        pts.windows(2)
            .map(|w| 0.5 * (self.eval(w[0]) + self.eval(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

/// One segment function `λ^ℓ`, evaluated at the absolute infection age.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Constant(f64),
    Curve(Arc<RateCurve>),
}

impl Segment {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Segment::Constant(c) => *c,
            Segment::Curve(c) => c.eval(t),
        }
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Segment::Constant(c) => c * (b - a).max(0.0),
            Segment::Curve(c) => c.integral(a, b),
        }
    }
}

/// One individual's infectivity as a function of infection age.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectivityProfile {
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    lambda_star: f64,
}

impl InfectivityProfile {
    /// `breakpoints` are `ζ^0 = 0 <= ζ^1 <= ... <= ζ^k`, one more than `segments`.
    pub fn new(breakpoints: Vec<f64>, segments: Vec<Segment>, lambda_star: f64) -> Result<Self> {
        if breakpoints.len() != segments.len() + 1 || breakpoints[0] != 0.0 {
            return Err(Error::config("profile needs breakpoints 0 = ζ^0 <= ... <= ζ^k, one per segment plus one"));
        }
        if breakpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("profile breakpoints must be nondecreasing"));
        }
        Ok(InfectivityProfile {
            breakpoints,
            segments,
            lambda_star,
        })
    }

    /// Constant rate `level` on `[0, eta)`.
    pub fn constant(level: f64, eta: f64) -> Self {
        InfectivityProfile {
            breakpoints: vec![0.0, eta],
            segments: vec![Segment::Constant(level)],
            lambda_star: level,
        }
    }

    pub fn eta(&self) -> f64 {
        *self.breakpoints.last().expect("at least one breakpoint")
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.eta() {
            return 0.0;
        }
        // first breakpoint strictly greater than t closes the active segment
        let l = self.breakpoints.partition_point(|&z| z <= t);
        self.segments[l - 1].eval(t).clamp(0.0, self.lambda_star)
    }

    /// `∫_a^b λ(t) dt`, exact for the supported segment kinds.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(self.eta());
        if !(b > a) {
            return 0.0;
        }
        self.segments
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(seg, w)| seg.integral(a.max(w[0]), b.min(w[1])))
            .sum()
    }
}

/// Law of a piecewise-constant level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelDistribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl LevelDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LevelDistribution::Constant { value } => value.is_finite() && value >= 0.0,
            LevelDistribution::Uniform { low, high } => low.is_finite() && high.is_finite() && 0.0 <= low && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid level distribution {self:?}")))
        }
    }

    fn upper(&self) -> f64 {
        match *self {
            LevelDistribution::Constant { value } => value,
            LevelDistribution::Uniform { high, .. } => high,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LevelDistribution::Constant { value } => value,
            LevelDistribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

/// Serialized form of an [`InfectivityLaw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InfectivitySpec {
    /// `λ(t) = λ̃(t) 1{t < η}` with `η ~ period`.
    Separable {
        lambda_tilde: RateCurve,
        period: LifetimeDistribution,
    },
    /// Independent levels on consecutive segments with independent durations.
    PiecewiseConstantRandom {
        levels: Vec<LevelDistribution>,
        durations: Vec<LifetimeDistribution>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mc_samples: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mc_seed: Option<u64>,
    },
    /// Zero during a latent window `[0, ξ)`, then `level` until `η ~ period`;
    /// `ξ` is drawn from `exposed` conditioned on `ξ < η`.
    ExposedThenConstant {
        exposed: LifetimeDistribution,
        level: f64,
        period: LifetimeDistribution,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Separable {
        lambda_tilde: Arc<RateCurve>,
    },
    PiecewiseConstantRandom {
        levels: Vec<LevelDistribution>,
        durations: Vec<LifetimeDistribution>,
        table: MeanTable,
    },
    ExposedThenConstant {
        exposed: LifetimeDistribution,
        level: f64,
    },
}

/// Monte Carlo estimate of `λ̄` on a uniform grid, with standard errors.
#[derive(Debug, Clone, PartialEq)]
struct MeanTable {
    step: f64,
    mean: Vec<f64>,
    std_err: Vec<f64>,
    samples: usize,
}

impl MeanTable {
    fn eval(values: &[f64], step: f64, t: f64) -> f64 {
        if t < 0.0 || values.is_empty() {
            return 0.0;
        }
        let pos = t / step;
        let i = pos.floor() as usize;
        if i + 1 >= values.len() {
            return if i + 1 == values.len() { values[i] } else { 0.0 };
        }
        let w = pos - i as f64;
        values[i] + w * (values[i + 1] - values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InfectivitySpec", into = "InfectivitySpec")]
pub struct InfectivityLaw {
    spec: InfectivitySpec,
    family: Family,
    period: LifetimeDistribution,
    lambda_star: f64,
}

impl TryFrom<InfectivitySpec> for InfectivityLaw {
    type Error = Error;

    fn try_from(spec: InfectivitySpec) -> Result<Self> {
        InfectivityLaw::new(spec)
    }
}

impl From<InfectivityLaw> for InfectivitySpec {
    fn from(law: InfectivityLaw) -> Self {
        law.spec
    }
}

impl InfectivityLaw {
    pub fn new(spec: InfectivitySpec) -> Result<Self> {
        let (family, period, lambda_star) = match &spec {
            InfectivitySpec::Separable {
                lambda_tilde,
                period,
            } => (
                Family::Separable {
                    lambda_tilde: Arc::new(lambda_tilde.clone()),
                },
                period.clone(),
                lambda_tilde.max(),
            ),
            InfectivitySpec::ExposedThenConstant {
                exposed,
                level,
                period,
            } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(Error::config("exposed_then_constant level must be nonnegative"));
                }
                (
                    Family::ExposedThenConstant {
                        exposed: exposed.clone(),
                        level: *level,
                    },
                    period.clone(),
                    *level,
                )
            }
            InfectivitySpec::PiecewiseConstantRandom {
                levels,
                durations,
                mc_samples,
                mc_seed,
            } => {
                if levels.is_empty() || levels.len() != durations.len() {
                    return Err(Error::config("piecewise_constant_random needs one level law per duration law"));
                }
                for l in levels {
                    l.validate()?;
                }
                let period = sum_law(durations)?;
                let lambda_star = levels.iter().map(|l| l.upper()).fold(0.0, f64::max);
                let table = build_mean_table(
                    levels,
                    durations,
                    mc_samples.unwrap_or(DEFAULT_MC_SAMPLES),
                    mc_seed.unwrap_or(0),
                );
                (
                    Family::PiecewiseConstantRandom {
                        levels: levels.clone(),
                        durations: durations.clone(),
                        table,
                    },
                    period,
                    lambda_star,
                )
            }
        };
        Ok(InfectivityLaw {
            spec,
            family,
            period,
            lambda_star,
        })
    }

    pub fn separable(lambda_tilde: RateCurve, period: LifetimeDistribution) -> Self {
        Self::new(InfectivitySpec::Separable {
            lambda_tilde,
            period,
        })
        .expect("separable laws are always valid")
    }

    /// `λ̃ ≡ rate` with the given period law.
    pub fn constant_rate(rate: f64, period: LifetimeDistribution) -> Result<Self> {
        Ok(Self::separable(RateCurve::constant(rate)?, period))
    }

    pub fn spec(&self) -> &InfectivitySpec {
        &self.spec
    }

    /// Law `F` of the infectious period `η`.
    pub fn period(&self) -> &LifetimeDistribution {
        &self.period
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    /// The deterministic curve `λ̃` for separable laws.
    pub fn lambda_tilde(&self) -> Option<&RateCurve> {
        match &self.family {
            Family::Separable { lambda_tilde } => Some(lambda_tilde),
            _ => None,
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.family, Family::Separable { .. })
    }

    /// `λ̄(t) = E[λ(t)]`.
    pub fn mean_infectivity(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Separable { lambda_tilde } => lambda_tilde.eval(t) * self.period.survival(t),
            Family::ExposedThenConstant { exposed, level } => {
                let fx = exposed.cdf(t);
                if fx <= 0.0 {
                    return 0.0;
                }
                if is_deterministic(exposed) {
                    // deterministic latency ξ0 <= t < η  ⇒  G_ξ(η) = 1
                    return level * self.period.survival(t);
                }
                let weight = |y: f64| {
                    let g = 1.0 - exposed.survival_left(y);
                    if g > 0.0 {
                        1.0 / g
                    } else {
                        0.0
                    }
                };
                level * fx * self.period.integrate_against(weight, t, f64::INFINITY, 1e-12)
            }
            Family::PiecewiseConstantRandom { table, .. } => MeanTable::eval(&table.mean, table.step, t),
        }
    }

    /// Monte Carlo standard error of [`Self::mean_infectivity`]; zero for
    /// families with an exact mean.
    pub fn mean_infectivity_std_err(&self, t: f64) -> f64 {
        match &self.family {
            Family::PiecewiseConstantRandom { table, .. } => MeanTable::eval(&table.std_err, table.step, t),
            _ => 0.0,
        }
    }

    /// `E[λ(y) | η > y] = λ̄(y) / F^c(y)`: the expected infectivity of an
    /// individual currently infected for `y`. Equals `λ̃(y)` for separable laws.
    pub fn infectivity_given_alive(&self, y: f64) -> f64 {
        if let Family::Separable { lambda_tilde } = &self.family {
            return lambda_tilde.eval(y.max(0.0));
        }
        let s = self.period.survival(y);
        if s > 0.0 {
            self.mean_infectivity(y) / s
        } else {
            0.0
        }
    }

    /// Expected infectivity at time `t` of an individual aged `age` at time 0,
    /// `E[λ(age + t) | η > age] = λ̄(age + t) / F^c(age)`.
    pub fn cohort_infectivity(&self, age: f64, t: f64) -> f64 {
        if let Family::Separable { lambda_tilde } = &self.family {
            let p = self.period.conditional_remaining_survival(age, t).unwrap_or(0.0);
            return lambda_tilde.eval(age + t) * p;
        }
        let s = self.period.survival(age);
        if s > 0.0 {
            self.mean_infectivity(age + t) / s
        } else {
            0.0
        }
    }

    /// Points where `λ̄` may have kinks or jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = self.period.breakpoints();
        match &self.family {
            Family::Separable { lambda_tilde } => pts.extend_from_slice(lambda_tilde.knots()),
            Family::ExposedThenConstant { exposed, .. } => pts.extend(exposed.breakpoints()),
            Family::PiecewiseConstantRandom { .. } => {}
        }
        pts.retain(|p| *p > 0.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// A time beyond which `λ̄` is negligible.
    pub fn effective_end(&self) -> f64 {
        match &self.family {
            Family::PiecewiseConstantRandom { table, .. } => table.step * table.mean.len() as f64,
            _ => self.period.effective_end(),
        }
    }

    /// `∫_0^∞ λ̄(t) dt`.
    pub fn integrated_mean(&self) -> f64 {
        let end = self.effective_end();
        match &self.family {
            Family::PiecewiseConstantRandom { table, .. } => crate::quadrature::trapezoid(&table.mean, table.step),
            Family::ExposedThenConstant { exposed, .. } if !is_deterministic(exposed) => {
                let mut pts = vec![0.0];
                pts.extend(self.breakpoints().into_iter().filter(|p| *p < end));
                pts.push(end);
                pts.windows(2)
                    .map(|w| adaptive_simpson(&|t| self.mean_infectivity(t), w[0], w[1], 1e-9))
                    .sum()
            }
            _ => {
                let mut pts = vec![0.0];
                pts.extend(self.breakpoints().into_iter().filter(|p| *p < end));
                pts.push(end);
                piecewise_simpson(&|t| self.mean_infectivity(t), &pts, 1e-12)
            }
        }
    }

    pub fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> InfectivityProfile {
        match &self.family {
            Family::Separable { lambda_tilde } => {
                let eta = self.period.sample(rng);
                self.separable_profile(lambda_tilde, eta)
            }
            Family::ExposedThenConstant { exposed, level } => {
                let eta = self.period.sample(rng);
                exposed_profile(exposed, *level, eta, rng)
            }
            Family::PiecewiseConstantRandom {
                levels, durations, ..
            } => pcr_profile(levels, durations, self.lambda_star, rng),
        }
    }

    /// A profile distributed as `λ` conditioned on `η > age`.
    pub fn sample_profile_conditional<R: Rng + ?Sized>(&self, age: f64, rng: &mut R) -> Result<InfectivityProfile> {
        self.sample_profile_conditional_capped(age, DEFAULT_REJECTION_CAP, rng)
    }

    pub fn sample_profile_conditional_capped<R: Rng + ?Sized>(
        &self,
        age: f64,
        max_attempts: u64,
        rng: &mut R,
    ) -> Result<InfectivityProfile> {
        if self.period.conditional_remaining_survival(age, 0.0)? <= 0.0 {
            return Err(Error::DegenerateAge { age });
        }
        match &self.family {
            Family::Separable { lambda_tilde } => {
                let eta = age + self.period.sample_remaining(age, rng)?;
                Ok(self.separable_profile(lambda_tilde, eta))
            }
            Family::ExposedThenConstant { exposed, level } => {
                // ξ depends on η only, so conditioning on η > age is exact here
                let eta = age + self.period.sample_remaining(age, rng)?;
                Ok(exposed_profile(exposed, *level, eta, rng))
            }
            Family::PiecewiseConstantRandom {
                levels, durations, ..
            } => {
                for _ in 0..max_attempts {
                    let p = pcr_profile(levels, durations, self.lambda_star, rng);
                    if p.eta() > age {
                        return Ok(p);
                    }
                }
                Err(Error::RejectionBudgetExceeded {
                    attempts: max_attempts,
                })
            }
        }
    }

    fn separable_profile(&self, lambda_tilde: &Arc<RateCurve>, eta: f64) -> InfectivityProfile {
        InfectivityProfile {
            breakpoints: vec![0.0, eta],
            segments: vec![Segment::Curve(Arc::clone(lambda_tilde))],
            lambda_star: self.lambda_star,
        }
    }
}

fn is_deterministic(d: &LifetimeDistribution) -> bool {
    matches!(d.kind(), crate::lifetime::LifetimeKind::Deterministic { .. })
}

fn exposed_profile<R: Rng + ?Sized>(exposed: &LifetimeDistribution, level: f64, eta: f64, rng: &mut R) -> InfectivityProfile {
    let p = 1.0 - exposed.survival_left(eta);
    let xi = if p > 0.0 {
        exposed.quantile(rng.random::<f64>() * p).min(eta)
    } else {
        eta
    };
    InfectivityProfile {
        breakpoints: vec![0.0, xi, eta],
        segments: vec![Segment::Constant(0.0), Segment::Constant(level)],
        lambda_star: level,
    }
}

fn pcr_profile<R: Rng + ?Sized>(
    levels: &[LevelDistribution],
    durations: &[LifetimeDistribution],
    lambda_star: f64,
    rng: &mut R,
) -> InfectivityProfile {
    let mut breakpoints = Vec::with_capacity(durations.len() + 1);
    breakpoints.push(0.0);
    let mut acc = 0.0;
    let mut segments = Vec::with_capacity(levels.len());
    for (level, dur) in levels.iter().zip(durations) {
        acc += dur.sample(rng);
        breakpoints.push(acc);
        segments.push(Segment::Constant(level.sample(rng)));
    }
    InfectivityProfile {
        breakpoints,
        segments,
        lambda_star,
    }
}

/// Law of a sum of independent durations. Deterministic sums stay exact;
/// otherwise the CDF is tabulated by successive convolution.
fn sum_law(durations: &[LifetimeDistribution]) -> Result<LifetimeDistribution> {
    if durations.len() == 1 {
        return Ok(durations[0].clone());
    }
    let det: Option<f64> = durations
        .iter()
        .map(|d| match d.kind() {
            crate::lifetime::LifetimeKind::Deterministic { t_i } => Some(t_i),
            _ => None,
        })
        .sum();
    if let Some(total) = det {
        return LifetimeDistribution::deterministic(total);
    }
    const KNOTS: usize = 2001;
    let mut acc = durations[0].clone();
    for next in &durations[1..] {
        let end = acc.effective_end() + next.effective_end();
        let mut knots = Vec::with_capacity(KNOTS);
        let mut running = 0.0f64;
        for j in 0..KNOTS {
            let x = end * j as f64 / (KNOTS - 1) as f64;
            // F_{a+b}(x) = ∫_{[0,x]} F_a(x - y) F_b(dy)
            let f = next.integrate_against(|y| acc.cdf(x - y), 0.0, x, 1e-11);
            running = running.max(f.clamp(0.0, 1.0));
            knots.push([x, running]);
        }
        let last = knots.len() - 1;
        knots[last][1] = 1.0;
        acc = LifetimeDistribution::piecewise_cdf(&knots)?;
    }
    Ok(acc)
}

fn build_mean_table(
    levels: &[LevelDistribution],
    durations: &[LifetimeDistribution],
    samples: usize,
    seed: u64,
) -> MeanTable {
    let mut rng = crate::rng::stream(seed, u64::MAX);
    let lambda_star = levels.iter().map(|l| l.upper()).fold(0.0, f64::max);
    let profiles: Vec<InfectivityProfile> = (0..samples.max(1))
        .map(|_| pcr_profile(levels, durations, lambda_star, &mut rng))
        .collect();
    let end = profiles.iter().map(|p| p.eta()).fold(0.0, f64::max).max(1e-9);
    let step = end / (MEAN_TABLE_POINTS - 1) as f64;
    let n = MEAN_TABLE_POINTS + 1;
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for p in &profiles {
        for (seg, w) in p.segments.iter().zip(p.breakpoints.windows(2)) {
            let level = seg.eval(0.0);
            // grid points j with w[0] <= j*step < w[1]
            let lo = ((w[0] / step).ceil() as usize).min(n - 1);
            let hi = ((w[1] / step).ceil() as usize).min(n - 1);
            if hi > lo {
                d1[lo] += level;
                d1[hi] -= level;
                d2[lo] += level * level;
                d2[hi] -= level * level;
            }
        }
    }
    let m = profiles.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut mean = Vec::with_capacity(MEAN_TABLE_POINTS);
    let mut std_err = Vec::with_capacity(MEAN_TABLE_POINTS);
    for j in 0..MEAN_TABLE_POINTS {
        s1 += d1[j];
        s2 += d2[j];
        let mu = s1 / m;
        mean.push(mu);
        std_err.push(((s2 / m - mu * mu).max(0.0) / m).sqrt());
    }
    MeanTable {
        step,
        mean,
        std_err,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(rate: f64) -> LifetimeDistribution {
        LifetimeDistribution::exponential(rate).unwrap()
    }

    fn det(t: f64) -> LifetimeDistribution {
        LifetimeDistribution::deterministic(t).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let p = InfectivityProfile::constant(0.5, 2.0);
        assert_eq!(p.evaluate(1.0), 0.5);
        assert_eq!(p.evaluate(2.0), 0.0);
        assert_eq!(p.evaluate(-1.0), 0.0);
        let seir = InfectivityProfile::new(
            vec![0.0, 1.0, 3.0],
            vec![Segment::Constant(0.0), Segment::Constant(0.8)],
            0.8,
        )
        .unwrap();
        assert_eq!(seir.evaluate(0.5), 0.0);
        assert_eq!(seir.evaluate(1.5), 0.8);
        assert_eq!(seir.evaluate(1.0), 0.8);
        assert!((seir.integral(0.0, 10.0) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn separable_mean_is_curve_times_survival() {
        let law = InfectivityLaw::constant_rate(1.7, exp(0.6)).unwrap();
        for t in [0.0, 0.5, 3.0] {
            assert!((law.mean_infectivity(t) - 1.7 * (-0.6 * t).exp()).abs() < 1e-15);
        }
        let law = InfectivityLaw::constant_rate(1.0, det(2.0)).unwrap();
        assert_eq!(law.mean_infectivity(2.5), 0.0);
    }

    #[test]
    fn degenerate_separable_profile() {
        let law = InfectivityLaw::constant_rate(1.0, det(2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = law.sample_profile(&mut rng);
        assert_eq!(p.eta(), 2.0);
        assert_eq!(p.evaluate(1.999), 1.0);
        let c = law.sample_profile_conditional(1.0, &mut rng).unwrap();
        assert_eq!(c.eta() - 1.0, 1.0);
        let law3 = InfectivityLaw::constant_rate(1.0, det(3.0)).unwrap();
        let c3 = law3.sample_profile_conditional(1.0, &mut rng).unwrap();
        assert_eq!(c3.eta() - 1.0, 2.0);
        assert!(matches!(law.sample_profile_conditional(2.0, &mut rng), Err(Error::DegenerateAge { .. })));
    }

    #[test]
    fn pcr_uniform_level_mean() {
        let spec = InfectivitySpec::PiecewiseConstantRandom {
            levels: vec![LevelDistribution::Uniform { low: 0.0, high: 1.0 }],
            durations: vec![det(2.0)],
            mc_samples: Some(100_000),
            mc_seed: Some(5),
        };
        let law = InfectivityLaw::new(spec).unwrap();
        // independent oracle: direct Monte Carlo of the level at t = 1
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let oracle = (0..n).map(|_| rng.random::<f64>()).sum::<f64>() / n as f64;
        let got = law.mean_infectivity(1.0);
        let se = law.mean_infectivity_std_err(1.0);
        assert!(se > 0.0);
        assert!((got - 0.5).abs() < 4.0 * se, "{got} ± {se}");
        assert!((got - oracle).abs() < 4.0 * (se + 1.0 / (12.0 * n as f64).sqrt()));
        assert_eq!(law.mean_infectivity(2.5), 0.0);
    }

    #[test]
    fn mc_mean_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let laws = [
            InfectivityLaw::new(InfectivitySpec::Separable {
                lambda_tilde: RateCurve::from_knots(&[[0.0, 0.0], [1.0, 2.0], [3.0, 0.5]]).unwrap(),
                period: LifetimeDistribution::gamma(2.0, 1.0).unwrap(),
            })
            .unwrap(),
            InfectivityLaw::new(InfectivitySpec::ExposedThenConstant {
                exposed: LifetimeDistribution::piecewise_cdf(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
                level: 0.9,
                period: LifetimeDistribution::gamma(3.0, 1.0).unwrap(),
            })
            .unwrap(),
            InfectivityLaw::new(InfectivitySpec::ExposedThenConstant {
                exposed: det(0.5),
                level: 0.9,
                period: exp(1.0),
            })
            .unwrap(),
        ];
        let n = 100_000;
        for law in &laws {
            let profiles: Vec<_> = (0..n).map(|_| law.sample_profile(&mut rng)).collect();
            for t in [0.3, 0.8, 1.5, 2.5] {
                let vals: Vec<f64> = profiles.iter().map(|p| p.evaluate(t)).collect();
                let m = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                let expect = law.mean_infectivity(t);
                assert!((m - expect).abs() <= 3.0 * (var / n as f64).sqrt() + 1e-9, "{:?} t={t}: {m} vs {expect}", law.spec());
                assert!(profiles.iter().all(|p| p.evaluate(t) <= law.lambda_star()));
            }
        }
    }

    fn ks_exponential(draws: &mut [f64], rate: f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = 1.0 - (-rate * x).exp();
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn eta_law_and_memoryless_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let law = InfectivityLaw::constant_rate(1.0, exp(1.0)).unwrap();
        let n = 20_000;
        let mut etas: Vec<f64> = (0..n).map(|_| law.sample_profile(&mut rng).eta()).collect();
        assert!(ks_exponential(&mut etas, 1.0) < 1.628 / (n as f64).sqrt());
        let mut rem: Vec<f64> = (0..n)
            .map(|_| law.sample_profile_conditional(3.0, &mut rng).unwrap().eta() - 3.0)
            .collect();
        assert!(ks_exponential(&mut rem, 1.0) < 1.628 / (n as f64).sqrt());
    }

    #[test]
    fn conditional_remaining_survival_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let period = LifetimeDistribution::gamma(2.0, 1.0).unwrap();
        let law = InfectivityLaw::constant_rate(1.0, period.clone()).unwrap();
        let pcr = InfectivityLaw::new(InfectivitySpec::PiecewiseConstantRandom {
            levels: vec![LevelDistribution::Constant { value: 1.0 }],
            durations: vec![period.clone()],
            mc_samples: Some(1000),
            mc_seed: None,
        })
        .unwrap();
        let n = 100_000;
        for l in [&law, &pcr] {
            let rem: Vec<f64> = (0..n)
                .map(|_| l.sample_profile_conditional(1.0, &mut rng).unwrap().eta() - 1.0)
                .collect();
            for t in [0.5, 1.0, 2.0] {
                let p = period.conditional_remaining_survival(1.0, t).unwrap();
                let emp = rem.iter().filter(|&&r| r > t).count() as f64 / n as f64;
                assert!((emp - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
            }
        }
    }

    #[test]
    fn rejection_budget() {
        let pcr = InfectivityLaw::new(InfectivitySpec::PiecewiseConstantRandom {
            levels: vec![LevelDistribution::Constant { value: 1.0 }],
            durations: vec![exp(1.0)],
            mc_samples: Some(100),
            mc_seed: None,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            pcr.sample_profile_conditional_capped(30.0, 10, &mut rng),
            Err(Error::RejectionBudgetExceeded { attempts: 10 })
        ));
    }

    #[test]
    fn r0_consistency_separable() {
        let period = LifetimeDistribution::gamma(2.0, 1.5).unwrap();
        let curve = RateCurve::from_knots(&[[0.0, 0.3], [2.0, 1.2], [5.0, 0.1]]).unwrap();
        let law = InfectivityLaw::separable(curve.clone(), period.clone());
        let end = period.effective_end();
        let direct = piecewise_simpson(&|t| curve.eval(t) * period.survival(t), &[0.0, 2.0, 5.0, end], 1e-13);
        assert!((law.integrated_mean() - direct).abs() < 1e-8);
        let flat = InfectivityLaw::constant_rate(0.5, exp(0.5)).unwrap();
        assert!((flat.integrated_mean() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sum_of_durations_cdf() {
        let law = InfectivityLaw::new(InfectivitySpec::PiecewiseConstantRandom {
            levels: vec![LevelDistribution::Constant { value: 1.0 }, LevelDistribution::Constant { value: 0.5 }],
            durations: vec![exp(1.0), exp(1.0)],
            mc_samples: Some(1000),
            mc_seed: None,
        })
        .unwrap();
        // Exp(1) + Exp(1) = Gamma(2, 1)
        let g = LifetimeDistribution::gamma(2.0, 1.0).unwrap();
        for x in [0.5, 1.0, 2.0, 4.0] {
            assert!((law.period().survival(x) - g.survival(x)).abs() < 1e-4);
        }
        let dd = InfectivityLaw::new(InfectivitySpec::PiecewiseConstantRandom {
            levels: vec![LevelDistribution::Constant { value: 1.0 }; 2],
            durations: vec![det(1.0), det(2.0)],
            mc_samples: Some(10),
            mc_seed: None,
        })
        .unwrap();
        assert_eq!(dd.period().atoms(), vec![(3.0, 1.0)]);
    }

    #[test]
    fn spec_json() {
        let text = r#"{"family":"separable","lambda_tilde":{"knots":[[0,1.0],[2,0.5]]},"period":{"kind":"exponential","rate":1.0}}"#;
        let law: InfectivityLaw = serde_json::from_str(text).unwrap();
        assert_eq!(law.lambda_star(), 1.0);
        let again: InfectivityLaw = serde_json::from_str(&serde_json::to_string(&law).unwrap()).unwrap();
        assert_eq!(again, law);
        let c: RateCurve = serde_json::from_str(r#"{"constant": 2.0}"#).unwrap();
        assert_eq!(c.eval(10.0), 2.0);
        assert!(serde_json::from_str::<RateCurve>(r#"{"constant": -2.0}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn profiles_respect_bound_and_support(seed in 0u64..1000, t in -1.0f64..8.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let law = InfectivityLaw::new(InfectivitySpec::ExposedThenConstant {
                    exposed: LifetimeDistribution::exponential(2.0).unwrap(),
                    level: 0.7,
                    period: LifetimeDistribution::gamma(2.0, 1.0).unwrap(),
                }).unwrap();
                let p = law.sample_profile(&mut rng);
                let v = p.evaluate(t);
                prop_assert!((0.0..=law.lambda_star()).contains(&v));
                if t < 0.0 || t >= p.eta() {
                    prop_assert_eq!(v, 0.0);
                }
                let total = p.integral(0.0, 100.0);
                prop_assert!(total <= law.lambda_star() * p.eta() + 1e-12);
            }
        }
    }
}
