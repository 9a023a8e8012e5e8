//! Deterministic large-population limit.
//!
//! The closed pair is
//!
//! ```text
//! S̄(t) = S̄(0) - ∫_0^t Ῡ                      (SIR)   or   1 - Ī(t)   (SIS)
//! 𝓘̄(t) = ∫ E[λ(y + t) | η > y] 𝔍̄(0, dy) + ∫_0^t λ̄(t - s) Ῡ(s) ds
//! Ῡ(t) = S̄(t) 𝓘̄(t)
//! ```
//!
//! discretized by the trapezoid rule on a uniform grid whose step is shared
//! by the time and age axes. `Ῡ` is the boundary density `ī(t, 0)`; the
//! age profile, `Ī` and `R̄` are reconstructed from it afterwards.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::abm::Model;
use crate::error::{Error, Result};
use crate::infectivity::InfectivityLaw;
use crate::lifetime::LifetimeDistribution;

const COHORT_TOL: f64 = 1e-12;

fn default_forward_tol() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    2000
}

fn default_picard_tol() -> f64 {
    1e-10
}

/// Starting point of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardStart {
    #[default]
    Zero,
    /// `Ῡ ≡ λ*`.
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Solver {
    /// Causal stepping with one predictor-corrector pass per step. Fails when
    /// the relative predictor/corrector disagreement exceeds `10 tol`.
    ForwardStep {
        #[serde(default = "default_forward_tol")]
        tol: f64,
    },
    /// Fixed-point iteration of the whole discrete map until the sup-norm
    /// change drops below `tol`.
    Picard {
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_picard_tol")]
        tol: f64,
        #[serde(default)]
        start: PicardStart,
    },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::ForwardStep {
            tol: default_forward_tol(),
        }
    }
}

/// Limit initial condition: `𝔍̄(0, dy) = fraction · age_distribution(dy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub fraction: f64,
    pub age_distribution: LifetimeDistribution,
}

impl InitialCondition {
    pub fn max_age(&self) -> f64 {
        self.age_distribution.support_end().unwrap_or(f64::INFINITY)
    }

    /// `ī(0, y)`, zero for age laws without a density.
    pub fn density(&self, y: f64) -> f64 {
        if y < 0.0 || y > self.max_age() {
            return 0.0;
        }
        self.fraction * self.age_distribution.density(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub law: InfectivityLaw,
    #[serde(default)]
    pub model: Model,
    pub initial: InitialCondition,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub solver: Solver,
    /// Law `F_0` of i.i.d. remaining periods of the initially infected, used
    /// in place of the conditional law given their age. Separable laws only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid_remaining: Option<LifetimeDistribution>,
}

impl LimitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        if !(0.0..1.0).contains(&self.initial.fraction) {
            return Err(Error::config("initial infected fraction must lie in [0, 1)"));
        }
        let xbar = self.initial.max_age();
        if !xbar.is_finite() {
            return Err(Error::config("initial age distribution must have bounded support"));
        }
        if self.iid_remaining.is_some() {
            if !self.law.is_separable() {
                return Err(Error::config("iid_remaining needs a separable infectivity law"));
            }
        } else if self.initial.fraction > 0.0 && self.law.period().survival_left(xbar) <= 0.0 {
            return Err(Error::config(format!(
                "initial ages up to {xbar} lie beyond the infectious period support"
            )));
        }
        match self.solver {
            Solver::ForwardStep { tol } if !(tol > 0.0) => Err(Error::config("forward_step tol must be positive")),
            Solver::Picard { tol, max_iter, .. } if !(tol > 0.0) || max_iter == 0 => {
                Err(Error::config("picard needs tol > 0 and max_iter >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Number of steps `M` with `M dt` closest to the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// Everything the time-stepping needs, tabulated on the lattice.
struct Tables {
    dt: f64,
    steps: usize,
    s0: f64,
    /// `λ̄(m dt)`.
    kernel: Vec<f64>,
    /// `F^c(m dt)`.
    survival: Vec<f64>,
    /// Initial cohort contribution to `𝓘̄(t_n)`.
    cohort_infectivity: Vec<f64>,
    /// Initial cohort still infected at `t_n`.
    cohort_infected: Vec<f64>,
}

impl Tables {
    fn new(cfg: &LimitConfig) -> Self {
        let dt = cfg.dt;
        let steps = cfg.steps();
        let law = &cfg.law;
        let period = law.period();
        let kernel: Vec<f64> = (0..=steps).map(|m| law.mean_infectivity(m as f64 * dt)).collect();
        let survival: Vec<f64> = (0..=steps).map(|m| period.survival(m as f64 * dt)).collect();
        let init = &cfg.initial;
        let mut cohort_infectivity = vec![0.0; steps + 1];
        let mut cohort_infected = vec![0.0; steps + 1];
        if init.fraction > 0.0 {
            let ages = &init.age_distribution;
            let mean = MeanCurve::new(law, dt, steps as f64 * dt + init.max_age());
            for n in 0..=steps {
                let t = n as f64 * dt;
                let (inf, alive) = match &cfg.iid_remaining {
                    Some(f0) => {
                        let p = f0.survival(t);
                        let curve = law.lambda_tilde().expect("validated separable");
                        (p * ages.integrate_against(|y| curve.eval(y + t), 0.0, f64::INFINITY, COHORT_TOL), p)
                    }
                    None => (
                        ages.integrate_against(|y| mean.cohort(law, y, t), 0.0, f64::INFINITY, COHORT_TOL),
                        ages.integrate_against(
                            |y| period.conditional_remaining_survival(y, t).unwrap_or(0.0),
                            0.0,
                            f64::INFINITY,
                            COHORT_TOL,
                        ),
                    ),
                };
                cohort_infectivity[n] = init.fraction * inf;
                cohort_infected[n] = init.fraction * alive;
            }
        }
        Tables {
            dt,
            steps,
            s0: 1.0 - init.fraction,
            kernel,
            survival,
            cohort_infectivity,
            cohort_infected,
        }
    }
}

/// `E[λ(y + t) | η > y]`: exact for separable laws, from a lattice table of
/// `λ̄` otherwise so the cohort integrals stay cheap.
enum MeanCurve {
    Exact,
    Table { step: f64, values: Vec<f64> },
}

impl MeanCurve {
    fn new(law: &InfectivityLaw, dt: f64, end: f64) -> Self {
        if law.is_separable() {
            return MeanCurve::Exact;
        }
        let step = dt.min(1e-2);
        let n = (end / step).ceil() as usize + 2;
        MeanCurve::Table {
            step,
            values: (0..=n).map(|j| law.mean_infectivity(j as f64 * step)).collect(),
        }
    }

    fn cohort(&self, law: &InfectivityLaw, y: f64, t: f64) -> f64 {
        match self {
            MeanCurve::Exact => law.cohort_infectivity(y, t),
            MeanCurve::Table { step, values } => {
                let s = law.period().survival(y);
                if s <= 0.0 {
                    return 0.0;
                }
                let pos = (y + t) / step;
                let i = pos.floor() as usize;
                let v = if i + 1 < values.len() {
                    values[i] + (pos - i as f64) * (values[i + 1] - values[i])
                } else {
                    *values.last().unwrap_or(&0.0)
                };
                v / s
            }
        }
    }
}

/// Trapezoid convolution `c_n = ∫_0^{t_n} a(t_n - s) b(s) ds` on the lattice,
/// `c_0 = 0`. Uses an FFT for the full discrete convolution.
pub fn trapezoid_convolution(a: &[f64], b: &[f64], dt: f64) -> Vec<f64> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Vec::new();
    }
    let full = fft_convolve(&a[..n], &b[..n], n);
    let mut out = vec![0.0; n];
    for k in 1..n {
        out[k] = dt * (full[k] - 0.5 * (a[k] * b[0] + a[0] * b[k]));
    }
    out
}

/// First `len` terms of the discrete convolution of `a` and `b`.
fn fft_convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let size = (a.len() + b.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let load = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (slot, x) in buf.iter_mut().zip(v) {
            slot.re = *x;
        }
        buf
    };
    let mut fa = load(a);
    let mut fb = load(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.iter().take(len).map(|c| c.re * scale).collect()
}

/// Cumulative trapezoid `∫_0^{t_n} v`.
fn cumulative(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Discrete Volterra map applied to a whole boundary series.
fn picard_map(tab: &Tables, model: Model, ups: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let conv = trapezoid_convolution(&tab.kernel, ups, tab.dt);
    let curly: Vec<f64> = tab.cohort_infectivity.iter().zip(&conv).map(|(a, b)| a + b).collect();
    let s: Vec<f64> = match model {
        Model::Sir => cumulative(ups, tab.dt).iter().map(|c| tab.s0 - c).collect(),
        Model::Sis => {
            let alive = trapezoid_convolution(&tab.survival, ups, tab.dt);
            tab.cohort_infected.iter().zip(&alive).map(|(a, b)| 1.0 - a - b).collect()
        }
    };
    let next = s.iter().zip(&curly).map(|(s, c)| s.max(0.0) * c).collect();
    (next, s, curly)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundarySeries {
    pub dt: f64,
    /// `ī(t_n, 0)`.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub last_change: f64,
}

impl BoundarySeries {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|n| n as f64 * self.dt).collect()
    }
}

/// Solve the boundary equation for `ī(·, 0)` by Picard iteration. The
/// solver choice in `config` only supplies `max_iter`, `tol` and the start.
pub fn solve_boundary(config: &LimitConfig) -> Result<BoundarySeries> {
    config.validate()?;
    let tab = Tables::new(config);
    let (max_iter, tol, start) = match config.solver {
        Solver::Picard { max_iter, tol, start } => (max_iter, tol, start),
        Solver::ForwardStep { .. } => (default_max_iter(), default_picard_tol(), PicardStart::Zero),
    };
    picard(&tab, config.model, config.law.lambda_star(), max_iter, tol, start).map(|(values, iterations, last_change)| {
        BoundarySeries {
            dt: config.dt,
            values,
            iterations,
            last_change,
        }
    })
}

fn picard(
    tab: &Tables,
    model: Model,
    lambda_star: f64,
    max_iter: usize,
    tol: f64,
    start: PicardStart,
) -> Result<(Vec<f64>, usize, f64)> {
    let init = match start {
        PicardStart::Zero => 0.0,
        PicardStart::Bound => lambda_star,
    };
    let mut ups = vec![init; tab.steps + 1];
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, _, _) = picard_map(tab, model, &ups);
        change = next.iter().zip(&ups).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ups = next;
        if change < tol {
            log::debug!("picard converged after {it} iterations");
            return Ok((ups, it, change));
        }
    }
    Err(Error::NonConvergent {
        iterations: max_iter,
        change,
    })
}

fn forward_step(tab: &Tables, model: Model, tol: f64) -> Result<(Vec<f64>, f64)> {
    let m = tab.steps;
    let dt = tab.dt;
    let k = &tab.kernel;
    let fc = &tab.survival;
    let mut ups = vec![0.0; m + 1];
    let mut s_prev = match model {
        Model::Sir => tab.s0,
        Model::Sis => 1.0 - tab.cohort_infected[0],
    };
    ups[0] = s_prev.max(0.0) * tab.cohort_infectivity[0];
    let ck = 0.5 * dt * k[0];
    let mut worst = 0.0f64;
    for n in 1..=m {
        let mut conv = 0.5 * k[n] * ups[0];
        for j in 1..n {
            conv += k[n - j] * ups[j];
        }
        let ibase = tab.cohort_infectivity[n] + dt * conv;
        let (sbase, cs) = match model {
            Model::Sir => (s_prev - 0.5 * dt * ups[n - 1], 0.5 * dt),
            Model::Sis => {
                let mut alive = 0.5 * fc[n] * ups[0];
                for j in 1..n {
                    alive += fc[n - j] * ups[j];
                }
                (1.0 - tab.cohort_infected[n] - dt * alive, 0.5 * dt * fc[0])
            }
        };
        let map = |u: f64| (sbase - cs * u).max(0.0) * (ibase + ck * u);
        let pred = map(ups[n - 1]);
        let corr = map(pred);
        let scale = corr.abs().max(pred.abs());
        let rel = if scale > 0.0 { (corr - pred).abs() / scale } else { 0.0 };
        worst = worst.max(rel);
        if rel > 10.0 * tol {
            return Err(Error::StepTooCoarse {
                time: n as f64 * dt,
                disagreement: rel,
            });
        }
        ups[n] = corr;
        s_prev = sbase - cs * corr;
    }
    Ok((ups, worst))
}

/// Gridded limit solution. Series are indexed by `n` with `t_n = n dt`; the
/// age profile is evaluated on demand from the boundary series.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution {
    pub model: Model,
    pub dt: f64,
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    /// `𝓘̄`.
    pub curly_i: Vec<f64>,
    /// `Ῡ = ī(·, 0)`.
    pub upsilon: Vec<f64>,
    pub law: Arc<InfectivityLaw>,
    pub initial: InitialCondition,
    pub iid_remaining: Option<LifetimeDistribution>,
    /// Picard iterations, zero for forward stepping.
    pub iterations: usize,
    /// Largest relative predictor/corrector disagreement, zero for Picard.
    pub max_disagreement: f64,
}

pub fn solve_sir(config: &LimitConfig) -> Result<LimitSolution> {
    solve_model(config, Model::Sir)
}

pub fn solve_sis(config: &LimitConfig) -> Result<LimitSolution> {
    solve_model(config, Model::Sis)
}

/// Solve with the model named in the config.
pub fn solve(config: &LimitConfig) -> Result<LimitSolution> {
    solve_model(config, config.model)
}

fn solve_model(config: &LimitConfig, model: Model) -> Result<LimitSolution> {
    config.validate()?;
    let tab = Tables::new(config);
    let (ups, iterations, max_disagreement) = match config.solver {
        Solver::ForwardStep { tol } => {
            let (u, worst) = forward_step(&tab, model, tol)?;
            (u, 0, worst)
        }
        Solver::Picard { max_iter, tol, start } => {
            let (u, it, _) = picard(&tab, model, config.law.lambda_star(), max_iter, tol, start)?;
            (u, it, 0.0)
        }
    };
    let dt = config.dt;
    let conv = trapezoid_convolution(&tab.kernel, &ups, dt);
    let curly_i: Vec<f64> = tab.cohort_infectivity.iter().zip(&conv).map(|(a, b)| a + b).collect();
    let alive = trapezoid_convolution(&tab.survival, &ups, dt);
    let i: Vec<f64> = tab.cohort_infected.iter().zip(&alive).map(|(a, b)| a + b).collect();
    let (s, r) = match model {
        Model::Sir => {
            let s: Vec<f64> = cumulative(&ups, dt).iter().map(|c| tab.s0 - c).collect();
            let cdf: Vec<f64> = tab.survival.iter().map(|f| 1.0 - f).collect();
            let gone = trapezoid_convolution(&cdf, &ups, dt);
            let r = tab
                .cohort_infected
                .iter()
                .zip(&gone)
                .map(|(a, g)| config.initial.fraction - a + g)
                .collect();
            (s, r)
        }
        Model::Sis => (i.iter().map(|x| 1.0 - x).collect(), vec![0.0; i.len()]),
    };
    Ok(LimitSolution {
        model,
        dt,
        times: (0..=tab.steps).map(|n| n as f64 * dt).collect(),
        s,
        i,
        r,
        curly_i,
        upsilon: ups,
        law: Arc::new(config.law.clone()),
        initial: config.initial.clone(),
        iid_remaining: config.iid_remaining.clone(),
        iterations,
        max_disagreement,
    })
}

/// Total infected fraction over the horizon, with an indicator of the mass
/// still to come.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalSize {
    pub phi: f64,
    /// `Ῡ(T) · E[η]`, a rough size for infections after the horizon.
    pub tail_indicator: f64,
}

pub fn final_size(solution: &LimitSolution, cutoff: f64) -> Result<FinalSize> {
    let last = *solution.upsilon.last().expect("nonempty series");
    if last > cutoff {
        return Err(Error::HorizonTooShort(format!(
            "infection rate {last:e} at the horizon exceeds cutoff {cutoff:e}"
        )));
    }
    Ok(FinalSize {
        phi: crate::quadrature::trapezoid(&solution.upsilon, solution.dt),
        tail_indicator: last * solution.law.period().mean(),
    })
}

impl LimitSolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn period(&self) -> &LifetimeDistribution {
        self.law.period()
    }

    /// Number of age lattice cells covering the initial ages.
    pub fn initial_age_cells(&self) -> usize {
        (self.initial.max_age() / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Initial cohort alive at `t`, restricted to current ages in `[0, x]`.
    fn cohort_cumulative(&self, t: f64, x: f64) -> f64 {
        self.cohort_increment(t, 0.0, x)
    }

    /// Initial cohort alive at `t` with current age in `(a, b]` (`[0, b]` when
    /// `a <= t`). Always nonnegative, so sums of increments are monotone.
    fn cohort_increment(&self, t: f64, a: f64, b: f64) -> f64 {
        let fraction = self.initial.fraction;
        if fraction == 0.0 || b < t || b <= a {
            return 0.0;
        }
        let lo = (a - t).max(0.0);
        let hi = b - t;
        let ages = &self.initial.age_distribution;
        match &self.iid_remaining {
            Some(f0) => {
                let mass = if a < t { ages.cdf(hi) } else { (ages.cdf(hi) - ages.cdf(lo)).max(0.0) };
                fraction * f0.survival(t) * mass
            }
            None => {
                let period = self.period();
                let g = |y: f64| period.conditional_remaining_survival(y, t).unwrap_or(0.0);
                fraction * ages.integrate_against(g, if a < t { 0.0 } else { lo }, hi, COHORT_TOL).max(0.0)
            }
        }
    }

    /// Cohort part of `𝔍̄(t, ·)` at sorted ages, accumulated from increments.
    fn cohort_profile(&self, t: f64, xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let mut acc = 0.0;
        let mut prev = f64::NEG_INFINITY;
        xs.into_iter()
            .map(|x| {
                acc += self.cohort_increment(t, prev, x);
                prev = prev.max(x);
                acc
            })
            .collect()
    }

    /// `𝔍̄(t_n, x)`: infected at `t_n` with age at most `x`.
    pub fn cumulative(&self, n: usize, x: f64) -> f64 {
        let t = self.times[n];
        self.cohort_cumulative(t, x) + self.recent_cumulative(n, x)
    }

    /// Part of `𝔍̄(t_n, x)` infected after time 0: trapezoid sum of
    /// `F^c(t_n - s) Ῡ(s)` over `s ∈ [t_n - x, t_n]`, interpolated between
    /// lattice ages.
    fn recent_cumulative(&self, n: usize, x: f64) -> f64 {
        if x <= 0.0 || n == 0 {
            return 0.0;
        }
        let dt = self.dt;
        let period = self.period();
        let top = (x / dt).min(n as f64);
        let full = top.floor() as usize;
        let term = |l: usize| period.survival(l as f64 * dt) * self.upsilon[n - l];
        let mut acc = 0.0;
        let mut prev = term(0);
        for l in 1..=full {
            let cur = term(l);
            acc += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        let frac = top - full as f64;
        if frac > 0.0 && full < n {
            let next = term(full + 1);
            let mid = prev + frac * (next - prev);
            acc += 0.5 * frac * dt * (prev + mid);
        }
        acc
    }

    /// Row of `𝔍̄(t_n, ·)` on the lattice `x_j = j dt`, `j = 0..=n + X`.
    pub fn cumulative_row(&self, n: usize) -> Vec<f64> {
        let dt = self.dt;
        let t = self.times[n];
        let width = n + self.initial_age_cells();
        let period = self.period();
        let mut row = Vec::with_capacity(width + 1);
        let mut acc = 0.0;
        let mut prev = if n > 0 { period.survival(0.0) * self.upsilon[n] } else { 0.0 };
        let cohort = self.cohort_profile(t, (0..=width).map(|j| j as f64 * dt));
        row.push(cohort[0]);
        for j in 1..=width {
            if j <= n {
                let cur = period.survival(j as f64 * dt) * self.upsilon[n - j];
                acc += 0.5 * dt * (prev + cur);
                prev = cur;
            }
            row.push(acc + cohort[j]);
        }
        row
    }

    /// `𝔍̄(t_n, x)` at sorted ages `edges`; one pass over the lags.
    pub fn cumulative_at_edges(&self, n: usize, edges: &[f64]) -> Vec<f64> {
        let t = self.times[n];
        let mut out = Vec::with_capacity(edges.len());
        // recent part at lattice lag l, then interpolate within a cell
        let period = self.period();
        let term = |l: usize| period.survival(l as f64 * self.dt) * self.upsilon[n - l];
        let mut acc = 0.0;
        let mut l = 0usize;
        let mut prev = if n > 0 { term(0) } else { 0.0 };
        let cohort = self.cohort_profile(t, edges.iter().copied());
        for (&x, c) in edges.iter().zip(cohort) {
            let target = (x / self.dt).min(n as f64).max(0.0);
            while ((l + 1) as f64) <= target + 1e-9 && l < n {
                let cur = term(l + 1);
                acc += 0.5 * self.dt * (prev + cur);
                prev = cur;
                l += 1;
            }
            let frac = target - l as f64;
            let mut recent = acc;
            if frac > 1e-9 && l < n {
                let next = term(l + 1);
                let mid = prev + frac * (next - prev);
                recent += 0.5 * frac * self.dt * (prev + mid);
            }
            out.push(recent + c);
        }
        out
    }

    /// `max |S̄ + Ī + R̄ - 1|` over the grid (SIR).
    pub fn mass_defect(&self) -> f64 {
        self.s
            .iter()
            .zip(&self.i)
            .zip(&self.r)
            .map(|((s, i), r)| (s + i + r - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest increment of `𝔍̄(t, ·)` over lattice ages, for every `stride`-th
    /// lattice time. Negative values flag a monotonicity violation.
    pub fn min_age_increment(&self, stride: usize) -> f64 {
        let stride = stride.max(1);
        let dt = self.dt;
        let period = self.period();
        let xcells = self.initial_age_cells();
        let fc: Vec<f64> = (0..=self.steps() + xcells).map(|l| period.survival(l as f64 * dt)).collect();
        let mut worst = f64::INFINITY;
        for n in (0..=self.steps()).step_by(stride) {
            // recent part: trapezoid increments along the characteristic lags
            for l in 1..=n {
                let inc = 0.5 * dt * (fc[l - 1] * self.upsilon[n - l + 1] + fc[l] * self.upsilon[n - l]);
                worst = worst.min(inc);
            }
            // cohort part: the integrand is a conditional probability
            let t = self.times[n];
            let cells = xcells.clamp(1, 256);
            let h = self.initial.max_age() / cells as f64;
            for c in 1..=cells {
                let a = t + (c - 1) as f64 * h;
                worst = worst.min(self.cohort_increment(t, a, a + h));
            }
        }
        worst
    }

    /// Sup-norm distance between two solutions on the coarser grid, assuming
    /// the finer step divides the coarser one.
    pub fn sup_distance(&self, finer: &LimitSolution) -> f64 {
        let ratio = (self.dt / finer.dt).round() as usize;
        let mut worst = 0.0f64;
        for (n, _) in self.times.iter().enumerate() {
            let m = n * ratio;
            if m >= finer.times.len() {
                break;
            }
            for (a, b) in [
                (&self.s, &finer.s),
                (&self.i, &finer.i),
                (&self.r, &finer.r),
                (&self.curly_i, &finer.curly_i),
            ] {
                worst = worst.max((a[n] - b[m]).abs());
            }
        }
        worst
    }

    /// Linear interpolation of a series at an arbitrary time.
    pub fn interpolate(series: &[f64], dt: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return series[0];
        }
        let pos = t / dt;
        let i = pos.floor() as usize;
        if i + 1 >= series.len() {
            return *series.last().expect("nonempty");
        }
        let w = pos - i as f64;
        series[i] + w * (series[i + 1] - series[i])
    }

    /// `𝔍̄(t, x)` for any `t` on the grid and any `x`.
    pub fn cumulative_at_time(&self, t: f64, x: f64) -> f64 {
        let n = ((t / self.dt).round() as usize).min(self.steps());
        self.cumulative(n, x)
    }
}
