//! Exact event-driven simulation of the finite-population model.
//!
//! New infections form a point process with intensity `Υ^N(t) = (S/N) 𝓘^N(t)`.
//! It is simulated by thinning: between events `S` and the roster are fixed,
//! so `B = λ* |I| S / N` dominates the intensity; candidates arrive at rate
//! `B` and are kept with probability `Υ^N(t)/B`. Recoveries fire from a
//! priority queue and win ties against candidates.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infectivity::{InfectivityLaw, InfectivityProfile};
use crate::lifetime::LifetimeDistribution;
use crate::rng::{stream, SimRng};

/// Minimum number of replications accepted by [`martingale_diagnostic`].
pub const MIN_MARTINGALE_REPLICATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Sir,
    /// Recovered individuals return to the susceptible pool.
    Sis,
}

/// Who is infected at time 0 and for how long they have been infected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum InitialInfected {
    /// Explicit infection ages, one per initially infected individual.
    Ages { ages: Vec<f64> },
    /// `count` individuals with i.i.d. ages drawn from `age_distribution`.
    Count {
        count: u64,
        age_distribution: LifetimeDistribution,
    },
    /// `round(fraction * N)` individuals with i.i.d. ages.
    Fraction {
        fraction: f64,
        age_distribution: LifetimeDistribution,
    },
}

impl InitialInfected {
    pub fn count(&self, population: u64) -> u64 {
        match self {
            InitialInfected::Ages { ages } => ages.len() as u64,
            InitialInfected::Count { count, .. } => *count,
            InitialInfected::Fraction { fraction, .. } => (fraction * population as f64).round() as u64,
        }
    }

    /// Largest possible initial age `x̄`.
    pub fn max_age(&self) -> f64 {
        match self {
            InitialInfected::Ages { ages } => ages.iter().copied().fold(0.0, f64::max),
            InitialInfected::Count {
                age_distribution, ..
            }
            | InitialInfected::Fraction {
                age_distribution, ..
            } => age_distribution.support_end().unwrap_or(f64::INFINITY),
        }
    }

    fn validate(&self, population: u64) -> Result<()> {
        let n = self.count(population);
        if n == 0 || n >= population {
            return Err(Error::config(format!(
                "need 0 < initially infected < N, got {n} of {population}"
            )));
        }
        if let InitialInfected::Ages { ages } = self {
            if ages.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::config("initial ages must be finite and nonnegative"));
            }
        }
        if !self.max_age().is_finite() {
            return Err(Error::config("initial age distribution must have bounded support"));
        }
        Ok(())
    }

    fn sample_ages<R: Rng + ?Sized>(&self, population: u64, rng: &mut R) -> Vec<f64> {
        match self {
            InitialInfected::Ages { ages } => ages.clone(),
            InitialInfected::Count {
                age_distribution, ..
            }
            | InitialInfected::Fraction {
                age_distribution, ..
            } => (0..self.count(population)).map(|_| age_distribution.sample(rng)).collect(),
        }
    }
}

fn default_record_step() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub population: u64,
    pub horizon: f64,
    #[serde(default)]
    pub model: Model,
    pub law: InfectivityLaw,
    pub initial: InitialInfected,
    #[serde(default = "default_record_step")]
    pub record_step: f64,
    /// Bin width of the recorded age histograms; none are recorded if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_bin: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_events: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::config("population must be at least 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        if !(self.record_step.is_finite() && self.record_step > 0.0) {
            return Err(Error::config("record_step must be positive"));
        }
        if let Some(bin) = self.age_bin {
            if !(bin.is_finite() && bin > 0.0) {
                return Err(Error::config("age_bin must be positive"));
            }
        }
        self.initial.validate(self.population)
    }

    /// Snapshot times `0, h, 2h, ...` up to the horizon.
    pub fn record_times(&self) -> Vec<f64> {
        let n = (self.horizon / self.record_step + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.record_step).collect()
    }

    /// Histogram edges `0, b, 2b, ...` covering every age reachable by the horizon.
    pub fn age_edges(&self) -> Vec<f64> {
        match self.age_bin {
            None => Vec::new(),
            Some(bin) => {
                let top = self.horizon + self.initial.max_age();
                let n = (top / bin - 1e-9).ceil().max(0.0) as usize;
                (0..=n).map(|j| j as f64 * bin).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfectedRecord {
    pub id: u64,
    /// Negative for individuals already infected at time 0.
    pub infection_time: f64,
    pub profile: InfectivityProfile,
    pub recovery_time: f64,
}

/// Finite-population state: counts plus the roster of infected individuals.
#[derive(Debug, Clone)]
pub struct PopulationState {
    population: u64,
    model: Model,
    susceptible: u64,
    recovered: u64,
    roster: Vec<InfectedRecord>,
    // position of each id in `roster`, usize::MAX once recovered
    position: Vec<usize>,
    clock: f64,
}

impl PopulationState {
    pub fn new(population: u64, model: Model) -> Self {
        PopulationState {
            population,
            model,
            susceptible: population,
            recovered: 0,
            roster: Vec::new(),
            position: Vec::new(),
            clock: 0.0,
        }
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn susceptible(&self) -> u64 {
        self.susceptible
    }

    pub fn infected(&self) -> u64 {
        self.roster.len() as u64
    }

    pub fn recovered(&self) -> u64 {
        self.recovered
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn roster(&self) -> &[InfectedRecord] {
        &self.roster
    }

    /// Move one susceptible into the roster. Returns the new id.
    pub fn infect(&mut self, infection_time: f64, profile: InfectivityProfile) -> u64 {
        assert!(self.susceptible > 0, "no susceptible left to infect");
        self.susceptible -= 1;
        let id = self.position.len() as u64;
        let recovery_time = infection_time + profile.eta();
        self.position.push(self.roster.len());
        self.roster.push(InfectedRecord {
            id,
            infection_time,
            profile,
            recovery_time,
        });
        id
    }

    fn recover(&mut self, id: u64) {
        let pos = self.position[id as usize];
        debug_assert_ne!(pos, usize::MAX);
        self.roster.swap_remove(pos);
        if pos < self.roster.len() {
            self.position[self.roster[pos].id as usize] = pos;
        }
        self.position[id as usize] = usize::MAX;
        match self.model {
            Model::Sir => self.recovered += 1,
            Model::Sis => self.susceptible += 1,
        }
    }

    /// `𝓘^N(t) = Σ λ_i(t - τ_i)` over the roster.
    pub fn aggregate_infectivity(&self, t: f64) -> f64 {
        self.roster.iter().map(|r| r.profile.evaluate(t - r.infection_time)).sum()
    }

    /// `Υ^N(t) = (S/N) 𝓘^N(t)`.
    pub fn infection_rate(&self, t: f64) -> f64 {
        if self.susceptible == 0 {
            return 0.0;
        }
        self.susceptible as f64 / self.population as f64 * self.aggregate_infectivity(t)
    }

    /// `∫_a^b Υ^N` assuming no event in `(a, b)`.
    fn rate_integral(&self, a: f64, b: f64) -> f64 {
        if self.susceptible == 0 || !(b > a) {
            return 0.0;
        }
        let total: f64 = self
            .roster
            .iter()
            .map(|r| r.profile.integral(a - r.infection_time, b - r.infection_time))
            .sum();
        self.susceptible as f64 / self.population as f64 * total
    }

    /// `𝔍^N(t, x)/N` at the edges `0, bin, 2 bin, ...` up to the oldest age.
    pub fn age_histogram(&self, t: f64, bin: f64) -> AgeHistogram {
        let oldest = self.roster.iter().map(|r| t - r.infection_time).fold(0.0, f64::max);
        let n = (oldest / bin).ceil().max(0.0) as usize;
        let edges: Vec<f64> = (0..=n).map(|j| j as f64 * bin).collect();
        let values = self.cumulative_ages(t, &edges);
        AgeHistogram { edges, values }
    }

    fn cumulative_ages(&self, t: f64, edges: &[f64]) -> Vec<f64> {
        let mut counts = vec![0u64; edges.len()];
        for r in &self.roster {
            let age = t - r.infection_time;
            let j = edges.partition_point(|&e| e < age);
            if j < counts.len() {
                counts[j] += 1;
            }
        }
        let n = self.population as f64;
        let mut acc = 0u64;
        counts
            .into_iter()
            .map(|c| {
                acc += c;
                acc as f64 / n
            })
            .collect()
    }
}

/// Cumulative age profile `x ↦ 𝔍^N(t, x)/N` sampled at bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeHistogram {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Infection,
    Recovery,
}

/// One state change, with the counts right after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub id: u64,
    pub susceptible: u64,
    pub infected: u64,
    pub recovered: u64,
}

/// Scaled state at one snapshot time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub s: f64,
    pub i: f64,
    pub r: f64,
    /// `𝓘^N(t)/N`.
    pub curly_i: f64,
    /// New infections in `(0, t]`, over `N`.
    pub a: f64,
    /// Compensator `∫_0^t Υ^N / N`.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub population: u64,
    pub model: Model,
    pub records: Vec<Record>,
    pub age_edges: Vec<f64>,
    /// One cumulative age profile per record, empty unless `age_bin` is set.
    pub age_profiles: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    pub proposals: u64,
    pub accepted: u64,
    /// Sum over candidates of `Υ^N/B`; its mean estimates the acceptance probability.
    pub acceptance_sum: f64,
    /// Events after which `S + I + R != N` (SIR) or `S + I != N` (SIS).
    pub conservation_violations: u64,
    pub event_count: u64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn final_record(&self) -> &Record {
        self.records.last().expect("at least one record")
    }
}

/// Pending recovery, ordered by time then id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Due {
    time: f64,
    id: u64,
}

impl Eq for Due {}

impl PartialOrd for Due {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Due {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.id.cmp(&other.id))
    }
}

/// Run replication `replication` of `config` on its own random stream.
pub fn simulate_replication(config: &SimConfig, replication: u64) -> Result<Trajectory> {
    let mut rng = stream(config.seed, replication);
    simulate(config, &mut rng)
}

pub fn simulate(config: &SimConfig, rng: &mut SimRng) -> Result<Trajectory> {
    config.validate()?;
    let law = &config.law;
    let n = config.population;
    let lambda_star = law.lambda_star();

    let mut state = PopulationState::new(n, config.model);
    let mut queue: BinaryHeap<Reverse<Due>> = BinaryHeap::new();
    for age in config.initial.sample_ages(n, rng) {
        let profile = law.sample_profile_conditional(age, rng)?;
        let id = state.infect(-age, profile);
        let due = state.roster.last().expect("just pushed").recovery_time;
        queue.push(Reverse(Due { time: due.max(0.0), id }));
    }

    let times = config.record_times();
    let edges = config.age_edges();
    let mut traj = Trajectory {
        population: n,
        model: config.model,
        records: Vec::with_capacity(times.len()),
        age_edges: edges.clone(),
        age_profiles: Vec::new(),
        events: Vec::new(),
        proposals: 0,
        accepted: 0,
        acceptance_sum: 0.0,
        conservation_violations: 0,
        event_count: 0,
    };
    let scale = 1.0 / n as f64;
    let nf = n as f64;
    let mut infections = 0u64;
    let mut compensator = 0.0;
    let mut next_record = 0usize;

    let record = |state: &PopulationState, t: f64, infections: u64, compensator: f64, traj: &mut Trajectory| {
        traj.records.push(Record {
            t,
            s: state.susceptible as f64 / nf,
            i: state.infected() as f64 / nf,
            r: state.recovered as f64 / nf,
            curly_i: state.aggregate_infectivity(t) / nf,
            a: infections as f64 / nf,
            lambda: compensator / nf,
        });
        if !edges.is_empty() {
            traj.age_profiles.push(state.cumulative_ages(t, &edges));
        }
    };

    loop {
        let t = state.clock;
        let bound = lambda_star * state.infected() as f64 * state.susceptible as f64 * scale;
        let t_prop = if bound > 0.0 {
            t - (1.0 - rng.random::<f64>()).ln() / bound
        } else {
            f64::INFINITY
        };
        let t_rec = queue.peek().map_or(f64::INFINITY, |Reverse(due)| due.time);
        let t_next = t_prop.min(t_rec);

        // snapshots strictly before the next event see the current state
        while next_record < times.len() && times[next_record] < t_next {
            let s = times[next_record];
            if s > config.horizon {
                break;
            }
            compensator += state.rate_integral(state.clock, s);
            state.clock = s;
            record(&state, s, infections, compensator, &mut traj);
            next_record += 1;
        }
        if t_next > config.horizon {
            break;
        }
        compensator += state.rate_integral(state.clock, t_next);
        state.clock = t_next;

        if t_rec <= t_prop {
            let Reverse(Due { id, .. }) = queue.pop().expect("peeked");
            state.recover(id);
            log_event(&mut traj, &state, config, t_next, EventKind::Recovery, id);
        } else {
            traj.proposals += 1;
            let rate = state.infection_rate(t_next);
            traj.acceptance_sum += rate / bound;
            if rng.random::<f64>() * bound < rate {
                traj.accepted += 1;
                infections += 1;
                let profile = law.sample_profile(rng);
                let id = state.infect(t_next, profile);
                let due = state.roster.last().expect("just pushed").recovery_time;
                queue.push(Reverse(Due { time: due, id }));
                log_event(&mut traj, &state, config, t_next, EventKind::Infection, id);
            }
        }
    }
    Ok(traj)
}

fn log_event(traj: &mut Trajectory, state: &PopulationState, config: &SimConfig, time: f64, kind: EventKind, id: u64) {
    traj.event_count += 1;
    let total = state.susceptible + state.infected() + state.recovered;
    if total != state.population || (state.model == Model::Sis && state.recovered != 0) {
        traj.conservation_violations += 1;
    }
    if config.record_events {
        traj.events.push(Event {
            time,
            kind,
            id,
            susceptible: state.susceptible,
            infected: state.infected(),
            recovered: state.recovered,
        });
    }
}

/// Statistics of `D = Ā^N(t) - Λ̄^N(t)` across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub t: f64,
    pub replications: usize,
    pub mean_d: f64,
    pub z_mean: f64,
    pub var_d: f64,
    /// `E[Λ̄^N(t)]/N`, the predicted variance of `D`.
    pub expected_var: f64,
    pub z_var: f64,
}

/// `M^N_A = A^N - Λ^N` is a martingale with `⟨M^N_A⟩ = Λ^N`, so `D` should
/// have mean zero and variance `E[Λ̄^N(t)]/N`.
pub fn martingale_diagnostic(replications: &[Trajectory], t: f64) -> Result<MartingaleReport> {
    let m = replications.len();
    if m < MIN_MARTINGALE_REPLICATIONS {
        return Err(Error::InsufficientReplications {
            needed: MIN_MARTINGALE_REPLICATIONS,
            got: m,
        });
    }
    let n = replications[0].population;
    if replications.iter().any(|r| r.population != n) {
        return Err(Error::config("replications differ in population"));
    }
    let tol = 1e-9 * t.abs().max(1.0);
    let mut d = Vec::with_capacity(m);
    let mut comp = Vec::with_capacity(m);
    for traj in replications {
        let rec = traj
            .records
            .iter()
            .find(|r| (r.t - t).abs() <= tol)
            .ok_or_else(|| Error::config(format!("t = {t} is not on the record grid")))?;
        d.push(rec.a - rec.lambda);
        comp.push(rec.lambda);
    }
    let mf = m as f64;
    let mean_d = d.iter().sum::<f64>() / mf;
    let var_d = d.iter().map(|x| (x - mean_d).powi(2)).sum::<f64>() / (mf - 1.0);
    let m4 = d.iter().map(|x| (x - mean_d).powi(4)).sum::<f64>() / mf;
    let mean_c = comp.iter().sum::<f64>() / mf;
    let var_c = comp.iter().map(|x| (x - mean_c).powi(2)).sum::<f64>() / (mf - 1.0);
    let expected_var = mean_c / n as f64;

    let z = |diff: f64, se2: f64| if se2 > 0.0 { diff / se2.sqrt() } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let z_mean = z(mean_d, var_d / mf);
    let se_var2 = (m4 - var_d * var_d).max(0.0) / mf + var_c / (mf * (n as f64).powi(2));
    let z_var = z(var_d - expected_var, se_var2);
    Ok(MartingaleReport {
        t,
        replications: m,
        mean_d,
        z_mean,
        var_d,
        expected_var,
        z_var,
    })
}
