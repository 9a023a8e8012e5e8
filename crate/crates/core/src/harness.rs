//! Replication orchestration, convergence experiments and the check battery.

use rayon::prelude::*;
use serde::Serialize;

use crate::abm::{martingale_diagnostic, simulate_replication, MartingaleReport, Model, Trajectory};
use crate::analysis::{r0, sis_equilibrium, verify_equilibrium};
use crate::config::{ExperimentConfig, Metric};
use crate::error::{Error, Result};
use crate::lifetime::{Continuity, LifetimeKind};
use crate::limit_solver::{final_size, solve, LimitSolution};
use crate::pde::{
    aggregate_from_density, boundary_condition_check, density_from_solution, jump_consistency, transport_residual,
    GridSpec,
};
use crate::quadrature::piecewise_simpson;

/// Offset separating martingale replication streams from the ladder streams.
const MARTINGALE_STREAM: u64 = 0xFFFF << 40;

pub fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    builder.build().map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Stream index of replication `r` at ladder position `rung`.
pub fn replication_stream(rung: usize, r: usize) -> u64 {
    ((rung as u64) << 32) | r as u64
}

/// Run `replications` simulations at population `n`, in replication order.
pub fn run_replications(
    cfg: &ExperimentConfig,
    n: u64,
    rung: usize,
    replications: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Trajectory>> {
    let sim = cfg.sim_config(n);
    pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| simulate_replication(&sim, replication_stream(rung, r)))
            .collect()
    })
}

/// Limit values on the simulator's record grid.
struct Reference {
    index: Vec<usize>,
    ages: Vec<Vec<f64>>,
}

impl Reference {
    fn new(cfg: &ExperimentConfig, solution: &LimitSolution, need_ages: bool) -> Self {
        let sim = cfg.sim_config(cfg.simulation.population);
        let index: Vec<usize> = sim
            .record_times()
            .iter()
            .map(|t| ((t / solution.dt).round() as usize).min(solution.steps()))
            .collect();
        let ages = if need_ages {
            let edges = sim.age_edges();
            index.iter().map(|&n| solution.cumulative_at_edges(n, &edges)).collect()
        } else {
            Vec::new()
        };
        Reference { index, ages }
    }

    fn error(&self, metric: Metric, traj: &Trajectory, solution: &LimitSolution) -> f64 {
        let mut sup = 0.0f64;
        for (k, rec) in traj.records.iter().enumerate() {
            let n = self.index[k];
            let d = match metric {
                Metric::SupS => (rec.s - solution.s[n]).abs(),
                Metric::SupI => (rec.i - solution.i[n]).abs(),
                Metric::SupR => (rec.r - solution.r[n]).abs(),
                Metric::SupCurlyI => (rec.curly_i - solution.curly_i[n]).abs(),
                Metric::SupAgeDist => traj.age_profiles[k]
                    .iter()
                    .zip(&self.ages[k])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            };
            sup = sup.max(d);
        }
        sup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub metric: Metric,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub replications: usize,
    /// Per-replication sup errors, in replication order.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn means(&self, metric: Metric) -> Vec<(u64, f64)> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| (r.n, r.mean)).collect()
    }

    /// Mean error nonincreasing along the ladder, allowing one inversion.
    pub fn is_monotone(&self, metric: Metric) -> bool {
        let m = self.means(metric);
        m.windows(2).filter(|w| w[1].1 > w[0].1).count() <= 1
    }

    /// Ratio of consecutive means, normalized to one decade of `N`.
    pub fn decade_ratios(&self, metric: Metric) -> Vec<f64> {
        self.means(metric)
            .windows(2)
            .map(|w| {
                let decades = (w[1].0 as f64 / w[0].0 as f64).log10();
                (w[1].1 / w[0].1).powf(1.0 / decades)
            })
            .collect()
    }
}

fn summarize(n: u64, metric: Metric, errors: Vec<f64>) -> ConvergenceRow {
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    ConvergenceRow {
        n,
        metric,
        mean: errors.iter().sum::<f64>() / m as f64,
        median,
        max: sorted[m - 1],
        replications: m,
        errors,
    }
}

/// Sup-norm distance between scaled simulations and the limit, per ladder rung.
pub fn run_convergence(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<(ConvergenceTable, LimitSolution)> {
    let conv = cfg
        .convergence
        .as_ref()
        .ok_or_else(|| Error::config("config has no convergence section"))?;
    let solution = solve(&cfg.limit_config())?;
    let reference = Reference::new(cfg, &solution, conv.metrics.contains(&Metric::SupAgeDist));
    let pool = pool(jobs)?;
    let mut rows = Vec::new();
    for (rung, &n) in conv.ladder.iter().enumerate() {
        log::info!("convergence: N = {n}, {} replications", conv.replications);
        let sim = cfg.sim_config(n);
        let per_rep: Vec<Vec<f64>> = pool.install(|| {
            (0..conv.replications)
                .into_par_iter()
                .map(|r| {
                    let traj = simulate_replication(&sim, replication_stream(rung, r))?;
                    Ok(conv.metrics.iter().map(|&m| reference.error(m, &traj, &solution)).collect())
                })
                .collect::<Result<_>>()
        })?;
        for (k, &metric) in conv.metrics.iter().enumerate() {
            rows.push(summarize(n, metric, per_rep.iter().map(|e| e[k]).collect()));
        }
    }
    Ok((ConvergenceTable { rows }, solution))
}

/// Martingale diagnostic over the configured replications.
pub fn run_martingale(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<MartingaleReport> {
    let m = cfg
        .martingale
        .as_ref()
        .ok_or_else(|| Error::config("config has no martingale section"))?;
    let sim = cfg.sim_config(m.population);
    let pool = pool(jobs)?;
    let trajs: Vec<Trajectory> = pool.install(|| {
        (0..m.replications)
            .into_par_iter()
            .map(|r| simulate_replication(&sim, MARTINGALE_STREAM | r as u64))
            .collect::<Result<_>>()
    })?;
    martingale_diagnostic(&trajs, m.t)
}

/// Rows used for the density checks: consecutive pairs so the transport
/// residual has something to step along.
pub fn check_rows(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(2);
    let mut rows = Vec::new();
    let mut n = 0;
    while n < steps {
        rows.push(n);
        rows.push(n + 1);
        n += stride;
    }
    if rows.last() != Some(&steps) {
        rows.push(steps);
    }
    rows.dedup();
    rows
}

/// Density grid for checks and export, following the `pde` config section.
pub fn density_grid(cfg: &ExperimentConfig, solution: &LimitSolution) -> crate::pde::DensityGrid {
    let steps = solution.steps();
    let stride = cfg.pde.row_stride.unwrap_or((steps / 200).max(2));
    let period = solution.period();
    let max_age = cfg
        .pde
        .max_age
        .unwrap_or((solution.horizon() + solution.initial.max_age()).min(period.effective_end() + solution.initial.max_age()));
    let spec = GridSpec {
        dt: solution.dt,
        rows: Some(check_rows(steps, stride)),
        max_age: Some(max_age),
    };
    let continuity = if cfg.pde.left_continuous {
        Continuity::Left
    } else {
        Continuity::Right
    };
    density_from_solution(solution, &spec, continuity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// `value <= threshold`, failing on NaN.
    fn below(&mut self, name: &str, value: f64, threshold: f64) {
        let status = if value <= threshold { Status::Pass } else { Status::Fail };
        self.entries.push(CheckEntry {
            name: name.to_string(),
            status,
            value: Some(value),
            threshold: Some(threshold),
            note: String::new(),
        });
    }

    fn flag(&mut self, name: &str, ok: bool, note: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            value: None,
            threshold: None,
            note: note.into(),
        });
    }

    fn skip(&mut self, name: &str, note: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            status: Status::Skip,
            value: None,
            threshold: None,
            note: note.into(),
        });
    }

    fn error(&mut self, name: &str, err: &Error) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            status: Status::Fail,
            value: None,
            threshold: None,
            note: err.to_string(),
        });
    }
}

fn lifetime_checks(cfg: &ExperimentConfig, report: &mut CheckReport) {
    let d = cfg.law.period();
    let end = d.effective_end();
    let pts: Vec<f64> = (0..=40).map(|k| end * k as f64 / 40.0).collect();
    let zero_age = pts
        .iter()
        .map(|&t| (d.conditional_remaining_survival(0.0, t).unwrap_or(f64::NAN) - d.survival(t)).abs())
        .fold(0.0, f64::max);
    report.below("lifetime.conditional_at_age_zero", zero_age, 1e-12);

    let mut tower = 0.0f64;
    for &s in &pts[..20] {
        for &t in &pts[..10] {
            let u = 0.3 * end / 40.0;
            if d.survival(s) > 0.0 && d.survival(s + t) > 0.0 {
                let lhs = d.conditional_remaining_survival(s, t + u).unwrap_or(f64::NAN);
                let rhs = d.conditional_remaining_survival(s, t).unwrap_or(f64::NAN)
                    * d.conditional_remaining_survival(s + t, u).unwrap_or(f64::NAN);
                tower = tower.max((lhs - rhs).abs());
            }
        }
    }
    report.below("lifetime.tower_property", tower, 1e-10);

    let fe: Vec<f64> = pts.iter().map(|&x| d.equilibrium_cdf(x).unwrap_or(f64::NAN)).collect();
    let drop = fe.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let defect = drop.max(fe[0].abs()).max((fe[40] - 1.0).abs());
    report.below("lifetime.equilibrium_cdf_valid", defect, 1e-8);

    if matches!(d.kind(), LifetimeKind::Exponential { .. } | LifetimeKind::Deterministic { .. }) {
        let mut knots = vec![0.0];
        knots.extend(d.breakpoints().into_iter().filter(|b| *b > 0.0 && *b < end));
        knots.push(end);
        let tail = piecewise_simpson(&|x| 1.0 - d.equilibrium_cdf(x).unwrap_or(f64::NAN), &knots, 1e-12);
        let expect = d.second_moment() / (2.0 * d.mean());
        report.below("lifetime.excess_mean", (tail - expect).abs(), 1e-8);
    }
}

fn limit_checks(cfg: &ExperimentConfig, solution: &LimitSolution, report: &mut CheckReport) {
    let dt = solution.dt;
    let lambda_star = cfg.law.lambda_star();
    if solution.model == Model::Sir {
        report.below("limit.mass_conservation", solution.mass_defect(), 10.0 * dt * dt);
        let increasing = solution.s.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        report.below("limit.susceptible_nonincreasing", increasing.max(0.0), 0.0);
    }
    let min_inc = solution.min_age_increment(1);
    report.below("limit.age_profile_monotone", (-min_inc).max(0.0), 0.0);
    let ups_bad = solution
        .upsilon
        .iter()
        .map(|u| if *u < 0.0 { -u } else { (u - lambda_star).max(0.0) })
        .fold(0.0, f64::max);
    report.below("limit.rate_bounds", ups_bad, 1e-12);

    if solution.model == Model::Sir {
        match final_size(solution, cfg.limit.final_size_cutoff) {
            Ok(fs) => {
                let direct = solution.s[0] - solution.s[solution.steps()];
                report.below("limit.final_size_consistency", (fs.phi - direct).abs(), 1e-6);
            }
            Err(e) => report.skip("limit.final_size_consistency", e.to_string()),
        }
    }
}

fn pde_checks(cfg: &ExperimentConfig, solution: &LimitSolution, report: &mut CheckReport) {
    let dt = solution.dt;
    let grid = density_grid(cfg, solution);
    let period = solution.period();
    if period.is_absolutely_continuous() {
        match transport_residual(&grid) {
            Ok(res) => {
                let mu_sup = grid
                    .ages()
                    .iter()
                    .filter_map(|&x| period.hazard(x).ok().map(|h| h.value()))
                    .fold(0.0, f64::max);
                let c = 2.0 * cfg.law.lambda_star().max(1.0) * mu_sup.max(1.0);
                report.below("pde.transport_residual", res.max, c * dt);
            }
            Err(e) => report.error("pde.transport_residual", &e),
        }
        report.skip("pde.jump_consistency", "no atoms");
    } else {
        report.skip("pde.transport_residual", Error::NotAbsolutelyContinuous.to_string());
        match jump_consistency(&grid) {
            Ok(j) => {
                let worst = j.atoms.iter().map(|a| a.max_ratio_error).fold(0.0, f64::max);
                report.below("pde.jump_consistency", worst, 1e-9);
                if matches!(period.kind(), LifetimeKind::Deterministic { .. }) && !cfg.pde.left_continuous {
                    report.below("pde.zero_beyond_support", j.max_beyond_support, 0.0);
                }
            }
            Err(e) => report.error("pde.jump_consistency", &e),
        }
    }
    let bc = boundary_condition_check(&grid, &solution.s, &cfg.law);
    report.below("pde.boundary_condition", bc.max, 10.0 * dt);
    let agg = aggregate_from_density(&grid, &cfg.law);
    let agg_err = grid
        .rows
        .iter()
        .zip(&agg)
        .map(|(&n, a)| (a - solution.curly_i[n]).abs())
        .fold(0.0, f64::max);
    report.below("pde.aggregate_identity", agg_err, 10.0 * dt);
}

fn equilibrium_checks(cfg: &ExperimentConfig, solution: &LimitSolution, report: &mut CheckReport) {
    let eq = match sis_equilibrium(&cfg.law, solution.dt) {
        Ok(e) => e,
        Err(e) => return report.error("equilibrium.formulas", &e),
    };
    let expected = if eq.r0 > 1.0 { 1.0 - 1.0 / eq.r0 } else { 0.0 };
    report.below("equilibrium.i_star_formula", (eq.i_star - expected).abs(), 0.0);
    report.below("equilibrium.r0_quadrature", (eq.r0 - r0(&cfg.law)).abs(), 1e-12);
    let period = cfg.law.period();
    let mut knots = vec![0.0];
    let end = period.effective_end();
    knots.extend(period.breakpoints().into_iter().filter(|b| *b > 0.0 && *b < end));
    knots.push(end);
    let mass = piecewise_simpson(&|x| eq.density(x), &knots, 1e-12);
    report.below("equilibrium.density_mass", (mass - eq.i_star).abs(), 1e-8);
    if solution.model == Model::Sis {
        match verify_equilibrium(&eq, solution, None) {
            Ok(cmp) => {
                report.below("equilibrium.tail_prevalence", cmp.i_error, 1e-3);
                report.below("equilibrium.tail_density", cmp.density_sup_error, 5e-3);
            }
            Err(e) => report.skip("equilibrium.tail_prevalence", e.to_string()),
        }
    }
}

fn abm_checks(cfg: &ExperimentConfig, jobs: Option<usize>, report: &mut CheckReport) {
    let mut sim = cfg.sim_config(cfg.simulation.population);
    sim.record_events = true;
    match simulate_replication(&sim, 0) {
        Ok(traj) => {
            let n = traj.population;
            let bad = traj
                .events
                .iter()
                .filter(|e| e.susceptible + e.infected + e.recovered != n)
                .count() as u64
                + traj.conservation_violations;
            report.below("abm.integer_conservation", bad as f64, 0.0);
            let rate_ok = traj.records.iter().all(|r| r.curly_i * r.s <= cfg.law.lambda_star() + 1e-12);
            report.flag("abm.rate_bound", rate_ok, "");
        }
        Err(e) => report.error("abm.integer_conservation", &e),
    }
    if cfg.martingale.is_some() {
        match run_martingale(cfg, jobs) {
            Ok(m) => {
                report.below("abm.martingale_mean", m.z_mean.abs(), 4.0);
                report.below("abm.martingale_variance", m.z_var.abs(), 4.0);
            }
            Err(e) => report.error("abm.martingale_mean", &e),
        }
    }
}

/// The full invariant battery. Failures become report entries.
pub fn run_checks(cfg: &ExperimentConfig, jobs: Option<usize>) -> CheckReport {
    let mut report = CheckReport::default();
    lifetime_checks(cfg, &mut report);
    match solve(&cfg.limit_config()) {
        Ok(solution) => {
            report.flag("limit.solve", true, "");
            limit_checks(cfg, &solution, &mut report);
            pde_checks(cfg, &solution, &mut report);
            equilibrium_checks(cfg, &solution, &mut report);
        }
        Err(e) => report.error("limit.solve", &e),
    }
    abm_checks(cfg, jobs, &mut report);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_come_in_pairs() {
        assert_eq!(check_rows(10, 4), vec![0, 1, 4, 5, 8, 9, 10]);
        assert_eq!(check_rows(3, 2), vec![0, 1, 2, 3]);
    }

    #[test]
    fn summary_statistics() {
        let row = summarize(10, Metric::SupS, vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!(row.median, 2.5);
        assert_eq!(row.mean, 4.0);
        assert_eq!(row.max, 10.0);
    }

    #[test]
    fn monotone_allows_one_inversion() {
        let mk = |means: &[f64]| ConvergenceTable {
            rows: means
                .iter()
                .enumerate()
                .map(|(k, &m)| summarize(10u64.pow(k as u32 + 1), Metric::SupS, vec![m]))
                .collect(),
        };
        assert!(mk(&[1.0, 0.5, 0.6, 0.2]).is_monotone(Metric::SupS));
        assert!(!mk(&[1.0, 1.5, 0.6, 0.7]).is_monotone(Metric::SupS));
        let r = mk(&[1.0, 0.316]).decade_ratios(Metric::SupS);
        assert!((r[0] - 0.316).abs() < 1e-12);
    }
}
