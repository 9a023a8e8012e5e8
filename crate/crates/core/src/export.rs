//! CSV and JSON writers.
//!
//! Every CSV starts with a comment line `# epi-volterra config_hash=<hex> seed=<n>`
//! followed by a header row. Every JSON document is an object with
//! `config_hash`, `seed` and `result` keys. Floats use Rust's shortest
//! round-trip formatting, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::abm::{Event, EventKind, Trajectory};
use crate::error::{Error, Result};
use crate::harness::ConvergenceTable;
use crate::limit_solver::LimitSolution;
use crate::pde::DensityGrid;

pub const TRAJECTORY_HEADER: &str = "t,S_bar,I_bar,R_bar,curlyI_bar,A_bar,Lambda_bar";
pub const CONVERGENCE_HEADER: &str = "N,metric,mean,median,max,replications";
pub const EVENTS_HEADER: &str = "t,kind,id,S,I,R";

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn comment(&self) -> String {
        format!("# epi-volterra config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn push_row(out: &mut String, values: &[f64]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write!(out, "{v}").expect("write to string");
    }
    out.push('\n');
}

fn csv_body(prov: &Provenance, header: &str) -> String {
    let mut out = prov.comment();
    out.push_str(header);
    out.push('\n');
    out
}

pub fn trajectory_csv(traj: &Trajectory, prov: &Provenance) -> String {
    let mut out = csv_body(prov, TRAJECTORY_HEADER);
    for r in &traj.records {
        push_row(&mut out, &[r.t, r.s, r.i, r.r, r.curly_i, r.a, r.lambda]);
    }
    out
}

/// Limit series at the given lattice indices, in the trajectory schema.
/// Both `A_bar` and `Lambda_bar` are `∫_0^t Ῡ`, the limit of either.
pub fn limit_csv(solution: &LimitSolution, indices: &[usize], prov: &Provenance) -> String {
    let mut out = csv_body(prov, TRAJECTORY_HEADER);
    let mut acc = 0.0;
    let mut done = 0usize;
    for &n in indices {
        while done < n {
            acc += 0.5 * solution.dt * (solution.upsilon[done] + solution.upsilon[done + 1]);
            done += 1;
        }
        push_row(
            &mut out,
            &[
                solution.times[n],
                solution.s[n],
                solution.i[n],
                solution.r[n],
                solution.curly_i[n],
                acc,
                acc,
            ],
        );
    }
    out
}

/// Dense matrix: header `t\x,<x edges>`, then one row per time.
pub fn matrix_csv(times: &[f64], edges: &[f64], rows: &[Vec<f64>], prov: &Provenance) -> String {
    let mut header = String::from("t\\x");
    for e in edges {
        write!(header, ",{e}").expect("write to string");
    }
    let mut out = csv_body(prov, &header);
    for (t, row) in times.iter().zip(rows) {
        let mut line = vec![*t];
        line.extend_from_slice(row);
        push_row(&mut out, &line);
    }
    out
}

/// Age-density grid, keeping every `col_stride`-th column.
pub fn density_csv(grid: &DensityGrid, col_stride: usize, prov: &Provenance) -> String {
    let stride = col_stride.max(1);
    let cols: Vec<usize> = (0..=grid.columns).step_by(stride).collect();
    let edges: Vec<f64> = cols.iter().map(|&j| j as f64 * grid.dt).collect();
    let times: Vec<f64> = grid.rows.iter().map(|&n| n as f64 * grid.dt).collect();
    let rows: Vec<Vec<f64>> = (0..grid.rows.len())
        .map(|k| cols.iter().map(|&j| grid.get(k, j)).collect())
        .collect();
    matrix_csv(&times, &edges, &rows, prov)
}

pub fn events_csv(events: &[Event], prov: &Provenance) -> String {
    let mut out = csv_body(prov, EVENTS_HEADER);
    for e in events {
        let kind = match e.kind {
            EventKind::Infection => "infection",
            EventKind::Recovery => "recovery",
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.time, kind, e.id, e.susceptible, e.infected, e.recovered
        )
        .expect("write to string");
    }
    out
}

pub fn convergence_csv(table: &ConvergenceTable, prov: &Provenance) -> String {
    let mut out = csv_body(prov, CONVERGENCE_HEADER);
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.n,
            row.metric.name(),
            row.mean,
            row.median,
            row.max,
            row.replications
        )
        .expect("write to string");
    }
    out
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    result: &'a T,
}

pub fn json<T: Serialize>(value: &T, prov: &Provenance) -> String {
    let env = Envelope {
        config_hash: &prov.config_hash,
        seed: prov.seed,
        result: value,
    };
    let mut s = serde_json::to_string_pretty(&env).expect("result serializes");
    s.push('\n');
    s
}

/// Collects output files under one directory.
#[derive(Debug, Clone)]
pub struct Writer {
    pub dir: PathBuf,
    pub provenance: Provenance,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: impl Into<PathBuf>, provenance: Provenance) -> Result<Self> {
        let dir = dir.into();
        ensure_dir(&dir)?;
        Ok(Writer {
            dir,
            provenance,
            written: Vec::new(),
        })
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_text(&path, body)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let body = json(value, &self.provenance);
        self.text(name, &body)
    }
}
