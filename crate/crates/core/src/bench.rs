//! Benchmark grid: runs every model under every combination of variant,
//! rounding strategy and precision and records one CSV row per run.
//!
//! Columns: `model,variant,strategy,precision,rep,sweeps,mode_switches,
//! lower_hex,upper_hex,time_s,status`. `rep` is the repetition number, or
//! `median` on the summary row that follows the repetitions of a cell;
//! `time_s` covers the iteration phase only; `status` is one of
//! `converged`, `stalled`, `sweep-limit` or `TO`.

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::hexfloat::to_hex;
use crate::iteration::{solve, SolveConfig, SolveError, Termination, Variant, DEFAULT_MAX_SWEEPS};
use crate::model::{Mdp, Opt, Rational, StateSet};
use crate::rounding::{Precision, Strategy};

pub const CSV_HEADER: [&str; 11] = [
    "model",
    "variant",
    "strategy",
    "precision",
    "rep",
    "sweeps",
    "mode_switches",
    "lower_hex",
    "upper_hex",
    "time_s",
    "status",
];

pub const MEDIAN_REP: &str = "median";

#[derive(Debug, Clone)]
pub struct BenchModel {
    pub name: String,
    pub model: Mdp,
    pub goal: StateSet,
    pub opt: Opt,
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub variants: Vec<Variant>,
    pub strategies: Vec<Strategy>,
    pub precisions: Vec<Precision>,
    pub repetitions: usize,
    pub epsilon: Rational,
    pub max_sweeps: u64,
    pub check_all_states: bool,
    /// Per-run limit; exceeding it yields a `TO` row.
    pub timeout: Option<Duration>,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            strategies: vec![Strategy::HardwareMode, Strategy::Nudge],
            precisions: vec![Precision::Double, Precision::Single],
            repetitions: 3,
            epsilon: SolveConfig::default().epsilon,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            check_all_states: false,
            timeout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub variant: String,
    pub strategy: String,
    pub precision: String,
    pub rep: String,
    pub sweeps: u64,
    pub mode_switches: u64,
    pub lower_hex: String,
    pub upper_hex: String,
    pub time_s: f64,
    pub status: String,
}

/// Runs the full grid. Rows come out grouped per cell: the repetitions in
/// order, then the median row.
pub fn run_grid(models: &[BenchModel], grid: &BenchGrid) -> Result<Vec<BenchRow>, SolveError> {
    let mut rows = Vec::new();
    if grid.repetitions == 0 {
        return Ok(rows);
    }
    for bm in models {
        for &variant in &grid.variants {
            for &strategy in &grid.strategies {
                for &precision in &grid.precisions {
                    let mut cell = Vec::with_capacity(grid.repetitions);
                    for rep in 0..grid.repetitions {
                        let cfg = SolveConfig {
                            variant,
                            epsilon: grid.epsilon.clone(),
                            precision,
                            strategy,
                            max_sweeps: grid.max_sweeps,
                            check_all_states: grid.check_all_states,
                            deadline: grid.timeout.map(|t| Instant::now() + t),
                        };
                        let r = solve(&bm.model, &bm.goal, bm.opt, &cfg)?;
                        cell.push(BenchRow {
                            model: bm.name.clone(),
                            variant: variant.name().into(),
                            strategy: strategy.to_string(),
                            precision: precision.to_string(),
                            rep: rep.to_string(),
                            sweeps: r.sweeps,
                            mode_switches: r.mode_switches,
                            lower_hex: to_hex(r.lower),
                            upper_hex: to_hex(r.upper),
                            time_s: r.iteration_time.as_secs_f64(),
                            status: r.termination.name().into(),
                        });
                    }
                    let median = median_row(&cell);
                    rows.extend(cell);
                    rows.push(median);
                }
            }
        }
    }
    Ok(rows)
}

fn median_row(cell: &[BenchRow]) -> BenchRow {
    let mut times: Vec<f64> = cell.iter().map(|r| r.time_s).collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let time_s = if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2.0
    };
    let timed_out = cell
        .iter()
        .any(|r| r.status == Termination::Timeout.name());
    let mut row = cell[0].clone();
    row.rep = MEDIAN_REP.into();
    row.time_s = time_s;
    if timed_out {
        row.status = Termination::Timeout.name().into();
    }
    row
}

/// Writes the header followed by `rows`. An empty grid yields the header only.
pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(csv::Error::from(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected CSV header {headers:?}"),
        )));
    }
    r.deserialize().collect()
}
