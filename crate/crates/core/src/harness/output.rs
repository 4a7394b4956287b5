//! CSV and JSON writers for traces.
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which reads back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::run::{RegretTrace, TraceRow};

pub const TRACE_HEADER: &str = "step,reward_mean,reward_se,regret_mean,regret_se,regret_per_ln_n";

/// Environment variable that replaces the default output directory.
pub const OUT_DIR_ENV: &str = "MLMR_OUT_DIR";

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, r: &TraceRow) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        r.step,
        fmt_real(r.reward_mean),
        fmt_real(r.reward_se),
        fmt_real(r.regret_mean),
        fmt_real(r.regret_se),
        fmt_real(r.regret_per_ln_n)
    );
}

pub fn trace_csv(trace: &RegretTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        push_row(&mut out, r);
    }
    out
}

/// M rows × N columns of mean play counts.
pub fn counts_csv(counts: &[f64], resources: usize) -> String {
    let mut out = String::new();
    for row in counts.chunks(resources) {
        let cells: Vec<String> = row.iter().map(|&c| fmt_real(c)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Trace CSV with a leading `L` column, one block per exploration constant.
pub fn sweep_csv(runs: &[(f64, RegretTrace)]) -> String {
    let mut out = format!("L,{TRACE_HEADER}\n");
    for (l, trace) in runs {
        for r in &trace.rows {
            out.push_str(&fmt_real(*l));
            out.push(',');
            push_row(&mut out, r);
        }
    }
    out
}

/// Writes `trace.csv`, one `counts_<step>.csv` per checkpoint, and
/// `summary.json`. Returns the paths written.
pub fn write_run(dir: &Path, trace: &RegretTrace) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("trace.csv");
    fs::write(&path, trace_csv(trace))?;
    written.push(path);
    for (row, counts) in trace.rows.iter().zip(&trace.counts) {
        let path = dir.join(format!("counts_{}.csv", row.step));
        fs::write(&path, counts_csv(counts, trace.resources))?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(trace)
        .map_err(|e| Error::validation(format!("serializing summary: {e}")))?;
    fs::write(&path, json + "\n")?;
    written.push(path);
    Ok(written)
}

/// Parses a trace CSV produced by [`trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::validation("trace CSV header mismatch"));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let bad = || Error::validation(format!("trace CSV line {}: '{line}'", k + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TraceRow {
                step: f[0].parse().map_err(|_| bad())?,
                reward_mean: real(f[1])?,
                reward_se: real(f[2])?,
                regret_mean: real(f[3])?,
                regret_se: real(f[4])?,
                regret_per_ln_n: real(f[5])?,
            })
        })
        .collect()
}

/// Parses a counts CSV into row-major values.
pub fn read_counts_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::validation(format!("bad counts cell '{s}'")))
                })
                .collect()
        })
        .collect()
}
