//! Per-run CSV log.
//!
//! One row per iteration plus a `k = 0` row holding the initial full-dataset
//! loss. `train_loss` is the minibatch loss before the step; `val_metric` is
//! the full-dataset loss, filled at evaluation points and on the final row.
//! Floats are written with Rust's shortest round-trip formatting.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::CliError;

pub const HEADER: &str = "k,epoch,seconds,train_loss,val_metric,skipped_updates,status";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Completed,
    Diverged,
    Aborted,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Running => "running",
            Status::Completed => "completed",
            Status::Diverged => "diverged",
            Status::Aborted => "aborted",
        })
    }
}

impl FromStr for Status {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "running" => Status::Running,
            "completed" => Status::Completed,
            "diverged" => Status::Diverged,
            "aborted" => Status::Aborted,
            _ => return Err(CliError::Config(format!("unknown run status '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub k: usize,
    pub epoch: usize,
    pub seconds: Option<f64>,
    pub train_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub skipped_updates: usize,
    pub status: Status,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.k,
            self.epoch,
            opt(self.seconds),
            opt(self.train_loss),
            opt(self.val_metric),
            self.skipped_updates,
            self.status
        )
    }
}

impl FromStr for Row {
    type Err = CliError;

    fn from_str(line: &str) -> Result<Self, CliError> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(CliError::Config(format!("log row needs 7 fields: '{line}'")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| CliError::Config(format!("'{s}': {e}")));
        let flt = |s: &str| -> Result<Option<f64>, CliError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| CliError::Config(format!("'{s}': {e}")))
            }
        };
        Ok(Row {
            k: num(f[0])?,
            epoch: num(f[1])?,
            seconds: flt(f[2])?,
            train_loss: flt(f[3])?,
            val_metric: flt(f[4])?,
            skipped_updates: num(f[5])?,
            status: f[6].parse()?,
        })
    }
}

/// Streams rows to a writer, flushing after each so a crashed run keeps its
/// history.
pub struct RunLog<W: Write> {
    out: W,
    rows: Vec<Row>,
}

impl<W: Write> RunLog<W> {
    pub fn new(mut out: W) -> Result<Self, CliError> {
        writeln!(out, "{HEADER}").map_err(|e| CliError::Io(e.to_string()))?;
        Ok(RunLog { out, rows: Vec::new() })
    }

    pub fn push(&mut self, row: Row) -> Result<(), CliError> {
        writeln!(self.out, "{row}").and_then(|_| self.out.flush()).map_err(|e| CliError::Io(e.to_string()))?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Row> {
        self.rows
    }
}

pub fn parse_log(text: &str) -> Result<Vec<Row>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == HEADER => {}
        other => return Err(CliError::Config(format!("bad log header {other:?}"))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Last recorded full-dataset loss.
pub fn final_metric(rows: &[Row]) -> Option<f64> {
    rows.iter().rev().find_map(|r| r.val_metric)
}
