//! Grid search over configuration keys.
//!
//! A grid file has one axis per line, `section.key = v1, v2, ...`. Cells are
//! the Cartesian product with the first axis varying slowest. Each cell gets
//! its own seed derived from the base seed and the cell index unless
//! `run.seed` is itself an axis.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kronqn_core::data::Dataset;

use crate::config::RunConfig;
use crate::runlog::Status;
use crate::train::train_to_file;
use crate::CliError;

pub const SUMMARY: &str = "summary.csv";
pub const BEST: &str = "best.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_grid(text: &str) -> Result<Vec<Axis>, CliError> {
    let mut axes: Vec<Axis> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, vals) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid line {}: expected section.key = v1, v2", i + 1)))?;
        let key = key.trim().to_string();
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Config(format!("grid line {}: axis '{key}' has no values", i + 1)));
        }
        // Validate the key and every value early.
        let mut probe = RunConfig::default();
        for v in &values {
            probe.set(&key, v).map_err(|e| CliError::Config(format!("grid line {}: {e}", i + 1)))?;
        }
        if axes.iter().any(|a| a.key == key) {
            return Err(CliError::Config(format!("grid line {}: duplicate axis '{key}'", i + 1)));
        }
        axes.push(Axis { key, values });
    }
    if axes.is_empty() {
        return Err(CliError::Config("grid has no axes".into()));
    }
    Ok(axes)
}

pub fn cell_count(axes: &[Axis]) -> usize {
    axes.iter().map(|a| a.values.len()).product()
}

/// Values of cell `index`, one per axis.
pub fn cell_values(axes: &[Axis], mut index: usize) -> Vec<&str> {
    let mut out = vec![""; axes.len()];
    for (slot, axis) in out.iter_mut().zip(axes).rev() {
        *slot = &axis.values[index % axis.values.len()];
        index /= axis.values.len();
    }
    out
}

/// SplitMix64 finalizer over `base + index`.
pub fn child_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub seed: u64,
    pub values: Vec<String>,
    pub final_loss: Option<f64>,
    pub status: Status,
    pub log: PathBuf,
}

pub fn cell_config(base: &RunConfig, axes: &[Axis], index: usize) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    cfg.run.seed = child_seed(base.run.seed, index);
    for (axis, v) in axes.iter().zip(cell_values(axes, index)) {
        cfg.set(&axis.key, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Best finished cell: lowest final loss among non-diverged cells.
pub fn best(results: &[CellResult]) -> Option<&CellResult> {
    results
        .iter()
        .filter(|r| r.status == Status::Completed)
        .filter_map(|r| r.final_loss.map(|l| (l, r)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.index.cmp(&b.1.index)))
        .map(|(_, r)| r)
}

/// Runs every cell, writing `cell_XXX.csv`, `summary.csv` and `best.txt` to
/// `out_dir`.
pub fn run_grid(base: &RunConfig, axes: &[Axis], out_dir: &Path, parallel: usize) -> Result<Vec<CellResult>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let n = cell_count(axes);
    let configs: Vec<RunConfig> = (0..n).map(|i| cell_config(base, axes, i)).collect::<Result<_, _>>()?;
    let shared_data = if axes.iter().any(|a| a.key.starts_with("data.")) { None } else { Some(base.build_dataset()?) };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<CellResult, CliError>>> = Mutex::new(Vec::new());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= n {
            break;
        }
        let r = run_cell(&configs[i], axes, i, shared_data.as_ref(), out_dir);
        results.lock().expect("grid worker panicked").push(r);
    };
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1).min(n) {
            s.spawn(work);
        }
    });
    let mut results = results.into_inner().expect("grid worker panicked").into_iter().collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|r| r.index);

    write_summary(&out_dir.join(SUMMARY), axes, &results)?;
    let best_text = match best(&results) {
        Some(b) => format!("{}\n", summary_line(b)),
        None => "none\n".to_string(),
    };
    let path = out_dir.join(BEST);
    std::fs::write(&path, best_text).map_err(|e| CliError::io(&path, e))?;
    Ok(results)
}

fn run_cell(cfg: &RunConfig, axes: &[Axis], index: usize, data: Option<&Dataset>, out: &Path) -> Result<CellResult, CliError> {
    let owned;
    let data = match data {
        Some(d) => d,
        None => {
            owned = cfg.build_dataset()?;
            &owned
        }
    };
    let log = out.join(format!("cell_{index:03}.csv"));
    let (status, final_loss) = match train_to_file(cfg, data, &log) {
        Ok(o) => (o.status, o.final_loss()),
        Err(CliError::Core(_)) => (Status::Aborted, None),
        Err(e) => return Err(e),
    };
    Ok(CellResult {
        index,
        seed: cfg.run.seed,
        values: cell_values(axes, index).into_iter().map(String::from).collect(),
        final_loss,
        status,
        log,
    })
}

fn summary_line(r: &CellResult) -> String {
    let log = r.log.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        r.index,
        r.seed,
        r.values.join(","),
        r.final_loss.map(|l| l.to_string()).unwrap_or_default(),
        r.status,
        log
    )
}

fn write_summary(path: &Path, axes: &[Axis], results: &[CellResult]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| CliError::io(path, e))?);
    let keys: Vec<&str> = axes.iter().map(|a| a.key.as_str()).collect();
    let mut text = format!("cell,seed,{},final_loss,status,log\n", keys.join(","));
    for r in results {
        text.push_str(&summary_line(r));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
