//! The training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use kronqn_core::data::{BatchSampler, Dataset};
use kronqn_core::nn::Network;
use kronqn_core::Error;

use crate::config::RunConfig;
use crate::runlog::{final_metric, Row, RunLog, Status};
use crate::CliError;

/// Name of the log written inside a run's output directory.
pub const RUN_LOG: &str = "run.csv";

#[derive(Debug)]
pub struct TrainOutcome {
    pub status: Status,
    pub rows: Vec<Row>,
    pub network: Network,
    /// Divergence or abort reason.
    pub message: Option<String>,
}

impl TrainOutcome {
    /// Last full-dataset loss of a completed run.
    pub fn final_loss(&self) -> Option<f64> {
        (self.status == Status::Completed).then(|| final_metric(&self.rows)).flatten()
    }
}

/// Failures that mean the iterates left the region where the arithmetic is
/// meaningful, as opposed to bugs or bad input.
fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Diverged(_) | Error::NonFinite(_) | Error::NotPositiveDefinite { .. } | Error::NoConvergence { .. }
    )
}

/// Mean loss over the whole dataset, streamed in chunks.
pub fn full_loss(net: &Network, data: &Dataset) -> kronqn_core::Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.chunks(1000) {
        total += net.loss(&x, &y)? * x.rows() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains as described by `cfg`, streaming the log to `sink`. Divergence is
/// reported through [`TrainOutcome::status`], not as an error.
pub fn train<W: Write>(cfg: &RunConfig, data: &Dataset, sink: W) -> Result<TrainOutcome, CliError> {
    let schedule = cfg.schedule()?;
    let mut net = cfg.build_network()?;
    if net.input_dim() != data.input_dim() || net.output_dim() != data.target_dim() {
        return Err(CliError::Config(format!(
            "architecture maps {} -> {} but the data is {} -> {}",
            net.input_dim(),
            net.output_dim(),
            data.input_dim(),
            data.target_dim()
        )));
    }
    let mut opt = cfg.build_optimizer(&net)?;
    let mut log = RunLog::new(sink)?;
    let start = Instant::now();
    let clock = |start: &Instant| cfg.run.log_seconds.then(|| start.elapsed().as_secs_f64());

    opt.warm_start(&net, data)?;
    let mut sampler = BatchSampler::new(data.len(), cfg.run.batch_size, cfg.run.drop_last, cfg.run.seed)?;
    let per_epoch = sampler.batches_per_epoch();
    let total = per_epoch * cfg.run.epochs;

    let initial = full_loss(&net, data)?;
    log.push(Row {
        k: 0,
        epoch: 0,
        seconds: clock(&start),
        train_loss: None,
        val_metric: Some(initial),
        skipped_updates: 0,
        status: Status::Running,
    })?;

    let mut status = Status::Completed;
    let mut message = None;
    for k in 1..=total {
        let epoch = (k - 1) / per_epoch;
        let last = k == total;
        let eval = last
            || match cfg.run.eval_every {
                0 => k % per_epoch == 0,
                n => k % n == 0,
            };
        let (x, y) = sampler.next_batch(data);
        let mut fatal = None;
        let result = opt.step(&mut net, &x, &y, k, schedule.rate(epoch)).and_then(|info| {
            let val = if eval { Some(full_loss(&net, data)?) } else { None };
            if !info.loss.is_finite() || val.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Diverged("non-finite loss".into()));
            }
            Ok((info, val))
        });
        let (train_loss, val_metric, row_status) = match result {
            Ok((info, val)) => (Some(info.loss), val, if last { Status::Completed } else { Status::Running }),
            Err(e) => {
                status = if is_numeric_failure(&e) { Status::Diverged } else { Status::Aborted };
                message = Some(e.to_string());
                fatal = (status == Status::Aborted).then_some(e);
                (None, None, status)
            }
        };
        log.push(Row {
            k,
            epoch: if k % per_epoch == 0 { epoch + 1 } else { epoch },
            seconds: clock(&start),
            train_loss,
            val_metric,
            skipped_updates: opt.skipped_updates(),
            status: row_status,
        })?;
        if let Some(e) = fatal {
            return Err(e.into());
        }
        if status == Status::Diverged {
            break;
        }
    }
    Ok(TrainOutcome { status, rows: log.into_rows(), network: net, message })
}

/// Trains and writes `<out_dir>/run.csv`.
pub fn train_to_dir(cfg: &RunConfig, data: &Dataset, out_dir: &Path) -> Result<TrainOutcome, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    train_to_file(cfg, data, &out_dir.join(RUN_LOG))
}

pub fn train_to_file(cfg: &RunConfig, data: &Dataset, path: &Path) -> Result<TrainOutcome, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    train(cfg, data, BufWriter::new(file))
}
