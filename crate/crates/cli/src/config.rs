//! Run configuration: a flat `key = value` text format with `[section]`
//! headers, named presets, and builders for the network, dataset and
//! optimizer it describes.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kronqn_core::data::{load_mnist_idx, synthetic_dataset, Dataset, IdxMode, SyntheticKind};
use kronqn_core::nn::{LossKind, Network};
use kronqn_core::optim::{
    Adam, AdamConfig, HessianActionMode, HgMode, Kbfgs, KbfgsConfig, KbfgsVariant, Kfac, KfacConfig, LrSchedule,
    Optimizer, Sgdm, SgdmConfig,
};

use crate::arch::{named_loss, parse_architecture};
use crate::CliError;

/// Environment variable naming the directory that holds MNIST IDX files.
pub const DATA_DIR_ENV: &str = "KRONQN_DATA_DIR";
pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS: &str = "train-labels-idx1-ubyte";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerName {
    Kbfgs,
    Kbfgsl,
    KbfgslConvergence,
    Kfac,
    Adam,
    Sgdm,
}

impl fmt::Display for OptimizerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerName::Kbfgs => "kbfgs",
            OptimizerName::Kbfgsl => "kbfgsl",
            OptimizerName::KbfgslConvergence => "kbfgsl-convergence",
            OptimizerName::Kfac => "kfac",
            OptimizerName::Adam => "adam",
            OptimizerName::Sgdm => "sgdm",
        })
    }
}

impl FromStr for OptimizerName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "kbfgs" => OptimizerName::Kbfgs,
            "kbfgsl" => OptimizerName::Kbfgsl,
            "kbfgsl-convergence" => OptimizerName::KbfgslConvergence,
            "kfac" => OptimizerName::Kfac,
            "adam" => OptimizerName::Adam,
            "sgdm" => OptimizerName::Sgdm,
            _ => return Err(CliError::Config(format!("unknown optimizer '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `$KRONQN_DATA_DIR/train-images-idx3-ubyte` (and labels).
    Mnist,
    Idx { images: PathBuf, labels: Option<PathBuf> },
    Synthetic(SyntheticKind),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Mnist => f.write_str("mnist"),
            DataSource::Idx { images, labels: None } => write!(f, "idx:{}", images.display()),
            DataSource::Idx { images, labels: Some(l) } => write!(f, "idx:{}:{}", images.display(), l.display()),
            DataSource::Synthetic(kind) => write!(f, "synthetic:{kind}"),
        }
    }
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "mnist" {
            return Ok(DataSource::Mnist);
        }
        if let Some(kind) = s.strip_prefix("synthetic:") {
            return Ok(DataSource::Synthetic(kind.parse().map_err(CliError::config)?));
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let mut parts = rest.splitn(2, ':');
            let images = PathBuf::from(parts.next().unwrap_or_default());
            let labels = parts.next().map(PathBuf::from);
            return Ok(DataSource::Idx { images, labels });
        }
        Err(CliError::Config(format!("unknown data source '{s}' (mnist, idx:<images>[:<labels>], synthetic:<kind>)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub drop_last: bool,
    /// Evaluate the full-dataset loss every this many iterations; 0 means at
    /// every epoch end.
    pub eval_every: usize,
    /// Fill the `seconds` column with wall-clock time. Off by default so logs
    /// are byte-reproducible.
    pub log_seconds: bool,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub architecture: String,
    pub loss: LossKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    /// Number of samples to use (0 = all; required for synthetic data).
    pub n: usize,
    pub dims: Vec<usize>,
    pub phi: f64,
    pub seed: u64,
    pub mode: IdxMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSection {
    pub name: OptimizerName,
    pub lr: f64,
    /// `constant`, or `step:<epochs>:<factor>`.
    pub lr_schedule: String,
    /// K-BFGS/KFAC `λ`; Adam `ε`.
    pub damping: f64,
    pub update_freq: usize,
    pub beta: f64,
    pub mu1: f64,
    pub lbfgs_capacity: usize,
    pub hessian_action: HessianActionMode,
    pub weight_decay: f64,
    pub momentum: f64,
    pub stat_freq: usize,
    pub inv_freq: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub optimizer: OptimizerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection {
                seed: 0,
                epochs: 20,
                batch_size: 1000,
                drop_last: false,
                eval_every: 0,
                log_seconds: false,
                output: PathBuf::from("runs"),
            },
            model: ModelSection { architecture: "mnist".into(), loss: LossKind::BceWithSigmoid },
            data: DataSection { source: DataSource::Mnist, n: 0, dims: vec![28], phi: 1.0, seed: 0, mode: IdxMode::Autoencoder },
            optimizer: OptimizerSection {
                name: OptimizerName::Kbfgs,
                lr: 0.03,
                lr_schedule: "constant".into(),
                damping: 0.3,
                update_freq: 1,
                beta: 0.9,
                mu1: 0.2,
                lbfgs_capacity: 100,
                hessian_action: HessianActionMode::Minibatched,
                weight_decay: 0.0,
                momentum: 0.9,
                stat_freq: 1,
                inv_freq: 20,
            },
        }
    }
}

fn parse_val<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key} = '{value}': {e}")))
}

fn hessian_action_str(mode: HessianActionMode) -> String {
    match mode {
        HessianActionMode::Minibatched => "minibatched".into(),
        HessianActionMode::MovingAverage { beta } => format!("moving-average:{beta}"),
    }
}

fn parse_hessian_action(key: &str, v: &str) -> Result<HessianActionMode, CliError> {
    if v == "minibatched" {
        return Ok(HessianActionMode::Minibatched);
    }
    match v.strip_prefix("moving-average:") {
        Some(b) => Ok(HessianActionMode::MovingAverage { beta: parse_val(key, b)? }),
        None if v == "moving-average" => Ok(HessianActionMode::MovingAverage { beta: 0.9 }),
        None => Err(CliError::Config(format!("{key} = '{v}': expected minibatched or moving-average[:beta]"))),
    }
}

impl RunConfig {
    /// Sets `section.key` from its text form; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key {
            "run.seed" => self.run.seed = parse_val(key, v)?,
            "run.epochs" => self.run.epochs = parse_val(key, v)?,
            "run.batch_size" => self.run.batch_size = parse_val(key, v)?,
            "run.drop_last" => self.run.drop_last = parse_val(key, v)?,
            "run.eval_every" => self.run.eval_every = parse_val(key, v)?,
            "run.log_seconds" => self.run.log_seconds = parse_val(key, v)?,
            "run.output" => self.run.output = PathBuf::from(v),
            "model.architecture" => {
                self.model.architecture = v.to_string();
                if let Some(loss) = named_loss(v) {
                    self.model.loss = loss;
                }
            }
            "model.loss" => self.model.loss = parse_val(key, v)?,
            "data.source" => self.data.source = v.parse()?,
            "data.n" => self.data.n = parse_val(key, v)?,
            "data.dims" => {
                self.data.dims = v.split(',').map(|d| parse_val(key, d.trim())).collect::<Result<_, _>>()?;
            }
            "data.phi" => self.data.phi = parse_val(key, v)?,
            "data.seed" => self.data.seed = parse_val(key, v)?,
            "data.mode" => {
                self.data.mode = match v {
                    "autoencoder" => IdxMode::Autoencoder,
                    "classify" => IdxMode::Classify,
                    _ => return Err(CliError::Config(format!("{key} = '{v}': expected autoencoder or classify"))),
                }
            }
            "optimizer.name" => self.optimizer.name = v.parse()?,
            "optimizer.lr" => self.optimizer.lr = parse_val(key, v)?,
            "optimizer.lr_schedule" => self.optimizer.lr_schedule = v.to_string(),
            "optimizer.damping" => self.optimizer.damping = parse_val(key, v)?,
            "optimizer.update_freq" => self.optimizer.update_freq = parse_val(key, v)?,
            "optimizer.beta" => self.optimizer.beta = parse_val(key, v)?,
            "optimizer.mu1" => self.optimizer.mu1 = parse_val(key, v)?,
            "optimizer.lbfgs_capacity" => self.optimizer.lbfgs_capacity = parse_val(key, v)?,
            "optimizer.hessian_action" => self.optimizer.hessian_action = parse_hessian_action(key, v)?,
            "optimizer.weight_decay" => self.optimizer.weight_decay = parse_val(key, v)?,
            "optimizer.momentum" => self.optimizer.momentum = parse_val(key, v)?,
            "optimizer.stat_freq" => self.optimizer.stat_freq = parse_val(key, v)?,
            "optimizer.inv_freq" => self.optimizer.inv_freq = parse_val(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses the text format on top of the defaults (or on top of a preset
    /// named by a leading `preset = <name>` line).
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen_setting = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: CliError| CliError::Config(format!("line {}: {e}", lineno + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(CliError::Config(format!("expected key = value, got '{line}'"))))?;
            let key = key.trim();
            if section.is_empty() && key == "preset" {
                if seen_setting {
                    return Err(at(CliError::Config("preset must come before other settings".into())));
                }
                cfg = RunConfig::preset(value.trim()).map_err(at)?;
                continue;
            }
            if section.is_empty() {
                return Err(at(CliError::Config(format!("key '{key}' outside a section"))));
            }
            cfg.set(&format!("{section}.{key}"), value).map_err(at)?;
            seen_setting = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if let Some(name) = path.to_str().and_then(|p| p.strip_prefix("preset:")) {
            return RunConfig::preset(name);
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Text form listing every key.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let r = &self.run;
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "epochs = {}", r.epochs);
        let _ = writeln!(s, "batch_size = {}", r.batch_size);
        let _ = writeln!(s, "drop_last = {}", r.drop_last);
        let _ = writeln!(s, "eval_every = {}", r.eval_every);
        let _ = writeln!(s, "log_seconds = {}", r.log_seconds);
        let _ = writeln!(s, "output = {}", r.output.display());
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "architecture = {}", self.model.architecture);
        let _ = writeln!(s, "loss = {}", self.model.loss);
        let d = &self.data;
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "source = {}", d.source);
        let _ = writeln!(s, "n = {}", d.n);
        let dims: Vec<String> = d.dims.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "dims = {}", dims.join(","));
        let _ = writeln!(s, "phi = {}", d.phi);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "mode = {}", if d.mode == IdxMode::Classify { "classify" } else { "autoencoder" });
        let o = &self.optimizer;
        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "name = {}", o.name);
        let _ = writeln!(s, "lr = {}", o.lr);
        let _ = writeln!(s, "lr_schedule = {}", o.lr_schedule);
        let _ = writeln!(s, "damping = {}", o.damping);
        let _ = writeln!(s, "update_freq = {}", o.update_freq);
        let _ = writeln!(s, "beta = {}", o.beta);
        let _ = writeln!(s, "mu1 = {}", o.mu1);
        let _ = writeln!(s, "lbfgs_capacity = {}", o.lbfgs_capacity);
        let _ = writeln!(s, "hessian_action = {}", hessian_action_str(o.hessian_action));
        let _ = writeln!(s, "weight_decay = {}", o.weight_decay);
        let _ = writeln!(s, "momentum = {}", o.momentum);
        let _ = writeln!(s, "stat_freq = {}", o.stat_freq);
        let _ = writeln!(s, "inv_freq = {}", o.inv_freq);
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        parse_architecture(&self.model.architecture)?;
        self.schedule()?;
        if self.run.epochs == 0 || self.run.batch_size == 0 {
            return Err(CliError::Config("epochs and batch_size must be positive".into()));
        }
        if matches!(self.data.source, DataSource::Synthetic(_)) && self.data.n == 0 {
            return Err(CliError::Config("synthetic data needs data.n > 0".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<LrSchedule, CliError> {
        let lr = self.optimizer.lr;
        let s = self.optimizer.lr_schedule.trim();
        let text = if s == "constant" { format!("constant:{lr}") } else { format!("step:{lr}:{}", s.strip_prefix("step:").unwrap_or(s)) };
        text.parse().map_err(|e| CliError::Config(format!("optimizer.lr_schedule = '{s}': {e}")))
    }

    pub fn build_network(&self) -> Result<Network, CliError> {
        let layers = parse_architecture(&self.model.architecture)?;
        Ok(Network::new(layers, self.model.loss, self.run.seed)?)
    }

    pub fn build_dataset(&self) -> Result<Dataset, CliError> {
        let d = &self.data;
        let data = match &d.source {
            DataSource::Synthetic(kind) => synthetic_dataset(*kind, d.n, &d.dims, d.seed, d.phi)?,
            DataSource::Mnist => {
                let dir = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
                    CliError::Config(format!("data.source = mnist needs {DATA_DIR_ENV} pointing at the IDX files"))
                })?;
                let dir = PathBuf::from(dir);
                let labels = dir.join(MNIST_LABELS);
                let labels = labels.exists().then_some(labels);
                load_mnist_idx(&dir.join(MNIST_IMAGES), labels.as_deref(), d.mode)?
            }
            DataSource::Idx { images, labels } => load_mnist_idx(images, labels.as_deref(), d.mode)?,
        };
        Ok(if d.n > 0 { data.truncate(d.n) } else { data })
    }

    pub fn build_optimizer(&self, net: &Network) -> Result<Box<dyn Optimizer>, CliError> {
        let o = &self.optimizer;
        let kbfgs = |hg_mode, variant| KbfgsConfig {
            lambda: o.damping,
            update_freq: o.update_freq,
            beta: o.beta,
            mu1: o.mu1,
            hg_mode,
            hessian_action: o.hessian_action,
            weight_decay: o.weight_decay,
            variant,
        };
        let lbfgs = HgMode::Lbfgs { capacity: o.lbfgs_capacity };
        Ok(match o.name {
            OptimizerName::Kbfgs => Box::new(Kbfgs::new(kbfgs(HgMode::DenseBfgs, KbfgsVariant::Practical), net)?),
            OptimizerName::Kbfgsl => Box::new(Kbfgs::new(kbfgs(lbfgs, KbfgsVariant::Practical), net)?),
            OptimizerName::KbfgslConvergence => Box::new(Kbfgs::new(kbfgs(lbfgs, KbfgsVariant::Convergence), net)?),
            OptimizerName::Kfac => Box::new(Kfac::new(
                KfacConfig {
                    lambda: o.damping,
                    stat_freq: o.stat_freq,
                    inv_freq: o.inv_freq,
                    beta: o.beta,
                    weight_decay: o.weight_decay,
                    seed: self.run.seed,
                },
                net,
            )?),
            OptimizerName::Adam => Box::new(Adam::new(
                AdamConfig { beta1: 0.9, beta2: 0.999, eps: o.damping, weight_decay: o.weight_decay },
                net.params(),
            )?),
            OptimizerName::Sgdm => {
                Box::new(Sgdm::new(SgdmConfig { momentum: o.momentum, weight_decay: o.weight_decay }, net.params())?)
            }
        })
    }

    /// Named configurations. `mnist-ae-*` use the full MNIST autoencoder
    /// with the best (learning rate, damping) pairs from the original grid
    /// search; `desk-ae-*` are the reduced 784-256-32-256-784 autoencoder on
    /// 2000 synthetic 28×28 curve images, with L-BFGS memory cut to 10.
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (family, opt) = name
            .split_once("-ae-")
            .ok_or_else(|| CliError::Config(format!("unknown preset '{name}'; try one of {}", PRESETS.join(", "))))?;
        let mut c = RunConfig::default();
        match family {
            "mnist" => {}
            "curves" => {
                c.model.architecture = "curves".into();
                c.data.source = DataSource::Synthetic(SyntheticKind::Curves);
                c.data.n = 20_000;
            }
            "desk" => {
                c.model.architecture = "autoencoder:784-256-32-256-784".into();
                c.data.source = DataSource::Synthetic(SyntheticKind::Curves);
                c.data.n = 2000;
            }
            _ => return Err(CliError::Config(format!("unknown preset '{name}'"))),
        }
        let o = &mut c.optimizer;
        match opt {
            "kbfgs" => (o.lr, o.damping) = (0.03, 0.3),
            "kbfgs-amortized" => (o.lr, o.damping, o.update_freq) = (0.3, 30.0, 20),
            "kbfgsl" => (o.name, o.lr, o.damping) = (OptimizerName::Kbfgsl, 0.03, 0.3),
            "kbfgs-moving-average" => {
                (o.lr, o.damping) = (0.03, 0.3);
                o.hessian_action = HessianActionMode::MovingAverage { beta: 0.9 };
            }
            "kfac" => (o.name, o.lr, o.damping, o.stat_freq, o.inv_freq) = (OptimizerName::Kfac, 0.3, 10.0, 1, 20),
            "adam" => (o.name, o.lr, o.damping) = (OptimizerName::Adam, 1e-4, 1e-4),
            "sgdm" => (o.name, o.lr) = (OptimizerName::Sgdm, 0.003),
            _ => return Err(CliError::Config(format!("unknown preset '{name}'"))),
        }
        c.run.output = PathBuf::from("runs").join(name);
        Ok(c)
    }
}

pub const PRESETS: &[&str] = &[
    "mnist-ae-kbfgs",
    "mnist-ae-kbfgs-amortized",
    "mnist-ae-kbfgsl",
    "mnist-ae-kbfgs-moving-average",
    "mnist-ae-kfac",
    "mnist-ae-adam",
    "mnist-ae-sgdm",
    "curves-ae-kbfgs",
    "curves-ae-kbfgsl",
    "desk-ae-kbfgs",
    "desk-ae-kbfgs-amortized",
    "desk-ae-kbfgsl",
    "desk-ae-kbfgs-moving-average",
    "desk-ae-kfac",
    "desk-ae-adam",
    "desk-ae-sgdm",
];
