use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::optim_baselines::{AdamConfig, HfConfig, SgdConfig};
use crate::optim_lm::LmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    #[default]
    Sine,
    Mnist,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::Sine => LossKind::Mse,
            Task::Mnist => LossKind::SoftmaxCrossEntropy,
        }
    }
}

impl FromStr for Task {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "sine" => Ok(Task::Sine),
            "mnist" => Ok(Task::Mnist),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sine => "sine",
            Task::Mnist => "mnist",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Lm,
    Sgd,
    Adam,
    Lbfgs,
    Hf,
}

impl FromStr for OptimizerKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "lm" => Ok(Self::Lm),
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            "lbfgs" => Ok(Self::Lbfgs),
            "hf" => Ok(Self::Hf),
            _ => Err(()),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lm => "lm",
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Lbfgs => "lbfgs",
            Self::Hf => "hf",
        })
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many iterations; 0 means no limit.
    pub max_iters: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub eval_every: usize,
    /// Stop once test accuracy reaches this value.
    pub stop_at_test_acc: Option<f64>,
    pub out: Option<PathBuf>,

    pub sine_n_train: usize,
    pub sine_n_test: usize,
    pub sine_x_lo: f64,
    pub sine_x_hi: f64,
    pub sine_noise: f64,
    pub hidden: usize,

    pub mnist_dir: PathBuf,
    /// 0 keeps the whole split.
    pub train_subset: usize,
    pub test_subset: usize,

    pub lm: LmConfig,
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
    pub lbfgs_lr: f64,
    pub lbfgs_memory: usize,
    pub hf: HfConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Sine,
            optimizer: OptimizerKind::Lm,
            seed: 42,
            epochs: 100,
            max_iters: 0,
            batch_size: 0,
            eval_every: 1,
            stop_at_test_acc: None,
            out: None,
            sine_n_train: 400,
            sine_n_test: 200,
            sine_x_lo: -2.0 * std::f64::consts::PI,
            sine_x_hi: 2.0 * std::f64::consts::PI,
            sine_noise: 0.1,
            hidden: 32,
            mnist_dir: PathBuf::from("data/mnist"),
            train_subset: 2000,
            test_subset: 1000,
            lm: LmConfig::default(),
            sgd: SgdConfig::default(),
            adam: AdamConfig::default(),
            lbfgs_lr: 0.005,
            lbfgs_memory: 10,
            hf: HfConfig::default(),
        }
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn type_error(&self, expected: &'static str) -> Error {
        Error::Type {
            line: self.no,
            key: self.key.to_string(),
            expected,
            value: self.value.to_string(),
        }
    }

    fn unknown_value(&self) -> Error {
        Error::UnknownValue {
            line: self.no,
            key: self.key.to_string(),
            value: self.value.to_string(),
        }
    }

    fn f64(&self) -> Result<f64> {
        self.value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.type_error("a finite number"))
    }

    fn usize(&self) -> Result<usize> {
        self.value.parse().map_err(|_| self.type_error("a non-negative integer"))
    }

    fn u64(&self) -> Result<u64> {
        self.value.parse().map_err(|_| self.type_error("a non-negative integer"))
    }

    fn bool(&self) -> Result<bool> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.type_error("true or false")),
        }
    }

    fn choice<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| self.unknown_value())
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored;
/// unset keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    // (line, key, optimizer the key belongs to)
    let mut specific: Vec<(usize, String, OptimizerKind)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line: no,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let line = Line {
            no,
            key: key.trim(),
            value: value.trim(),
        };
        if line.key.is_empty() {
            return Err(Error::Parse {
                line: no,
                msg: "missing key".into(),
            });
        }
        let owner = match line.key {
            "lambda0" | "lr0" | "lambda_up" | "lambda_down" | "lambda_min" | "lambda_max"
            | "momentum" | "delta_p" | "xi" | "uphill_b" | "uphill_mode" | "line_search"
            | "ce_curvature" | "jacobian_cap_mb" => Some(OptimizerKind::Lm),
            "sgd_lr" | "sgd_momentum" | "weight_decay" => Some(OptimizerKind::Sgd),
            "adam_lr" | "beta1" | "beta2" | "eps" => Some(OptimizerKind::Adam),
            "lbfgs_lr" | "lbfgs_memory" => Some(OptimizerKind::Lbfgs),
            "hf_lr" | "cg_max_iters" | "cg_tol" | "hf_damping" => Some(OptimizerKind::Hf),
            _ => None,
        };
        if let Some(owner) = owner {
            specific.push((no, line.key.to_string(), owner));
        }
        match line.key {
            "task" => cfg.task = line.choice()?,
            "optimizer" => cfg.optimizer = line.choice()?,
            "seed" => cfg.seed = line.u64()?,
            "epochs" => cfg.epochs = line.usize()?,
            "max_iters" => cfg.max_iters = line.usize()?,
            "batch_size" => cfg.batch_size = line.usize()?,
            "eval_every" => cfg.eval_every = line.usize()?,
            "stop_at_test_acc" => cfg.stop_at_test_acc = Some(line.f64()?),
            "out" => cfg.out = Some(PathBuf::from(line.value)),
            "sine_n_train" => cfg.sine_n_train = line.usize()?,
            "sine_n_test" => cfg.sine_n_test = line.usize()?,
            "sine_x_lo" => cfg.sine_x_lo = line.f64()?,
            "sine_x_hi" => cfg.sine_x_hi = line.f64()?,
            "sine_noise" => cfg.sine_noise = line.f64()?,
            "hidden" => cfg.hidden = line.usize()?,
            "mnist_dir" => cfg.mnist_dir = PathBuf::from(line.value),
            "train_subset" => cfg.train_subset = line.usize()?,
            "test_subset" => cfg.test_subset = line.usize()?,

            "lambda0" => cfg.lm.lambda0 = line.f64()?,
            "lr0" => cfg.lm.lr0 = line.f64()?,
            "lambda_up" => cfg.lm.lambda_up = line.f64()?,
            "lambda_down" => cfg.lm.lambda_down = line.f64()?,
            "lambda_min" => cfg.lm.lambda_min = line.f64()?,
            "lambda_max" => cfg.lm.lambda_max = line.f64()?,
            "momentum" => cfg.lm.momentum = line.bool()?,
            "delta_p" => cfg.lm.delta_p = line.f64()?,
            "xi" => cfg.lm.xi = line.f64()?,
            "uphill_b" => cfg.lm.uphill_b = line.f64()?,
            "uphill_mode" => cfg.lm.uphill_mode = line.choice()?,
            "line_search" => cfg.lm.line_search = line.bool()?,
            "ce_curvature" => cfg.lm.ce_curvature = line.choice()?,
            "jacobian_cap_mb" => cfg.lm.jacobian_cap = line.usize()?.saturating_mul(1 << 20),

            "sgd_lr" => cfg.sgd.lr = line.f64()?,
            "sgd_momentum" => cfg.sgd.momentum = line.f64()?,
            "weight_decay" => cfg.sgd.weight_decay = line.f64()?,
            "adam_lr" => cfg.adam.lr = line.f64()?,
            "beta1" => cfg.adam.beta1 = line.f64()?,
            "beta2" => cfg.adam.beta2 = line.f64()?,
            "eps" => cfg.adam.eps = line.f64()?,
            "lbfgs_lr" => cfg.lbfgs_lr = line.f64()?,
            "lbfgs_memory" => cfg.lbfgs_memory = line.usize()?,
            "hf_lr" => cfg.hf.lr = line.f64()?,
            "cg_max_iters" => cfg.hf.cg_max_iters = line.usize()?,
            "cg_tol" => cfg.hf.cg_tol = line.f64()?,
            "hf_damping" => cfg.hf.lambda0 = line.f64()?,
            other => {
                return Err(Error::UnknownKey {
                    line: no,
                    key: other.to_string(),
                })
            }
        }
    }

    for (no, key, owner) in specific {
        if owner != cfg.optimizer {
            return Err(Error::InvalidConfig(format!(
                "line {no}: `{key}` is a {owner} setting but optimizer is {}",
                cfg.optimizer
            )));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.eval_every == 0 {
            return invalid("eval_every must be at least 1");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if let Some(a) = self.stop_at_test_acc {
            if !(0.0..=1.0).contains(&a) {
                return invalid("stop_at_test_acc must be in [0, 1]");
            }
        }
        if self.task == Task::Sine {
            if self.sine_n_train == 0 || self.sine_n_test == 0 {
                return invalid("sine datasets need at least one sample");
            }
            if !(self.sine_x_lo < self.sine_x_hi) {
                return invalid("sine_x_lo must be below sine_x_hi");
            }
            if !(self.sine_noise >= 0.0) {
                return invalid("sine_noise must be non-negative");
            }
            if self.hidden == 0 {
                return invalid("hidden must be at least 1");
            }
        }
        match self.optimizer {
            OptimizerKind::Lm => self.lm.validate(),
            OptimizerKind::Sgd => self.sgd.validate(),
            OptimizerKind::Adam => self.adam.validate(),
            OptimizerKind::Lbfgs => {
                if !(self.lbfgs_lr > 0.0) || self.lbfgs_memory == 0 {
                    return invalid("lbfgs_lr must be positive and lbfgs_memory at least 1");
                }
                Ok(())
            }
            OptimizerKind::Hf => self.hf.validate(),
        }
    }
}
