use std::fs::File;
use std::io::{BufWriter, Write};
use std::time::Instant;

use super::config::{ExperimentConfig, OptimizerKind, Task};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::loss::LossKind;
use crate::net::{self, Batch, Network};
use crate::optim_baselines::{
    adam_step, hf_step, sgd_step, AdamConfig, AdamState, HfConfig, LbfgsState, SgdConfig,
};
use crate::optim_lm::{lm_step, LmConfig, LmState};
use crate::rng::Rng;

pub const CSV_HEADER: &str =
    "iter,epoch,wall_time_s,train_loss,train_acc,test_loss,test_acc,lambda,accepted,lr_used,step_norm";

/// One row of training metrics. Row 0 describes the initial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iter: usize,
    pub epoch: usize,
    pub wall_time_s: f64,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub lambda: Option<f64>,
    pub accepted: Option<bool>,
    pub lr_used: Option<f64>,
    pub step_norm: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// Shortest round-trip form in scientific notation, so huge or tiny values
// stay readable.
fn sci(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.epoch,
            self.wall_time_s,
            sci(Some(self.train_loss)),
            opt(self.train_acc),
            sci(self.test_loss),
            opt(self.test_acc),
            sci(self.lambda),
            opt(self.accepted),
            sci(self.lr_used),
            sci(self.step_norm),
        )
    }
}

pub fn write_records<W: Write>(records: &[RunRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Epoch of the first row whose test accuracy reaches `threshold`.
pub fn epochs_to_accuracy(records: &[RunRecord], threshold: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.test_acc.is_some_and(|a| a >= threshold))
        .map(|r| r.epoch)
}

/// True when the run stopped because the loss stopped being finite.
pub fn diverged(records: &[RunRecord]) -> bool {
    records.last().is_some_and(|r| !r.train_loss.is_finite())
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    Rng::derive(seed, stream).next_u64()
}

/// Builds the train split, test split and network described by `cfg`.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Network)> {
    match cfg.task {
        Task::Sine => {
            let (lo, hi, s) = (cfg.sine_x_lo, cfg.sine_x_hi, cfg.sine_noise);
            let train = data::gen_sine(cfg.sine_n_train, lo, hi, s, cfg.seed)?;
            let test = data::gen_sine(cfg.sine_n_test, lo, hi, s, derived_seed(cfg.seed, 1))?;
            Ok((train, test, Network::sine_mlp(cfg.hidden)?))
        }
        Task::Mnist => {
            let (mut train, mut test) = data::load_mnist_dir(&cfg.mnist_dir)?;
            if cfg.train_subset > 0 {
                train = data::subset(&train, cfg.train_subset, cfg.seed)?;
            }
            if cfg.test_subset > 0 {
                test = data::subset(&test, cfg.test_subset, derived_seed(cfg.seed, 1))?;
            }
            Ok((train, test, Network::mnist_cnn()))
        }
    }
}

enum Optimizer {
    Lm(Box<LmState>, LmConfig),
    Sgd(Vec<f64>, SgdConfig),
    Adam(AdamState, AdamConfig),
    Lbfgs(LbfgsState),
    Hf(f64, HfConfig),
}

#[derive(Default)]
struct StepInfo {
    lambda: Option<f64>,
    accepted: Option<bool>,
    lr_used: Option<f64>,
    step_norm: Option<f64>,
}

impl Optimizer {
    fn new(cfg: &ExperimentConfig, theta: &[f64]) -> Self {
        let n = theta.len();
        match cfg.optimizer {
            OptimizerKind::Lm => Self::Lm(Box::new(LmState::new(theta.to_vec(), &cfg.lm)), cfg.lm.clone()),
            OptimizerKind::Sgd => Self::Sgd(vec![0.0; n], cfg.sgd),
            OptimizerKind::Adam => Self::Adam(AdamState::new(n), cfg.adam),
            OptimizerKind::Lbfgs => Self::Lbfgs(LbfgsState::new(cfg.lbfgs_memory, cfg.lbfgs_lr)),
            OptimizerKind::Hf => Self::Hf(cfg.hf.lambda0, cfg.hf),
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            Self::Lm(s, _) => Some(s.lambda),
            Self::Hf(l, _) => Some(*l),
            _ => None,
        }
    }

    fn step(&mut self, theta: &mut Vec<f64>, net: &Network, batch: &Batch, loss: LossKind) -> Result<StepInfo> {
        let before = theta.clone();
        let moved = |theta: &[f64]| {
            let d: Vec<f64> = theta.iter().zip(&before).map(|(a, b)| a - b).collect();
            Some(norm(&d))
        };
        match self {
            Self::Lm(state, cfg) => {
                state.theta = std::mem::take(theta);
                let report = lm_step(state, net, batch, loss, cfg);
                *theta = state.theta.clone();
                let report = report?;
                Ok(StepInfo {
                    lambda: Some(report.lambda),
                    accepted: Some(report.accepted),
                    lr_used: Some(report.lr),
                    step_norm: Some(report.step_norm),
                })
            }
            Self::Sgd(v, cfg) => {
                let (_, g) = net::grad(net, theta, batch, loss)?;
                sgd_step(theta, &g, v, cfg)?;
                Ok(StepInfo {
                    lr_used: Some(cfg.lr),
                    step_norm: moved(theta),
                    ..StepInfo::default()
                })
            }
            Self::Adam(state, cfg) => {
                let (_, g) = net::grad(net, theta, batch, loss)?;
                adam_step(theta, &g, state, cfg)?;
                Ok(StepInfo {
                    lr_used: Some(cfg.lr),
                    step_norm: moved(theta),
                    ..StepInfo::default()
                })
            }
            Self::Lbfgs(state) => {
                let (_, g) = net::grad(net, theta, batch, loss)?;
                state.step(theta, &g)?;
                Ok(StepInfo {
                    lr_used: Some(state.lr),
                    step_norm: moved(theta),
                    ..StepInfo::default()
                })
            }
            Self::Hf(lambda, cfg) => {
                let report = hf_step(theta, lambda, net, batch, loss, cfg)?;
                Ok(StepInfo {
                    lambda: Some(report.lambda),
                    lr_used: Some(cfg.lr),
                    step_norm: Some(report.step_norm),
                    ..StepInfo::default()
                })
            }
        }
    }
}

/// Loads the data named by `cfg` and trains; see [`run_experiment_with`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let (train, test, net) = load_datasets(cfg)?;
    run_experiment_with(cfg, &net, &train, &test)
}

/// Trains `net` on `train`, evaluating on `test` every `eval_every`
/// iterations. When `cfg.out` is set each row is written and flushed as soon
/// as it is produced.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    net: &Network,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let loss = cfg.task.loss();
    let start = Instant::now();
    let mut sink = match &cfg.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{CSV_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut records = Vec::new();
    let mut emit = |r: RunRecord, records: &mut Vec<RunRecord>| -> Result<()> {
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{}", r.csv_row())?;
            w.flush()?;
        }
        records.push(r);
        Ok(())
    };

    let mut theta = net::init_params(net, derived_seed(cfg.seed, 2));
    let mut optimizer = Optimizer::new(cfg, &theta);

    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= train.len();
    let per_epoch = if full_batch {
        1
    } else {
        train.len().div_ceil(cfg.batch_size)
    };
    let mut total = cfg.epochs * per_epoch;
    if cfg.max_iters > 0 {
        total = total.min(cfg.max_iters);
    }

    let evaluate = |theta: &[f64], with_test: bool| -> Result<(net::Evaluation, Option<net::Evaluation>)> {
        let tr = net::evaluate(net, theta, train.samples(), loss)?;
        let te = if with_test {
            Some(net::evaluate(net, theta, test.samples(), loss)?)
        } else {
            None
        };
        Ok((tr, te))
    };

    let (tr, te) = evaluate(&theta, true)?;
    let te = te.expect("test evaluation requested");
    emit(
        RunRecord {
            iter: 0,
            epoch: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: Some(te.loss),
            test_acc: te.accuracy,
            lambda: optimizer.lambda(),
            accepted: None,
            lr_used: None,
            step_norm: None,
        },
        &mut records,
    )?;
    if let (Some(target), Some(acc)) = (cfg.stop_at_test_acc, te.accuracy) {
        if acc >= target {
            return Ok(records);
        }
    }

    // One shuffle up front; every epoch then cycles the same batches in order.
    let fixed;
    let epoch_batches: &[Batch] = if full_batch {
        std::slice::from_ref(train.samples())
    } else {
        fixed = data::batches(train, cfg.batch_size, derived_seed(cfg.seed, 100))?;
        &fixed
    };
    let mut iter = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        for batch in epoch_batches {
            iter += 1;
            let with_test = iter % cfg.eval_every == 0 || iter == total;
            let outcome = optimizer
                .step(&mut theta, net, batch, loss)
                .and_then(|info| Ok((info, evaluate(&theta, with_test)?)));
            let (info, (tr, te)) = match outcome {
                Ok(v) => v,
                Err(Error::NonFiniteLoss) | Err(Error::NonFinite(_)) => {
                    // Divergence ends the run with a NaN row instead of
                    // discarding the curve so far.
                    emit(
                        RunRecord {
                            iter,
                            epoch,
                            wall_time_s: start.elapsed().as_secs_f64(),
                            train_loss: f64::NAN,
                            train_acc: None,
                            test_loss: None,
                            test_acc: None,
                            lambda: optimizer.lambda(),
                            accepted: None,
                            lr_used: None,
                            step_norm: None,
                        },
                        &mut records,
                    )?;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let reached = matches!(
                (cfg.stop_at_test_acc, te.and_then(|e| e.accuracy)),
                (Some(t), Some(a)) if a >= t
            );
            emit(
                RunRecord {
                    iter,
                    epoch,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    train_loss: tr.loss,
                    train_acc: tr.accuracy,
                    test_loss: te.map(|e| e.loss),
                    test_acc: te.and_then(|e| e.accuracy),
                    lambda: info.lambda,
                    accepted: info.accepted,
                    lr_used: info.lr_used,
                    step_norm: info.step_norm,
                },
                &mut records,
            )?;
            if iter >= total || reached {
                break 'epochs;
            }
        }
    }
    Ok(records)
}
