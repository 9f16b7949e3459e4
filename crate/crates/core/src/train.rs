//! Minibatch training and evaluation.

use std::f64::consts::PI;

use log::{debug, info};

use crate::codec::{argmax, encode_constant_current};
use crate::data::config::{LrSchedule, OptimizerKind, Task, TrainConfig};
use crate::data::{shuffle_batches, Dataset, Split};
use crate::error::{Result, TandemError};
use crate::metrics::{accuracy, MetricRow};
use crate::net::{
    backward_tandem, forward_tandem, inference_snn, init_weights, loss_ce, loss_mse, Adam, Optimizer, Phase,
    Sgd, TandemNetwork,
};
use crate::tensor::DenseTensor;

/// Regression output: the free membrane potential per step, `U^f / T`.
pub fn reconstruction(output: &DenseTensor, window: usize) -> Result<DenseTensor> {
    output.scale(1.0 / window as f64)
}

pub fn build_network(cfg: &TrainConfig, data: &Dataset) -> Result<TandemNetwork> {
    let mut net = TandemNetwork::from_arch(
        &cfg.arch,
        data.shape,
        cfg.neuron,
        cfg.window,
        cfg.decode,
        cfg.batchnorm,
    )?;
    if cfg.task == Task::Reconstruct && net.output_size() != data.shape.features() {
        return Err(TandemError::Config(format!(
            "reconstruction needs {} outputs, arch has {}",
            data.shape.features(),
            net.output_size()
        )));
    }
    net.set_mode(cfg.mode);
    net.set_propagation(cfg.propagation);
    init_weights(&mut net, cfg.seed);
    Ok(net)
}

/// The network as it is saved and evaluated: batch norm folded, weights in `f32`.
pub fn deployable(net: &TandemNetwork) -> Result<TandemNetwork> {
    let mut out = net.clone();
    if out.has_batchnorm() {
        out.fold_batchnorm()?;
    }
    out.round_to_f32();
    Ok(out)
}

/// Loss and gradient of a batch output for the configured task.
fn task_loss(
    task: Task,
    output: &DenseTensor,
    x: &DenseTensor,
    labels: &[usize],
    window: usize,
) -> Result<(f64, DenseTensor)> {
    match task {
        Task::Classify => loss_ce(output, labels),
        Task::Reconstruct => {
            let (l, g) = loss_mse(&reconstruction(output, window)?, x)?;
            Ok((l, g.scale(1.0 / window as f64)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub samples: usize,
    pub loss: f64,
    /// Accuracy for classification, MSE for reconstruction.
    pub metric: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl EvalResult {
    /// `(class, correct, total)` for every class present in the labels.
    pub fn per_class(&self) -> Vec<(usize, usize, usize)> {
        let classes = self.labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut tally = vec![(0usize, 0usize); classes];
        for (&p, &l) in self.predictions.iter().zip(&self.labels) {
            tally[l].1 += 1;
            if p == l {
                tally[l].0 += 1;
            }
        }
        tally
            .into_iter()
            .enumerate()
            .filter(|(_, t)| t.1 > 0)
            .map(|(c, (ok, n))| (c, ok, n))
            .collect()
    }
}

/// Pure spiking inference over a split. Batch norm must already be folded.
pub fn evaluate(net: &TandemNetwork, split: &Split, task: Task, batch_size: usize) -> Result<EvalResult> {
    let n = split.len();
    let window = net.window();
    let (mut loss_sum, mut sq_sum) = (0.0, 0.0);
    let mut predictions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for start in (0..n).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, y) = split.gather(&idx);
        let out = inference_snn(net, &encode_constant_current(&x, window)?)?;
        let (l, _) = task_loss(task, &out, &x, &y, window)?;
        loss_sum += l * idx.len() as f64;
        match task {
            Task::Classify => {
                predictions.extend(out.data().chunks(net.output_size()).map(argmax));
                labels.extend(y);
            }
            Task::Reconstruct => sq_sum += l * idx.len() as f64,
        }
    }
    let denom = n.max(1) as f64;
    let metric = match task {
        Task::Classify => accuracy(&predictions, &labels)?,
        Task::Reconstruct => sq_sum / denom,
    };
    Ok(EvalResult {
        samples: n,
        loss: loss_sum / denom,
        metric,
        predictions,
        labels,
    })
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classify => "accuracy",
        Task::Reconstruct => "mse",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_metric: f64,
    pub test_loss: f64,
    pub test_metric: f64,
}

impl EpochStats {
    pub fn rows(&self, task: Task) -> Vec<MetricRow> {
        let m = metric_name(task);
        vec![
            MetricRow::new(self.epoch, "train", "loss", self.train_loss),
            MetricRow::new(self.epoch, "train", m, self.train_metric),
            MetricRow::new(self.epoch, "test", "loss", self.test_loss),
            MetricRow::new(self.epoch, "test", m, self.test_metric),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Deployable network (folded, `f32` weights) after the last epoch.
    pub network: TandemNetwork,
    pub history: Vec<EpochStats>,
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => 0.5 * cfg.lr * (1.0 + (PI * step as f64 / total.max(1) as f64).cos()),
    }
}

/// Trains per `cfg` on `data`; `on_epoch` sees each epoch's statistics and
/// the deployable network evaluated for them.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochStats, &TandemNetwork) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut train_split = data.train.clone();
    let mut test_split = data.test.clone();
    if let Some(n) = cfg.train_limit {
        train_split.truncate(n);
    }
    if let Some(n) = cfg.test_limit {
        test_split.truncate(n);
    }
    if train_split.is_empty() {
        return Err(TandemError::Data("training split is empty".into()));
    }
    let mut net = build_network(cfg, data)?;
    let mut opt: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.momentum, cfg.weight_decay)),
        OptimizerKind::Adam => Box::new(Adam::new(cfg.weight_decay)),
    };
    let per_epoch = train_split.len().div_ceil(cfg.batch);
    let total_steps = per_epoch * cfg.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut deployed = deployable(&net)?;
    info!(
        "training {} on {} samples ({} parameters)",
        cfg.arch,
        train_split.len(),
        net.parameter_count()
    );

    for epoch in 1..=cfg.epochs {
        let order = shuffle_batches(train_split.len(), cfg.batch, cfg.seed.wrapping_add(epoch as u64))?;
        let (mut loss_sum, mut metric_sum) = (0.0, 0.0);
        let mut lr = cfg.lr;
        for idx in &order {
            lr = learning_rate(cfg, step, total_steps);
            let (x, y) = train_split.gather(idx);
            let enc = encode_constant_current(&x, cfg.window)?;
            let trace = forward_tandem(&mut net, &enc, Phase::Train)?;
            let (loss, grad) = task_loss(cfg.task, &trace.output, &x, &y, cfg.window)?;
            let grads = backward_tandem(&net, &trace, &grad)?;
            opt.step(&mut net, &grads, lr)?;
            loss_sum += loss * idx.len() as f64;
            metric_sum += match cfg.task {
                Task::Classify => {
                    let preds: Vec<usize> = trace
                        .output
                        .data()
                        .chunks(net.output_size())
                        .map(argmax)
                        .collect();
                    accuracy(&preds, &y)? * idx.len() as f64
                }
                Task::Reconstruct => loss * idx.len() as f64,
            };
            step += 1;
            debug!("epoch {epoch} step {step}: loss {loss:.5}");
        }
        deployed = deployable(&net)?;
        let test = evaluate(&deployed, &test_split, cfg.task, cfg.batch.max(256))?;
        let n = train_split.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_metric: metric_sum / n,
            test_loss: test.loss,
            test_metric: test.metric,
        };
        info!(
            "epoch {epoch}: train loss {:.5} {} {:.5}; test loss {:.5} {} {:.5}",
            stats.train_loss,
            metric_name(cfg.task),
            stats.train_metric,
            stats.test_loss,
            metric_name(cfg.task),
            stats.test_metric
        );
        on_epoch(&stats, &deployed)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        network: deployed,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InputShape;

    /// Two linearly separable blobs.
    fn toy() -> Dataset {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let c = i % 2;
            let j = (i as f64 * 0.37).sin().abs() * 0.2;
            pixels.extend_from_slice(&if c == 0 {
                [0.9 - j, 0.1 + j, 0.2, 0.0]
            } else {
                [0.1 + j, 0.9 - j, 0.0, 0.2]
            });
            labels.push(c as u8);
        }
        let split = Split {
            pixels,
            labels,
            features: 4,
        };
        Dataset {
            shape: InputShape::flat(4),
            train: split.clone(),
            test: split,
        }
    }

    fn cfg(extra: &str) -> TrainConfig {
        TrainConfig::parse(&format!(
            "arch=fc:4-16-2\ndataset_dir=/x\nout_dir=/y\nT=4\nbatch=8\nepochs=8\nlr=0.05\nseed=3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let out = train(&cfg(""), &toy(), |_, _| Ok(())).unwrap();
        assert!(out.history.last().unwrap().test_metric >= 0.95);
        assert!(!out.network.has_batchnorm());
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&cfg("optimizer=adam\nweight_decay=0.0001"), &toy(), |_, _| Ok(())).unwrap();
        let b = train(&cfg("optimizer=adam\nweight_decay=0.0001"), &toy(), |_, _| Ok(())).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn reconstruction_reduces_error() {
        let c = TrainConfig::parse(
            "arch=fc:4-8-4\ndataset_dir=/x\nout_dir=/y\nT=8\nbatch=8\nepochs=15\nlr=0.01\noptimizer=adam\ntask=reconstruct\n",
        )
        .unwrap();
        let out = train(&c, &toy(), |_, _| Ok(())).unwrap();
        let first = out.history[0].test_metric;
        let last = out.history.last().unwrap().test_metric;
        assert!(last < first, "{first} → {last}");
    }
}
