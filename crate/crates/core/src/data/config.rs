//! `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Required keys are
//! `arch`, `dataset_dir` and `out_dir`; every other key has a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, TandemError};
use crate::net::{Architecture, DecodeMode, ExecutionMode};
use crate::neuron::{NeuronKind, NeuronParams, Propagation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Reconstruct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub neuron: NeuronParams,
    pub window: usize,
    pub decode: DecodeMode,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    pub batchnorm: bool,
    pub task: Task,
    pub mode: ExecutionMode,
    pub propagation: Propagation,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

const KEYS: &[&str] = &[
    "arch",
    "neuron",
    "theta",
    "tau_m",
    "T",
    "decode",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "batch",
    "seed",
    "dataset_dir",
    "out_dir",
    "optimizer",
    "lr_schedule",
    "bn",
    "task",
    "mode",
    "propagation",
    "train_limit",
    "test_limit",
];

fn cfg_err(msg: impl Into<String>) -> TandemError {
    TandemError::Config(msg.into())
}

fn value<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match kv.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| cfg_err(format!("invalid value '{v}' for key '{key}'"))),
    }
}

fn choice<T: Copy>(kv: &BTreeMap<String, String>, key: &str, default: T, opts: &[(&str, T)]) -> Result<T> {
    match kv.get(key) {
        None => Ok(default),
        Some(v) => opts
            .iter()
            .find(|(name, _)| name == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<_> = opts.iter().map(|(n, _)| *n).collect();
                cfg_err(format!("key '{key}' must be one of {names:?}, got '{v}'"))
            }),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key=value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(cfg_err(format!("line {}: unknown key '{k}'", no + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key '{k}'", no + 1)));
            }
        }
        let required = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| cfg_err(format!("missing required key '{k}'")))
        };
        let arch = Architecture::parse(&required("arch")?)?;
        let kind: NeuronKind = value(&kv, "neuron", NeuronKind::If)?;
        let std = NeuronParams::standard(kind);
        let neuron = NeuronParams::new(
            kind,
            value(&kv, "theta", std.theta)?,
            value(&kv, "tau_m", std.tau_m)?,
        )
        .map_err(|e| cfg_err(e.to_string()))?;
        let cfg = Self {
            arch,
            neuron,
            window: value(&kv, "T", 8)?,
            decode: value(&kv, "decode", DecodeMode::Membrane)?,
            epochs: value(&kv, "epochs", 1)?,
            lr: value(&kv, "lr", 0.01)?,
            momentum: value(&kv, "momentum", 0.9)?,
            weight_decay: value(&kv, "weight_decay", 0.0)?,
            batch: value(&kv, "batch", 64)?,
            seed: value(&kv, "seed", 0)?,
            dataset_dir: PathBuf::from(required("dataset_dir")?),
            out_dir: PathBuf::from(required("out_dir")?),
            optimizer: choice(
                &kv,
                "optimizer",
                OptimizerKind::Sgd,
                &[("sgd", OptimizerKind::Sgd), ("adam", OptimizerKind::Adam)],
            )?,
            lr_schedule: choice(
                &kv,
                "lr_schedule",
                LrSchedule::Constant,
                &[("constant", LrSchedule::Constant), ("cosine", LrSchedule::Cosine)],
            )?,
            batchnorm: value(&kv, "bn", true)?,
            task: choice(
                &kv,
                "task",
                Task::Classify,
                &[("classify", Task::Classify), ("reconstruct", Task::Reconstruct)],
            )?,
            mode: choice(
                &kv,
                "mode",
                ExecutionMode::Spiking,
                &[
                    ("tandem", ExecutionMode::Spiking),
                    ("ann", ExecutionMode::AnalogStub),
                ],
            )?,
            propagation: choice(
                &kv,
                "propagation",
                Propagation::SameStep,
                &[
                    ("same_step", Propagation::SameStep),
                    ("delay", Propagation::OneStepDelay),
                ],
            )?,
            train_limit: kv
                .get("train_limit")
                .map(|_| value(&kv, "train_limit", 0))
                .transpose()?,
            test_limit: kv
                .get("test_limit")
                .map(|_| value(&kv, "test_limit", 0))
                .transpose()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TandemError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(cfg_err("T must be ≥ 1"));
        }
        if self.batch == 0 {
            return Err(cfg_err("batch must be ≥ 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(cfg_err("lr must be a non-negative number"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(cfg_err("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(cfg_err("weight_decay must be non-negative"));
        }
        if self.task == Task::Reconstruct && self.decode != DecodeMode::Membrane {
            return Err(cfg_err("reconstruction needs decode=membrane"));
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(cfg_err("sample limits must be ≥ 1"));
        }
        Ok(())
    }

    /// Fully resolved configuration in the same `key=value` syntax.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("arch", self.arch.to_string());
        put("neuron", self.neuron.kind.to_string());
        put("theta", self.neuron.theta.to_string());
        put("tau_m", self.neuron.tau_m.to_string());
        put("T", self.window.to_string());
        put("decode", self.decode.to_string());
        put("epochs", self.epochs.to_string());
        put("lr", self.lr.to_string());
        put("momentum", self.momentum.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch", self.batch.to_string());
        put("seed", self.seed.to_string());
        put("dataset_dir", self.dataset_dir.display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        put(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
        );
        put(
            "lr_schedule",
            match self.lr_schedule {
                LrSchedule::Constant => "constant",
                LrSchedule::Cosine => "cosine",
            }
            .into(),
        );
        put("bn", self.batchnorm.to_string());
        put(
            "task",
            match self.task {
                Task::Classify => "classify",
                Task::Reconstruct => "reconstruct",
            }
            .into(),
        );
        put(
            "mode",
            match self.mode {
                ExecutionMode::Spiking => "tandem",
                ExecutionMode::AnalogStub => "ann",
            }
            .into(),
        );
        put(
            "propagation",
            match self.propagation {
                Propagation::SameStep => "same_step",
                Propagation::OneStepDelay => "delay",
            }
            .into(),
        );
        if let Some(n) = self.train_limit {
            put("train_limit", n.to_string());
        }
        if let Some(n) = self.test_limit {
            put("test_limit", n.to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "arch=fc:784-300-10\ndataset_dir=/d\nout_dir=/o\n";

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainConfig::parse(BASE).unwrap();
        assert_eq!(c.window, 8);
        assert_eq!(c.neuron, NeuronParams::standard(NeuronKind::If));
        let again = TrainConfig::parse(&c.to_kv_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn comments_and_overrides() {
        let text =
            format!("# run\n{BASE}\nneuron = lif\nT=32\ntask=reconstruct\nmode=ann\ntrain_limit=100\n");
        let c = TrainConfig::parse(&text).unwrap();
        assert_eq!(c.neuron, NeuronParams::standard(NeuronKind::Lif));
        assert_eq!(
            (c.window, c.task, c.mode),
            (32, Task::Reconstruct, ExecutionMode::AnalogStub)
        );
        assert_eq!(c.train_limit, Some(100));
    }

    #[test]
    fn rejects_bad_input() {
        for extra in [
            "bogus=1",
            "T=0",
            "T=eight",
            "arch=fc:1-2",
            "neuron=hh",
            "theta=-1",
            "decode=spikes",
            "momentum=1.5",
            "garbage line",
        ] {
            assert!(
                matches!(
                    TrainConfig::parse(&format!("{BASE}{extra}\n")),
                    Err(TandemError::Config(_))
                ),
                "{extra}"
            );
        }
        assert!(TrainConfig::parse("arch=fc:784-10\n").is_err());
        assert!(TrainConfig::parse("arch=fc:784\ndataset_dir=/d\nout_dir=/o\n").is_err());
    }
}
