//! The tandem network: each layer holds one set of weights read by both a
//! spiking layer (exact spike trains and counts) and an analog layer (spike
//! count prediction used for gradients).

pub mod arch;
pub mod batchnorm;
pub mod loss;
pub mod optim;
mod tandem;

use std::borrow::Cow;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result, TandemError};
use crate::neuron::{NeuronParams, Propagation};
use crate::synapse::{Connectivity, Synapses};
use crate::tensor::DenseTensor;

pub use arch::{Architecture, InputShape, LayerSpec};
pub use batchnorm::{batchnorm_forward, BatchNorm};
pub use loss::{loss_ce, loss_mse};
pub use optim::{Adam, Optimizer, Sgd};
pub use tandem::{
    analog_cascade, backward_tandem, forward_tandem, forward_tandem_eval, inference_snn, simulate_snn,
    ForwardTrace, GradientSet, LayerGrad, LayerTrace, Phase, SnnRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DecodeMode {
    /// Free aggregate membrane potential `W·c + b·T` of the output layer.
    #[default]
    Membrane,
    /// Spike counts of a spiking output layer.
    SpikeCount,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Membrane => "membrane",
            DecodeMode::SpikeCount => "count",
        })
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = TandemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "membrane" => Ok(DecodeMode::Membrane),
            "count" | "spike_count" | "spikecount" => Ok(DecodeMode::SpikeCount),
            other => Err(TandemError::Parameter(format!("unknown decode mode '{other}'"))),
        }
    }
}

/// What produces the "counts" each layer hands forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    /// Exact spiking simulation.
    #[default]
    Spiking,
    /// Analog stand-in: every layer forwards its activation `a` as if it were
    /// the count. Turns the network into a plain analog net.
    AnalogStub,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TandemLayer {
    pub conn: Connectivity,
    pub weights: DenseTensor,
    pub bias: DenseTensor,
    pub neuron: NeuronParams,
    pub bn: Option<BatchNorm>,
    pub is_output: bool,
}

impl TandemLayer {
    pub fn new(conn: Connectivity, neuron: NeuronParams, with_bn: bool, is_output: bool) -> Result<Self> {
        conn.validate()?;
        neuron.validate()?;
        Ok(Self {
            conn,
            weights: DenseTensor::zeros(&conn.weight_shape()),
            bias: DenseTensor::zeros(&[conn.channels()]),
            neuron,
            bn: with_bn.then(|| BatchNorm::new(conn.channels())),
            is_output,
        })
    }

    pub fn synapses(&self) -> Result<Synapses<'_>> {
        Synapses::new(self.conn, self.weights.data(), self.bias.data())
    }

    /// Parameters the spiking path runs with at `window` steps: batch norm
    /// (if any) folded in from its running statistics.
    pub fn effective_params(&self, window: usize) -> (Cow<'_, [f64]>, Cow<'_, [f64]>) {
        match &self.bn {
            None => (
                Cow::Borrowed(self.weights.data()),
                Cow::Borrowed(self.bias.data()),
            ),
            Some(bn) => {
                let (w, b) =
                    batchnorm::folded_params(&self.conn, self.weights.data(), self.bias.data(), bn, window);
                (Cow::Owned(w), Cow::Owned(b))
            }
        }
    }

    /// Absorbs batch norm into the weights for a `window`-step simulation and removes it.
    pub fn fold_batchnorm(&mut self, window: usize) -> Result<()> {
        let Some(bn) = self.bn.take() else {
            return Err(TandemError::State("layer has no batch norm to fold".into()));
        };
        let (w, b) = batchnorm::folded_params(&self.conn, self.weights.data(), self.bias.data(), &bn, window);
        self.weights = DenseTensor::new(self.conn.weight_shape(), w)?;
        self.bias = DenseTensor::new(vec![self.conn.channels()], b)?;
        Ok(())
    }
}

/// `batchnorm_fold` on a single layer.
pub fn batchnorm_fold(layer: &mut TandemLayer, window: usize) -> Result<()> {
    layer.fold_batchnorm(window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TandemNetwork {
    layers: Vec<TandemLayer>,
    window: usize,
    decode: DecodeMode,
    mode: ExecutionMode,
    propagation: Propagation,
}

impl TandemNetwork {
    pub fn new(layers: Vec<TandemLayer>, window: usize, decode: DecodeMode) -> Result<Self> {
        let net = Self {
            layers,
            window,
            decode,
            mode: ExecutionMode::Spiking,
            propagation: Propagation::SameStep,
        };
        net.validate()?;
        Ok(net)
    }

    /// Builds an untrained network (all weights zero) from an architecture.
    pub fn from_arch(
        arch: &Architecture,
        input: InputShape,
        neuron: NeuronParams,
        window: usize,
        decode: DecodeMode,
        batchnorm: bool,
    ) -> Result<Self> {
        let conns = arch.connectivity(input)?;
        let last = conns.len() - 1;
        let layers = conns
            .into_iter()
            .enumerate()
            .map(|(i, c)| TandemLayer::new(c, neuron, batchnorm && i != last, i == last))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, window, decode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
        }
        if self.layers.is_empty() {
            return shape_err("network has no layers");
        }
        let outputs = self.layers.iter().filter(|l| l.is_output).count();
        if outputs != 1 || !self.layers.last().is_some_and(|l| l.is_output) {
            return shape_err("exactly one output layer, placed last, is required");
        }
        for pair in self.layers.windows(2) {
            if pair[0].conn.out_size() != pair[1].conn.in_size() {
                return shape_err(format!(
                    "layer geometry does not chain: {} outputs into {} inputs",
                    pair[0].conn.out_size(),
                    pair[1].conn.in_size()
                ));
            }
        }
        for l in &self.layers {
            l.conn.validate()?;
            l.neuron.validate()?;
            l.synapses()?;
            if l.is_output && l.bn.is_some() {
                return Err(TandemError::State("output layer cannot carry batch norm".into()));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[TandemLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [TandemLayer] {
        &mut self.layers
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn set_window(&mut self, window: usize) -> Result<()> {
        if window == 0 {
            return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
        }
        self.window = window;
        Ok(())
    }

    pub fn decode(&self) -> DecodeMode {
        self.decode
    }

    pub fn set_decode(&mut self, decode: DecodeMode) {
        self.decode = decode;
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ExecutionMode) {
        self.mode = mode;
    }

    pub fn propagation(&self) -> Propagation {
        self.propagation
    }

    pub fn set_propagation(&mut self, propagation: Propagation) {
        self.propagation = propagation;
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].conn.in_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].conn.out_size()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    /// Folds every batch-norm layer. Fails if none is present.
    pub fn fold_batchnorm(&mut self) -> Result<()> {
        if !self.has_batchnorm() {
            return Err(TandemError::State(
                "network has no batch norm left to fold".into(),
            ));
        }
        let window = self.window;
        for l in self.layers.iter_mut().filter(|l| l.bn.is_some()) {
            l.fold_batchnorm(window)?;
        }
        Ok(())
    }

    /// Rounds every weight and bias to `f32` precision, as stored in checkpoints.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.weights.data_mut().iter_mut().chain(l.bias.data_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len() + l.bn.as_ref().map_or(0, |b| 2 * b.channels()))
            .sum()
    }
}

/// He-normal weights `N(0, 2/fan_in)`, zero biases, fresh batch norm with
/// scale `θ·√T`, so a normalized drive is worth about `√T` spikes.
pub fn init_weights(net: &mut TandemNetwork, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root_t = (net.window as f64).sqrt();
    for layer in &mut net.layers {
        let std = (2.0 / layer.conn.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in layer.weights.data_mut() {
            *w = normal.sample(&mut rng);
        }
        layer.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        if let Some(bn) = &mut layer.bn {
            *bn = BatchNorm::new(bn.channels());
            let scale = layer.neuron.theta * root_t;
            bn.gamma.iter_mut().for_each(|g| *g = scale);
        }
    }
}
