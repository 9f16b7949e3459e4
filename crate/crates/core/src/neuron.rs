//! Discrete-time integrate-and-fire simulation.
//!
//! Each step performs, in order: leak, add the synaptic current, subtract
//! `θ·s[t−1]` (reset by subtraction), then fire wherever `U ≥ θ`. The
//! membrane starts at zero for every input example.

use std::fmt;

use rayon::prelude::*;

use crate::error::{ensure_finite, shape_err, Result, TandemError};
use crate::synapse::Synapses;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeuronKind {
    If,
    Lif,
}

impl fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeuronKind::If => "if",
            NeuronKind::Lif => "lif",
        })
    }
}

impl std::str::FromStr for NeuronKind {
    type Err = TandemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "if" => Ok(NeuronKind::If),
            "lif" => Ok(NeuronKind::Lif),
            other => Err(TandemError::Parameter(format!("unknown neuron kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    pub kind: NeuronKind,
    pub theta: f64,
    /// Membrane time constant in simulation steps; ignored for IF.
    pub tau_m: f64,
    pub dt: f64,
}

impl NeuronParams {
    pub fn integrate_and_fire(theta: f64) -> Result<Self> {
        Self::new(NeuronKind::If, theta, 0.0)
    }

    pub fn leaky(theta: f64, tau_m: f64) -> Result<Self> {
        Self::new(NeuronKind::Lif, theta, tau_m)
    }

    pub fn new(kind: NeuronKind, theta: f64, tau_m: f64) -> Result<Self> {
        let p = Self {
            kind,
            theta,
            tau_m,
            dt: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// IF with θ = 1, or LIF with θ = 0.1 and τ_m = 20 steps.
    pub fn standard(kind: NeuronKind) -> Self {
        match kind {
            NeuronKind::If => Self {
                kind,
                theta: 1.0,
                tau_m: 0.0,
                dt: 1.0,
            },
            NeuronKind::Lif => Self {
                kind,
                theta: 0.1,
                tau_m: 20.0,
                dt: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(TandemError::Parameter(format!(
                "threshold must be positive, got {}",
                self.theta
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(TandemError::Parameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.kind == NeuronKind::Lif && !(self.tau_m.is_finite() && self.tau_m > 0.0) {
            return Err(TandemError::Parameter(format!(
                "LIF needs tau_m > 0, got {}",
                self.tau_m
            )));
        }
        Ok(())
    }

    /// Membrane decay per step: `exp(−dt/τ_m)` for LIF, exactly 1 for IF.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            NeuronKind::If => 1.0,
            NeuronKind::Lif => (-self.dt / self.tau_m).exp(),
        }
    }
}

/// Membrane potentials and previous-step spikes of a batch of neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    batch: usize,
    neurons: usize,
    membrane: Vec<f64>,
    last_spikes: Vec<u8>,
}

impl LayerState {
    pub fn new(batch: usize, neurons: usize) -> Self {
        Self {
            batch,
            neurons,
            membrane: vec![0.0; batch * neurons],
            last_spikes: vec![0; batch * neurons],
        }
    }

    pub fn reset(&mut self) {
        self.membrane.iter_mut().for_each(|u| *u = 0.0);
        self.last_spikes.iter_mut().for_each(|s| *s = 0);
    }

    pub fn membrane(&self) -> &[f64] {
        &self.membrane
    }

    pub fn membrane_tensor(&self) -> DenseTensor {
        DenseTensor::from_parts_unchecked(vec![self.batch, self.neurons], self.membrane.clone())
    }

    pub fn last_spikes(&self) -> &[u8] {
        &self.last_spikes
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }
}

/// Binary spike activity over `T` steps. Stored sample-major
/// (`[batch][T][neurons]`); [`SpikeTrain::to_tensor`] yields `[T × batch × neurons]`.
#[derive(Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    steps: usize,
    batch: usize,
    neurons: usize,
    bits: Vec<u8>,
}

impl fmt::Debug for SpikeTrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SpikeTrain {{ T: {}, batch: {}, neurons: {}, spikes: {} }}",
            self.steps,
            self.batch,
            self.neurons,
            self.total()
        )
    }
}

impl SpikeTrain {
    pub fn zeros(steps: usize, batch: usize, neurons: usize) -> Self {
        Self {
            steps,
            batch,
            neurons,
            bits: vec![0; steps * batch * neurons],
        }
    }

    /// Builds a train from `[T × batch × neurons]` values that must be 0 or 1.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let [steps, batch, neurons] = t.shape()[..] else {
            return shape_err(format!("spike train needs rank 3, got {:?}", t.shape()));
        };
        let mut train = Self::zeros(steps, batch, neurons);
        for s in 0..steps {
            for b in 0..batch {
                for n in 0..neurons {
                    let v = t.data()[(s * batch + b) * neurons + n];
                    let bit = match v {
                        0.0 => 0,
                        1.0 => 1,
                        _ => return Err(TandemError::Data(format!("non-binary spike value {v}"))),
                    };
                    train.set(s, b, n, bit);
                }
            }
        }
        Ok(train)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        let mut data = vec![0.0; self.bits.len()];
        for s in 0..self.steps {
            for b in 0..self.batch {
                for n in 0..self.neurons {
                    data[(s * self.batch + b) * self.neurons + n] = self.get(s, b, n) as f64;
                }
            }
        }
        DenseTensor::from_parts_unchecked(vec![self.steps, self.batch, self.neurons], data)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    #[inline]
    fn index(&self, step: usize, sample: usize, neuron: usize) -> usize {
        (sample * self.steps + step) * self.neurons + neuron
    }

    pub fn get(&self, step: usize, sample: usize, neuron: usize) -> u8 {
        self.bits[self.index(step, sample, neuron)]
    }

    pub fn set(&mut self, step: usize, sample: usize, neuron: usize, bit: u8) {
        let i = self.index(step, sample, neuron);
        self.bits[i] = bit & 1;
    }

    /// Spikes of one sample at one step.
    pub fn frame(&self, step: usize, sample: usize) -> &[u8] {
        let i = self.index(step, sample, 0);
        &self.bits[i..i + self.neurons]
    }

    /// All `T` frames of one sample, `[T × neurons]`.
    pub fn sample(&self, sample: usize) -> &[u8] {
        let n = self.steps * self.neurons;
        &self.bits[sample * n..(sample + 1) * n]
    }

    pub fn total(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    /// Spikes per time step summed over samples and neurons.
    pub fn per_step_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.steps];
        for b in 0..self.batch {
            for (s, tot) in out.iter_mut().enumerate() {
                *tot += self.frame(s, b).iter().map(|&x| x as u64).sum::<u64>();
            }
        }
        out
    }

    /// Temporal sum of the train.
    pub fn count(&self) -> SpikeCount {
        let mut counts = vec![0u32; self.batch * self.neurons];
        for b in 0..self.batch {
            let dst = &mut counts[b * self.neurons..(b + 1) * self.neurons];
            for s in 0..self.steps {
                for (c, &bit) in dst.iter_mut().zip(self.frame(s, b)) {
                    *c += bit as u32;
                }
            }
        }
        SpikeCount {
            window: self.steps,
            batch: self.batch,
            neurons: self.neurons,
            counts,
        }
    }
}

/// Per-neuron spike totals over the encoding window, each in `0..=window`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeCount {
    window: usize,
    batch: usize,
    neurons: usize,
    counts: Vec<u32>,
}

impl SpikeCount {
    pub fn new(window: usize, batch: usize, neurons: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != batch * neurons {
            return shape_err(format!("{} counts for {batch}×{neurons}", counts.len()));
        }
        if let Some(c) = counts.iter().find(|&&c| c as usize > window) {
            return Err(TandemError::Data(format!("count {c} exceeds window {window}")));
        }
        Ok(Self {
            window,
            batch,
            neurons,
            counts,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_parts_unchecked(vec![self.batch, self.neurons], self.to_f64())
    }
}

/// Presynaptic drive for one layer run.
#[derive(Debug, Clone, Copy)]
pub enum LayerInput<'a> {
    /// Spike train of the preceding layer.
    Spikes(&'a SpikeTrain),
    /// Real-valued frame `[batch × features]` injected unchanged at every step.
    Constant { values: &'a [f64], batch: usize },
}

/// Which presynaptic step feeds step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// Layer `l` at step `t` consumes `s^{l−1}[t]`.
    #[default]
    SameStep,
    /// Layer `l` at step `t` consumes `s^{l−1}[t−1]`, with silence at `t = 1`.
    OneStepDelay,
}

/// `I = W·s + b` for one batch of presynaptic activity `[batch × n_pre]`.
pub fn synaptic_current(syn: &Synapses<'_>, presyn: &DenseTensor) -> Result<DenseTensor> {
    let n_pre = syn.conn.in_size();
    if presyn.rank() == 0 || !presyn.len().is_multiple_of(n_pre) || presyn.shape()[presyn.rank() - 1] == 0 {
        return shape_err(format!(
            "presynaptic activity {:?} does not match fan-in {n_pre}",
            presyn.shape()
        ));
    }
    let batch = presyn.len() / n_pre;
    let out = syn.drive(presyn.data(), batch, 1.0)?;
    Ok(DenseTensor::from_parts_unchecked(
        vec![batch, syn.conn.out_size()],
        out,
    ))
}

#[inline]
fn integrate(theta: f64, alpha: f64, membrane: &mut [f64], last: &mut [u8], current: &[f64]) {
    for ((u, s), &i) in membrane.iter_mut().zip(last.iter_mut()).zip(current) {
        let mut v = alpha * *u + i;
        if *s != 0 {
            v -= theta;
        }
        *u = v;
        *s = (v >= theta) as u8;
    }
}

/// Advances every neuron by one step and returns the new spikes.
pub fn step<'s>(params: &NeuronParams, state: &'s mut LayerState, current: &DenseTensor) -> Result<&'s [u8]> {
    if current.len() != state.membrane.len() {
        return shape_err(format!(
            "current has {} values, state has {}",
            current.len(),
            state.membrane.len()
        ));
    }
    ensure_finite(current.data(), "synaptic current")?;
    integrate(
        params.theta,
        params.alpha(),
        &mut state.membrane,
        &mut state.last_spikes,
        current.data(),
    );
    Ok(&state.last_spikes)
}

/// Simulates one layer from reset over `window` steps.
pub fn run_layer(
    params: &NeuronParams,
    syn: &Synapses<'_>,
    input: LayerInput<'_>,
    window: usize,
    propagation: Propagation,
) -> Result<(SpikeTrain, SpikeCount)> {
    params.validate()?;
    if window == 0 {
        return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
    }
    let n_in = syn.conn.in_size();
    let n_out = syn.conn.out_size();
    let theta = params.theta;
    let alpha = params.alpha();

    let batch = match input {
        LayerInput::Spikes(train) => {
            if train.neurons() != n_in {
                return shape_err(format!(
                    "input train has {} neurons, layer expects {n_in}",
                    train.neurons()
                ));
            }
            if train.steps() != window {
                return shape_err(format!(
                    "input train spans {} steps, window is {window}",
                    train.steps()
                ));
            }
            train.batch()
        }
        LayerInput::Constant { values, batch } => {
            if values.len() != batch * n_in {
                return shape_err(format!(
                    "constant input has {} values, expected {batch}×{n_in}",
                    values.len()
                ));
            }
            ensure_finite(values, "encoded input")?;
            batch
        }
    };

    let mut train = SpikeTrain::zeros(window, batch, n_out);
    let per_sample = window * n_out;

    match input {
        LayerInput::Constant { values, .. } => {
            let drive = syn.drive(values, batch, 1.0)?;
            ensure_finite(&drive, "synaptic current")?;
            train
                .bits
                .par_chunks_mut(per_sample)
                .zip(drive.par_chunks(n_out))
                .for_each(|(out, current)| {
                    let mut u = vec![0.0; n_out];
                    let mut last = vec![0u8; n_out];
                    for t in 0..window {
                        integrate(theta, alpha, &mut u, &mut last, current);
                        out[t * n_out..(t + 1) * n_out].copy_from_slice(&last);
                    }
                });
        }
        LayerInput::Spikes(input_train) => {
            let results: Vec<Result<()>> = train
                .bits
                .par_chunks_mut(per_sample)
                .enumerate()
                .map(|(b, out)| {
                    let mut u = vec![0.0; n_out];
                    let mut last = vec![0u8; n_out];
                    let mut current = vec![0.0; n_out];
                    let mut pre = vec![0.0; n_in];
                    for t in 0..window {
                        current.iter_mut().for_each(|c| *c = 0.0);
                        let src = match propagation {
                            Propagation::SameStep => Some(t),
                            Propagation::OneStepDelay => t.checked_sub(1),
                        };
                        if let Some(src) = src {
                            let frame = input_train.frame(src, b);
                            for (p, &bit) in pre.iter_mut().zip(frame) {
                                *p = bit as f64;
                            }
                            syn.conn.project_acc(syn.weights, &pre, &mut current, 1);
                        }
                        syn.conn.add_bias(syn.bias, 1.0, &mut current, 1);
                        ensure_finite(&current, "synaptic current")?;
                        integrate(theta, alpha, &mut u, &mut last, &current);
                        out[t * n_out..(t + 1) * n_out].copy_from_slice(&last);
                    }
                    Ok(())
                })
                .collect();
            results.into_iter().collect::<Result<()>>()?;
        }
    }

    let count = train.count();
    Ok((train, count))
}

/// Threshold-free accumulated drive `W·c + b·T` over the window.
pub fn free_membrane_potential(
    syn: &Synapses<'_>,
    input_counts: &SpikeCount,
    window: usize,
) -> Result<DenseTensor> {
    if input_counts.window() != window {
        return shape_err(format!(
            "counts come from window {}, asked for {window}",
            input_counts.window()
        ));
    }
    if input_counts.neurons() != syn.conn.in_size() {
        return shape_err(format!(
            "{} input neurons, layer expects {}",
            input_counts.neurons(),
            syn.conn.in_size()
        ));
    }
    let batch = input_counts.batch();
    let out = syn.drive(&input_counts.to_f64(), batch, window as f64)?;
    ensure_finite(&out, "free membrane potential")?;
    Ok(DenseTensor::from_parts_unchecked(
        vec![batch, syn.conn.out_size()],
        out,
    ))
}
