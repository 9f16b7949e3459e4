//! Forward and backward passes of the tandem network.
//!
//! Forward, for each layer `l`:
//!   `z^l = W·c^{l−1} + b·T` (optionally batch-normalized), `a^l = f(z^l)`;
//!   the spiking layer runs on `s^{l−1}` and yields `s^l`, `c^l`;
//!   `c^l`, not `a^l`, feeds the next analog layer.
//! Backward is ordinary backpropagation through the analog layers, evaluated
//! at the recorded `c^{l−1}` and `z^l`. Spiking dynamics add no gradient terms.

use crate::activation::ActivationParams;
use crate::codec::EncodedBatch;
use crate::error::{ensure_finite, shape_err, Result, TandemError};
use crate::net::batchnorm::{self, BatchStats, BnCache};
use crate::net::{DecodeMode, ExecutionMode, TandemNetwork};
use crate::neuron::{free_membrane_potential, run_layer, LayerInput, SpikeCount, SpikeTrain};
use crate::synapse::Synapses;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics for batch norm; running statistics are updated.
    Train,
    /// Running statistics everywhere; the network is not modified.
    Eval,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Pre-activation `z^l` (after batch norm when present).
    pub drive: Vec<f64>,
    /// Analog prediction `a^l`; equals `drive` for a membrane-decoded output.
    pub activation: Vec<f64>,
    pub spikes: Option<SpikeTrain>,
    pub counts: Option<SpikeCount>,
    /// Values the next layer consumes: `c^l`, or `a^l` under the analog stub.
    pub forwarded: Vec<f64>,
    bn_cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub output: DenseTensor,
    input: Vec<f64>,
    batch: usize,
    window: usize,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Analog-side input of layer `l`: `x·T` for the first layer, else the
    /// previous layer's forwarded values.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].forwarded
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn ensure_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let what = format!("gradient of layer {i}");
            ensure_finite(&l.weights, &what)?;
            ensure_finite(&l.bias, &what)?;
            for v in [&l.gamma, &l.beta].into_iter().flatten() {
                ensure_finite(v, &what)?;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights
                .iter()
                .chain(&l.bias)
                .chain(l.gamma.iter().flatten())
                .chain(l.beta.iter().flatten())
                .all(|&v| v == 0.0)
        })
    }
}

fn check_batch(net: &TandemNetwork, batch: &EncodedBatch) -> Result<()> {
    if batch.window() != net.window() {
        return shape_err(format!(
            "batch encoded for T={}, network runs T={}",
            batch.window(),
            net.window()
        ));
    }
    if batch.features() != net.input_size() {
        return shape_err(format!(
            "batch has {} features, network expects {}",
            batch.features(),
            net.input_size()
        ));
    }
    Ok(())
}

fn forward_inner(
    net: &TandemNetwork,
    batch: &EncodedBatch,
    phase: Phase,
) -> Result<(ForwardTrace, Vec<Option<BatchStats>>)> {
    check_batch(net, batch)?;
    let bsz = batch.batch();
    let window = net.window();
    let t = window as f64;
    let input = batch.equivalent_counts().data().to_vec();
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(net.layers().len());
    let mut stats = Vec::with_capacity(net.layers().len());

    for (l, layer) in net.layers().iter().enumerate() {
        let conn = layer.conn;
        let x: &[f64] = if l == 0 { &input } else { &layers[l - 1].forwarded };
        let mut z = vec![0.0; bsz * conn.out_size()];
        conn.project_acc(layer.weights.data(), x, &mut z, bsz);
        conn.add_bias(layer.bias.data(), t, &mut z, bsz);

        let mut bn_cache = None;
        let mut layer_stats = None;
        if let Some(bn) = &layer.bn {
            let (cache, s) = batchnorm::normalize_in_place(
                bn,
                &mut z,
                bsz,
                conn.positions_per_channel(),
                phase == Phase::Train,
            );
            bn_cache = Some(cache);
            layer_stats = s;
        }
        ensure_finite(&z, "pre-activation")?;
        stats.push(layer_stats);

        let membrane_out = layer.is_output && net.decode() == DecodeMode::Membrane;
        let act = ActivationParams::new(&layer.neuron, window)?;
        let activation: Vec<f64> = if membrane_out {
            z.clone()
        } else {
            z.iter().map(|&v| act.count_from_drive(v)).collect()
        };

        let (spikes, counts, forwarded) = if membrane_out {
            (None, None, z.clone())
        } else {
            match net.mode() {
                ExecutionMode::AnalogStub => (None, None, activation.clone()),
                ExecutionMode::Spiking => {
                    let (w, b) = layer.effective_params(window);
                    let syn = Synapses::new(conn, &w, &b)?;
                    let snn_input = if l == 0 {
                        LayerInput::Constant {
                            values: batch.currents().data(),
                            batch: bsz,
                        }
                    } else {
                        let prev = layers[l - 1].spikes.as_ref().ok_or_else(|| {
                            TandemError::State("previous layer produced no spike train".into())
                        })?;
                        LayerInput::Spikes(prev)
                    };
                    let (train, count) =
                        run_layer(&layer.neuron, &syn, snn_input, window, net.propagation())?;
                    let fwd = count.to_f64();
                    (Some(train), Some(count), fwd)
                }
            }
        };

        layers.push(LayerTrace {
            drive: z,
            activation,
            spikes,
            counts,
            forwarded,
            bn_cache,
        });
    }

    let out = &layers[layers.len() - 1].forwarded;
    let output = DenseTensor::new(vec![bsz, net.output_size()], out.clone())?;
    Ok((
        ForwardTrace {
            layers,
            output,
            input,
            batch: bsz,
            window,
        },
        stats,
    ))
}

/// Training-time forward pass. In [`Phase::Train`] batch-norm running
/// statistics are updated after the pass.
pub fn forward_tandem(net: &mut TandemNetwork, batch: &EncodedBatch, phase: Phase) -> Result<ForwardTrace> {
    let (trace, stats) = forward_inner(net, batch, phase)?;
    if phase == Phase::Train {
        for (layer, s) in net.layers_mut().iter_mut().zip(stats) {
            if let (Some(bn), Some(s)) = (layer.bn.as_mut(), s) {
                bn.update_running(&s);
            }
        }
    }
    Ok(trace)
}

/// Evaluation-mode forward pass on a shared network.
pub fn forward_tandem_eval(net: &TandemNetwork, batch: &EncodedBatch) -> Result<ForwardTrace> {
    Ok(forward_inner(net, batch, Phase::Eval)?.0)
}

/// Gradients of the loss with respect to every parameter, given `dE/d output`.
pub fn backward_tandem(
    net: &TandemNetwork,
    trace: &ForwardTrace,
    grad_output: &DenseTensor,
) -> Result<GradientSet> {
    if trace.layers.len() != net.layers().len() || trace.window != net.window() {
        return Err(TandemError::State("trace does not belong to this network".into()));
    }
    let bsz = trace.batch;
    if grad_output.len() != bsz * net.output_size() {
        return Err(TandemError::State(format!(
            "output gradient has {} values, trace output has {}",
            grad_output.len(),
            bsz * net.output_size()
        )));
    }
    let t = net.window() as f64;
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(net.layers().len());
    let mut upstream = grad_output.data().to_vec();

    for l in (0..net.layers().len()).rev() {
        let layer = &net.layers()[l];
        let lt = &trace.layers[l];
        let conn = layer.conn;
        if lt.drive.len() != bsz * conn.out_size() || lt.bn_cache.is_some() != layer.bn.is_some() {
            return Err(TandemError::State(format!(
                "trace layer {l} does not match network"
            )));
        }

        let membrane_out = layer.is_output && net.decode() == DecodeMode::Membrane;
        let mut dz: Vec<f64> = if membrane_out {
            upstream
        } else {
            let act = ActivationParams::new(&layer.neuron, net.window())?;
            upstream
                .iter()
                .zip(&lt.drive)
                .map(|(g, &z)| g * act.grad_wrt_drive(z))
                .collect()
        };

        let (mut dgamma, mut dbeta) = (None, None);
        if let (Some(bn), Some(cache)) = (&layer.bn, &lt.bn_cache) {
            let mut dg = vec![0.0; bn.channels()];
            let mut db = vec![0.0; bn.channels()];
            dz = batchnorm::backward(
                bn,
                cache,
                &dz,
                bsz,
                conn.positions_per_channel(),
                &mut dg,
                &mut db,
            );
            dgamma = Some(dg);
            dbeta = Some(db);
        }

        let mut dw = vec![0.0; conn.weight_len()];
        let dx = conn.backward(
            layer.weights.data(),
            trace.layer_input(l),
            &dz,
            &mut dw,
            l > 0,
            bsz,
        );
        let db: Vec<f64> = conn.channel_sums(&dz, bsz).into_iter().map(|v| v * t).collect();
        grads.push(LayerGrad {
            weights: dw,
            bias: db,
            gamma: dgamma,
            beta: dbeta,
        });
        upstream = dx.unwrap_or_default();
    }
    grads.reverse();
    let set = GradientSet { layers: grads };
    set.ensure_finite()?;
    Ok(set)
}

/// Spiking-only execution result.
#[derive(Debug, Clone)]
pub struct SnnRun {
    /// Spike trains and counts of every spiking layer (empty under the stub).
    pub layers: Vec<(SpikeTrain, SpikeCount)>,
    /// Forwarded values of every non-output layer.
    pub hidden: Vec<Vec<f64>>,
    pub output: DenseTensor,
}

/// Runs the spiking layers alone. Batch norm must already be folded.
pub fn simulate_snn(net: &TandemNetwork, batch: &EncodedBatch) -> Result<SnnRun> {
    check_batch(net, batch)?;
    if net.has_batchnorm() {
        return Err(TandemError::State(
            "batch norm must be folded before spiking inference".into(),
        ));
    }
    let bsz = batch.batch();
    let window = net.window();
    let n_layers = net.layers().len();
    let mut layers: Vec<(SpikeTrain, SpikeCount)> = Vec::new();
    let mut hidden: Vec<Vec<f64>> = Vec::new();
    let mut analog_in = batch.equivalent_counts().data().to_vec();

    for (l, layer) in net.layers().iter().enumerate() {
        let syn = layer.synapses()?;
        let membrane_out = l + 1 == n_layers && net.decode() == DecodeMode::Membrane;
        let output = match net.mode() {
            ExecutionMode::Spiking if membrane_out => {
                let (_, prev) = layers.last().ok_or_else(|| {
                    TandemError::State("membrane decoding needs at least one spiking layer".into())
                })?;
                free_membrane_potential(&syn, prev, window)?.into_data()
            }
            ExecutionMode::Spiking => {
                let input = match layers.last() {
                    None => LayerInput::Constant {
                        values: batch.currents().data(),
                        batch: bsz,
                    },
                    Some((train, _)) => LayerInput::Spikes(train),
                };
                let (train, count) = run_layer(&layer.neuron, &syn, input, window, net.propagation())?;
                let values = count.to_f64();
                layers.push((train, count));
                values
            }
            ExecutionMode::AnalogStub => {
                let z = syn.drive(&analog_in, bsz, window as f64)?;
                if membrane_out {
                    z
                } else {
                    let act = ActivationParams::new(&layer.neuron, window)?;
                    z.into_iter().map(|v| act.count_from_drive(v)).collect()
                }
            }
        };
        if l + 1 < n_layers {
            hidden.push(output.clone());
        }
        analog_in = output;
    }
    Ok(SnnRun {
        layers,
        hidden,
        output: DenseTensor::new(vec![bsz, net.output_size()], analog_in)?,
    })
}

/// Pure spiking inference, decoded per the network's decode mode.
pub fn inference_snn(net: &TandemNetwork, batch: &EncodedBatch) -> Result<DenseTensor> {
    Ok(simulate_snn(net, batch)?.output)
}

/// Purely analog cascade: each layer consumes the previous layer's `a`.
/// Uses batch norm running statistics when present.
pub fn analog_cascade(net: &TandemNetwork, batch: &EncodedBatch) -> Result<Vec<Vec<f64>>> {
    let mut stub = net.clone();
    stub.set_mode(ExecutionMode::AnalogStub);
    let trace = forward_tandem_eval(&stub, batch)?;
    Ok(trace.layers.into_iter().map(|l| l.activation).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_constant_current;
    use crate::net::{init_weights, loss_ce, loss_mse, Architecture, InputShape, TandemLayer};
    use crate::neuron::{NeuronKind, NeuronParams};
    use crate::synapse::Connectivity;

    fn net(arch: &str, kind: NeuronKind, window: usize, decode: DecodeMode, bn: bool) -> TandemNetwork {
        let a = Architecture::parse(arch).unwrap();
        TandemNetwork::from_arch(
            &a,
            InputShape::flat(a.input_features().unwrap()),
            NeuronParams::standard(kind),
            window,
            decode,
            bn,
        )
        .unwrap()
    }

    fn batch(rows: &[&[f64]], window: usize) -> EncodedBatch {
        encode_constant_current(&DenseTensor::from_rows(rows).unwrap(), window).unwrap()
    }

    #[test]
    fn identity_layer_counts() {
        let n = NeuronParams::standard(NeuronKind::If);
        let mut l1 = TandemLayer::new(Connectivity::Dense { n_in: 1, n_out: 1 }, n, false, false).unwrap();
        l1.weights.data_mut()[0] = 1.0;
        let out = TandemLayer::new(Connectivity::Dense { n_in: 1, n_out: 1 }, n, false, true).unwrap();
        let mut net = TandemNetwork::new(vec![l1, out], 10, DecodeMode::Membrane).unwrap();
        let tr = forward_tandem(&mut net, &batch(&[&[0.3]], 10), Phase::Train).unwrap();
        assert!((tr.layers[0].activation[0] - 3.0).abs() < 1e-12);
        assert_eq!(tr.layers[0].counts.as_ref().unwrap().counts(), &[3]);
    }

    #[test]
    fn zero_input_gives_bias_times_window() {
        let mut net = net("fc:3-4-2", NeuronKind::If, 8, DecodeMode::Membrane, false);
        init_weights(&mut net, 3);
        net.layers_mut()[1].bias.data_mut().copy_from_slice(&[0.25, -0.5]);
        let b = batch(&[&[0.0, 0.0, 0.0]], 8);
        let tr = forward_tandem(&mut net, &b, Phase::Train).unwrap();
        assert!(tr.layers[0].forwarded.iter().all(|&c| c == 0.0));
        assert_eq!(tr.output.data(), &[2.0, -4.0]);
        assert_eq!(inference_snn(&net, &b).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn counts_equal_temporal_sum_and_bound() {
        let mut net = net("fc:5-7-6-3", NeuronKind::If, 6, DecodeMode::SpikeCount, false);
        init_weights(&mut net, 11);
        let b = batch(&[&[0.5, 1.0, 0.2, 0.9, 0.1], &[1.0, 0.0, 0.3, 0.4, 2.0]], 6);
        let tr = forward_tandem(&mut net, &b, Phase::Train).unwrap();
        for lt in &tr.layers {
            let train = lt.spikes.as_ref().unwrap();
            assert_eq!(&train.count(), lt.counts.as_ref().unwrap());
            assert!(lt.counts.as_ref().unwrap().counts().iter().all(|&c| c <= 6));
        }
    }

    #[test]
    fn drive_depends_on_counts_not_activations() {
        let mut net = net("fc:4-6-5-2", NeuronKind::If, 5, DecodeMode::Membrane, false);
        init_weights(&mut net, 5);
        let b = batch(&[&[0.9, 0.1, 0.5, 0.7]], 5);
        let tr = forward_tandem(&mut net, &b, Phase::Train).unwrap();
        for l in 1..net.layers().len() {
            let layer = &net.layers()[l];
            let counts = tr.layers[l - 1].counts.as_ref().unwrap().to_f64();
            let syn = layer.synapses().unwrap();
            let z = syn.drive(&counts, 1, 5.0).unwrap();
            assert_eq!(z, tr.layers[l].drive);
        }
    }

    #[test]
    fn single_layer_membrane_gradient_is_closed_form() {
        let mut net = net("fc:3-4-2", NeuronKind::If, 8, DecodeMode::Membrane, false);
        init_weights(&mut net, 2);
        let b = batch(&[&[0.6, 0.2, 0.9], &[0.1, 0.8, 0.4]], 8);
        let tr = forward_tandem(&mut net, &b, Phase::Train).unwrap();
        let target = DenseTensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let (_, g) = loss_mse(&tr.output, &target).unwrap();
        let grads = backward_tandem(&net, &tr, &g).unwrap();
        let c0 = &tr.layers[0].forwarded;
        let (n_in, n_out) = (4, 2);
        for j in 0..n_in {
            for k in 0..n_out {
                let want: f64 = (0..2).map(|s| c0[s * n_in + j] * g.data()[s * n_out + k]).sum();
                assert!((grads.layers[1].weights[j * n_out + k] - want).abs() < 1e-12);
            }
        }
        for k in 0..n_out {
            let want: f64 = (0..2).map(|s| g.data()[s * n_out + k]).sum::<f64>() * 8.0;
            assert!((grads.layers[1].bias[k] - want).abs() < 1e-12);
        }

        let zero = DenseTensor::zeros(&[2, 2]);
        assert!(backward_tandem(&net, &tr, &zero).unwrap().is_zero());
    }

    /// Loss of the analog-stub network as a function of all parameters.
    fn stub_loss(net: &TandemNetwork, b: &EncodedBatch, labels: &[usize]) -> f64 {
        let mut n = net.clone();
        let tr = forward_tandem(&mut n, b, Phase::Train).unwrap();
        loss_ce(&tr.output, labels).unwrap().0
    }

    fn fd_check(kind: NeuronKind, bn: bool) {
        let mut net = net("fc:4-5-4-3", kind, 6, DecodeMode::Membrane, bn);
        net.set_mode(ExecutionMode::AnalogStub);
        init_weights(&mut net, 9);
        for (i, l) in net.layers_mut().iter_mut().enumerate() {
            for (k, b) in l.bias.data_mut().iter_mut().enumerate() {
                *b = 0.05 * (k as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let b = batch(
            &[
                &[0.6, 0.2, 0.9, 0.3],
                &[0.1, 0.8, 0.4, 0.7],
                &[0.5, 0.5, 0.1, 0.9],
            ],
            6,
        );
        let labels = [0, 2, 1];
        let mut n = net.clone();
        let tr = forward_tandem(&mut n, &b, Phase::Train).unwrap();
        let (_, g) = loss_ce(&tr.output, &labels).unwrap();
        let grads = backward_tandem(&net, &tr, &g).unwrap();
        let h = 1e-6;
        for l in 0..3 {
            for idx in 0..net.layers()[l].weights.len() {
                let mut p = net.clone();
                p.layers_mut()[l].weights.data_mut()[idx] += h;
                let mut m = net.clone();
                m.layers_mut()[l].weights.data_mut()[idx] -= h;
                let fd = (stub_loss(&p, &b, &labels) - stub_loss(&m, &b, &labels)) / (2.0 * h);
                let an = grads.layers[l].weights[idx];
                assert!(
                    (an - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                    "layer {l} w{idx}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn stub_gradients_match_finite_differences_if() {
        fd_check(NeuronKind::If, false);
    }

    #[test]
    fn stub_gradients_match_finite_differences_lif_bn() {
        fd_check(NeuronKind::Lif, true);
    }

    #[test]
    fn inference_matches_tandem_output_and_requires_fold() {
        let mut net = net("fc:4-6-3", NeuronKind::If, 8, DecodeMode::Membrane, true);
        init_weights(&mut net, 4);
        let b = batch(&[&[0.9, 0.1, 0.5, 0.7], &[0.3, 0.3, 0.8, 0.0]], 8);
        assert!(matches!(inference_snn(&net, &b), Err(TandemError::State(_))));
        let tr = forward_tandem_eval(&net, &b).unwrap();
        let mut folded = net.clone();
        folded.fold_batchnorm().unwrap();
        assert_eq!(inference_snn(&folded, &b).unwrap(), tr.output);
    }

    #[test]
    fn fold_preserves_eval_preactivation() {
        let mut net = net("fc:4-6-3", NeuronKind::If, 8, DecodeMode::Membrane, true);
        init_weights(&mut net, 4);
        {
            let bn = net.layers_mut()[0].bn.as_mut().unwrap();
            for c in 0..6 {
                bn.gamma[c] = 0.5 + 0.1 * c as f64;
                bn.beta[c] = -0.2 + 0.07 * c as f64;
                bn.running_mean[c] = 0.3 - 0.05 * c as f64;
                bn.running_var[c] = 0.8 + 0.2 * c as f64;
            }
        }
        let b = batch(&[&[0.9, 0.1, 0.5, 0.7], &[0.3, 0.3, 0.8, 0.0]], 8);
        let before = forward_tandem_eval(&net, &b).unwrap();
        let mut folded = net.clone();
        folded.fold_batchnorm().unwrap();
        let after = forward_tandem_eval(&folded, &b).unwrap();
        for (x, y) in before.layers[0].drive.iter().zip(&after.layers[0].drive) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
