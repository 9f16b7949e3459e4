//! Connectivity between two layers: either fully connected or a strided 2-D
//! convolution. Shared by the spiking and analog paths.
//!
//! Dense weights are stored fan-in major, `[n_in × n_out]`, so row `j` holds
//! every outgoing synapse of presynaptic neuron `j`. Convolution kernels use
//! `[F × C × kh × kw]`. Conv biases are per output channel.

use crate::error::{shape_err, Result};
use crate::tensor::{conv_backward, conv_forward, gemm_a_bt, gemm_acc, gemm_at_b_acc, ConvShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Dense { n_in: usize, n_out: usize },
    Conv(ConvShape),
}

impl Connectivity {
    pub fn in_size(&self) -> usize {
        match self {
            Connectivity::Dense { n_in, .. } => *n_in,
            Connectivity::Conv(g) => g.in_size(),
        }
    }

    pub fn out_size(&self) -> usize {
        match self {
            Connectivity::Dense { n_out, .. } => *n_out,
            Connectivity::Conv(g) => g.out_size(),
        }
    }

    pub fn weight_len(&self) -> usize {
        match self {
            Connectivity::Dense { n_in, n_out } => n_in * n_out,
            Connectivity::Conv(g) => g.kernel_len(),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            Connectivity::Dense { n_in, n_out } => vec![*n_in, *n_out],
            Connectivity::Conv(g) => vec![g.out_channels, g.in_channels, g.kh, g.kw],
        }
    }

    /// Number of independent bias / batch-norm channels.
    pub fn channels(&self) -> usize {
        match self {
            Connectivity::Dense { n_out, .. } => *n_out,
            Connectivity::Conv(g) => g.out_channels,
        }
    }

    /// Output positions sharing one channel's bias (1 for dense layers).
    pub fn positions_per_channel(&self) -> usize {
        match self {
            Connectivity::Dense { .. } => 1,
            Connectivity::Conv(g) => g.out_h() * g.out_w(),
        }
    }

    /// Inputs feeding one output activation.
    pub fn fan_in(&self) -> usize {
        match self {
            Connectivity::Dense { n_in, .. } => *n_in,
            Connectivity::Conv(g) => g.patch_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Connectivity::Dense { n_in, n_out } if *n_in == 0 || *n_out == 0 => {
                shape_err("dense layer with zero width")
            }
            Connectivity::Dense { .. } => Ok(()),
            Connectivity::Conv(g) => g.validate(),
        }
    }

    /// `out[b] += W · input[b]` for a batch of flat samples, bias excluded.
    pub fn project_acc(&self, weights: &[f64], input: &[f64], out: &mut [f64], batch: usize) {
        match self {
            Connectivity::Dense { n_in, n_out } => gemm_acc(input, weights, out, batch, *n_in, *n_out),
            Connectivity::Conv(g) => conv_forward(g, input, weights, out, batch),
        }
    }

    /// Adds `scale · bias` to every sample of `out`, broadcasting conv biases
    /// over spatial positions.
    pub fn add_bias(&self, bias: &[f64], scale: f64, out: &mut [f64], batch: usize) {
        let per = self.positions_per_channel();
        let size = self.out_size();
        for b in 0..batch {
            let row = &mut out[b * size..(b + 1) * size];
            for (ch, chunk) in row.chunks_mut(per).enumerate() {
                let v = bias[ch] * scale;
                chunk.iter_mut().for_each(|x| *x += v);
            }
        }
    }

    /// Accumulates `dW` from the layer input and the output gradient and
    /// returns the input gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        weights: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_weights: &mut [f64],
        want_input_grad: bool,
        batch: usize,
    ) -> Option<Vec<f64>> {
        match self {
            Connectivity::Dense { n_in, n_out } => {
                gemm_at_b_acc(input, grad_out, grad_weights, batch, *n_in, *n_out);
                want_input_grad.then(|| {
                    let mut gi = vec![0.0; batch * n_in];
                    gemm_a_bt(grad_out, weights, &mut gi, batch, *n_out, *n_in);
                    gi
                })
            }
            Connectivity::Conv(g) => {
                if want_input_grad {
                    let mut gi = vec![0.0; batch * g.in_size()];
                    conv_backward(g, input, weights, grad_out, grad_weights, Some(&mut gi), batch);
                    Some(gi)
                } else {
                    conv_backward(g, input, weights, grad_out, grad_weights, None, batch);
                    None
                }
            }
        }
    }

    /// Sums an output-shaped gradient into per-channel totals.
    pub fn channel_sums(&self, values: &[f64], batch: usize) -> Vec<f64> {
        let per = self.positions_per_channel();
        let size = self.out_size();
        let mut acc = vec![0.0; self.channels()];
        for b in 0..batch {
            for (ch, chunk) in values[b * size..(b + 1) * size].chunks(per).enumerate() {
                acc[ch] += chunk.iter().sum::<f64>();
            }
        }
        acc
    }
}

/// Borrowed weights and bias of one connection.
#[derive(Debug, Clone, Copy)]
pub struct Synapses<'a> {
    pub conn: Connectivity,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl<'a> Synapses<'a> {
    pub fn new(conn: Connectivity, weights: &'a [f64], bias: &'a [f64]) -> Result<Self> {
        conn.validate()?;
        if weights.len() != conn.weight_len() {
            return shape_err(format!(
                "weights have {} values, geometry {:?} needs {}",
                weights.len(),
                conn.weight_shape(),
                conn.weight_len()
            ));
        }
        if bias.len() != conn.channels() {
            return shape_err(format!(
                "bias has {} values, layer has {} channels",
                bias.len(),
                conn.channels()
            ));
        }
        Ok(Self { conn, weights, bias })
    }

    /// `W · input + bias_scale · b` for a batch.
    pub fn drive(&self, input: &[f64], batch: usize, bias_scale: f64) -> Result<Vec<f64>> {
        if input.len() != batch * self.conn.in_size() {
            return shape_err(format!(
                "input has {} values, expected {batch}×{}",
                input.len(),
                self.conn.in_size()
            ));
        }
        let mut out = vec![0.0; batch * self.conn.out_size()];
        self.conn.project_acc(self.weights, input, &mut out, batch);
        self.conn.add_bias(self.bias, bias_scale, &mut out, batch);
        Ok(out)
    }
}
