//! Batch normalization of the analog drive `z = Wc + b·T` and its folding
//! into the preceding weights.
//!
//! Statistics are per channel: one per neuron for dense layers, one per
//! feature map for convolutions.

use crate::error::{Result, TandemError};
use crate::synapse::Connectivity;
use crate::tensor::DenseTensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `γ/√(var+ε)` and shift `β − mean·γ/√(var+ε)` from the
    /// running statistics.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.epsilon).sqrt())
            .collect();
        let shift = scale
            .iter()
            .zip(&self.running_mean)
            .zip(&self.beta)
            .map(|((s, m), b)| b - m * s)
            .collect();
        (scale, shift)
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let unbiased = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = BN_MOMENTUM * self.running_mean[c] + (1.0 - BN_MOMENTUM) * stats.mean[c];
            self.running_var[c] =
                BN_MOMENTUM * self.running_var[c] + (1.0 - BN_MOMENTUM) * stats.var[c] * unbiased;
        }
    }
}

/// Per-channel mean and biased variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch statistics were used (training); otherwise running statistics.
    pub training: bool,
}

fn for_each_channel(
    values: &[f64],
    batch: usize,
    channels: usize,
    per: usize,
    mut f: impl FnMut(usize, &[f64]),
) {
    let size = channels * per;
    for b in 0..batch {
        for c in 0..channels {
            let start = b * size + c * per;
            f(c, &values[start..start + per]);
        }
    }
}

pub fn batch_stats(values: &[f64], batch: usize, channels: usize, per: usize) -> BatchStats {
    let count = batch * per;
    let mut mean = vec![0.0; channels];
    for_each_channel(values, batch, channels, per, |c, chunk| {
        mean[c] += chunk.iter().sum::<f64>();
    });
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; channels];
    for_each_channel(values, batch, channels, per, |c, chunk| {
        var[c] += chunk.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
    });
    var.iter_mut().for_each(|v| *v /= count as f64);
    BatchStats { mean, var, count }
}

/// Normalizes `values` (`[batch × channels·per]`) in place. Training mode uses
/// and returns the batch statistics; evaluation mode uses running statistics.
pub(crate) fn normalize_in_place(
    bn: &BatchNorm,
    values: &mut [f64],
    batch: usize,
    per: usize,
    training: bool,
) -> (BnCache, Option<BatchStats>) {
    let channels = bn.channels();
    let (mean, var, stats) = if training {
        let s = batch_stats(values, batch, channels, per);
        (s.mean.clone(), s.var.clone(), Some(s))
    } else {
        (bn.running_mean.clone(), bn.running_var.clone(), None)
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut normalized = vec![0.0; values.len()];
    let size = channels * per;
    for b in 0..batch {
        for c in 0..channels {
            let start = b * size + c * per;
            for i in start..start + per {
                let xh = (values[i] - mean[c]) * inv_std[c];
                normalized[i] = xh;
                values[i] = bn.gamma[c] * xh + bn.beta[c];
            }
        }
    }
    (
        BnCache {
            normalized,
            inv_std,
            training,
        },
        stats,
    )
}

/// Given `dE/dy` for `y = γ·x̂ + β`, returns `dE/dx` and accumulates `dγ`, `dβ`.
pub(crate) fn backward(
    bn: &BatchNorm,
    cache: &BnCache,
    grad_out: &[f64],
    batch: usize,
    per: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let channels = bn.channels();
    let size = channels * per;
    let n = (batch * per) as f64;
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xh = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let start = b * size + c * per;
            let dy = &grad_out[start..start + per];
            let xh = &cache.normalized[start..start + per];
            for (g, x) in dy.iter().zip(xh) {
                sum_dy[c] += g;
                sum_dy_xh[c] += g * x;
            }
        }
    }
    for c in 0..channels {
        dgamma[c] += sum_dy_xh[c];
        dbeta[c] += sum_dy[c];
    }
    let mut grad_in = vec![0.0; grad_out.len()];
    for b in 0..batch {
        for c in 0..channels {
            let k = bn.gamma[c] * cache.inv_std[c];
            let start = b * size + c * per;
            for i in start..start + per {
                grad_in[i] = if cache.training {
                    k * (grad_out[i] - sum_dy[c] / n - cache.normalized[i] * sum_dy_xh[c] / n)
                } else {
                    k * grad_out[i]
                };
            }
        }
    }
    grad_in
}

/// Standalone batch norm over `[batch × channels·per]` values.
pub fn batchnorm_forward(
    values: &DenseTensor,
    bn: &mut BatchNorm,
    per: usize,
    training: bool,
) -> Result<DenseTensor> {
    let size = bn.channels() * per;
    if size == 0 || !values.len().is_multiple_of(size) {
        return Err(TandemError::Shape(format!(
            "{} values do not split into {} channels × {per}",
            values.len(),
            bn.channels()
        )));
    }
    let batch = values.len() / size;
    let mut out = values.data().to_vec();
    let (_, stats) = normalize_in_place(bn, &mut out, batch, per, training);
    if let Some(s) = stats {
        bn.update_running(&s);
    }
    DenseTensor::new(values.shape().to_vec(), out)
}

/// Weights and per-step bias with the running-statistics affine map absorbed.
/// The statistics describe the window drive `Wc + b·T`, so with
/// `s = γ/√(var+ε)`: `W ← W·s`, `b ← (b − mean/T)·s + β/T`.
pub fn folded_params(
    conn: &Connectivity,
    weights: &[f64],
    bias: &[f64],
    bn: &BatchNorm,
    window: usize,
) -> (Vec<f64>, Vec<f64>) {
    let t = window as f64;
    let (scale, _) = bn.affine();
    let mut w = weights.to_vec();
    match conn {
        Connectivity::Dense { n_in, n_out } => {
            for j in 0..*n_in {
                for (wv, s) in w[j * n_out..(j + 1) * n_out].iter_mut().zip(&scale) {
                    *wv *= s;
                }
            }
        }
        Connectivity::Conv(g) => {
            let per = g.patch_len();
            for (f, chunk) in w.chunks_mut(per).enumerate() {
                chunk.iter_mut().for_each(|v| *v *= scale[f]);
            }
        }
    }
    let b = bias
        .iter()
        .enumerate()
        .map(|(c, bv)| (bv - bn.running_mean[c] / t) * scale[c] + bn.beta[c] / t)
        .collect();
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_fold() {
        let conn = Connectivity::Dense { n_in: 2, n_out: 2 };
        let mut bn = BatchNorm::new(2);
        bn.epsilon = 0.0;
        let w = [0.5, -1.0, 2.0, 0.25];
        let b = [0.1, -0.2];
        let (fw, fb) = folded_params(&conn, &w, &b, &bn, 1);
        assert_eq!(fw, w);
        assert_eq!(fb, b);
    }

    #[test]
    fn hand_fold() {
        let conn = Connectivity::Dense { n_in: 1, n_out: 1 };
        let bn = BatchNorm {
            gamma: vec![2.0],
            beta: vec![1.0],
            running_mean: vec![3.0],
            running_var: vec![4.0],
            epsilon: 0.0,
        };
        let (w, b) = folded_params(&conn, &[1.0], &[0.0], &bn, 1);
        assert_eq!(w, vec![1.0]);
        assert_eq!(b, vec![-2.0]);
    }

    #[test]
    fn fold_matches_window_drive() {
        let conn = Connectivity::Dense { n_in: 2, n_out: 1 };
        let bn = BatchNorm {
            gamma: vec![1.5],
            beta: vec![0.4],
            running_mean: vec![2.0],
            running_var: vec![0.25],
            epsilon: 0.0,
        };
        let (w, b, c, t) = ([0.3, -0.7], [0.05], [3.0, 1.0], 4.0);
        let z = w[0] * c[0] + w[1] * c[1] + b[0] * t;
        let want = 1.5 * (z - 2.0) / 0.5 + 0.4;
        let (fw, fb) = folded_params(&conn, &w, &b, &bn, 4);
        let got = fw[0] * c[0] + fw[1] * c[1] + fb[0] * t;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn training_mode_normalizes_and_tracks() {
        let mut bn = BatchNorm::new(1);
        let x = DenseTensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = batchnorm_forward(&x, &mut bn, 1, true).unwrap();
        assert!(y.sum().abs() < 1e-12);
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.25 / (1.25 + BN_EPSILON)).abs() < 1e-12);
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3 blended into 1.0
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let bn = BatchNorm {
            gamma: vec![1.3, 0.7],
            beta: vec![0.1, -0.4],
            running_mean: vec![0.0; 2],
            running_var: vec![1.0; 2],
            epsilon: 1e-5,
        };
        let x: Vec<f64> = (0..8).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.37).collect();
        let weights: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let loss = |xs: &[f64]| {
            let mut v = xs.to_vec();
            normalize_in_place(&bn, &mut v, 4, 1, true);
            v.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut v = x.clone();
        let (cache, _) = normalize_in_place(&bn, &mut v, 4, 1, true);
        let mut dg = vec![0.0; 2];
        let mut db = vec![0.0; 2];
        let grad = backward(&bn, &cache, &weights, 4, 1, &mut dg, &mut db);
        for i in 0..8 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }
}
