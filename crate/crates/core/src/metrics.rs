//! Evaluation metrics: synaptic operation counts, accuracy and MSE, and the
//! spike-count versus analog-prediction fidelity analyses.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::codec::EncodedBatch;
use crate::error::{shape_err, Result, TandemError};
use crate::net::{analog_cascade, forward_tandem_eval, simulate_snn, DecodeMode, TandemNetwork};
use crate::neuron::SpikeCount;
use crate::synapse::Connectivity;
use crate::tensor::conv_fan_out_map;

/// Outgoing connections of every neuron of a layer whose output feeds `next`.
pub fn fan_out(next: &Connectivity) -> Vec<u64> {
    match next {
        Connectivity::Dense { n_in, n_out } => vec![*n_out as u64; *n_in],
        Connectivity::Conv(geo) => {
            let plane: Vec<u64> = conv_fan_out_map(geo)
                .into_iter()
                .map(|v| (v * geo.out_channels) as u64)
                .collect();
            plane.repeat(geo.in_channels)
        }
    }
}

/// `Σ_l Σ_j f_out(j,l)·c_j^l` over every layer that feeds another layer,
/// summed over the batch. `counts[l]` belongs to layer `l`.
pub fn synops_from_counts(net: &TandemNetwork, counts: &[&SpikeCount]) -> Result<u64> {
    let layers = net.layers();
    if counts.len() + 1 < layers.len() {
        return Err(TandemError::State(format!(
            "{} spike counts for {} feeding layers",
            counts.len(),
            layers.len() - 1
        )));
    }
    let mut total = 0u64;
    for (l, c) in counts.iter().take(layers.len() - 1).enumerate() {
        let fo = fan_out(&layers[l + 1].conn);
        if c.neurons() != fo.len() {
            return shape_err(format!(
                "layer {l} has {} neurons, fan-out map {}",
                c.neurons(),
                fo.len()
            ));
        }
        for sample in c.counts().chunks(c.neurons()) {
            total += sample.iter().zip(&fo).map(|(&n, &f)| n as u64 * f).sum::<u64>();
        }
    }
    Ok(total)
}

/// Synaptic operations of a recorded tandem pass.
pub fn synops_snn(trace: &crate::net::ForwardTrace, net: &TandemNetwork) -> Result<u64> {
    let counts = trace
        .layers
        .iter()
        .take(net.layers().len() - 1)
        .map(|l| {
            l.counts
                .as_ref()
                .ok_or_else(|| TandemError::State("trace has no spike counts".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    synops_from_counts(net, &counts)
}

/// `Σ_l f_in^l · N^l` for one input presentation.
pub fn synops_ann(net: &TandemNetwork) -> u64 {
    net.layers()
        .iter()
        .map(|l| match l.conn {
            Connectivity::Dense { n_in, n_out } => (n_in * n_out) as u64,
            Connectivity::Conv(g) => (g.in_channels * g.kh * g.kw * g.out_size()) as u64,
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynOpsReport {
    pub samples: usize,
    /// Mean spiking operations per sample.
    pub snn_total: f64,
    /// Analog operations per sample.
    pub ann_total: u64,
    pub ratio: f64,
    /// Spikes per neuron per step, for each spiking layer.
    pub per_layer: Vec<f64>,
}

/// Runs the spiking network on `batch` and meters it. Batch norm must be folded.
pub fn synops_report(net: &TandemNetwork, batch: &EncodedBatch) -> Result<SynOpsReport> {
    let run = simulate_snn(net, batch)?;
    let counts: Vec<&SpikeCount> = run.layers.iter().map(|(_, c)| c).collect();
    let total = synops_from_counts(net, &counts)?;
    let samples = batch.batch();
    let snn_total = total as f64 / samples as f64;
    let ann_total = synops_ann(net);
    let per_layer = counts
        .iter()
        .map(|c| {
            let s: u64 = c.counts().iter().map(|&v| v as u64).sum();
            s as f64 / (c.batch() * c.neurons() * c.window()) as f64
        })
        .collect();
    Ok(SynOpsReport {
        samples,
        snn_total,
        ann_total,
        ratio: snn_total / ann_total as f64,
        per_layer,
    })
}

fn per_sample_abs_diff(c: &[f64], a: &[f64], batch: usize) -> Vec<f64> {
    let n = c.len() / batch;
    c.chunks(n)
        .zip(a.chunks(n))
        .map(|(cs, as_)| cs.iter().zip(as_).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
        .collect()
}

/// Mean `|c_snn − a_ann|` per spiking layer and sample, `[layer][sample]`,
/// where the spiking network runs its own cascade and the analog network
/// chains its own activations. Batch norm must be folded.
pub fn layer_mismatch_per_sample(net: &TandemNetwork, batch: &EncodedBatch) -> Result<Vec<Vec<f64>>> {
    let run = simulate_snn(net, batch)?;
    let analog = analog_cascade(net, batch)?;
    let n = batch.batch();
    let spiking = match net.decode() {
        DecodeMode::Membrane => net.layers().len() - 1,
        DecodeMode::SpikeCount => net.layers().len(),
    };
    let snn_values: Vec<Vec<f64>> = if run.layers.is_empty() {
        // analog stub: its "counts" are the analog activations themselves
        run.hidden
            .iter()
            .cloned()
            .chain(std::iter::once(run.output.data().to_vec()))
            .collect()
    } else {
        run.layers.iter().map(|(_, c)| c.to_f64()).collect()
    };
    Ok((0..spiking)
        .map(|l| per_sample_abs_diff(&snn_values[l], &analog[l], n))
        .collect())
}

/// Per-layer mean of [`layer_mismatch_per_sample`].
pub fn layer_mismatch(net: &TandemNetwork, batch: &EncodedBatch) -> Result<Vec<f64>> {
    Ok(layer_mismatch_per_sample(net, batch)?
        .into_iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect())
}

/// Angle between two vectors, in degrees.
pub fn cosine_angle(c: &[f64], a: &[f64]) -> Result<f64> {
    if c.len() != a.len() {
        return shape_err(format!("vectors of length {} and {}", c.len(), a.len()));
    }
    let (mut ca, mut cc, mut aa) = (0.0, 0.0, 0.0);
    for (x, y) in c.iter().zip(a) {
        ca += x * y;
        cc += x * x;
        aa += y * y;
    }
    if cc == 0.0 || aa == 0.0 {
        return Err(TandemError::Numeric("angle undefined for a zero vector".into()));
    }
    Ok((ca / (cc.sqrt() * aa.sqrt()))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees())
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return shape_err(format!("vectors of length {} and {}", x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(TandemError::Numeric(
            "correlation undefined for a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of `c·W` and `a·W`, the next layer's drives.
pub fn pearson_dot(cw: &[f64], aw: &[f64]) -> Result<f64> {
    pearson(cw, aw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// `(layer, sample, degrees)` between spike counts and analog predictions.
    pub angles: Vec<(usize, usize, f64)>,
    /// `(layer, sample, r)` between `c·W` and `a·W` of the following layer.
    pub pccs: Vec<(usize, usize, f64)>,
    /// Vectors skipped because the angle or correlation was undefined.
    pub skipped: usize,
}

impl FidelityReport {
    pub fn mean_angle(&self) -> f64 {
        self.angles.iter().map(|a| a.2).sum::<f64>() / self.angles.len().max(1) as f64
    }

    pub fn median_pcc(&self) -> f64 {
        let mut v: Vec<f64> = self.pccs.iter().map(|p| p.2).collect();
        median(&mut v)
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Compares, per hidden layer and sample, the spike counts `c^l` with the
/// coupled analog predictions `a^l` of a tandem pass.
pub fn fidelity(net: &TandemNetwork, batch: &EncodedBatch) -> Result<FidelityReport> {
    let trace = forward_tandem_eval(net, batch)?;
    let n = batch.batch();
    let mut report = FidelityReport {
        angles: Vec::new(),
        pccs: Vec::new(),
        skipped: 0,
    };
    for l in 0..net.layers().len() - 1 {
        let lt = &trace.layers[l];
        let next = &net.layers()[l + 1];
        let (w, _) = next.effective_params(net.window());
        let width = lt.forwarded.len() / n;
        for s in 0..n {
            let c = &lt.forwarded[s * width..(s + 1) * width];
            let a = &lt.activation[s * width..(s + 1) * width];
            match cosine_angle(c, a) {
                Ok(deg) => report.angles.push((l, s, deg)),
                Err(_) => report.skipped += 1,
            }
            let mut cw = vec![0.0; next.conn.out_size()];
            let mut aw = vec![0.0; next.conn.out_size()];
            next.conn.project_acc(&w, c, &mut cw, 1);
            next.conn.project_acc(&w, a, &mut aw, 1);
            match pearson_dot(&cw, &aw) {
                Ok(r) => report.pccs.push((l, s, r)),
                Err(_) => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return shape_err(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean over batch and pixels of the squared error.
pub fn mse(recon: &[f64], target: &[f64]) -> Result<f64> {
    if recon.len() != target.len() {
        return shape_err(format!(
            "{} reconstructed values for {} targets",
            recon.len(),
            target.len()
        ));
    }
    if recon.is_empty() {
        return Ok(0.0);
    }
    Ok(recon
        .iter()
        .zip(target)
        .map(|(r, t)| (r - t) * (r - t))
        .sum::<f64>()
        / recon.len() as f64)
}

/// One `epoch,split,metric,value` CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub const METRIC_HEADER: &str = "epoch,split,metric,value";

impl MetricRow {
    pub fn new(epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.split, r.metric, r.value);
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRIC_HEADER) {
        return Err(TandemError::Data("metrics CSV lacks its header row".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || TandemError::Data(format!("malformed metrics row '{l}'"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(MetricRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: f[1].to_string(),
                metric: f[2].to_string(),
                value: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Writes a CSV file with `header` and rows of already-formatted cells.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| TandemError::io(path, e))?;
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    f.write_all(s.as_bytes()).map_err(|e| TandemError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, InputShape};
    use crate::neuron::{NeuronKind, NeuronParams};
    use crate::tensor::ConvShape;

    #[test]
    fn synops_dense_enumeration() {
        let a = Architecture::parse("fc:2-3-4").unwrap();
        let net = TandemNetwork::from_arch(
            &a,
            InputShape::flat(2),
            NeuronParams::standard(NeuronKind::If),
            4,
            DecodeMode::Membrane,
            false,
        )
        .unwrap();
        let c = SpikeCount::new(4, 1, 3, vec![2, 0, 3]).unwrap();
        assert_eq!(synops_from_counts(&net, &[&c]).unwrap(), 5 * 4);
        let z = SpikeCount::new(4, 1, 3, vec![0, 0, 0]).unwrap();
        assert_eq!(synops_from_counts(&net, &[&z]).unwrap(), 0);
    }

    #[test]
    fn synops_ann_arithmetic() {
        let a = Architecture::parse("fc:784-300-10").unwrap();
        let net = TandemNetwork::from_arch(
            &a,
            InputShape::flat(784),
            NeuronParams::standard(NeuronKind::If),
            8,
            DecodeMode::Membrane,
            false,
        )
        .unwrap();
        assert_eq!(synops_ann(&net), 238_200);
    }

    #[test]
    fn conv_fan_out_counts_filters_and_borders() {
        let geo = ConvShape {
            in_channels: 1,
            in_h: 5,
            in_w: 5,
            out_channels: 2,
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 1,
        };
        let fo = fan_out(&Connectivity::Conv(geo));
        assert_eq!(fo[2 * 5 + 2], 18);
        assert_eq!(fo[0], 8);
    }

    #[test]
    fn angle_and_pcc_cases() {
        let x = [1.0, 2.0, 3.0];
        let y = [-1.0, -2.0, -3.0];
        assert!(cosine_angle(&x, &x).unwrap().abs() < 1e-6);
        assert!((cosine_angle(&x, &y).unwrap() - 180.0).abs() < 1e-6);
        assert!((cosine_angle(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 45.0).abs() < 1e-12);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_angle(&[0.0, 0.0], &x[..2]).is_err());
        assert!(pearson(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn accuracy_mse_and_csv() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert_eq!(mse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let rows = vec![
            MetricRow::new(1, "test", "accuracy", 0.975),
            MetricRow::new(1, "train", "loss", 0.1),
        ];
        assert_eq!(parse_metrics_csv(&metrics_csv(&rows)).unwrap(), rows);
    }
}
