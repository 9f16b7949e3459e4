//! Network boundary: constant-current input encoding and output decoding.
//!
//! A real-valued frame `x` is injected unchanged as the input current of the
//! first spiking layer at every step. The first analog layer receives `x·T`,
//! which is what that current sums to over the window, so its drive
//! `Σ w·x·T + b·T` is on the same count scale as every later layer.

use crate::error::{ensure_finite, shape_err, Result, TandemError};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    currents: DenseTensor,
    equivalent_counts: DenseTensor,
    window: usize,
}

impl EncodedBatch {
    /// Per-step input currents, `[batch × features]`.
    pub fn currents(&self) -> &DenseTensor {
        &self.currents
    }

    /// Count-scale input of the first analog layer, `currents · T`.
    pub fn equivalent_counts(&self) -> &DenseTensor {
        &self.equivalent_counts
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn batch(&self) -> usize {
        self.currents.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.currents.shape()[1]
    }
}

/// Encodes `[batch × features]` (or `[batch × …]`, flattened per sample).
pub fn encode_constant_current(raw: &DenseTensor, window: usize) -> Result<EncodedBatch> {
    if window == 0 {
        return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
    }
    if raw.rank() < 2 || raw.shape()[0] == 0 {
        return shape_err(format!("expected a batch of frames, got {:?}", raw.shape()));
    }
    ensure_finite(raw.data(), "raw input").map_err(|e| TandemError::Data(e.to_string()))?;
    let batch = raw.shape()[0];
    let features = raw.len() / batch;
    let currents = DenseTensor::new(vec![batch, features], raw.data().to_vec())?;
    let t = window as f64;
    let equivalent_counts = currents.map(|v| v * t)?;
    Ok(EncodedBatch {
        currents,
        equivalent_counts,
        window,
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeKind {
    /// Class scores from the free aggregate membrane potential.
    Membrane,
    /// Class scores from output spike counts.
    SpikeCount,
    /// Membrane potential returned unchanged as a regression output.
    Regression,
}

impl std::str::FromStr for DecodeKind {
    type Err = TandemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "membrane" => Ok(DecodeKind::Membrane),
            "count" | "spike_count" => Ok(DecodeKind::SpikeCount),
            "regression" => Ok(DecodeKind::Regression),
            other => Err(TandemError::Parameter(format!("unknown decode mode '{other}'"))),
        }
    }
}

/// Decoded network outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Classes(Vec<usize>),
    Values(DenseTensor),
}

/// Turns `[batch × outputs]` into predicted classes or regression values.
/// Never modifies `outputs`.
pub fn decode(outputs: &DenseTensor, mode: DecodeKind) -> Result<Decoded> {
    if outputs.rank() != 2 {
        return shape_err(format!("outputs must be [batch × n], got {:?}", outputs.shape()));
    }
    match mode {
        DecodeKind::Regression => Ok(Decoded::Values(outputs.clone())),
        DecodeKind::SpikeCount if outputs.data().iter().any(|v| *v < 0.0 || v.fract() != 0.0) => Err(
            TandemError::Data("spike-count scores must be non-negative integers".into()),
        ),
        DecodeKind::Membrane | DecodeKind::SpikeCount => {
            let n = outputs.shape()[1];
            Ok(Decoded::Classes(outputs.data().chunks(n).map(argmax).collect()))
        }
    }
}
