//! TDNN checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "TDNN" version:u32 T:u32 decode:u8 exec_mode:u8 propagation:u8 0:u8 layers:u32
//! per layer:
//!   kind:u8 (0 dense, 1 conv) is_output:u8 neuron:u8 (0 IF, 1 LIF) 0:u8
//!   dense: n_in:u32 n_out:u32
//!   conv:  in_channels in_h in_w out_channels kh kw stride padding  (u32 each)
//!   theta:f64 tau_m:f64 dt:f64
//!   weights:f32[weight_len] bias:f32[channels]
//! crc32 of every preceding byte:u32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Result, TandemError};
use crate::net::{DecodeMode, ExecutionMode, TandemLayer, TandemNetwork};
use crate::neuron::{NeuronKind, NeuronParams, Propagation};
use crate::synapse::Connectivity;
use crate::tensor::{ConvShape, DenseTensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &TandemNetwork) -> Result<Vec<u8>> {
    if net.has_batchnorm() {
        return Err(TandemError::State("fold batch norm before saving".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, net.window() as u32);
    out.push(match net.decode() {
        DecodeMode::Membrane => 0,
        DecodeMode::SpikeCount => 1,
    });
    out.push(match net.mode() {
        ExecutionMode::Spiking => 0,
        ExecutionMode::AnalogStub => 1,
    });
    out.push(match net.propagation() {
        Propagation::SameStep => 0,
        Propagation::OneStepDelay => 1,
    });
    out.push(0);
    put_u32(&mut out, net.layers().len() as u32);
    for l in net.layers() {
        let kind = match l.conn {
            Connectivity::Dense { .. } => 0,
            Connectivity::Conv(_) => 1,
        };
        let neuron = match l.neuron.kind {
            NeuronKind::If => 0,
            NeuronKind::Lif => 1,
        };
        out.extend_from_slice(&[kind, l.is_output as u8, neuron, 0]);
        match l.conn {
            Connectivity::Dense { n_in, n_out } => {
                put_u32(&mut out, n_in as u32);
                put_u32(&mut out, n_out as u32);
            }
            Connectivity::Conv(g) => {
                for v in [
                    g.in_channels,
                    g.in_h,
                    g.in_w,
                    g.out_channels,
                    g.kh,
                    g.kw,
                    g.stride,
                    g.padding,
                ] {
                    put_u32(&mut out, v as u32);
                }
            }
        }
        for v in [l.neuron.theta, l.neuron.tau_m, l.neuron.dt] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in l.weights.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TandemError::Data("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| TandemError::Data("checkpoint size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn bad_tag(what: &str, v: u8) -> TandemError {
    TandemError::Data(format!("checkpoint has unknown {what} tag {v}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TandemNetwork> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(TandemError::Data("not a TDNN checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(TandemError::Crc { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TandemError::Version(version));
    }
    let window = r.usize()?;
    let decode = match r.u8()? {
        0 => DecodeMode::Membrane,
        1 => DecodeMode::SpikeCount,
        v => return Err(bad_tag("decode", v)),
    };
    let mode = match r.u8()? {
        0 => ExecutionMode::Spiking,
        1 => ExecutionMode::AnalogStub,
        v => return Err(bad_tag("execution mode", v)),
    };
    let propagation = match r.u8()? {
        0 => Propagation::SameStep,
        1 => Propagation::OneStepDelay,
        v => return Err(bad_tag("propagation", v)),
    };
    r.u8()?;
    let n_layers = r.usize()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = r.u8()?;
        let is_output = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(bad_tag("output flag", v)),
        };
        let neuron_kind = match r.u8()? {
            0 => NeuronKind::If,
            1 => NeuronKind::Lif,
            v => return Err(bad_tag("neuron", v)),
        };
        r.u8()?;
        let conn = match kind {
            0 => Connectivity::Dense {
                n_in: r.usize()?,
                n_out: r.usize()?,
            },
            1 => Connectivity::Conv(ConvShape {
                in_channels: r.usize()?,
                in_h: r.usize()?,
                in_w: r.usize()?,
                out_channels: r.usize()?,
                kh: r.usize()?,
                kw: r.usize()?,
                stride: r.usize()?,
                padding: r.usize()?,
            }),
            v => return Err(bad_tag("layer kind", v)),
        };
        conn.validate()?;
        let neuron = NeuronParams {
            kind: neuron_kind,
            theta: r.f64()?,
            tau_m: r.f64()?,
            dt: r.f64()?,
        };
        neuron.validate()?;
        let mut layer = TandemLayer::new(conn, neuron, false, is_output)?;
        layer.weights = DenseTensor::new(conn.weight_shape(), r.f32s(conn.weight_len())?)?;
        layer.bias = DenseTensor::new(vec![conn.channels()], r.f32s(conn.channels())?)?;
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(TandemError::Data("trailing bytes after checkpoint layers".into()));
    }
    let mut net = TandemNetwork::new(layers, window, decode)?;
    net.set_mode(mode);
    net.set_propagation(propagation);
    Ok(net)
}

pub fn save_checkpoint(net: &TandemNetwork, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net)?;
    fs::write(path, bytes).map_err(|e| TandemError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TandemNetwork> {
    let bytes = fs::read(path).map_err(|e| TandemError::io(path, e))?;
    decode_checkpoint(&bytes)
}
