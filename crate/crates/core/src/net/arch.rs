//! Architecture strings.
//!
//! ```text
//! fc:784-300-10                          input width, then dense layer widths
//! conv:C3x3s1x32,C3x3s2x64,fc-256,fc-10  C{kh}x{kw}s{stride}x{filters}, fc-{width}
//! ```
//!
//! Convolutions use "same"-style zero padding of `(k − 1) / 2`.

use std::fmt;

use crate::error::{Result, TandemError};
use crate::synapse::Connectivity;
use crate::tensor::ConvShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn flat(features: usize) -> Self {
        Self::new(1, 1, features)
    }

    pub fn features(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense(usize),
    Conv {
        kh: usize,
        kw: usize,
        stride: usize,
        filters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    source: String,
    input_features: Option<usize>,
    layers: Vec<LayerSpec>,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn bad(s: &str, why: &str) -> TandemError {
    TandemError::Config(format!("malformed arch '{s}': {why}"))
}

fn positive(tok: &str, s: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(bad(s, &format!("'{tok}' is not a positive integer"))),
    }
}

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| bad(s, "missing 'fc:' or 'conv:' prefix"))?;
        match kind {
            "fc" => {
                let sizes = body
                    .split('-')
                    .map(|t| positive(t.trim(), s))
                    .collect::<Result<Vec<_>>>()?;
                if sizes.len() < 2 {
                    return Err(bad(s, "need an input width and at least one layer"));
                }
                Ok(Self {
                    source: s.to_string(),
                    input_features: Some(sizes[0]),
                    layers: sizes[1..].iter().map(|&n| LayerSpec::Dense(n)).collect(),
                })
            }
            "conv" => {
                let layers = body
                    .split(',')
                    .map(|tok| Self::parse_token(tok.trim(), s))
                    .collect::<Result<Vec<_>>>()?;
                if layers.is_empty() {
                    return Err(bad(s, "no layers"));
                }
                let mut seen_dense = false;
                for l in &layers {
                    match l {
                        LayerSpec::Dense(_) => seen_dense = true,
                        LayerSpec::Conv { .. } if seen_dense => {
                            return Err(bad(s, "convolution after a dense layer"))
                        }
                        LayerSpec::Conv { .. } => {}
                    }
                }
                Ok(Self {
                    source: s.to_string(),
                    input_features: None,
                    layers,
                })
            }
            other => Err(bad(s, &format!("unknown family '{other}'"))),
        }
    }

    fn parse_token(tok: &str, s: &str) -> Result<LayerSpec> {
        if let Some(n) = tok.strip_prefix("fc-") {
            return Ok(LayerSpec::Dense(positive(n, s)?));
        }
        let rest = tok
            .strip_prefix('C')
            .ok_or_else(|| bad(s, &format!("token '{tok}' is neither C..x.. nor fc-N")))?;
        let (kernel, tail) = rest
            .split_once('s')
            .ok_or_else(|| bad(s, &format!("token '{tok}' lacks a stride")))?;
        let (kh, kw) = kernel
            .split_once('x')
            .ok_or_else(|| bad(s, &format!("token '{tok}' lacks kernel width")))?;
        let (stride, filters) = tail
            .split_once('x')
            .ok_or_else(|| bad(s, &format!("token '{tok}' lacks a filter count")))?;
        Ok(LayerSpec::Conv {
            kh: positive(kh, s)?,
            kw: positive(kw, s)?,
            stride: positive(stride, s)?,
            filters: positive(filters, s)?,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input width declared by an `fc:` string.
    pub fn input_features(&self) -> Option<usize> {
        self.input_features
    }

    pub fn output_size(&self) -> Option<usize> {
        match self.layers.last()? {
            LayerSpec::Dense(n) => Some(*n),
            LayerSpec::Conv { .. } => None,
        }
    }

    /// Resolves layer geometry for a concrete input.
    pub fn connectivity(&self, input: InputShape) -> Result<Vec<Connectivity>> {
        if let Some(n) = self.input_features {
            if n != input.features() {
                return Err(TandemError::Config(format!(
                    "arch '{}' expects {n} inputs, data has {}",
                    self.source,
                    input.features()
                )));
            }
        }
        let (mut c, mut h, mut w) = (input.channels, input.height, input.width);
        let mut flat: Option<usize> = None;
        let mut out = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            match *spec {
                LayerSpec::Conv {
                    kh,
                    kw,
                    stride,
                    filters,
                } => {
                    let pad = (kh.max(kw) - 1) / 2;
                    let geo = ConvShape {
                        in_channels: c,
                        in_h: h,
                        in_w: w,
                        out_channels: filters,
                        kh,
                        kw,
                        stride,
                        padding: pad,
                    };
                    geo.validate()
                        .map_err(|e| TandemError::Config(format!("arch '{}': {e}", self.source)))?;
                    (c, h, w) = (filters, geo.out_h(), geo.out_w());
                    out.push(Connectivity::Conv(geo));
                }
                LayerSpec::Dense(n) => {
                    let n_in = flat.unwrap_or(c * h * w);
                    out.push(Connectivity::Dense { n_in, n_out: n });
                    flat = Some(n);
                }
            }
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense(_))) {
            return Err(TandemError::Config(format!(
                "arch '{}' must end with a dense output layer",
                self.source
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fc() {
        let a = Architecture::parse("fc:784-300-10").unwrap();
        assert_eq!(a.input_features(), Some(784));
        assert_eq!(a.layers(), &[LayerSpec::Dense(300), LayerSpec::Dense(10)]);
        let c = a.connectivity(InputShape::new(1, 28, 28)).unwrap();
        assert_eq!(
            c[0],
            Connectivity::Dense {
                n_in: 784,
                n_out: 300
            }
        );
    }

    #[test]
    fn parses_conv() {
        let a = Architecture::parse("conv:C3x3s1x32,C3x3s2x64,fc-256,fc-10").unwrap();
        let c = a.connectivity(InputShape::new(1, 28, 28)).unwrap();
        assert_eq!(c.len(), 4);
        let Connectivity::Conv(g) = c[1] else { panic!() };
        assert_eq!((g.in_channels, g.out_h(), g.out_w()), (32, 14, 14));
        assert_eq!(
            c[2],
            Connectivity::Dense {
                n_in: 64 * 14 * 14,
                n_out: 256
            }
        );
    }

    #[test]
    fn rejects_malformed() {
        for s in [
            "",
            "fc:",
            "fc:784",
            "fc:784-0-10",
            "fc:784-x-10",
            "mlp:784-10",
            "conv:C3x3x32",
            "conv:fc-10,C3x3s1x8",
            "conv:C3x3s1x8",
            "conv:K3x3s1x8,fc-10",
        ] {
            let parsed = Architecture::parse(s);
            let resolved = parsed
                .as_ref()
                .ok()
                .map(|a| a.connectivity(InputShape::new(1, 28, 28)));
            assert!(
                parsed.is_err() || resolved.is_some_and(|r| r.is_err()),
                "accepted '{s}'"
            );
        }
        let a = Architecture::parse("fc:100-10").unwrap();
        assert!(a.connectivity(InputShape::new(1, 28, 28)).is_err());
    }
}
