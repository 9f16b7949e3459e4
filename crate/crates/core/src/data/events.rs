//! EVST event streams.
//!
//! ```text
//! header  "EVST" width:u16 height:u16
//! record  t_us:u32 x:u16 y:u16 polarity:u16 pad:u16     (little-endian)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Result, TandemError};
use crate::tensor::DenseTensor;

pub const EVST_MAGIC: &[u8; 4] = b"EVST";
const HEADER_LEN: usize = 8;
const RECORD_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.t_us < last {
                return Err(TandemError::Data(format!("event {i} goes back in time")));
            }
            last = e.t_us;
            if e.x >= self.width || e.y >= self.height {
                return Err(TandemError::Data(format!(
                    "event {i} at ({}, {}) outside {}×{}",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.polarity > 1 {
                return Err(TandemError::Data(format!(
                    "event {i} has polarity {}",
                    e.polarity
                )));
            }
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != EVST_MAGIC {
            return Err(TandemError::Data("missing EVST header".into()));
        }
        let body = &bytes[HEADER_LEN..];
        if !body.len().is_multiple_of(RECORD_LEN) {
            return Err(TandemError::Data(format!(
                "event payload of {} bytes is not a whole number of records",
                body.len()
            )));
        }
        let u16_at = |b: &[u8], i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
        for r in body.chunks_exact(RECORD_LEN) {
            let p = u16_at(r, 8);
            if p > 1 {
                return Err(TandemError::Data(format!("polarity {p} is not 0 or 1")));
            }
            events.push(Event {
                t_us: u32::from_le_bytes(r[..4].try_into().unwrap()),
                x: u16_at(r, 4),
                y: u16_at(r, 6),
                polarity: p as u8,
            });
        }
        let stream = Self {
            width: u16_at(bytes, 4),
            height: u16_at(bytes, 6),
            events,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.events.len());
        out.extend_from_slice(EVST_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t_us.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.extend_from_slice(&(e.polarity as u16).to_le_bytes());
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TandemError::io(path, e))?;
        Self::parse(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| TandemError::io(path, e))
    }
}

/// Accumulates events into `[T × 2 × H × W]` frames of `bin_ms` each.
/// Events past the last frame are dropped.
pub fn bin_events(
    stream: &EventStream,
    bin_ms: u32,
    width: usize,
    height: usize,
    window: usize,
) -> Result<DenseTensor> {
    if bin_ms == 0 {
        return Err(TandemError::Parameter("bin width must be positive".into()));
    }
    let bin_us = bin_ms as u64 * 1000;
    let plane = width * height;
    let mut frames = vec![0.0; window * 2 * plane];
    for e in &stream.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height || e.polarity > 1 {
            return Err(TandemError::Data(format!(
                "event at ({x}, {y}) polarity {} outside {width}×{height}",
                e.polarity
            )));
        }
        let bin = (e.t_us as u64 / bin_us) as usize;
        if bin < window {
            frames[(bin * 2 + e.polarity as usize) * plane + y * width + x] += 1.0;
        }
    }
    DenseTensor::new(vec![window, 2, height, width], frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t_us: u32, x: u16, y: u16, polarity: u8) -> Event {
        Event { t_us, x, y, polarity }
    }

    #[test]
    fn bin_boundaries() {
        let s = EventStream {
            width: 2,
            height: 2,
            events: vec![ev(1000, 1, 0, 1), ev(9990, 1, 0, 1), ev(10_000, 1, 0, 1)],
        };
        let f = bin_events(&s, 10, 2, 2, 3).unwrap();
        assert_eq!(f.get(&[0, 1, 0, 1]), Some(2.0));
        assert_eq!(f.get(&[1, 1, 0, 1]), Some(1.0));
        assert_eq!(f.sum(), 3.0);
    }

    #[test]
    fn empty_and_out_of_range() {
        let mut s = EventStream {
            width: 3,
            height: 3,
            events: vec![],
        };
        assert_eq!(bin_events(&s, 10, 3, 3, 4).unwrap().sum(), 0.0);
        s.events.push(ev(0, 3, 0, 0));
        assert!(matches!(bin_events(&s, 10, 3, 3, 4), Err(TandemError::Data(_))));
    }

    #[test]
    fn file_round_trip_and_validation() {
        let s = EventStream {
            width: 34,
            height: 34,
            events: vec![ev(5, 1, 2, 0), ev(5, 33, 33, 1), ev(70_000, 0, 0, 1)],
        };
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 8 + 3 * 12);
        assert_eq!(EventStream::parse(&bytes).unwrap(), s);
        assert!(EventStream::parse(&bytes[..bytes.len() - 1]).is_err());
        let mut unsorted = s.clone();
        unsorted.events.swap(0, 2);
        assert!(EventStream::parse(&unsorted.to_bytes()).is_err());
    }
}
