//! IDX image and label files.

use std::fs;
use std::path::Path;

use crate::error::{Result, TandemError};
use crate::tensor::DenseTensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

fn data_err(what: &str, msg: impl std::fmt::Display) -> TandemError {
    TandemError::Data(format!("{what}: {msg}"))
}

impl IdxFile {
    pub fn parse(bytes: &[u8], what: &str) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(data_err(what, "truncated header"));
        }
        let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        let rank = match magic {
            IMAGE_MAGIC => 3,
            LABEL_MAGIC => 1,
            m => return Err(data_err(what, format!("bad magic 0x{m:08x}"))),
        };
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(data_err(what, "truncated header"));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| data_err(what, "dimension product overflows"))?;
        let payload = &bytes[header..];
        if payload.len() != expected {
            return Err(data_err(
                what,
                format!("payload has {} bytes, header promises {expected}", payload.len()),
            ));
        }
        Ok(Self {
            magic,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TandemError::io(path, e))?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| TandemError::io(path, e))
    }

    pub fn images(count: usize, height: usize, width: usize, pixels: Vec<u8>) -> Self {
        Self {
            magic: IMAGE_MAGIC,
            dims: vec![count, height, width],
            payload: pixels,
        }
    }

    pub fn labels(labels: Vec<u8>) -> Self {
        Self {
            magic: LABEL_MAGIC,
            dims: vec![labels.len()],
            payload: labels,
        }
    }
}

/// Images scaled to `[0,1]` as `[N×H×W]`, plus labels.
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<(DenseTensor, Vec<u8>)> {
    let images = IdxFile::read(path_images)?;
    let labels = IdxFile::read(path_labels)?;
    if images.magic != IMAGE_MAGIC {
        return Err(data_err(&path_images.display().to_string(), "not an image file"));
    }
    if labels.magic != LABEL_MAGIC {
        return Err(data_err(&path_labels.display().to_string(), "not a label file"));
    }
    if images.dims[0] != labels.dims[0] {
        return Err(TandemError::Data(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    let pixels = images.payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((DenseTensor::new(images.dims.clone(), pixels)?, labels.payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = (0..8).map(|i| [0u8, 255, 17, 128][i % 4]).collect();
        IdxFile::images(2, 2, 2, pixels.clone()).write(&ip).unwrap();
        IdxFile::labels(vec![3, 9]).write(&lp).unwrap();
        assert_eq!(IdxFile::read(&ip).unwrap().payload, pixels);
        let (img, lab) = load_idx(&ip, &lp).unwrap();
        assert_eq!(img.shape(), &[2, 2, 2]);
        assert_eq!(img.data()[0], 0.0);
        assert_eq!(img.data()[1], 1.0);
        assert_eq!(lab, vec![3, 9]);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        IdxFile::images(2, 1, 1, vec![0, 0]).write(&ip).unwrap();
        IdxFile::labels(vec![1]).write(&lp).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(TandemError::Data(_))));
    }

    #[test]
    fn header_errors() {
        let good = IdxFile::labels(vec![1, 2, 3]).to_bytes();
        assert!(IdxFile::parse(&good, "x").is_ok());
        assert!(IdxFile::parse(&good[..good.len() - 1], "x").is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(IdxFile::parse(&extra, "x").is_err());
        let mut bad = good.clone();
        bad[3] = 0x02;
        assert!(IdxFile::parse(&bad, "x").is_err());
        assert!(IdxFile::parse(&good[..6], "x").is_err());
    }
}
