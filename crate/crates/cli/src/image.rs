//! In-memory images: 1 or 3 channels, f64 values clamped to [0, 1],
//! channel-planar row-major layout (same as the network's `[c, h, w]`).

use memnet_core::Tensor;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Values are clamped to [0, 1] on construction.
    pub fn new(channels: usize, height: usize, width: usize, mut data: Vec<f64>) -> Result<Image> {
        if channels != 1 && channels != 3 {
            return Err(CliError::Usage(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(CliError::Usage(format!(
                "image data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Image {
        Image::new(channels, height, width, vec![v; channels * height * width]).unwrap()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn same_extents(&self, other: &Image) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    /// Constant `[c, h, w]` tensor for feeding the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
    }

    /// Clamps back into [0, 1]; the network output is unbounded.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let &[c, h, w] = t.shape() else {
            return Err(CliError::Usage(format!(
                "expected a [c, h, w] tensor, got shape {:?}",
                t.shape()
            )));
        };
        Image::new(c, h, w, t.values().to_vec())
    }
}

/// A degraded/clean training pair with an optional binary degradation mask.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub degraded: Image,
    pub clean: Image,
    pub mask: Option<Image>,
}

impl SamplePair {
    pub fn validate(&self) -> Result<()> {
        if !self.degraded.same_extents(&self.clean) {
            return Err(CliError::Usage(
                "degraded and clean images differ in extents".into(),
            ));
        }
        if let Some(mask) = &self.mask {
            if mask.height != self.clean.height || mask.width != self.clean.width {
                return Err(CliError::Usage("mask extents differ from images".into()));
            }
            if mask.values().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(CliError::Usage("mask values must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_clamps() {
        let img = Image::new(1, 1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_channel_count() {
        assert!(Image::new(2, 1, 1, vec![0.0, 0.0]).is_err());
        assert!(Image::new(3, 2, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let img = Image::new(3, 2, 2, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let back = Image::from_tensor(&img.to_tensor()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn mask_validation() {
        let clean = Image::filled(3, 2, 2, 0.5);
        let pair = SamplePair {
            degraded: clean.clone(),
            clean: clean.clone(),
            mask: Some(Image::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.3]).unwrap()),
        };
        assert!(pair.validate().is_err());
        let pair = SamplePair {
            degraded: clean.clone(),
            clean,
            mask: Some(Image::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()),
        };
        pair.validate().unwrap();
    }
}
