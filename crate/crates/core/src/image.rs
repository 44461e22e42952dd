//! Dense image and binary mask containers.

use crate::error::{OsrError, Result};

/// An `H x W x C` image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(OsrError::Shape(format!(
                "expected {}x{}x{} = {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// All channel values of the pixel at flat index `p = row * W + col`.
    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn require_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(OsrError::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A binary `H x W` mask. Construction rejects values other than 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Mask { height, width, bits: vec![0; height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, bits: vec![1; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(OsrError::Shape(format!(
                "mask expects {} entries, got {}",
                height * width,
                bits.len()
            )));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(OsrError::Validation(format!("mask entry {bad} is not binary")));
        }
        Ok(Mask { height, width, bits })
    }

    /// Build from real values; anything other than exactly 0.0 or 1.0 is rejected.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(OsrError::Validation(format!("mask value {v} is not binary")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Mask::from_vec(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, p: usize) -> bool {
        self.bits[p] == 1
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub(crate) fn require_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height == height && self.width == width {
            Ok(())
        } else {
            Err(OsrError::Shape(format!(
                "{what}: mask is {}x{}, expected {}x{}",
                self.height, self.width, height, width
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rejects_non_binary() {
        assert!(matches!(Mask::from_vec(1, 2, vec![0, 2]), Err(OsrError::Validation(_))));
        assert!(matches!(Mask::from_values(1, 2, &[0.0, 0.5]), Err(OsrError::Validation(_))));
        assert_eq!(Mask::from_values(1, 2, &[1.0, 0.0]).unwrap().count_ones(), 1);
    }

    #[test]
    fn image_shape_checked() {
        assert!(Image::from_vec(2, 2, 3, vec![0.0; 11]).is_err());
        let img = Image::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.get(1, 0, 0), 3.0);
    }
}
