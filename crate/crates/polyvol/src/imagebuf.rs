//! Simple planar RGB image buffer in [0, 1] plus scalar maps for depth and
//! alpha outputs.

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};

/// Interleaved RGB buffer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> ImageBuf<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: Vec3<T>) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px[0] = rgb.x;
            px[1] = rgb.y;
            px[2] = rgb.z;
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3<T> {
        let i = (y * self.width + x) * 3;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: Vec3<T>) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb.x;
        self.data[i + 1] = rgb.y;
        self.data[i + 2] = rgb.z;
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Largest absolute per-channel difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn convert<U: Real>(&self) -> ImageBuf<U> {
        ImageBuf {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }
}

/// Row-major scalar map (depth or alpha).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> ScalarMap<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }
}
