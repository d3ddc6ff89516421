use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A grayscale image stored row-major, intensities nominally in `[0, 1]`.
///
/// Constructors reject non-finite pixels. The mutable accessors leave that
/// responsibility with the caller; samplers re-check finiteness on every
/// iterate.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    shape: Shape,
    pixels: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("shape", &self.shape)
            .field("mean", &self.mean())
            .finish()
    }
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image sides must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", height * width),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("pixel {i} is not finite")));
        }
        Ok(Self {
            shape: Shape::new(height, width),
            pixels,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::constant(shape, 0.0)
    }

    pub fn constant(shape: Shape, value: f64) -> Self {
        assert!(!shape.is_empty(), "empty image shape");
        Self {
            shape,
            pixels: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(!shape.is_empty(), "empty image shape");
        let mut pixels = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                pixels.push(f(r, c));
            }
        }
        Self { shape, pixels }
    }

    /// Wrap a buffer produced by internal arithmetic; panics on length mismatch.
    pub(crate) fn from_vec(shape: Shape, pixels: Vec<f64>) -> Self {
        assert_eq!(shape.len(), pixels.len());
        Self { shape, pixels }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.shape.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.shape.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pixels
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.pixels
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.to_string(),
                actual: self.shape.to_string(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_vec(self.shape, self.pixels.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert_eq!(self.shape, other.shape, "image shapes differ");
        Image::from_vec(
            self.shape,
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &Image) {
        assert_eq!(self.shape, other.shape, "image shapes differ");
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += factor * b;
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert_eq!(self.shape, other.shape, "image shapes differ");
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &Image) -> f64 {
        assert_eq!(self.shape, other.shape, "image shapes differ");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.shape, other.shape, "image shapes differ");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Empirical per-pixel variance (population normalisation).
    pub fn variance(&self) -> f64 {
        let first = self.pixels[0];
        if self.pixels.iter().all(|&v| v == first) {
            return 0.0;
        }
        let mean = self.mean();
        self.pixels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.len() as f64
    }
}
