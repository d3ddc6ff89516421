use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::{Image, Shape};

/// Odd-sized 2-D filter anchored at its centre tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel sides must be odd, got {height}x{width}"
            )));
        }
        if taps.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} taps", height * width),
                actual: format!("{} taps", taps.len()),
            });
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("kernel taps must be finite"));
        }
        Ok(Self { height, width, taps })
    }

    /// Box blur of side `size`, weights `1/size²`.
    pub fn uniform(size: usize) -> Result<Self> {
        let w = 1.0 / (size * size) as f64;
        Self::new(size, size, vec![w; size * size])
    }

    pub fn identity() -> Self {
        Self {
            height: 1,
            width: 1,
            taps: vec![1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.taps.iter().map(|t| t.abs()).sum()
    }

    fn anchor(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Transfer coefficients of the circular convolution on `shape`.
    pub fn transfer(&self, fft: &Fft2d) -> Vec<Complex64> {
        let shape = fft.shape();
        let (ca, cb) = self.anchor();
        let mut embedded = vec![Complex64::new(0.0, 0.0); shape.len()];
        for a in 0..self.height {
            let r = (a as isize - ca as isize).rem_euclid(shape.height as isize) as usize;
            for b in 0..self.width {
                let c = (b as isize - cb as isize).rem_euclid(shape.width as isize) as usize;
                embedded[r * shape.width + c] += self.tap(a, b);
            }
        }
        fft.forward(&mut embedded);
        embedded
    }

    pub fn fits(&self, shape: Shape) -> bool {
        self.height <= shape.height && self.width <= shape.width
    }
}

/// `out[p] = Σ_{a,b} k[a,b] · x[p - (a,b) + anchor]` with periodic wrap.
///
/// Works for any kernel/image size combination; used as the spatial
/// reference and for small filters.
pub fn convolve_direct(x: &Image, k: &Kernel) -> Image {
    let shape = x.shape();
    let (h, w) = (shape.height as isize, shape.width as isize);
    let (ca, cb) = (k.height as isize / 2, k.width as isize / 2);
    Image::from_fn(shape, |r, c| {
        let mut acc = 0.0;
        for a in 0..k.height {
            let rr = (r as isize - a as isize + ca).rem_euclid(h) as usize;
            for b in 0..k.width {
                let cc = (c as isize - b as isize + cb).rem_euclid(w) as usize;
                acc += k.tap(a, b) * x.get(rr, cc);
            }
        }
        acc
    })
}

/// Adjoint of [`convolve_direct`] (circular correlation).
pub fn correlate_direct(x: &Image, k: &Kernel) -> Image {
    let shape = x.shape();
    let (h, w) = (shape.height as isize, shape.width as isize);
    let (ca, cb) = (k.height as isize / 2, k.width as isize / 2);
    Image::from_fn(shape, |r, c| {
        let mut acc = 0.0;
        for a in 0..k.height {
            let rr = (r as isize + a as isize - ca).rem_euclid(h) as usize;
            for b in 0..k.width {
                let cc = (c as isize + b as isize - cb).rem_euclid(w) as usize;
                acc += k.tap(a, b) * x.get(rr, cc);
            }
        }
        acc
    })
}

/// Circular convolution `H x`, evaluated in the Fourier domain.
pub fn convolve_circular(x: &Image, k: &Kernel) -> Result<Image> {
    if !k.fits(x.shape()) {
        return Err(Error::InvalidArgument(format!(
            "kernel {}x{} larger than image {}",
            k.height,
            k.width,
            x.shape()
        )));
    }
    let fft = Fft2d::new(x.shape());
    let transfer = k.transfer(&fft);
    Ok(fft.apply_multiplier(x, &transfer))
}
