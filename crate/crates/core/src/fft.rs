//! Two-dimensional DFT over image grids.
//!
//! Forward transforms are unnormalised; [`Fft2d::inverse`] divides by the
//! pixel count, so `inverse(forward(x)) == x`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::{Image, Shape};

#[derive(Clone)]
pub struct Fft2d {
    shape: Shape,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2d").field("shape", &self.shape).finish()
    }
}

impl Fft2d {
    pub fn new(shape: Shape) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape,
            row_fwd: planner.plan_fft_forward(shape.width),
            row_inv: planner.plan_fft_inverse(shape.width),
            col_fwd: planner.plan_fft_forward(shape.height),
            col_inv: planner.plan_fft_inverse(shape.height),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn transform(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let Shape { height, width } = self.shape;
        assert_eq!(data.len(), height * width, "buffer does not match FFT shape");
        let scratch_len = rows
            .get_inplace_scratch_len()
            .max(cols.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        if width > 1 {
            for row in data.chunks_exact_mut(width) {
                rows.process_with_scratch(row, &mut scratch);
            }
        }
        if height > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); height];
            for c in 0..width {
                for r in 0..height {
                    column[r] = data[r * width + c];
                }
                cols.process_with_scratch(&mut column, &mut scratch);
                for r in 0..height {
                    data[r * width + c] = column[r];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_fwd, &*self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_inv, &*self.col_inv);
        let norm = 1.0 / self.shape.len() as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    pub fn forward_image(&self, x: &Image) -> Vec<Complex64> {
        assert_eq!(x.shape(), self.shape, "image does not match FFT shape");
        let mut data: Vec<Complex64> = x.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    /// Inverse transform keeping the real part. Callers are responsible for
    /// passing a Hermitian-symmetric spectrum.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Image {
        self.inverse(&mut spectrum);
        Image::from_vec(self.shape, spectrum.into_iter().map(|v| v.re).collect())
    }

    /// Apply a Fourier multiplier: `F⁻¹ diag(m) F x`.
    pub fn apply_multiplier(&self, x: &Image, multiplier: &[Complex64]) -> Image {
        let mut spec = self.forward_image(x);
        for (s, m) in spec.iter_mut().zip(multiplier) {
            *s *= m;
        }
        self.inverse_real(spec)
    }

    pub fn apply_real_multiplier(&self, x: &Image, multiplier: &[f64]) -> Image {
        let mut spec = self.forward_image(x);
        for (s, m) in spec.iter_mut().zip(multiplier) {
            *s *= m;
        }
        self.inverse_real(spec)
    }
}

/// Index of the mode `-k` for the mode stored at `index`.
pub fn conjugate_index(shape: Shape, index: usize) -> usize {
    let (r, c) = (index / shape.width, index % shape.width);
    let rr = (shape.height - r) % shape.height;
    let cc = (shape.width - c) % shape.width;
    rr * shape.width + cc
}

/// Eigenvalues of the periodic 5-point Laplacian, `4 - 2cos(ω_r) - 2cos(ω_c)`.
/// Axes of length one contribute nothing.
pub fn laplacian_spectrum(shape: Shape) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.len());
    for r in 0..shape.height {
        let wr = 2.0 * PI * r as f64 / shape.height as f64;
        for c in 0..shape.width {
            let wc = 2.0 * PI * c as f64 / shape.width as f64;
            out.push((2.0 - 2.0 * wr.cos()) + (2.0 - 2.0 * wc.cos()));
        }
    }
    out
}

/// Draw `F z` for real white noise `z ~ N(0, I)`: a Hermitian spectrum with
/// `E|ẑ_k|² = n`. Scaling mode `k` by `sqrt(v_k)` and inverting yields a real
/// Gaussian field with covariance `F⁻¹ diag(v) F`.
pub fn white_noise_spectrum<R: rand::Rng + ?Sized>(fft: &Fft2d, rng: &mut R) -> Vec<Complex64> {
    let shape = fft.shape();
    let mut data: Vec<Complex64> = (0..shape.len())
        .map(|_| Complex64::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0))
        .collect();
    fft.forward(&mut data);
    data
}
