//! Convex ridge regulariser: `φ(x) = λ Σ_i Σ_p ψ_i((w_i * x)_p)` with convex
//! piece-wise quadratic activations `ψ_i`.
//!
//! Each activation is stored through its derivative sampled on a uniform
//! knot grid. `ψ′` is the linear interpolant of those samples (extended
//! linearly past the end knots) and `ψ` its exact integral with `ψ(0) = 0`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::{Image, Shape};
use crate::kernel::{convolve_direct, correlate_direct, Kernel};

const MAGIC: &[u8; 4] = b"CRR1";
const MAX_FILTERS: u32 = 4096;
const MAX_FILTER_TAPS: u64 = 4096;
const MAX_KNOTS: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    origin: f64,
    spacing: f64,
    derivs: Vec<f64>,
    cumulative: Vec<f64>,
    offset: f64,
}

impl Activation {
    pub fn new(origin: f64, spacing: f64, derivs: Vec<f64>) -> Result<Self> {
        if derivs.len() < 2 {
            return Err(Error::InvalidModel("activation needs at least two knots".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) || !origin.is_finite() {
            return Err(Error::InvalidModel(format!(
                "bad knot grid: origin {origin}, spacing {spacing}"
            )));
        }
        if derivs.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidModel("non-finite activation derivative".into()));
        }
        if let Some(j) = derivs.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidModel(format!(
                "activation derivative decreases between knots {j} and {} (not convex)",
                j + 1
            )));
        }
        let mut cumulative = Vec::with_capacity(derivs.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in derivs.windows(2) {
            acc += 0.5 * spacing * (w[0] + w[1]);
            cumulative.push(acc);
        }
        let mut act = Self {
            origin,
            spacing,
            derivs,
            cumulative,
            offset: 0.0,
        };
        act.offset = act.antiderivative(0.0);
        Ok(act)
    }

    /// `ψ′(t) = t` exactly, so `ψ(t) = t²/2`.
    pub fn quadratic() -> Self {
        Self::new(-1.0, 1.0, vec![-1.0, 0.0, 1.0]).expect("valid quadratic activation")
    }

    /// Huber-like: `ψ′(t) = clamp(t/width, -1, 1)`.
    pub fn huber(width: f64, knots: usize, extent: f64) -> Result<Self> {
        let knots = knots.max(2);
        let spacing = 2.0 * extent / (knots - 1) as f64;
        let derivs = (0..knots)
            .map(|j| (-extent + j as f64 * spacing) / width)
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        Self::new(-extent, spacing, derivs)
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t - self.origin) / self.spacing;
        let j = (s.floor().max(0.0) as usize).min(self.derivs.len() - 2);
        (j, s - j as f64)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let (j, frac) = self.locate(t);
        self.derivs[j] + frac * (self.derivs[j + 1] - self.derivs[j])
    }

    fn antiderivative(&self, t: f64) -> f64 {
        let (j, frac) = self.locate(t);
        let slope = self.derivs[j + 1] - self.derivs[j];
        self.cumulative[j] + self.spacing * (self.derivs[j] * frac + 0.5 * slope * frac * frac)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.antiderivative(t) - self.offset
    }

    /// Lipschitz constant of `ψ′` (largest segment slope).
    pub fn lipschitz(&self) -> f64 {
        self.derivs
            .windows(2)
            .map(|w| (w[1] - w[0]) / self.spacing)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrrModel {
    filters: Vec<Kernel>,
    activations: Vec<Activation>,
    lambda: f64,
}

impl CrrModel {
    pub fn new(filters: Vec<Kernel>, activations: Vec<Activation>, lambda: f64) -> Result<Self> {
        if filters.is_empty() {
            return Err(Error::InvalidModel("model needs at least one filter".into()));
        }
        if filters.len() != activations.len() {
            return Err(Error::InvalidModel(format!(
                "{} filters but {} activations",
                filters.len(),
                activations.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidModel(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            filters,
            activations,
            lambda,
        })
    }

    /// Eight 3×3 difference filters with Huber-like activations; used when no
    /// weight file is supplied.
    pub fn builtin(lambda: f64) -> Result<Self> {
        #[rustfmt::skip]
        let stencils: [[f64; 9]; 8] = [
            [0., 0., 0.,  0., -1., 1.,  0., 0., 0.],
            [0., 0., 0.,  0., -1., 0.,  0., 1., 0.],
            [0., 0., 0.,  0., -1., 0.,  0., 0., 1.],
            [0., 0., 0.,  0., -1., 0.,  1., 0., 0.],
            [0., 0., 0.,  0.5, -1., 0.5,  0., 0., 0.],
            [0., 0.5, 0.,  0., -1., 0.,  0., 0.5, 0.],
            [0.25, 0., -0.25,  0., 0., 0.,  -0.25, 0., 0.25],
            [0., 0.25, 0.,  0.25, -1., 0.25,  0., 0.25, 0.],
        ];
        let filters = stencils
            .iter()
            .map(|s| Kernel::new(3, 3, s.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let act = Activation::huber(0.05, 51, 0.25)?;
        Self::new(filters, vec![act; 8], lambda)
    }

    /// Single identity filter with `ψ(t) = t²/2`: `φ(x) = λ‖x‖²/2`.
    pub fn gaussian(lambda: f64) -> Result<Self> {
        Self::new(vec![Kernel::identity()], vec![Activation::quadratic()], lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.filters.clone(), self.activations.clone(), lambda)
    }

    pub fn filters(&self) -> &[Kernel] {
        &self.filters
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn potential(&self, x: &Image) -> f64 {
        let total: f64 = self
            .filters
            .iter()
            .zip(&self.activations)
            .map(|(f, act)| {
                convolve_direct(x, f)
                    .as_slice()
                    .iter()
                    .map(|&t| act.value(t))
                    .sum::<f64>()
            })
            .sum();
        self.lambda * total
    }

    /// `λ Σ_i W_iᵀ ψ_i′(W_i x)`.
    pub fn gradient(&self, x: &Image) -> Image {
        let mut out = Image::zeros(x.shape());
        for (f, act) in self.filters.iter().zip(&self.activations) {
            let response = convolve_direct(x, f).map(|t| act.derivative(t));
            out.axpy(self.lambda, &correlate_direct(&response, f));
        }
        out
    }

    /// Upper bound on the gradient's Lipschitz constant on `shape`:
    /// `λ · max_k Σ_i Lip(ψ_i′)·|ŵ_i(k)|²`.
    pub fn lipschitz(&self, shape: Shape) -> f64 {
        let fft = Fft2d::new(shape);
        let mut per_mode = vec![0.0; shape.len()];
        for (f, act) in self.filters.iter().zip(&self.activations) {
            let lip = act.lipschitz();
            for (acc, t) in per_mode.iter_mut().zip(f.transfer(&fft)) {
                *acc += lip * t.norm_sqr();
            }
        }
        self.lambda * per_mode.into_iter().fold(0.0, f64::max)
    }

    /// Decode the little-endian `CRR1` weight format. All activations share
    /// the file's knot grid.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidModel("bad magic, expected CRR1".into()));
        }
        let count = read_u32(&mut r)?;
        let fh = read_u32(&mut r)?;
        let fw = read_u32(&mut r)?;
        let knots = read_u32(&mut r)?;
        let spacing = read_f64(&mut r)?;
        let origin = read_f64(&mut r)?;
        let lambda = read_f64(&mut r)?;
        if count == 0 || count > MAX_FILTERS {
            return Err(Error::InvalidModel(format!("filter count {count} out of range")));
        }
        if fh as u64 * fw as u64 > MAX_FILTER_TAPS || fh == 0 || fw == 0 {
            return Err(Error::InvalidModel(format!("filter size {fh}x{fw} out of range")));
        }
        if !(2..=MAX_KNOTS).contains(&knots) {
            return Err(Error::InvalidModel(format!("knot count {knots} out of range")));
        }
        let taps = (fh * fw) as usize;
        let mut filters = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let w = (0..taps).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            filters.push(
                Kernel::new(fh as usize, fw as usize, w)
                    .map_err(|e| Error::InvalidModel(e.to_string()))?,
            );
        }
        let mut activations = Vec::with_capacity(count as usize);
        for i in 0..count {
            let d = (0..knots).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            activations.push(
                Activation::new(origin, spacing, d)
                    .map_err(|e| Error::InvalidModel(format!("activation {i}: {e}")))?,
            );
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::InvalidModel("trailing bytes after weights".into()));
        }
        Self::new(filters, activations, lambda)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Encode in the `CRR1` format. Requires a shared knot grid and filter size.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let f0 = &self.filters[0];
        let a0 = &self.activations[0];
        if self
            .filters
            .iter()
            .any(|f| f.height() != f0.height() || f.width() != f0.width())
            || self.activations.iter().any(|a| {
                a.origin != a0.origin || a.spacing != a0.spacing || a.derivs.len() != a0.derivs.len()
            })
        {
            return Err(Error::InvalidModel(
                "weight format needs uniform filter sizes and knot grids".into(),
            ));
        }
        w.write_all(MAGIC)?;
        for v in [
            self.filters.len() as u32,
            f0.height() as u32,
            f0.width() as u32,
            a0.derivs.len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [a0.spacing, a0.origin, self.lambda] {
            w.write_all(&v.to_le_bytes())?;
        }
        for f in &self.filters {
            for t in f.taps() {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        for a in &self.activations {
            for d in &a.derivs {
                w.write_all(&d.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
