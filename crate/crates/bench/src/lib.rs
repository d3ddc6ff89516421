//! Shared fixtures for the benchmarks in `benches/`.

use uqaudit_core::{GaussianPrior, Image, Kernel, ObservationModel, SeedPath, Shape};

/// A smooth test image of side `size`.
pub fn test_image(size: usize) -> Image {
    GaussianPrior::smooth(Shape::new(size, size), 0.5, 0.05)
        .expect("valid prior")
        .draw(&mut SeedPath::new(7).rng())
}

pub fn blur_model(kernel_size: usize, sigma: f64) -> ObservationModel {
    ObservationModel::new(Kernel::uniform(kernel_size).expect("odd size"), sigma).expect("valid model")
}
