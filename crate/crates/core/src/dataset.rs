//! Test sets of ground-truth images and PNG/PGM input-output.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use log::warn;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

/// Rec.709 luma weights for RGB → gray.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<Image>,
    labels: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<Image>, labels: Vec<String>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if items.len() != labels.len() {
            return Err(Error::invalid("dataset labels do not match items"));
        }
        Ok(Self { items, labels })
    }

    /// Label items `item-0000`, `item-0001`, ...
    pub fn unlabeled(items: Vec<Image>) -> Result<Self> {
        let labels = (0..items.len()).map(|i| format!("item-{i:04}")).collect();
        Self::new(items, labels)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Image] {
        &self.items
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&Image, &str) {
        (&self.items[i], &self.labels[i])
    }

    /// The shared shape of all items, or an error naming the first outlier.
    pub fn common_shape(&self) -> Result<Shape> {
        let shape = self.items[0].shape();
        for (img, label) in self.items.iter().zip(&self.labels) {
            if img.shape() != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.to_string(),
                    actual: format!("{} ({label})", img.shape()),
                });
            }
        }
        Ok(shape)
    }
}

fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "pgm" | "pnm" | "ppm")
    )
}

/// Convert a decoded image to grayscale intensities in `[0, 1]`.
pub fn to_gray(img: DynamicImage) -> Result<Image> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
        }
        other => other
            .into_rgb16()
            .pixels()
            .map(|p| {
                p.0.iter()
                    .zip(LUMA_WEIGHTS)
                    .map(|(&v, w)| w * v as f64 / 65535.0)
                    .sum()
            })
            .collect(),
    };
    Image::new(height, width, pixels)
}

pub fn load_image(path: &Path) -> Result<Image> {
    to_gray(image::open(path)?)
}

/// Load every PNG/PGM file in `dir`, sorted by file name. Unreadable files
/// are skipped with a warning.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_supported(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut items = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        match load_image(&path) {
            Ok(img) => {
                items.push(img);
                labels.push(
                    path.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
            }
            Err(err) => warn!("skipping {}: {err}", path.display()),
        }
    }
    if items.is_empty() {
        return Err(Error::invalid(format!(
            "no readable images in {}",
            dir.display()
        )));
    }
    Dataset::new(items, labels)
}

/// Write as 16-bit grayscale PNG; values are clamped to `[0, 1]`.
pub fn save_png16(img: &Image, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
        img.width() as u32,
        img.height() as u32,
        |c, r| {
            let v = img.get(r as usize, c as usize).clamp(0.0, 1.0);
            Luma([(v * 65535.0).round() as u16])
        },
    );
    buf.save(path)?;
    Ok(())
}

/// Tile images into a grid with `columns` tiles per row and a one-pixel gap.
pub fn contact_sheet(images: &[Image], columns: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("contact sheet needs at least one image"))?;
    let shape = first.shape();
    let columns = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(columns);
    let sheet_shape = Shape::new(
        rows * (shape.height + 1) - 1,
        columns * (shape.width + 1) - 1,
    );
    let mut sheet = Image::zeros(sheet_shape);
    for (i, img) in images.iter().enumerate() {
        img.check_shape(shape)?;
        let (r0, c0) = ((i / columns) * (shape.height + 1), (i % columns) * (shape.width + 1));
        for r in 0..shape.height {
            for c in 0..shape.width {
                sheet.set(r0 + r, c0 + c, img.get(r, c));
            }
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    #[test]
    fn loads_sorted_grayscale_and_skips_garbage() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b.png", 255u8), ("a.png", 0), ("c.pgm", 128)] {
            GrayImage::from_pixel(4, 3, Luma([v])).save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("z.png"), b"not a png").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.labels(), &["a.png", "b.png", "c.pgm"]);
        assert_eq!(ds.items()[0].shape(), Shape::new(3, 4));
        assert_eq!(ds.items()[1].get(0, 0), 1.0);
        assert!((ds.items()[2].get(2, 3) - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rgb_uses_luma_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0])).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert!((img.get(1, 1) - 0.2126).abs() < 1e-12);
    }

    #[test]
    fn empty_directory_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn mixed_shapes_load_but_have_no_common_shape() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::new(4, 4).save(dir.path().join("a.png")).unwrap();
        GrayImage::new(5, 4).save(dir.path().join("b.png")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.common_shape().is_err());
    }

    #[test]
    fn png16_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_fn(Shape::new(3, 5), |r, c| (r * 5 + c) as f64 / 14.0);
        save_png16(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-12);
    }

    #[test]
    fn contact_sheet_layout() {
        let imgs: Vec<_> = (0..3).map(|i| Image::constant(Shape::new(2, 2), i as f64)).collect();
        let sheet = contact_sheet(&imgs, 2).unwrap();
        assert_eq!(sheet.shape(), Shape::new(5, 5));
        assert_eq!(sheet.get(0, 3), 1.0);
        assert_eq!(sheet.get(3, 0), 2.0);
    }
}
