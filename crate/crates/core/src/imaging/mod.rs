//! Grayscale images, bilinear sampling and warped patch extraction.

mod pgm;
mod sequence;
mod texture;

pub use pgm::{read_pgm, write_pgm, PgmError};
pub use sequence::{
    generate_sequence, read_sequence, write_sequence, LoadedSequence, SequenceError,
    SyntheticSequence, TruthRecord,
};
pub use texture::textured_image;

use thiserror::Error;

use crate::geometry::{Homography, PlaneParams};

/// Smallest number of template pixels considered enough texture to track.
pub const MIN_TEMPLATE_AREA: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("buffer holds {got} values but {width}x{height} needs {}", width * height)]
    SizeMismatch { width: usize, height: usize, got: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("image must be at least 1x1")]
    Empty,
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a constant intensity, clamped to `[0, 1]`.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width: width.max(1),
            height: height.max(1),
            data: vec![value.clamp(0.0, 1.0); width.max(1) * height.max(1)],
        }
    }

    /// Builds an image from a per-pixel function; results are clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear intensity at `(x, y)`; `(0, false)` outside
    /// `[0, width-1] × [0, height-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, bool) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return (0.0, false);
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let p00 = self.data[row0 + x0] as f64;
        let p10 = self.data[row0 + x1] as f64;
        let p01 = self.data[row1 + x0] as f64;
        let p11 = self.data[row1 + x1] as f64;
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        (top + fy * (bottom - top), true)
    }
}

/// Free-function form of [`GrayImage::sample_bilinear`].
pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> (f64, bool) {
    img.sample_bilinear(x, y)
}

/// Axis-aligned pixel rectangle `(x0, y0, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    /// Outer corners, clockwise from the top-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (x0, y0) = (self.x0 as f64, self.y0 as f64);
        let (x1, y1) = (x0 + self.w as f64, y0 + self.h as f64);
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    }

    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("region {rect:?} must lie strictly inside the {width}x{height} image")]
    OutsideImage { rect: Rect, width: usize, height: usize },
    #[error("region area {0} is below the minimum of {MIN_TEMPLATE_AREA} pixels")]
    TooSmall(usize),
    #[error("sampling stride must be at least 1")]
    ZeroStride,
}

/// The tracked planar patch in the reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRegion {
    rect: Rect,
    plane: PlaneParams,
    sample_grid: Vec<(f64, f64)>,
}

impl TemplateRegion {
    /// Region sampling every pixel of `rect`.
    pub fn new(
        rect: Rect,
        plane: PlaneParams,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self, RegionError> {
        Self::with_stride(rect, plane, image_width, image_height, 1)
    }

    /// Region sampling every `stride`-th pixel of `rect` in both directions.
    ///
    /// The rectangle must keep at least a one pixel margin to every image
    /// border.
    pub fn with_stride(
        rect: Rect,
        plane: PlaneParams,
        image_width: usize,
        image_height: usize,
        stride: usize,
    ) -> Result<Self, RegionError> {
        if stride == 0 {
            return Err(RegionError::ZeroStride);
        }
        let area = rect.w * rect.h;
        if area < MIN_TEMPLATE_AREA {
            return Err(RegionError::TooSmall(area));
        }
        if rect.x0 < 1
            || rect.y0 < 1
            || rect.x0 + rect.w + 1 > image_width
            || rect.y0 + rect.h + 1 > image_height
        {
            return Err(RegionError::OutsideImage {
                rect,
                width: image_width,
                height: image_height,
            });
        }
        let sample_grid = (rect.y0..rect.y0 + rect.h)
            .step_by(stride)
            .flat_map(|y| {
                (rect.x0..rect.x0 + rect.w)
                    .step_by(stride)
                    .map(move |x| (x as f64, y as f64))
            })
            .collect();
        Ok(Self {
            rect,
            plane,
            sample_grid,
        })
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn plane(&self) -> &PlaneParams {
        &self.plane
    }

    pub fn sample_grid(&self) -> &[(f64, f64)] {
        &self.sample_grid
    }

    /// Template intensities at the sample grid of `reference`.
    pub fn template_values(&self, reference: &GrayImage) -> Vec<f64> {
        self.sample_grid
            .iter()
            .map(|&(x, y)| reference.sample_bilinear(x, y).0)
            .collect()
    }
}

/// Intensities of the current frame at the warped sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPatch {
    pub values: Vec<f64>,
    pub valid_mask: Vec<bool>,
    pub valid_fraction: f64,
}

/// Warps every template sample through `h` and samples `img` there.
pub fn extract_patch(region: &TemplateRegion, h: &Homography, img: &GrayImage) -> WarpedPatch {
    let n = region.sample_grid.len();
    let mut values = Vec::with_capacity(n);
    let mut valid_mask = Vec::with_capacity(n);
    let mut valid = 0usize;
    for &(u, v) in &region.sample_grid {
        let (value, ok) = match h.warp_point(u, v) {
            Ok((x, y)) => img.sample_bilinear(x, y),
            Err(_) => (0.0, false),
        };
        valid += ok as usize;
        values.push(value);
        valid_mask.push(ok);
    }
    WarpedPatch {
        values,
        valid_mask,
        valid_fraction: if n == 0 { 0.0 } else { valid as f64 / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(width: usize, height: usize) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| ((x * 7 + y * 13) % 97) as f32 / 96.0)
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn bilinear_examples() {
        let img = ramp(10, 10);
        let (v, ok) = img.sample_bilinear(5.0, 7.0);
        assert!(ok);
        assert_eq!(v, img.get(5, 7) as f64);

        let img = GrayImage::new(2, 1, vec![0.2, 0.6]).unwrap();
        let (v, ok) = img.sample_bilinear(0.5, 0.0);
        assert!(ok);
        assert!((v - 0.4).abs() < 1e-7);

        assert_eq!(img.sample_bilinear(-1.0, 3.0), (0.0, false));
        assert_eq!(img.sample_bilinear(f64::NAN, 0.0), (0.0, false));
    }

    #[test]
    fn bilinear_at_far_edges() {
        let img = ramp(6, 4);
        let (v, ok) = img.sample_bilinear(5.0, 3.0);
        assert!(ok);
        assert_eq!(v, img.get(5, 3) as f64);
        assert!(!img.sample_bilinear(5.0001, 3.0).1);
        let single = GrayImage::filled(1, 1, 0.3);
        assert_eq!(single.sample_bilinear(0.0, 0.0), (0.3f32 as f64, true));
    }

    #[test]
    fn region_validation() {
        let plane = PlaneParams::fronto_parallel();
        assert!(TemplateRegion::new(Rect::new(1, 1, 8, 8), plane, 10, 10).is_ok());
        // touching the border
        assert!(TemplateRegion::new(Rect::new(0, 1, 8, 8), plane, 10, 10).is_err());
        assert!(TemplateRegion::new(Rect::new(1, 1, 9, 8), plane, 10, 10).is_err());
        assert!(matches!(
            TemplateRegion::new(Rect::new(1, 1, 7, 9), plane, 20, 20),
            Err(RegionError::TooSmall(63))
        ));
        let r = TemplateRegion::with_stride(Rect::new(2, 3, 10, 8), plane, 20, 20, 3).unwrap();
        assert_eq!(r.sample_grid().len(), 4 * 3);
        assert_eq!(r.sample_grid()[0], (2.0, 3.0));
    }

    #[test]
    fn identity_patch_reproduces_template() {
        let img = ramp(40, 30);
        let region =
            TemplateRegion::new(Rect::new(5, 5, 20, 15), PlaneParams::fronto_parallel(), 40, 30)
                .unwrap();
        let patch = extract_patch(&region, &Homography::identity(), &img);
        assert_eq!(patch.valid_fraction, 1.0);
        assert_eq!(patch.values, region.template_values(&img));
        for (&(x, y), &v) in region.sample_grid().iter().zip(&patch.values) {
            assert_eq!(v, img.get(x as usize, y as usize) as f64);
        }
    }

    #[test]
    fn patch_off_image_is_invalid() {
        let img = ramp(40, 30);
        let region =
            TemplateRegion::new(Rect::new(5, 5, 20, 15), PlaneParams::fronto_parallel(), 40, 30)
                .unwrap();
        let far = Homography::new(Matrix3::new(1.0, 0.0, 500.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        let patch = extract_patch(&region, &far, &img);
        assert_eq!(patch.valid_fraction, 0.0);
        assert!(patch.valid_mask.iter().all(|v| !v));
    }

    #[test]
    fn translated_patch_matches_shifted_image() {
        let img = ramp(40, 30);
        // shifted image generated with the same sampler: shifted(x, y) = img(x - 2, y)
        let shifted = GrayImage::from_fn(40, 30, |x, y| {
            img.sample_bilinear(x as f64 - 2.0, y as f64).0 as f32
        });
        let region =
            TemplateRegion::new(Rect::new(5, 5, 20, 15), PlaneParams::fronto_parallel(), 40, 30)
                .unwrap();
        let h = Homography::new(Matrix3::new(1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let patch = extract_patch(&region, &h, &shifted);
        let template = region.template_values(&img);
        assert_eq!(patch.valid_fraction, 1.0);
        for (a, b) in patch.values.iter().zip(&template) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let img = GrayImage::from_fn(16, 12, |_, _| rng.random::<f32>());
            let mut max_diff = 0.0f64;
            for y in 0..12 {
                for x in 0..16 {
                    if x + 1 < 16 {
                        max_diff = max_diff.max((img.get(x, y) - img.get(x + 1, y)).abs() as f64);
                    }
                    if y + 1 < 12 {
                        max_diff = max_diff.max((img.get(x, y) - img.get(x, y + 1)).abs() as f64);
                    }
                }
            }
            let lipschitz = 2.0 * max_diff;
            for _ in 0..200 {
                let x = rng.random_range(0.0..14.5);
                let y = rng.random_range(0.0..10.5);
                let dx = rng.random_range(-0.5..0.5);
                let dy = rng.random_range(-0.5..0.5);
                let (a, ok_a) = img.sample_bilinear(x, y);
                let (b, ok_b) = img.sample_bilinear(x + dx, y + dy);
                if ok_a && ok_b {
                    let dist = (dx * dx + dy * dy).sqrt();
                    assert!((a - b).abs() <= lipschitz * dist + 1e-9);
                }
            }
        }
    }
}
