//! Pixel grids shared by every stage: continuous saliency maps, binary masks
//! and three-channel color images, plus their 8-bit image-file encodings.

use std::path::Path;

use image::{imageops, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{check_dims, Error, Result};

/// H×W grid of saliency values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Array2<f64>,
}

impl SaliencyMap {
    /// Builds a map, rejecting empty grids and values outside `[0, 1]`.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput(
                "saliency map must be at least 1x1".into(),
            ));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "saliency value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a map after clamping every value into `[0, 1]`; non-finite values become 0.
    pub fn from_clamped(mut values: Array2<f64>) -> Result<Self> {
        values.mapv_inplace(|v| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        Self::new(values)
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let grid = Array2::from_shape_vec((height, width), values)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(grid)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Foreground wherever the value is at least `threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            values: self.values.mapv(|v| v >= threshold),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut values = self.values.clone();
        values.invert_axis(ndarray::Axis(1));
        Self { values }
    }

    /// Bilinear resize to `height`×`width`.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if self.dims() == (height, width) {
            return Ok(self.clone());
        }
        let (h, w) = self.dims();
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([self.values[[y as usize, x as usize]] as f32])
            });
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        let values = Array2::from_shape_fn((height, width), |(y, x)| {
            f64::from(out.get_pixel(x as u32, y as u32)[0])
        });
        Self::from_clamped(values)
    }

    /// Value `v` is stored as `round(255 v)`.
    pub fn to_gray8(&self) -> GrayImage {
        let (h, w) = self.dims();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([quantize(self.values[[y as usize, x as usize]])])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let values = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            f64::from(img.get_pixel(x as u32, y as u32)[0]) / 255.0
        });
        Self { values }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| annotate_image_error(path, e))?
            .into_luma8();
        Ok(Self::from_gray8(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_gray8().save(path)?;
        Ok(())
    }
}

/// H×W grid of foreground/background flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    values: Array2<bool>,
}

impl BinaryMask {
    pub fn new(values: Array2<bool>) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("mask must be at least 1x1".into()));
        }
        Ok(Self { values })
    }

    /// Accepts strictly binary 0/1 values.
    pub fn from_binary_values(values: &Array2<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidInput(format!(
                "mask value {bad} is not binary"
            )));
        }
        Self::new(values.mapv(|v| v == 1.0))
    }

    pub fn values(&self) -> &Array2<bool> {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }

    pub fn foreground_ratio(&self) -> f64 {
        self.foreground_count() as f64 / self.values.len() as f64
    }

    /// 0/1 values as a saliency map.
    pub fn to_map(&self) -> SaliencyMap {
        SaliencyMap {
            values: self.values.mapv(|v| if v { 1.0 } else { 0.0 }),
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            values: self.values.mapv(|v| !v),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut values = self.values.clone();
        values.invert_axis(ndarray::Axis(1));
        Self { values }
    }

    /// Nearest-neighbour resize, keeping the mask strictly binary.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        let (h, w) = self.dims();
        if (h, w) == (height, width) {
            return Ok(self.clone());
        }
        Self::new(Array2::from_shape_fn((height, width), |(y, x)| {
            let sy = ((y as f64 + 0.5) * h as f64 / height as f64) as usize;
            let sx = ((x as f64 + 0.5) * w as f64 / width as f64) as usize;
            self.values[[sy.min(h - 1), sx.min(w - 1)]]
        }))
    }

    /// Binarized at 128 on load.
    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let values = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            img.get_pixel(x as u32, y as u32)[0] >= 128
        });
        Self { values }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| annotate_image_error(path, e))?
            .into_luma8();
        Ok(Self::from_gray8(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_map().save(path)
    }
}

/// H×W×3 color image with channels in `[0, 1]`. Used for video frames and for
/// color-wheel flow renderings alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pixels: Array3<f32>,
}

impl ColorImage {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::InvalidInput(format!(
                "color image must be HxWx3 with H, W >= 1, got {h}x{w}x{c}"
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.pixels[[y, x, 0]],
            self.pixels[[y, x, 1]],
            self.pixels[[y, x, 2]],
        ]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = self.pixels.clone();
        pixels.invert_axis(ndarray::Axis(1));
        Self { pixels }
    }

    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if self.dims() == (height, width) {
            return Ok(self.clone());
        }
        let (h, w) = self.dims();
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Rgb(self.pixel(y as usize, x as usize))
            });
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        let pixels = Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            out.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
        });
        Self::new(pixels)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = self.dims();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb([
                quantize(f64::from(p[0])),
                quantize(f64::from(p[1])),
                quantize(f64::from(p[2])),
            ])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        });
        Self { pixels }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| annotate_image_error(path, e))?
            .into_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_rgb8().save(path)?;
        Ok(())
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn annotate_image_error(path: &Path, err: image::ImageError) -> Error {
    match err {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

pub(crate) fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    check_dims(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(SaliencyMap::new(array![[0.0, 1.5]]).is_err());
        assert!(SaliencyMap::new(array![[f64::NAN]]).is_err());
        assert!(SaliencyMap::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(BinaryMask::from_binary_values(&array![[0.0, 0.5]]).is_err());
        let m = BinaryMask::from_binary_values(&array![[0.0, 1.0]]).unwrap();
        assert_eq!(m.foreground_count(), 1);
    }

    #[test]
    fn gray8_round_trip_quantizes() {
        let map = SaliencyMap::new(array![[0.0, 0.5], [1.0, 0.2]]).unwrap();
        let back = SaliencyMap::from_gray8(&map.to_gray8());
        assert_eq!(back.values()[[0, 1]], 128.0 / 255.0);
        assert_eq!(back.values()[[1, 0]], 1.0);
    }

    #[test]
    fn mask_binarizes_at_128() {
        let img = GrayImage::from_raw(3, 1, vec![127, 128, 255]).unwrap();
        let m = BinaryMask::from_gray8(&img);
        assert_eq!(m.values(), &array![[false, true, true]]);
    }

    #[test]
    fn flips_mirror_columns() {
        let map = SaliencyMap::new(array![[0.0, 0.25, 1.0]]).unwrap();
        assert_eq!(map.flip_horizontal().values(), &array![[1.0, 0.25, 0.0]]);
    }

    #[test]
    fn resize_preserves_constant_maps() {
        let map = SaliencyMap::filled(8, 8, 0.25).unwrap();
        let up = map.resize(16, 12).unwrap();
        assert_eq!(up.dims(), (16, 12));
        assert!(up.values().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
