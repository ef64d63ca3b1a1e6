//! RGB image carrier and file/resize plumbing.

use std::path::Path;

use ::image::imageops::{self, FilterType};
use ::image::{ImageBuffer as RawBuffer, Rgb, Rgb32FImage, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Interleaved RGB image with `f32` samples in `[0, 1]`, row-major (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Validating constructor: every sample must be finite and in `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(height, width, data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "pixel value {} at sample {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { height, width, data })
    }

    /// Clamps samples into `[0, 1]` instead of rejecting them. NaN becomes 0.
    pub fn from_clipped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        check_shape(height, width, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self::from_clipped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Content hash over dimensions and sample bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("shape checked at construction")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    fn to_rgb32f(&self) -> Rgb32FImage {
        RawBuffer::<Rgb<f32>, _>::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("shape checked at construction")
    }

    fn from_rgb32f(img: Rgb32FImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::from_clipped(h as usize, w as usize, img.into_raw())
    }

    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let out = imageops::resize(&self.to_rgb32f(), width as u32, height as u32, FilterType::CatmullRom);
        Self::from_rgb32f(out)
    }

    /// Resizes so the shorter side equals `target`, keeping aspect ratio.
    pub fn resize_shorter_side(&self, target: usize) -> Result<Self> {
        let short = self.height.min(self.width);
        let scale = target as f64 / short as f64;
        let h = ((self.height as f64 * scale).round() as usize).max(1);
        let w = ((self.width as f64 * scale).round() as usize).max(1);
        let (h, w) = if self.height <= self.width { (target, w) } else { (h, target) };
        self.resize(h, w)
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::Input(format!(
                "cannot crop {height}x{width} from a {}x{} image",
                self.height, self.width
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(Self { height, width, data })
    }

    /// Shorter side to `size`, then a centered `size x size` crop.
    pub fn resize_center_crop(&self, size: usize) -> Result<Self> {
        self.resize_shorter_side(size)?.center_crop(size, size)
    }
}

fn check_shape(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Input(format!("image dimensions must be >= 1, got {height}x{width}")));
    }
    if len != height * width * 3 {
        return Err(Error::Contract(format!(
            "expected {} samples for a {height}x{width} RGB image, got {len}",
            height * width * 3
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ImageBuffer::new(0, 4, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, vec![0.0, 0.5]).is_err());
        assert!(matches!(ImageBuffer::new(1, 1, vec![0.0, 1.5, 0.0]), Err(Error::Input(_))));
        let c = ImageBuffer::from_clipped(1, 1, vec![-1.0, 1.5, f32::NAN]).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shorter_side_and_crop() {
        let img = ImageBuffer::filled(300, 600, [0.2, 0.4, 0.6]).unwrap();
        let r = img.resize_shorter_side(512).unwrap();
        assert_eq!((r.height(), r.width()), (512, 1024));
        let c = img.resize_center_crop(224).unwrap();
        assert_eq!((c.height(), c.width()), (224, 224));
        assert!((c.pixel(100, 100)[1] - 0.4).abs() < 1e-5);
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = ImageBuffer::from_fn(4, 5, |y, x| [y as f32 / 4.0, x as f32 / 5.0, 0.5]).unwrap();
        img.save_png(&p).unwrap();
        let back = ImageBuffer::load(&p).unwrap();
        assert_eq!((back.height(), back.width()), (4, 5));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
