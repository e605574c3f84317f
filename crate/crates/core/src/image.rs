//! RGB raster with float intensities.
//!
//! Pixels are stored row-major and channel-interleaved (`[r, g, b, r, g, b, ...]`),
//! every value finite and inside `[0, 1]`.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {width}x{height} RGB, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from raw values, clamping into `[0, 1]`. Non-finite
    /// values become 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    /// Builds an image from an interleaved buffer with an arbitrary channel
    /// count. Anything other than three channels is rejected.
    pub fn from_interleaved(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels != CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected 3 (RGB) channels, got {channels}"
            )));
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = (y as usize * self.width + x as usize) * CHANNELS;
            let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
            Rgb([q(self.data[i]), q(self.data[i + 1]), q(self.data[i + 2])])
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Largest centered square.
    pub fn center_crop_square(&self) -> ImageBuffer {
        let side = self.width.min(self.height);
        if side == self.width && side == self.height {
            return self.clone();
        }
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        let mut data = Vec::with_capacity(side * side * CHANNELS);
        for y in y0..y0 + side {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + side * CHANNELS]);
        }
        ImageBuffer {
            width: side,
            height: side,
            data,
        }
    }

    /// Bilinear resampling with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<ImageBuffer> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("resize target must be positive".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |dst: usize, scale: f64, len: usize| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        };
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = taps(x, sx, self.width);
                for c in 0..CHANNELS {
                    let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
                    let bot = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        ImageBuffer::from_clamped(width, height, data)
    }

    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageBuffer::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageBuffer::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(ImageBuffer::new(0, 1, vec![]).is_err());
        assert!(ImageBuffer::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn non_rgb_is_invalid() {
        let err = ImageBuffer::from_interleaved(2, 2, 4, vec![0.0; 16]).unwrap_err();
        assert!(matches!(err, Error::InvalidImage(_)));
    }

    #[test]
    fn center_crop_keeps_middle() {
        let img = ImageBuffer::from_fn(6, 2, |x, _| [x as f64 / 10.0, 0.0, 0.0]).unwrap();
        let sq = img.center_crop_square();
        assert_eq!((sq.width(), sq.height()), (2, 2));
        assert!((sq.get(0, 0, 0) - 0.2).abs() < 1e-12);
        assert!((sq.get(1, 1, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let img = ImageBuffer::from_fn(5, 4, |x, y| [x as f64 / 4.0, y as f64 / 3.0, 0.5]).unwrap();
        let back = ImageBuffer::decode(&img.encode_png().unwrap()).unwrap();
        assert!(img.mean_abs_diff(&back).unwrap() < 1.0 / 255.0);
    }
}
