//! RGB raster frames and binary PPM (P6) I/O.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use image::{imageops, ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An 8-bit RGB image stored row-major, interleaved `RGBRGB...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    /// Unix seconds; 0 when the frame did not come from a capture.
    pub capture_ts: i64,
}

impl RasterFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, capture_ts: i64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "frame geometry {width}x{height} has zero area"
            )));
        }
        if pixels.len() != width * height * CHANNELS {
            return Err(Error::Argument(format!(
                "pixel buffer holds {} bytes, expected {}x{}x{}",
                pixels.len(),
                width,
                height,
                CHANNELS
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            capture_ts,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self::new(width, height, pixels, 0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma of one pixel.
    #[inline]
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.get(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    }

    /// Mean luma over the half-open column range `[x0, x1)`.
    pub fn mean_luminance(&self, x0: usize, x1: usize) -> f64 {
        let mut sum = 0.0;
        for y in 0..self.height {
            for x in x0..x1 {
                sum += self.luminance(x, y);
            }
        }
        sum / ((x1 - x0) * self.height) as f64
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Argument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} frame",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[start..start + w * CHANNELS]);
        }
        Self::new(w, h, pixels, self.capture_ts)
    }

    /// Resamples to `width x height` with a triangle (bilinear) filter whose
    /// support widens when shrinking. Same-size requests return a copy.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("resize target has zero area".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let img = self.to_rgb_image();
        let out = imageops::resize(&img, width as u32, height as u32, imageops::FilterType::Triangle);
        Self::new(width, height, out.into_raw(), self.capture_ts)
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 32);
        write!(out, "P6\n{} {}\n255\n", self.width, self.height).expect("write to Vec");
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
            .map_err(|e| Error::Format(format!("PPM decode: {e}")))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw(), 0)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.encode_ppm())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_area_and_bad_length() {
        assert!(RasterFrame::new(0, 4, vec![], 0).is_err());
        assert!(RasterFrame::new(2, 2, vec![0; 11], 0).is_err());
    }

    #[test]
    fn ppm_header_is_p6_maxval_255() {
        let f = RasterFrame::filled(3, 2, [1, 2, 3]).unwrap();
        let bytes = f.encode_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let back = RasterFrame::decode_ppm(&bytes).unwrap();
        assert_eq!(back.pixels(), f.pixels());
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let mut f = RasterFrame::filled(4, 4, [0, 0, 0]).unwrap();
        f.put(2, 1, [9, 8, 7]);
        let c = f.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.get(1, 0), [9, 8, 7]);
        assert!(f.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn resize_to_self_is_identity() {
        let f = RasterFrame::new(2, 1, vec![10, 20, 30, 40, 50, 60], 5).unwrap();
        assert_eq!(f.resize(2, 1).unwrap(), f);
    }
}
