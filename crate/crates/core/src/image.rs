//! RGB frames stored as `f32` in `[0, 1]`, row-major `H x W x 3`.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb32FImage, RgbImage};

use crate::autograd::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
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

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` copy for the network.
    pub fn to_chw(&self) -> Array {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f64;
            }
        }
        Array::new(&[3, self.height, self.width], out)
    }

    /// Zero-pads on the right and bottom.
    pub fn padded(&self, width: usize, height: usize) -> Image {
        assert!(width >= self.width && height >= self.height);
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut data = vec![0.0; width * height * 3];
        for y in 0..self.height {
            data[y * width * 3..(y * width + self.width) * 3]
                .copy_from_slice(&self.data[y * self.width * 3..(y + 1) * self.width * 3]);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Image> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}@({x},{y}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            data.extend_from_slice(&self.data[(row * self.width + x) * 3..(row * self.width + x + width) * 3]);
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn flipped_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * 3) {
            for px in row.chunks_exact(3).rev() {
                data.extend_from_slice(px);
            }
        }
        Image { data, ..self.clone() }
    }

    /// Triangle-filtered resize.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let buf: Rgb32FImage =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer size matches");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Image {
            width,
            height,
            data: out.into_raw(),
        }
    }

    /// Largest aspect-preserving downscale keeping the long side within
    /// `long` and the short side within `short`; never upscales.
    pub fn cap_scale(&self, long: usize, short: usize) -> f64 {
        let (l, s) = if self.width >= self.height {
            (self.width, self.height)
        } else {
            (self.height, self.width)
        };
        (long as f64 / l as f64).min(short as f64 / s as f64).min(1.0)
    }

    /// Downscales to the resolution cap; returns the image and the scale used.
    pub fn capped(&self, long: usize, short: usize) -> (Image, f64) {
        let scale = self.cap_scale(long, short);
        if scale >= 1.0 {
            return (self.clone(), 1.0);
        }
        let w = ((self.width as f64 * scale).floor() as usize).max(1);
        let h = ((self.height as f64 * scale).floor() as usize).max(1);
        (self.resized(w, h), scale)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size matches")
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }
}

/// Blends a heat overlay of `values` (row-major, `width x height`) on top of
/// `frame`. The color scale saturates at the map maximum; an all-zero map
/// leaves the frame unchanged.
pub fn heat_overlay(frame: &Image, values: &[f32]) -> Image {
    assert_eq!(values.len(), frame.width * frame.height);
    let max = values.iter().copied().fold(0.0f32, f32::max);
    let mut out = frame.clone();
    if max <= 0.0 {
        return out;
    }
    for (i, &v) in values.iter().enumerate() {
        let t = (v / max).clamp(0.0, 1.0);
        if t == 0.0 {
            continue;
        }
        let heat = [t.min(1.0), (2.0 * t - 1.0).clamp(0.0, 1.0), 0.0];
        let alpha = 0.7 * t;
        let px = &mut out.data[i * 3..i * 3 + 3];
        for c in 0..3 {
            px[c] = (1.0 - alpha) * px[c] + alpha * heat[c];
        }
    }
    out
}
