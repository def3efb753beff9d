use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit frame, row-major, 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape("image data length does not match dimensions"));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels]).expect("valid dimensions")
    }

    /// Decodes a PNG/JPEG/BMP/PNM file. Gray images stay single-channel.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            Self::new(w, h, 3, img.into_rgb8().into_raw())
        } else {
            Self::new(w, h, 1, img.into_luma8().into_raw())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 3 { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
        image::save_buffer(path, &self.data, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma in [0, 1] (ITU-R 601 weights for RGB input).
    pub fn gray(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64 / 255.0).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
                .collect(),
        }
    }
}

/// Axis-aligned box: top-left corner and extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        ix.max(0.0) * iy.max(0.0)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Same center, extent multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> BoundingBox {
        let (cx, cy) = self.center();
        BoundingBox::from_center(cx, cy, self.w * factor, self.h * factor)
    }
}
