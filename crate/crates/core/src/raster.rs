//! Row-major rasters and the per-view frame bundle.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage as Rgb8Image};
use thiserror::Error;

/// Linear RGB triple in `[0, 1]`.
pub type Rgb = [f32; 3];

/// Depth value of pixels no triangle covers. Never exported.
pub const NO_HIT: f64 = f64::INFINITY;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("png codec: {0}")]
    Png(#[from] image::ImageError),
    #[error("raster dimensions: {0}")]
    Dimensions(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Raster<bool>;
pub type DepthMap = Raster<f64>;
pub type RgbImage = Raster<Rgb>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::Dimensions(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a raster by evaluating `f(u, v)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Raster<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let i = self.index(u, v);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Copy> Raster<T> {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }
}

impl Mask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn not(&self) -> Mask {
        self.map(|&b| !b)
    }

    pub fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert!(self.same_dims(other), "mask dimensions differ");
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }
}

/// Rendered view: color, camera-space depth and the unobserved-pixel mask.
///
/// `mask[p]` is true exactly where `depth[p]` is [`NO_HIT`].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl FrameBundle {
    /// A frame where nothing is observed.
    pub fn unobserved(width: usize, height: usize) -> Self {
        Self {
            rgb: Raster::filled(width, height, [0.0; 3]),
            depth: Raster::filled(width, height, NO_HIT),
            mask: Raster::filled(width, height, true),
        }
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if !self.rgb.same_dims(&self.mask) || !self.depth.same_dims(&self.mask) {
            return Err(RasterError::Dimensions("frame rasters differ in size".into()));
        }
        for (i, (&m, &d)) in self.mask.data().iter().zip(self.depth.data()).enumerate() {
            if m != (d == NO_HIT) {
                return Err(RasterError::Dimensions(format!(
                    "pixel {i}: mask {m} disagrees with depth {d}"
                )));
            }
        }
        if self.rgb.data().iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(RasterError::Dimensions("rgb outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn quantize_channel(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: impl Into<image::DynamicImage>) -> Result<Vec<u8>, RasterError> {
    let mut buf = Cursor::new(Vec::new());
    img.into().write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// 8-bit RGB PNG.
pub fn encode_rgb_png(rgb: &RgbImage) -> Result<Vec<u8>, RasterError> {
    let img = Rgb8Image::from_fn(rgb.width() as u32, rgb.height() as u32, |u, v| {
        let c = rgb.at(u as usize, v as usize);
        image::Rgb([quantize_channel(c[0]), quantize_channel(c[1]), quantize_channel(c[2])])
    });
    encode(img)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_fn(w as usize, h as usize, |u, v| {
        let p = img.get_pixel(u as u32, v as u32).0;
        [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
    }))
}

/// 8-bit grayscale PNG, 255 for set pixels.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>, RasterError> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |u, v| {
        Luma([if mask.at(u as usize, v as usize) { 255 } else { 0 }])
    });
    encode(img)
}

/// Any nonzero gray level decodes as set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, RasterError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_fn(w as usize, h as usize, |u, v| {
        img.get_pixel(u as u32, v as u32).0[0] != 0
    }))
}

/// 16-bit grayscale PNG in millimeters; no-hit and non-finite pixels become 0.
pub fn encode_depth_png16(depth: &DepthMap) -> Result<Vec<u8>, RasterError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |u, v| {
            let d = depth.at(u as usize, v as usize);
            let mm = if d.is_finite() && d > 0.0 {
                (d * 1000.0).round().min(u16::MAX as f64) as u16
            } else {
                0
            };
            Luma([mm])
        });
    encode(img)
}

pub fn save_png(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    std::fs::write(path, bytes)?;
    Ok(())
}
