//! Raster and mask containers plus the patch/stitch pipeline.
//!
//! Rasters are stored row-major with interleaved channels (`H × W × C`).
//! Multispectral scenes use the band order red, green, blue, NIR.

mod augment;
mod classes;
pub mod datasets;
pub mod io;
mod resize;
mod synth;
mod tiling;

pub use augment::{geometric_augment, GeometricTransform};
pub use classes::{merge_classes, BiomeClass, GroundTruth, MergeScheme, SparcsClass};
pub(crate) use resize::AxisWeights;
pub use resize::{resize_bilinear, resize_nearest};
pub use synth::{synth_scene, synth_scene_with, SynthOptions};
pub use tiling::{argmax_masks, binarize, extract_patches, is_empty_patch, stitch, PatchMode, SceneMap, DEFAULT_EMPTY_THRESHOLD};

use crate::error::{invalid, shape, Result};

/// Band names in storage order.
pub const BANDS: [&str; 4] = ["red", "green", "blue", "nir"];

/// Largest raw 16-bit digital number.
pub const RAW_MAX: f64 = 65535.0;

/// A dense `H × W × C` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Raw 16-bit digital numbers.
pub type RawRaster = Raster<u16>;
/// Single-channel binary mask.
pub type Mask = Raster<bool>;

impl<T: Copy> Raster<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid(format!("raster dimensions must be positive, got {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{height}x{width}x{channels} raster needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "raster dimensions must be positive");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "raster dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster { height: self.height, width: self.width, channels: self.channels, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Copy one channel out as a single-channel raster.
    pub fn band(&self, c: usize) -> Raster<T> {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster { height: self.height, width: self.width, channels: 1, data }
    }

    /// Interleave single-channel rasters into one multi-channel raster.
    pub fn stack(bands: &[Raster<T>]) -> Result<Self> {
        let first = bands.first().ok_or_else(|| invalid("cannot stack zero bands"))?;
        let (h, w) = first.dims();
        if bands.iter().any(|b| b.dims() != (h, w) || b.channels != 1) {
            return Err(shape("stacked bands must be single-channel with equal dimensions"));
        }
        let c = bands.len();
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h * w {
            for b in bands {
                data.push(b.data[i]);
            }
        }
        Ok(Self { height: h, width: w, channels: c, data })
    }

    /// Window of `size_h × size_w` pixels starting at `origin = (row, col)`.
    pub fn crop(&self, origin: (usize, usize), size_h: usize, size_w: usize) -> Result<Self> {
        let (r0, c0) = origin;
        if size_h == 0 || size_w == 0 || r0 + size_h > self.height || c0 + size_w > self.width {
            return Err(invalid(format!("window {size_h}x{size_w} at {origin:?} exceeds {}x{} raster", self.height, self.width)));
        }
        let mut data = Vec::with_capacity(size_h * size_w * self.channels);
        for y in r0..r0 + size_h {
            let start = self.index(y, c0, 0);
            data.extend_from_slice(&self.data[start..start + size_w * self.channels]);
        }
        Ok(Self { height: size_h, width: size_w, channels: self.channels, data })
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl Raster<bool> {
    /// All-false single-channel mask.
    pub fn empty_mask(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1, false)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Mask {
        self.map(|v| !v)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert!(self.same_dims(other) && self.channels == other.channels, "mask dimensions differ");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Raster { height: self.height, width: self.width, channels: self.channels, data }
    }
}

/// A window cut from a parent scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    /// `(row, col)` of the top-left pixel in the parent.
    pub origin: (usize, usize),
    pub raster: Raster<T>,
}

/// Raw digital numbers divided by 65535.
pub fn normalize(raw: &RawRaster) -> Raster<f64> {
    raw.map(|v| f64::from(v) / RAW_MAX)
}

/// Inverse of [`normalize`], rounding to the nearest digital number.
pub fn denormalize(norm: &Raster<f64>) -> RawRaster {
    norm.map(|v| (v.clamp(0.0, 1.0) * RAW_MAX).round() as u16)
}
