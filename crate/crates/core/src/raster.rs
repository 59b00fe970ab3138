//! 2D float rasters and boolean masks.
//!
//! Rows are stored top to bottom as they appear in an image. For overhead
//! height maps row `j` is grid row `y = j`; for equirectangular panoramas
//! row 0 is the zenith.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// Overhead height map in meters.
pub type HeightMap<T> = Raster<T>;
/// Equirectangular street-view depth in meters.
pub type DepthPanorama<T> = Raster<T>;
/// Equirectangular street-view opacity in `[0, 1]`.
pub type OpacityPanorama<T> = Raster<T>;
/// Equirectangular raster with one or more channels.
pub type PanoRaster<T> = Raster<T>;

impl<T: Real> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        Self::with_channels(width, height, 1, data)
    }

    pub fn with_channels(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "raster dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} raster needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dimensions")
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self::new(width, height, data).expect("positive dimensions")
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

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
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
    pub fn pixel_index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[(v * self.width + u) * self.channels]
    }

    #[inline]
    pub fn get_channel(&self, u: usize, v: usize, c: usize) -> T {
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let i = (v * self.width + u) * self.channels;
        self.data[i] = value;
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape<U>(&self, other: &Raster<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn cast<U: Real>(&self) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates, where pixel `(u, v)`
    /// has its center at `(u + 0.5, v + 0.5)`. Columns wrap around (azimuth),
    /// rows clamp (elevation).
    pub fn sample_wrapped(&self, x: T, y: T, out: &mut [T]) {
        let w = self.width;
        let h = self.height;
        let fx = x - T::half();
        let fy = (y - T::half()).max(T::zero()).min(T::from_usize_lossy(h - 1));
        let x0f = fx.floor();
        let y0f = fy.floor();
        let tx = fx - x0f;
        let ty = fy - y0f;
        let wi = w as i64;
        let x0 = (x0f.to_i64().unwrap_or(0)).rem_euclid(wi) as usize;
        let x1 = (x0 + 1) % w;
        let y0 = y0f.to_usize().unwrap_or(0).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let c = self.channels;
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let a = self.data[(y0 * w + x0) * c + k];
            let b = self.data[(y0 * w + x1) * c + k];
            let cc = self.data[(y1 * w + x0) * c + k];
            let d = self.data[(y1 * w + x1) * c + k];
            let top = a + (b - a) * tx;
            let bot = cc + (d - cc) * tx;
            *o = top + (bot - top) * ty;
        }
    }
}

/// Boolean raster. For sky masks `true` marks sky; for height masks `true`
/// marks pixels excluded from the loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

pub type SkyMask = Mask;

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} mask with {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self::new(width, height, data).expect("positive dimensions")
    }

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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub(crate) fn check_matches<T>(&self, r: &Raster<T>, what: &str) -> Result<()> {
        if self.width == r.width && self.height == r.height {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: mask {}x{} vs raster {}x{}",
                self.width, self.height, r.width, r.height
            )))
        }
    }
}
