//! Raster containers.
//!
//! Every multi-band raster is stored band-sequential (BSQ): all pixels of
//! band 0 in row-major order, then band 1, and so on. Per-band operations
//! therefore work on contiguous slices.

use crate::error::{Error, Result};

/// A `height × width × channels` raster of `f64` values in BSQ layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// A hyperspectral image in reflectance units.
pub type HsiCube = Cube;

/// A cube living in a transformed (wavelet or PCA) domain.
pub type LatentCube = Cube;

impl Cube {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "cube dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![0.0; height * width * channels],
        )
    }

    /// Builds a cube from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds a cube from one spectrum per pixel (pixels in row-major order).
    pub fn from_pixel_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, &mut [f64]),
    ) -> Result<Self> {
        let pixels = height * width;
        let mut data = vec![0.0; pixels * channels];
        let mut spectrum = vec![0.0; channels];
        for p in 0..pixels {
            spectrum.iter_mut().for_each(|v| *v = 0.0);
            f(p, &mut spectrum);
            for (c, v) in spectrum.iter().enumerate() {
                data[c * pixels + p] = *v;
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Stacks single-band planes (all the same size) into a cube.
    pub fn from_bands(height: usize, width: usize, bands: &[&[f64]]) -> Result<Self> {
        let pixels = height * width;
        let mut data = Vec::with_capacity(pixels * bands.len());
        for (i, b) in bands.iter().enumerate() {
            if b.len() != pixels {
                return Err(Error::shape(format!(
                    "band {i} has {} values, expected {pixels}",
                    b.len()
                )));
            }
            data.extend_from_slice(b);
        }
        Self::new(height, width, bands.len(), data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, c: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.pixels();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn bands(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixels())
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Copies the spectrum of pixel `p` (row-major index) into `out`.
    pub fn spectrum_into(&self, p: usize, out: &mut [f64]) {
        let n = self.pixels();
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.data[c * n + p];
        }
    }

    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.spectrum_into(p, &mut out);
        out
    }

    pub fn same_shape(&self, other: &Cube) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn require_same_shape(&self, other: &Cube, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Fails with [`Error::NonFinite`] on the first NaN or infinity.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                context: context.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    /// Mean over all pixels for each channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = self.pixels() as f64;
        self.bands().map(|b| b.iter().sum::<f64>() / n).collect()
    }

    /// Per-pixel mean over channels.
    pub fn channel_mean_image(&self) -> Plane {
        let n = self.pixels();
        let mut acc = vec![0.0; n];
        for b in self.bands() {
            for (a, v) in acc.iter_mut().zip(b) {
                *a += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Plane {
            height: self.height,
            width: self.width,
            values: acc,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Cube {
        Cube {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A single-band real-valued map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("plane dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::PayloadLength {
                expected: height * width,
                found: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            values: vec![v; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn into_cube(self) -> Result<Cube> {
        Cube::new(self.height, self.width, 1, self.values)
    }
}

/// Region labels, one per pixel (row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("segmentation dimensions must be positive"));
        }
        if labels.len() != height * width {
            return Err(Error::PayloadLength {
                expected: height * width,
                found: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Number of distinct labels present.
    pub fn region_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}
