use crate::error::{Error, Result};

/// Row-major `height x width x channels` raster of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PlanarMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "map dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("planar map"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "map dimensions must be positive");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut m = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    m.set(x, y, c, f(x, y, c));
                }
            }
        }
        m
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &PlanarMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_dims(&self, other: &PlanarMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// Single channel `c` as a 1-channel map.
    pub fn channel(&self, c: usize) -> PlanarMap {
        PlanarMap::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    /// First `n` channels.
    pub fn take_channels(&self, n: usize) -> PlanarMap {
        let n = n.min(self.channels);
        PlanarMap::from_fn(self.width, self.height, n, |x, y, c| self.get(x, y, c))
    }
}
