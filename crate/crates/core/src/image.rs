//! Interleaved `height x width x channels` images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit display image.
pub type ImageU8 = Image<u8>;

impl<T: Copy> Image<T> {
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!("image extent {height}x{width}x{channels} has a zero dimension")));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!("{} samples for a {height}x{width}x{channels} image", data.len())));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Image { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image { height, width, channels, data }
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

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
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
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Image::from_fn(self.height, self.width, self.channels, |y, x, c| self.get(y, self.width - 1 - x, c))
    }
}

impl<T: Copy + Into<f64>> Image<T> {
    /// Bilinear sample at real coordinates; positions outside the image read
    /// the nearest edge pixel.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.get(y0, x0, c).into() * (1.0 - fx) + self.get(y0, x1, c).into() * fx;
        let bottom = self.get(y1, x0, c).into() * (1.0 - fx) + self.get(y1, x1, c).into() * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

impl Image<u8> {
    /// Scale to `[0, 1]`.
    pub fn to_unit(&self) -> Image<f32> {
        self.map(|v| v as f32 / 255.0)
    }
}

/// Round and clamp a real sample into `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
