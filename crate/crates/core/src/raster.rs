//! Single-plane and planar RGB float images.

use crate::tensor::{Scalar, Tensor};

/// Luminance weights applied to (R, G, B).
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// One row-major `f32` channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let xm = (self.width - 1) as f32;
        let ym = (self.height - 1) as f32;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) + (self.at(x1, y0) - self.at(x0, y0)) * fx;
        let bot = self.at(x0, y1) + (self.at(x1, y1) - self.at(x0, y1)) * fx;
        top + (bot - top) * fy
    }

    pub fn crop(&self, ox: usize, oy: usize, w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |x, y| self.at(ox + x, oy + y))
    }

    pub fn flip_horizontal(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.at(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.at(x, self.height - 1 - y))
    }

    /// Resamples to `w`×`h`; output pixel `(x, y)` reads source position
    /// `(x / factor, y / factor)` (pixel centers on the integer grid).
    pub fn resample(&self, w: usize, h: usize, factor: f64) -> Plane {
        Plane::from_fn(w, h, |x, y| {
            self.sample((x as f64 / factor) as f32, (y as f64 / factor) as f32)
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Planar RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Three planes, R then G then B.
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for c in 0..3 {
            img.channel_mut(c).fill(rgb[c]);
        }
        img
    }

    pub fn from_planes(planes: [Plane; 3]) -> Self {
        let (width, height) = planes[0].dims();
        let mut data = Vec::with_capacity(3 * width * height);
        for p in &planes {
            assert_eq!(p.dims(), (width, height), "RGB planes must share dims");
            data.extend_from_slice(&p.data);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.width * self.height..][..self.width * self.height]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..][..n]
    }

    pub fn plane(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn planes(&self) -> [Plane; 3] {
        [self.plane(0), self.plane(1), self.plane(2)]
    }

    pub fn luminance(&self) -> Plane {
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        Plane {
            width: self.width,
            height: self.height,
            data: r
                .iter()
                .zip(g)
                .zip(b)
                .map(|((&r, &g), &b)| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
                .collect(),
        }
    }

    pub fn map_planes(&self, f: impl Fn(&Plane) -> Plane) -> RgbImage {
        let [r, g, b] = self.planes();
        RgbImage::from_planes([f(&r), f(&g), f(&b)])
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// `1×3×H×W` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, 3, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )
        .expect("planar layout matches NCHW")
    }
}
