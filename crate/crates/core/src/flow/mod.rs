//! Dense optical flow and the three-channel flow-branch input.

mod dis;
mod encode;
mod pyramid;

pub use dis::{dis_flow, DensifyWeight};
pub use encode::{encode_flow, frame_difference, threshold_filter, FlowInput, FlowMode};
pub use pyramid::build_pyramid;

use thiserror::Error;

use crate::raster::Plane;

pub const DEFAULT_TAU: f32 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("image {width}x{height} smaller than the coarsest level minimum {min_dim}")]
    TooSmall {
        width: usize,
        height: usize,
        min_dim: usize,
    },
    #[error("frame sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Per-pixel displacement in px/frame; `u` rightward, `v` downward.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            u: Plane::new(width, height),
            v: Plane::new(width, height),
        }
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            u: Plane::filled(width, height, u),
            v: Plane::filled(width, height, v),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width
    }

    pub fn height(&self) -> usize {
        self.u.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn magnitude_at(&self, i: usize) -> f32 {
        self.u.data[i].hypot(self.v.data[i])
    }

    pub fn max_magnitude(&self) -> f32 {
        (0..self.u.data.len())
            .map(|i| self.magnitude_at(i))
            .fold(0.0, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u.data.iter().chain(&self.v.data).all(|v| v.is_finite())
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut u = self.u.flip_horizontal();
        u.data.iter_mut().for_each(|x| *x = -*x);
        Self {
            u,
            v: self.v.flip_horizontal(),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        let mut v = self.v.flip_vertical();
        v.data.iter_mut().for_each(|x| *x = -*x);
        Self {
            u: self.u.flip_vertical(),
            v,
        }
    }

    /// Per-pixel endpoint error against `other`.
    pub fn endpoint_errors(&self, other: &FlowField) -> Vec<f32> {
        self.u
            .data
            .iter()
            .zip(&self.v.data)
            .zip(other.u.data.iter().zip(&other.v.data))
            .map(|((&a, &b), (&c, &d))| (a - c).hypot(b - d))
            .collect()
    }

    pub fn mean_endpoint_error(&self, other: &FlowField) -> f64 {
        let e = self.endpoint_errors(other);
        e.iter().map(|&v| v as f64).sum::<f64>() / e.len().max(1) as f64
    }
}

/// Dense inverse search parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DisParams {
    pub patch_size: usize,
    pub patch_stride: usize,
    pub iterations: usize,
    pub downscale: usize,
    pub min_dim: usize,
    pub densify_eps: f32,
    pub densify_weight: DensifyWeight,
}

impl Default for DisParams {
    fn default() -> Self {
        Self {
            patch_size: 8,
            patch_stride: 4,
            iterations: 8,
            downscale: 2,
            min_dim: 16,
            densify_eps: 1e-6,
            densify_weight: DensifyWeight::PatchMean,
        }
    }
}

impl DisParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidParam(m.to_string()));
        if self.patch_stride < 1 || self.patch_size < self.patch_stride {
            return bad("need patch_size >= patch_stride >= 1");
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if self.downscale < 2 {
            return bad("pyramid downscale factor must be >= 2");
        }
        if self.min_dim < 1 {
            return bad("min_dim must be >= 1");
        }
        if !(self.densify_eps > 0.0) {
            return bad("densify_eps must be positive");
        }
        Ok(())
    }
}
