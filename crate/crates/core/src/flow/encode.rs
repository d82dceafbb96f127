use std::f64::consts::TAU;

use super::{FlowError, FlowField};
use crate::raster::{Plane, RgbImage};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMode {
    /// `(u/M, v/M, f_sub)`, signed components remapped to `[0, 1]`.
    Cartesian,
    /// `(angle / 2pi, magnitude / M, f_sub)`.
    Polar,
}

impl FlowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowMode::Cartesian => "cartesian",
            FlowMode::Polar => "polar",
        }
    }
}

impl std::str::FromStr for FlowMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cartesian" => Ok(FlowMode::Cartesian),
            "polar" => Ok(FlowMode::Polar),
            other => Err(format!("unknown flow mode {other:?} (cartesian|polar)")),
        }
    }
}

/// Flow-branch input for one frame.
///
/// The flow is held as components normalized by `norm` (the per-frame max
/// magnitude at encoding time), so mirroring is an exact negation and
/// decoding is `u = su * norm`. [`FlowInput::channels`] produces the three
/// network channels for the configured mode.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowInput {
    pub mode: FlowMode,
    pub su: Plane,
    pub sv: Plane,
    pub fsub: Plane,
    pub norm: f32,
}

impl FlowInput {
    pub fn dims(&self) -> (usize, usize) {
        self.fsub.dims()
    }

    pub fn decode(&self) -> FlowField {
        let scale = |p: &Plane| Plane {
            width: p.width,
            height: p.height,
            data: p.data.iter().map(|&v| v * self.norm).collect(),
        };
        FlowField {
            u: scale(&self.su),
            v: scale(&self.sv),
        }
    }

    /// Angle channel `f_h` in `[0, 1)`; `atan2(0, 0)` is taken as 0.
    pub fn hue(&self) -> Plane {
        Plane {
            width: self.su.width,
            height: self.su.height,
            data: self
                .su
                .data
                .iter()
                .zip(&self.sv.data)
                .map(|(&u, &v)| angle_fraction(u, v))
                .collect(),
        }
    }

    /// Magnitude channel `f_s` in `[0, 1]`.
    pub fn saturation(&self) -> Plane {
        Plane {
            width: self.su.width,
            height: self.su.height,
            data: self
                .su
                .data
                .iter()
                .zip(&self.sv.data)
                .map(|(&u, &v)| u.hypot(v).min(1.0))
                .collect(),
        }
    }

    pub fn channels(&self) -> [Plane; 3] {
        match self.mode {
            FlowMode::Cartesian => {
                let remap = |p: &Plane| Plane {
                    width: p.width,
                    height: p.height,
                    data: p.data.iter().map(|&s| ((s + 1.0) * 0.5).clamp(0.0, 1.0)).collect(),
                };
                [remap(&self.su), remap(&self.sv), self.fsub.clone()]
            }
            FlowMode::Polar => [self.hue(), self.saturation(), self.fsub.clone()],
        }
    }

    /// `1×3×H×W` network input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = self.dims();
        let mut data = Vec::with_capacity(3 * w * h);
        for p in self.channels() {
            data.extend(p.data.iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        Tensor::new(vec![1, 3, h, w], data).expect("three planes")
    }

    pub fn with_mode(mut self, mode: FlowMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_mode_ref(&self, mode: FlowMode) -> std::borrow::Cow<'_, FlowInput> {
        if self.mode == mode {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.clone().with_mode(mode))
        }
    }
}

fn angle_fraction(u: f32, v: f32) -> f32 {
    if u == 0.0 && v == 0.0 {
        return 0.0;
    }
    let a = (v as f64).atan2(u as f64).rem_euclid(TAU) / TAU;
    let a = a as f32;
    if a >= 1.0 {
        0.0
    } else {
        a
    }
}

/// `(lum(t) - lum(t+1) + 1) / 2` per pixel.
pub fn frame_difference(frame_t: &RgbImage, frame_t1: &RgbImage) -> Result<Plane, FlowError> {
    if frame_t.dims() != frame_t1.dims() {
        return Err(FlowError::SizeMismatch(frame_t.dims(), frame_t1.dims()));
    }
    let (a, b) = (frame_t.luminance(), frame_t1.luminance());
    Ok(Plane {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&p, &q)| ((p - q + 1.0) * 0.5).clamp(0.0, 1.0))
            .collect(),
    })
}

/// Zeroes every vector with magnitude below `tau`.
pub fn threshold_filter(flow: &FlowField, tau: f32) -> Result<FlowField, FlowError> {
    if !(tau >= 0.0) {
        return Err(FlowError::InvalidParam(format!("tau must be >= 0, got {tau}")));
    }
    let mut out = flow.clone();
    for i in 0..out.u.data.len() {
        if flow.magnitude_at(i) < tau {
            out.u.data[i] = 0.0;
            out.v.data[i] = 0.0;
        }
    }
    Ok(out)
}

pub fn encode_flow(flow: &FlowField, fsub: &Plane, mode: FlowMode) -> Result<FlowInput, FlowError> {
    if flow.dims() != fsub.dims() {
        return Err(FlowError::SizeMismatch(flow.dims(), fsub.dims()));
    }
    let m = flow.max_magnitude();
    let norm = if m > 0.0 { m } else { 1.0 };
    let scale = |p: &Plane| Plane {
        width: p.width,
        height: p.height,
        data: p.data.iter().map(|&v| v / norm).collect(),
    };
    Ok(FlowInput {
        mode,
        su: scale(&flow.u),
        sv: scale(&flow.v),
        fsub: fsub.clone(),
        norm,
    })
}
