//! Joint random transforms of (image, flow input, dots) groups: scale,
//! crop, flip, gamma, applied in that order.

use rand::Rng;
use thiserror::Error;

use crate::density::{quantize, Dot, DotMap};
use crate::flow::FlowInput;
use crate::raster::{Plane, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("crop window {size} at ({ox}, {oy}) exceeds {width}x{height}")]
    CropOutOfBounds {
        size: usize,
        ox: usize,
        oy: usize,
        width: usize,
        height: usize,
    },
    #[error("scale {factor} gives {width}x{height}, smaller than crop {crop}")]
    ScaledTooSmall {
        factor: f64,
        width: usize,
        height: usize,
        crop: usize,
    },
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("scale factor must be positive, got {0}")]
    BadScale(f64),
    #[error("group members disagree on size")]
    Inconsistent,
    #[error("invalid augmentation config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleMeta {
    pub sequence: String,
    pub frame: usize,
}

/// One training triple; all members share the same width and height.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGroup {
    pub image: RgbImage,
    pub flow: FlowInput,
    pub dots: DotMap,
    pub meta: SampleMeta,
}

impl SampleGroup {
    pub fn new(image: RgbImage, flow: FlowInput, dots: DotMap, meta: SampleMeta) -> Result<Self, AugmentError> {
        let g = Self {
            image,
            flow,
            dots,
            meta,
        };
        g.check()?;
        Ok(g)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    fn check(&self) -> Result<(), AugmentError> {
        let d = self.image.dims();
        let f = &self.flow;
        if f.fsub.dims() != d || f.su.dims() != d || f.sv.dims() != d || self.dots.dims() != d {
            return Err(AugmentError::Inconsistent);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub gamma_prob: f64,
    pub gamma_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub seed: u64,
    /// Negate flow components under flips and rescale magnitudes under
    /// resizing. Off mirrors and resamples the planes only.
    pub flow_correction: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: 576,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            gamma_prob: 0.5,
            gamma_range: (0.4, 2.0),
            scale_range: (0.6, 1.8),
            seed: 0,
            flow_correction: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.to_string()));
        if self.crop == 0 {
            return bad("crop must be positive");
        }
        for p in [self.hflip_prob, self.vflip_prob, self.gamma_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        let (g0, g1) = self.gamma_range;
        if !(g0 > 0.0 && g1 >= g0) {
            return bad("gamma range must be positive and ordered");
        }
        let (s0, s1) = self.scale_range;
        if !(s0 > 0.0 && s1 >= s0) {
            return bad("scale range must be positive and ordered");
        }
        Ok(())
    }

    /// Checks that every scale in range leaves room for the crop on a
    /// `width`×`height` input.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<(), AugmentError> {
        self.validate()?;
        let (w, h) = scaled_dims(width, height, self.scale_range.0);
        if w.min(h) < self.crop {
            return Err(AugmentError::ScaledTooSmall {
                factor: self.scale_range.0,
                width: w,
                height: h,
                crop: self.crop,
            });
        }
        Ok(())
    }
}

/// The random choices made by one pipeline draw.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentTrace {
    pub scale: f64,
    pub offset: (usize, usize),
    pub hflip: bool,
    pub vflip: bool,
    pub gamma: Option<f64>,
}

/// Size after resizing by `factor`; the last pixel center `W-1` maps to
/// `(W-1)*factor`, which must stay inside the output.
pub fn scaled_dims(width: usize, height: usize, factor: f64) -> (usize, usize) {
    let d = |n: usize| ((n - 1) as f64 * factor).ceil() as usize + 1;
    (d(width), d(height))
}

/// Scaled dot coordinate, as used by [`random_scale`].
pub fn scale_coord(v: f64, factor: f64) -> f64 {
    quantize(v * factor)
}

pub fn random_crop(g: &SampleGroup, size: usize, offset: (usize, usize)) -> Result<SampleGroup, AugmentError> {
    let (w, h) = g.dims();
    let (ox, oy) = offset;
    if ox + size > w || oy + size > h || size == 0 {
        return Err(AugmentError::CropOutOfBounds {
            size,
            ox,
            oy,
            width: w,
            height: h,
        });
    }
    if (ox, oy) == (0, 0) && (size, size) == (w, h) {
        return Ok(g.clone());
    }
    let crop = |p: &Plane| p.crop(ox, oy, size, size);
    let image = g.image.map_planes(crop);
    let flow = FlowInput {
        mode: g.flow.mode,
        su: crop(&g.flow.su),
        sv: crop(&g.flow.sv),
        fsub: crop(&g.flow.fsub),
        norm: g.flow.norm,
    };
    let (x0, y0) = (ox as f64, oy as f64);
    let last = (size - 1) as f64;
    let dots = g
        .dots
        .dots()
        .iter()
        .filter_map(|d| {
            let (x, y) = (d.x - x0, d.y - y0);
            (x >= 0.0 && x <= last && y >= 0.0 && y <= last).then_some(Dot { x, y })
        })
        .collect();
    Ok(SampleGroup {
        image,
        flow,
        dots: DotMap::from_exact(size, size, dots),
        meta: g.meta.clone(),
    })
}

fn flip_with(g: &SampleGroup, axis: FlipAxis, correct_flow: bool) -> SampleGroup {
    let (w, h) = g.dims();
    let mirror = |p: &Plane| match axis {
        FlipAxis::Horizontal => p.flip_horizontal(),
        FlipAxis::Vertical => p.flip_vertical(),
    };
    let negate = |mut p: Plane| {
        p.data.iter_mut().for_each(|v| *v = -*v);
        p
    };
    let (mut su, mut sv) = (mirror(&g.flow.su), mirror(&g.flow.sv));
    if correct_flow {
        match axis {
            FlipAxis::Horizontal => su = negate(su),
            FlipAxis::Vertical => sv = negate(sv),
        }
    }
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    let dots = g
        .dots
        .dots()
        .iter()
        .map(|d| match axis {
            FlipAxis::Horizontal => Dot { x: xm - d.x, y: d.y },
            FlipAxis::Vertical => Dot { x: d.x, y: ym - d.y },
        })
        .collect();
    SampleGroup {
        image: g.image.map_planes(mirror),
        flow: FlowInput {
            mode: g.flow.mode,
            su,
            sv,
            fsub: mirror(&g.flow.fsub),
            norm: g.flow.norm,
        },
        dots: DotMap::from_exact(w, h, dots),
        meta: g.meta.clone(),
    }
}

/// Mirrors the group. The flow is corrected physically: a horizontal flip
/// negates `u` (polar angle `h -> 0.5 - h`), a vertical flip negates `v`
/// (`h -> 1 - h`).
pub fn flip(g: &SampleGroup, axis: FlipAxis) -> SampleGroup {
    flip_with(g, axis, true)
}

/// `v -> v^gamma` on the RGB image only.
pub fn gamma_correct(image: &RgbImage, gamma: f64) -> Result<RgbImage, AugmentError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(AugmentError::BadGamma(gamma));
    }
    if gamma == 1.0 {
        return Ok(image.clone());
    }
    let mut out = image.clone();
    let g = gamma as f32;
    out.data
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0).powf(g));
    Ok(out)
}

fn scale_with(g: &SampleGroup, factor: f64, min_size: usize, correct_flow: bool) -> Result<SampleGroup, AugmentError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(AugmentError::BadScale(factor));
    }
    let (w, h) = g.dims();
    let (nw, nh) = scaled_dims(w, h, factor);
    if nw.min(nh) < min_size {
        return Err(AugmentError::ScaledTooSmall {
            factor,
            width: nw,
            height: nh,
            crop: min_size,
        });
    }
    if factor == 1.0 {
        return Ok(g.clone());
    }
    let rs = |p: &Plane| p.resample(nw, nh, factor);
    let norm = if correct_flow {
        g.flow.norm * factor as f32
    } else {
        g.flow.norm
    };
    let dots = g
        .dots
        .dots()
        .iter()
        .map(|d| Dot {
            x: scale_coord(d.x, factor),
            y: scale_coord(d.y, factor),
        })
        .collect();
    Ok(SampleGroup {
        image: g.image.map_planes(rs),
        flow: FlowInput {
            mode: g.flow.mode,
            su: rs(&g.flow.su),
            sv: rs(&g.flow.sv),
            fsub: rs(&g.flow.fsub),
            norm,
        },
        dots: DotMap::from_exact(nw, nh, dots),
        meta: g.meta.clone(),
    })
}

/// Resizes the group by `factor`. Dot coordinates and flow displacements
/// scale with it; the count is unchanged. Fails when the result would be
/// smaller than `min_size` on either axis.
pub fn random_scale(g: &SampleGroup, factor: f64, min_size: usize) -> Result<SampleGroup, AugmentError> {
    scale_with(g, factor, min_size, true)
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

/// Draws and applies scale, crop, flips and gamma, in that order.
pub fn apply_pipeline(
    g: &SampleGroup,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(SampleGroup, AugmentTrace), AugmentError> {
    cfg.validate()?;
    let scale = draw(rng, cfg.scale_range);
    let scaled = scale_with(g, scale, cfg.crop, cfg.flow_correction)?;

    let (w, h) = scaled.dims();
    let ox = rng.gen_range(0..=w - cfg.crop);
    let oy = rng.gen_range(0..=h - cfg.crop);
    let mut out = random_crop(&scaled, cfg.crop, (ox, oy))?;

    let hflip = rng.gen_bool(cfg.hflip_prob);
    if hflip {
        out = flip_with(&out, FlipAxis::Horizontal, cfg.flow_correction);
    }
    let vflip = rng.gen_bool(cfg.vflip_prob);
    if vflip {
        out = flip_with(&out, FlipAxis::Vertical, cfg.flow_correction);
    }

    let gamma = if rng.gen_bool(cfg.gamma_prob) {
        let gm = draw(rng, cfg.gamma_range);
        out.image = gamma_correct(&out.image, gm)?;
        Some(gm)
    } else {
        None
    };
    out.check()?;
    Ok((
        out,
        AugmentTrace {
            scale,
            offset: (ox, oy),
            hflip,
            vflip,
            gamma,
        },
    ))
}
