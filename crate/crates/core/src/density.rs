//! Head annotations, density-map supervision and counting metrics.

use thiserror::Error;

use crate::raster::Plane;

/// Dot coordinates are snapped to this grid (px). Sums and differences of
/// snapped coordinates below 2^40 are exact in `f64`, which keeps crop and
/// flip arithmetic exactly invertible.
pub const DOT_QUANTUM: f64 = 1.0 / 1024.0;

/// Kernel truncation radius in units of sigma.
pub const TRUNCATION_SIGMAS: f64 = 4.0;

pub const DEFAULT_SIGMA: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("dot ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("count metrics need at least one frame")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
}

pub fn quantize(v: f64) -> f64 {
    (v / DOT_QUANTUM).round() * DOT_QUANTUM
}

/// Head positions for one frame, in pixel-center coordinates: pixel `i`
/// is centered on `i`, so every dot satisfies `0 <= x <= W-1`,
/// `0 <= y <= H-1`. Mirroring `x -> W-1-x` maps this range onto itself.
#[derive(Clone, Debug, PartialEq)]
pub struct DotMap {
    width: usize,
    height: usize,
    dots: Vec<Dot>,
}

impl DotMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dots: Vec::new(),
        }
    }

    /// Builds a map from raw coordinates, snapping them to [`DOT_QUANTUM`].
    pub fn new(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self, DensityError> {
        let mut map = Self::empty(width, height);
        for (x, y) in points {
            map.push(x, y)?;
        }
        Ok(map)
    }

    /// Adds a dot. Coordinates in `[0, W)` are accepted; those in the last
    /// half of the final pixel (`(W-1, W)`) are pulled back onto its center.
    pub fn push(&mut self, x: f64, y: f64) -> Result<(), DensityError> {
        let inside = |v: f64, lim: usize| v.is_finite() && v >= 0.0 && v < lim as f64;
        if !inside(x, self.width) || !inside(y, self.height) {
            return Err(DensityError::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let qx = quantize(x).min((self.width - 1) as f64);
        let qy = quantize(y).min((self.height - 1) as f64);
        self.dots.push(Dot { x: qx, y: qy });
        Ok(())
    }

    /// Builds from coordinates already on the quantum grid and in bounds.
    pub(crate) fn from_exact(width: usize, height: usize, dots: Vec<Dot>) -> Self {
        debug_assert!(dots.iter().all(|d| d.x >= 0.0
            && d.y >= 0.0
            && d.x <= (width - 1) as f64
            && d.y <= (height - 1) as f64
            && quantize(d.x) == d.x
            && quantize(d.y) == d.y));
        Self {
            width,
            height,
            dots,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dots(&self) -> &[Dot] {
        &self.dots
    }

    pub fn len(&self) -> usize {
        self.dots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dots.is_empty()
    }
}

/// Nonnegative persons-per-pixel map.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap(pub Plane);

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self(Plane::new(width, height))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Estimated person count: the sum of all pixels.
    pub fn count(&self) -> f64 {
        count(self)
    }
}

pub fn count(map: &DensityMap) -> f64 {
    map.0.sum()
}

/// Renders each dot as an isotropic Gaussian truncated at 4 sigma and
/// renormalized over its in-image support, so every dot contributes mass 1.
pub fn rasterize_density(dots: &DotMap, sigma: f64) -> Result<DensityMap, DensityError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DensityError::BadSigma(sigma));
    }
    let (w, h) = dots.dims();
    let mut acc = vec![0.0f64; w * h];
    let radius = TRUNCATION_SIGMAS * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights: Vec<(usize, f64)> = Vec::new();

    for d in dots.dots() {
        if d.x < 0.0 || d.y < 0.0 || d.x >= w as f64 || d.y >= h as f64 {
            return Err(DensityError::OutOfBounds {
                x: d.x,
                y: d.y,
                width: w,
                height: h,
            });
        }
        weights.clear();
        let x0 = (d.x - radius).ceil().max(0.0) as usize;
        let x1 = ((d.x + radius).floor() as usize).min(w - 1);
        let y0 = (d.y - radius).ceil().max(0.0) as usize;
        let y1 = ((d.y + radius).floor() as usize).min(h - 1);
        let mut total = 0.0;
        for py in y0..=y1 {
            let dy = py as f64 - d.y;
            for px in x0..=x1 {
                let dx = px as f64 - d.x;
                let r2 = dx * dx + dy * dy;
                if r2 <= radius * radius {
                    let g = (-r2 * inv).exp();
                    total += g;
                    weights.push((py * w + px, g));
                }
            }
        }
        if total > 0.0 {
            for &(i, g) in &weights {
                acc[i] += g / total;
            }
        } else {
            // Support too narrow to reach any pixel center.
            let px = (d.x.round() as usize).min(w - 1);
            let py = (d.y.round() as usize).min(h - 1);
            acc[py * w + px] += 1.0;
        }
    }
    Ok(DensityMap(Plane {
        width: w,
        height: h,
        data: acc.into_iter().map(|v| v as f32).collect(),
    }))
}

/// Per-pixel MAE and root-mean-square error between two maps.
pub fn pixel_mae_mse(pred: &DensityMap, gt: &DensityMap) -> Result<(f64, f64), DensityError> {
    if pred.dims() != gt.dims() {
        return Err(DensityError::SizeMismatch(pred.dims(), gt.dims()));
    }
    let n = pred.0.data.len().max(1) as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&z, &zh) in pred.0.data.iter().zip(&gt.0.data) {
        let d = (z as f64 - zh as f64).abs();
        abs += d;
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Count-level MAE and root-mean-square error over `(pred, gt)` pairs.
pub fn count_mae_mse(pairs: &[(f64, f64)]) -> Result<(f64, f64), DensityError> {
    if pairs.is_empty() {
        return Err(DensityError::Empty);
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let mse = (pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n).sqrt();
    Ok((mae, mse))
}
