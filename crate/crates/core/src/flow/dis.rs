//! Dense inverse search: coarse-to-fine patch alignment by inverse
//! compositional Gauss-Newton on a translation, then densification.

use rayon::prelude::*;

use super::pyramid::build_pyramid;
use super::{DisParams, FlowError, FlowField};
use crate::raster::Plane;

/// Hessians with a smaller determinant are treated as singular.
const MIN_HESSIAN_DET: f64 = 1e-6;

/// How covering patches are weighted when densifying.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensifyWeight {
    /// `1 / max(eps, mean |residual| over the patch)`.
    PatchMean,
    /// `1 / max(eps, |residual|)` of the patch's flow at the pixel itself.
    PerPixel,
}

#[derive(Clone, Copy, Debug)]
struct PatchFlow {
    x: usize,
    y: usize,
    u: f32,
    v: f32,
    residual: f32,
}

/// Estimates flow from `frame_t` to `frame_t1` (luminance planes in `[0,1]`).
pub fn dis_flow(frame_t: &Plane, frame_t1: &Plane, params: &DisParams) -> Result<FlowField, FlowError> {
    if frame_t.dims() != frame_t1.dims() {
        return Err(FlowError::SizeMismatch(frame_t.dims(), frame_t1.dims()));
    }
    let pyr0 = build_pyramid(frame_t, params)?;
    let pyr1 = build_pyramid(frame_t1, params)?;

    let (cw, ch) = pyr0[0].dims();
    let mut flow = FlowField::zeros(cw, ch);
    for (level, (i0, i1)) in pyr0.iter().zip(&pyr1).enumerate() {
        if level > 0 {
            flow = upscale_flow(&flow, i0.width, i0.height, params.downscale);
        }
        flow = refine_level(i0, i1, &flow, params);
    }
    Ok(flow)
}

/// Resizes a coarse flow to `(w, h)` and multiplies displacements by `k`.
fn upscale_flow(flow: &FlowField, w: usize, h: usize, k: usize) -> FlowField {
    let kf = k as f32;
    let src = |p: &Plane| {
        Plane::from_fn(w, h, |x, y| {
            kf * p.sample((x as f32 + 0.5) / kf - 0.5, (y as f32 + 0.5) / kf - 0.5)
        })
    };
    FlowField {
        u: src(&flow.u),
        v: src(&flow.v),
    }
}

/// Patch origins along one axis: every `stride` px, plus a final patch flush
/// with the far border.
fn patch_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let last = len - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("nonempty") != last {
        out.push(last);
    }
    out
}

fn gradients(img: &Plane) -> (Plane, Plane) {
    let (w, h) = img.dims();
    let gx = Plane::from_fn(w, h, |x, y| {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        (img.at(xr, y) - img.at(xl, y)) / (xr - xl).max(1) as f32
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        (img.at(x, yd) - img.at(x, yu)) / (yd - yu).max(1) as f32
    });
    (gx, gy)
}

struct Template {
    vals: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
    hessian: [f64; 3],
}

fn inside(img: &Plane, x: f32, y: f32) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (img.width - 1) as f32 && y <= (img.height - 1) as f32
}

/// Mean absolute residual of a patch under displacement `(u, v)`.
fn patch_residual(i1: &Plane, t: &Template, px: usize, py: usize, size: usize, u: f32, v: f32) -> f32 {
    let mut acc = 0.0f64;
    for dy in 0..size {
        for dx in 0..size {
            let (sx, sy) = ((px + dx) as f32 + u, (py + dy) as f32 + v);
            acc += (i1.sample(sx, sy) - t.vals[dy * size + dx]).abs() as f64;
        }
    }
    (acc / (size * size) as f64) as f32
}

#[allow(clippy::too_many_arguments)]
fn align_patch(
    i0: &Plane,
    i1: &Plane,
    grads: &(Plane, Plane),
    init: &FlowField,
    px: usize,
    py: usize,
    size: usize,
    iterations: usize,
) -> PatchFlow {
    let n = size * size;
    let mut t = Template {
        vals: Vec::with_capacity(n),
        gx: Vec::with_capacity(n),
        gy: Vec::with_capacity(n),
        hessian: [0.0; 3],
    };
    for dy in 0..size {
        for dx in 0..size {
            let (x, y) = (px + dx, py + dy);
            let (gx, gy) = (grads.0.at(x, y), grads.1.at(x, y));
            t.vals.push(i0.at(x, y));
            t.gx.push(gx);
            t.gy.push(gy);
            t.hessian[0] += (gx * gx) as f64;
            t.hessian[1] += (gx * gy) as f64;
            t.hessian[2] += (gy * gy) as f64;
        }
    }
    let c = (size as f32 - 1.0) / 2.0;
    let (u0, v0) = (
        init.u.sample(px as f32 + c, py as f32 + c),
        init.v.sample(px as f32 + c, py as f32 + c),
    );
    let initial_residual = patch_residual(i1, &t, px, py, size, u0, v0);
    let det = |h: &[f64; 3]| h[0] * h[2] - h[1] * h[1];
    if det(&t.hessian) < MIN_HESSIAN_DET {
        return PatchFlow {
            x: px,
            y: py,
            u: u0,
            v: v0,
            residual: initial_residual,
        };
    }

    let (mut u, mut v) = (u0, v0);
    for _ in 0..iterations {
        let (mut bx, mut by) = (0.0f64, 0.0f64);
        let mut hess = t.hessian;
        for dy in 0..size {
            for dx in 0..size {
                let k = dy * size + dx;
                let (sx, sy) = ((px + dx) as f32 + u, (py + dy) as f32 + v);
                if inside(i1, sx, sy) {
                    let e = (i1.sample(sx, sy) - t.vals[k]) as f64;
                    bx += t.gx[k] as f64 * e;
                    by += t.gy[k] as f64 * e;
                } else {
                    // Drop samples that fall off the frame from the normal equations.
                    let (gx, gy) = (t.gx[k] as f64, t.gy[k] as f64);
                    hess[0] -= gx * gx;
                    hess[1] -= gx * gy;
                    hess[2] -= gy * gy;
                }
            }
        }
        let d = det(&hess);
        if d < MIN_HESSIAN_DET {
            break;
        }
        let du = (hess[2] * bx - hess[1] * by) / d;
        let dv = (hess[0] * by - hess[1] * bx) / d;
        u -= du as f32;
        v -= dv as f32;
        if du * du + dv * dv < 1e-8 {
            break;
        }
    }

    let residual = patch_residual(i1, &t, px, py, size, u, v);
    // Divergence guard: never accept a worse fit than the initialization.
    if !(residual <= initial_residual) || !u.is_finite() || !v.is_finite() {
        return PatchFlow {
            x: px,
            y: py,
            u: u0,
            v: v0,
            residual: initial_residual,
        };
    }
    PatchFlow {
        x: px,
        y: py,
        u,
        v,
        residual,
    }
}

fn refine_level(i0: &Plane, i1: &Plane, init: &FlowField, params: &DisParams) -> FlowField {
    let (w, h) = i0.dims();
    let size = params.patch_size.min(w).min(h);
    let stride = params.patch_stride.min(size);
    let grads = gradients(i0);
    let xs = patch_origins(w, size, stride);
    let ys = patch_origins(h, size, stride);
    let origins: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    let patches: Vec<PatchFlow> = origins
        .par_iter()
        .map(|&(x, y)| align_patch(i0, i1, &grads, init, x, y, size, params.iterations))
        .collect();
    densify(i0, i1, &patches, size, params)
}

/// Weighted mean of covering patch flows, reduced in fixed patch order.
fn densify(i0: &Plane, i1: &Plane, patches: &[PatchFlow], size: usize, params: &DisParams) -> FlowField {
    let (w, h) = i0.dims();
    let mut su = vec![0.0f64; w * h];
    let mut sv = vec![0.0f64; w * h];
    let mut sw = vec![0.0f64; w * h];
    let eps = params.densify_eps;
    for p in patches {
        let patch_weight = 1.0 / p.residual.max(eps);
        for dy in 0..size {
            for dx in 0..size {
                let (x, y) = (p.x + dx, p.y + dy);
                let weight = match params.densify_weight {
                    DensifyWeight::PatchMean => patch_weight,
                    DensifyWeight::PerPixel => {
                        let r = (i1.sample(x as f32 + p.u, y as f32 + p.v) - i0.at(x, y)).abs();
                        1.0 / r.max(eps)
                    }
                } as f64;
                let i = y * w + x;
                su[i] += weight * p.u as f64;
                sv[i] += weight * p.v as f64;
                sw[i] += weight;
            }
        }
    }
    let finish = |s: &[f64]| Plane {
        width: w,
        height: h,
        data: s
            .iter()
            .zip(&sw)
            .map(|(&a, &b)| if b > 0.0 { (a / b) as f32 } else { 0.0 })
            .collect(),
    };
    FlowField {
        u: finish(&su),
        v: finish(&sv),
    }
}
