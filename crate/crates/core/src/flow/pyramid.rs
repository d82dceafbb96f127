use super::{DisParams, FlowError};
use crate::raster::Plane;

/// Box-filtered image pyramid, returned coarse to fine. The finest level is
/// the input itself; each coarser level averages `k`×`k` blocks of the next
/// finer one, where `k` is the downscale factor.
pub fn build_pyramid(gray: &Plane, params: &DisParams) -> Result<Vec<Plane>, FlowError> {
    params.validate()?;
    let (w, h) = gray.dims();
    if w.min(h) < params.min_dim {
        return Err(FlowError::TooSmall {
            width: w,
            height: h,
            min_dim: params.min_dim,
        });
    }
    let k = params.downscale;
    let mut levels = vec![gray.clone()];
    loop {
        let top = levels.last().expect("nonempty");
        let (nw, nh) = (top.width / k, top.height / k);
        if nw.min(nh) < params.min_dim {
            break;
        }
        levels.push(downsample(top, k, nw, nh));
    }
    levels.reverse();
    Ok(levels)
}

fn downsample(src: &Plane, k: usize, nw: usize, nh: usize) -> Plane {
    let norm = 1.0 / (k * k) as f32;
    Plane::from_fn(nw, nh, |x, y| {
        let mut acc = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                acc += src.at(x * k + dx, y * k + dy);
            }
        }
        acc * norm
    })
}
