use std::path::Path;

use image::{ImageFormat, Luma};

use super::{read_bytes, write_atomic, IoError, Reader, Result};
use crate::density::DensityMap;
use crate::raster::Plane;

/// `width u32, height u32`, then `f32` values row-major.
pub fn encode_density(map: &DensityMap) -> Vec<u8> {
    let p = map.plane();
    let mut out = Vec::with_capacity(8 + 4 * p.data.len());
    out.extend_from_slice(&(p.width as u32).to_le_bytes());
    out.extend_from_slice(&(p.height as u32).to_le_bytes());
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_density(bytes: &[u8]) -> Result<DensityMap> {
    let mut r = Reader::new(bytes);
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let expected = (w as u128 * h as u128 * 4 + 8).min(usize::MAX as u128) as usize;
    if bytes.len() != expected {
        return Err(IoError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let data = r.f32s(w * h)?;
    r.finish()?;
    Ok(DensityMap(Plane {
        width: w,
        height: h,
        data,
    }))
}

pub fn write_density(path: &Path, map: &DensityMap) -> Result<()> {
    write_atomic(path, &encode_density(map))
}

pub fn read_density(path: &Path) -> Result<DensityMap> {
    decode_density(&read_bytes(path)?)
}

/// 8-bit grayscale PNG with the map's maximum at 255.
pub fn density_png(map: &DensityMap) -> Result<Vec<u8>> {
    let p = map.plane();
    let max = p.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let img = image::ImageBuffer::from_fn(p.width as u32, p.height as u32, |x, y| {
        let v = p.at(x as usize, y as usize).max(0.0) * scale;
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| IoError::Image {
        path: "<memory>".into(),
        msg: e.to_string(),
    })?;
    Ok(buf.into_inner())
}

pub fn write_density_png(path: &Path, map: &DensityMap) -> Result<()> {
    write_atomic(path, &density_png(map)?)
}

/// `width u32, height u32, count u32`, then each plane row-major.
pub fn encode_planes(planes: &[Plane]) -> Result<Vec<u8>> {
    let (w, h) = planes.first().map(Plane::dims).unwrap_or((0, 0));
    if planes.iter().any(|p| p.dims() != (w, h)) {
        return Err(IoError::Invalid("planes differ in size".into()));
    }
    let mut out = Vec::with_capacity(12 + 4 * w * h * planes.len());
    for v in [w, h, planes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in planes {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_planes(bytes: &[u8]) -> Result<Vec<Plane>> {
    let mut r = Reader::new(bytes);
    let (w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let expected = (w as u128 * h as u128 * c as u128 * 4 + 12).min(usize::MAX as u128) as usize;
    if bytes.len() != expected {
        return Err(IoError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(c);
    for _ in 0..c {
        out.push(Plane {
            width: w,
            height: h,
            data: r.f32s(w * h)?,
        });
    }
    r.finish()?;
    Ok(out)
}
