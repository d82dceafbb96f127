use std::path::Path;

use super::{read_bytes, write_atomic, IoError, Result};
use crate::flow::FlowField;
use crate::raster::Plane;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    if !flow.is_finite() {
        return Err(IoError::NonFinite("flow field"));
    }
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u.data.iter().zip(&flow.v.data) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(IoError::Truncated(bytes.len()));
    }
    if bytes[..4] != FLO_MAGIC.to_le_bytes() {
        return Err(IoError::BadMagic(bytes[..4].to_vec()));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w < 0 || h < 0 {
        return Err(IoError::Invalid(format!("negative flo dims {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = (w as u128 * h as u128 * 8 + 12).min(usize::MAX as u128) as usize;
    if bytes.len() != expected {
        return Err(IoError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for px in bytes[12..].chunks_exact(8) {
        u.push(f32::from_le_bytes(px[..4].try_into().expect("4 bytes")));
        v.push(f32::from_le_bytes(px[4..].try_into().expect("4 bytes")));
    }
    Ok(FlowField {
        u: Plane { width: w, height: h, data: u },
        v: Plane { width: w, height: h, data: v },
    })
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_atomic(path, &encode_flo(flow)?)
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_zero_flow_bytes() {
        let bytes = encode_flo(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], &[0x50, 0x49, 0x45, 0x48]); // "PIEH"
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert!(bytes[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn rejects_zero_magic_and_nonfinite() {
        let mut bytes = encode_flo(&FlowField::zeros(2, 2)).unwrap();
        bytes[..4].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(matches!(decode_flo(&bytes), Err(IoError::BadMagic(_))));
        let mut f = FlowField::zeros(2, 2);
        f.u.data[1] = f32::NAN;
        assert!(encode_flo(&f).is_err());
    }
}
