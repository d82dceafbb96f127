//! Forward and backward kernels on raw tensors, shared by the tape and by
//! callers that only need inference.

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent for one spatial axis, `None` when nonpositive.
    pub fn out_dim(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Range of output indices `o` for which `o*stride + offset` lands in `0..input`.
fn valid_range(offset: isize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi_excl = if (input as isize) - offset <= 0 {
        0
    } else {
        ((input as isize - offset - 1) / s + 1).min(out as isize)
    };
    let lo = lo as usize;
    let hi = hi_excl.max(0) as usize;
    (lo.min(hi), hi)
}

pub fn conv2d_shape(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    geom: ConvGeometry,
) -> Result<[usize; 4]> {
    let (&[n, c, h, wd], &[o, i, kh, kw]) = (x, w) else {
        return Err(TensorError::Rank {
            op: "conv2d",
            expected: 4,
            shape: if x.len() != 4 { x.to_vec() } else { w.to_vec() },
        });
    };
    if c != i {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    if b != [o] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            lhs: w.to_vec(),
            rhs: b.to_vec(),
        });
    }
    if geom.stride == 0 || geom.dilation == 0 {
        return Err(TensorError::InvalidArgument(
            "conv2d: stride and dilation must be >= 1".into(),
        ));
    }
    let oh = geom.out_dim(h, kh).ok_or(TensorError::EmptyOutput)?;
    let ow = geom.out_dim(wd, kw).ok_or(TensorError::EmptyOutput)?;
    if oh == 0 || ow == 0 {
        return Err(TensorError::EmptyOutput);
    }
    Ok([n, o, oh, ow])
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, o, oh, ow] = conv2d_shape(x.shape(), w.shape(), b.shape(), geom)?;
    let (_, c, h, wd) = x.dims4("conv2d")?;
    let (_, _, kh, kw) = w.dims4("conv2d")?;
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![T::zero(); n * o * oh * ow];
    let (s, p, d) = (geom.stride, geom.padding as isize, geom.dilation);

    for ni in 0..n {
        for oc in 0..o {
            let plane = &mut out[(ni * o + oc) * oh * ow..][..oh * ow];
            plane.fill(bd[oc]);
            for ic in 0..c {
                let xin = &xd[(ni * c + ic) * h * wd..][..h * wd];
                for ky in 0..kh {
                    let yoff = (ky * d) as isize - p;
                    let (oy0, oy1) = valid_range(yoff, s, h, oh);
                    for kx in 0..kw {
                        let wv = wdat[((oc * c + ic) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let xoff = (kx * d) as isize - p;
                        let (ox0, ox1) = valid_range(xoff, s, wd, ow);
                        // tap entirely in padding
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = (oy * s) as isize + yoff;
                            let row = &xin[iy as usize * wd..][..wd];
                            let orow = &mut plane[oy * ow..][..ow];
                            if s == 1 {
                                let ix0 = (ox0 as isize + xoff) as usize;
                                for (ov, &xv) in orow[ox0..ox1]
                                    .iter_mut()
                                    .zip(&row[ix0..ix0 + (ox1 - ox0)])
                                {
                                    *ov = *ov + wv * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ((ox * s) as isize + xoff) as usize;
                                    orow[ox] = orow[ox] + wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Gradients of conv2d with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, wd) = x.dims4("conv2d_backward")?;
    let (o, _, kh, kw) = w.dims4("conv2d_backward")?;
    let (_, _, oh, ow) = dy.dims4("conv2d_backward")?;
    let (xd, wdat, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wdat.len()];
    let mut db = vec![T::zero(); o];
    let (s, p, d) = (geom.stride, geom.padding as isize, geom.dilation);

    for ni in 0..n {
        for oc in 0..o {
            let g = &dyd[(ni * o + oc) * oh * ow..][..oh * ow];
            db[oc] = db[oc] + g.iter().copied().sum::<T>();
            for ic in 0..c {
                let base = (ni * c + ic) * h * wd;
                let xin = &xd[base..][..h * wd];
                let dxin = &mut dx[base..][..h * wd];
                for ky in 0..kh {
                    let yoff = (ky * d) as isize - p;
                    let (oy0, oy1) = valid_range(yoff, s, h, oh);
                    for kx in 0..kw {
                        let widx = ((oc * c + ic) * kh + ky) * kw + kx;
                        let wv = wdat[widx];
                        let xoff = (kx * d) as isize - p;
                        let (ox0, ox1) = valid_range(xoff, s, wd, ow);
                        if ox0 == ox1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = ((oy * s) as isize + yoff) as usize;
                            let grow = &g[oy * ow..][..ow];
                            if s == 1 {
                                let ix0 = (ox0 as isize + xoff) as usize;
                                let len = ox1 - ox0;
                                let xrow = &xin[iy * wd + ix0..][..len];
                                let dxrow = &mut dxin[iy * wd + ix0..][..len];
                                for ((&gv, &xv), dxv) in
                                    grow[ox0..ox1].iter().zip(xrow).zip(dxrow.iter_mut())
                                {
                                    acc = acc + gv * xv;
                                    *dxv = *dxv + gv * wv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ((ox * s) as isize + xoff) as usize;
                                    let gv = grow[ox];
                                    acc = acc + gv * xin[iy * wd + ix];
                                    dxin[iy * wd + ix] = dxin[iy * wd + ix] + gv * wv;
                                }
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

/// Splits a rank-2 or rank-3 shape into `(batch, rows, cols)`.
fn mat_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(TensorError::Rank {
            op,
            expected: 3,
            shape: shape.to_vec(),
        }),
    }
}

/// Matrix product over the last two axes, batched over an optional leading axis.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k) = mat_dims(a.shape(), "matmul")?;
    let (bb, k2, n) = mat_dims(b.shape(), "matmul")?;
    if k != k2 || ba != bb || a.rank() != b.rank() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); ba * m * n];
    for bi in 0..ba {
        let ad = &a.data()[bi * m * k..][..m * k];
        let bd = &b.data()[bi * k * n..][..k * n];
        let od = &mut out[bi * m * n..][..m * n];
        matmul_into(ad, bd, od, m, k, n);
    }
    let shape = if a.rank() == 2 {
        vec![m, n]
    } else {
        vec![ba, m, n]
    };
    Tensor::new(shape, out)
}

fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..][..n]) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose_last<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (bn, r, c) = mat_dims(a.shape(), "transpose")?;
    let mut out = vec![T::zero(); a.len()];
    for bi in 0..bn {
        let src = &a.data()[bi * r * c..][..r * c];
        let dst = &mut out[bi * r * c..][..r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let shape = if a.rank() == 2 {
        vec![c, r]
    } else {
        vec![bn, c, r]
    };
    Tensor::new(shape, out)
}

/// Softmax over the last axis, stabilized by subtracting the row maximum.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = *a.shape().last().ok_or_else(|| TensorError::Rank {
        op: "softmax_rows",
        expected: 1,
        shape: vec![],
    })?;
    let mut out = a.data().to_vec();
    if cols == 0 {
        return Tensor::new(a.shape().to_vec(), out);
    }
    for row in out.chunks_mut(cols) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let cols = *y.shape().last().unwrap_or(&1);
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dr) in y
        .data()
        .chunks(cols)
        .zip(dy.data().chunks(cols))
        .zip(dx.chunks_mut(cols))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    Tensor {
        shape: y.shape().to_vec(),
        data: dx,
    }
}

/// Source index pair and weight for half-pixel bilinear resampling along one axis.
pub(crate) fn half_pixel_taps(dst: usize, factor: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    let frac = if i0 == i1 { 0.0 } else { pos - i0 as f64 };
    (i0, i1, frac)
}

/// Bilinear upsampling by an integer factor with half-pixel centers.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(TensorError::InvalidArgument(
            "bilinear_upsample: factor must be >= 1".into(),
        ));
    }
    let (n, c, h, w) = x.dims4("bilinear_upsample")?;
    let (oh, ow) = (h * factor, w * factor);
    let ytaps: Vec<_> = (0..oh).map(|y| half_pixel_taps(y, factor, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|x| half_pixel_taps(x, factor, w)).collect();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, src) in out.chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
        for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                plane[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    in_shape: &[usize],
    dy: &Tensor<T>,
    factor: usize,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let ytaps: Vec<_> = (0..oh).map(|y| half_pixel_taps(y, factor, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|x| half_pixel_taps(x, factor, w)).collect();
    let mut dx = Tensor::zeros(in_shape);
    for (plane, g) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(oh * ow)) {
        for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let gv = g[oy * ow + ox];
                let one = T::one();
                plane[y0 * w + x0] = plane[y0 * w + x0] + gv * (one - fy) * (one - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + gv * (one - fy) * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + gv * fy * (one - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + gv * fy * fx;
            }
        }
    }
    dx
}

/// Concatenates NCHW tensors along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| {
        TensorError::InvalidArgument("concat_channels: no inputs".into())
    })?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        total_c += xc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for ni in 0..n {
        for x in xs {
            let per = x.shape()[1] * h * w;
            out.extend_from_slice(&x.data()[ni * per..][..per]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

/// Channels `start..start+len` of an NCHW tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("slice_channels")?;
    if start + len > c || len == 0 {
        return Err(TensorError::InvalidArgument(format!(
            "slice_channels: {start}..{} out of 0..{c}",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(n * len * h * w);
    for ni in 0..n {
        out.extend_from_slice(&x.data()[(ni * c + start) * h * w..][..len * h * w]);
    }
    Tensor::new(vec![n, len, h, w], out)
}
