//! 2-d convolution and transposed convolution, both lowered to gather
//! matrices and [`gemm`]. Per output element the products are summed in
//! `(input channel, ky, kx)` order, matching a plain nested-loop reference.

use super::gemm::{gemm, gemm_bt};
use super::{shape_err, NnError, Scalar, Tensor};

pub fn conv_out_dim(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (stride > 0 && h + 2 * pad >= k).then(|| (h + 2 * pad - k) / stride + 1)
}

pub fn deconv_out_dim(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (h.checked_sub(1)? * stride + k).checked_sub(2 * pad)?;
    (stride > 0 && full > 0).then_some(full)
}

/// Gradients of a convolution-like op with respect to its input, weight and
/// bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    s: usize,
    p: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ohw..][..ohw];
                // output columns whose source column lies inside the image
                let lo = p.saturating_sub(kx).div_ceil(s).min(ow);
                let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(ow) } else { 0 }.max(lo);
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - p..hi + kx - p]);
                    } else {
                        for (ox, d) in (lo..hi).zip(&mut dst[lo..hi]) {
                            *d = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T>(bias: Option<&[T]>, co: usize) -> Result<(), NnError> {
    match bias {
        Some(b) if b.len() != co => shape_err(format!("bias has {} entries for {co} channels", b.len())),
        _ => Ok(()),
    }
}

fn conv2d_sized<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    s: usize,
    p: usize,
    (oh, ow): (usize, usize),
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, wd) = x.dims4()?;
    let (co, ci, k, k2) = w.dims4()?;
    if ci != c || k != k2 {
        return shape_err(format!("conv input {:?} with weight {:?}", x.shape(), w.shape()));
    }
    check_bias(bias, co)?;
    let (ohw, kk) = (oh * ow, c * k * k);
    let mut cols = vec![T::zero(); kk * ohw];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for b in 0..n {
        im2col(&x.data()[b * c * h * wd..][..c * h * wd], (c, h, wd), k, s, p, (oh, ow), &mut cols);
        let y = &mut out.data_mut()[b * co * ohw..][..co * ohw];
        gemm(co, ohw, kk, w.data(), &cols, y);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                y[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Cross-correlation of `x [n, ci, h, w]` with `w [co, ci, k, k]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let (_, _, h, wd) = x.dims4()?;
    let (_, _, k, _) = w.dims4()?;
    match (conv_out_dim(h, k, stride, pad), conv_out_dim(wd, k, stride, pad)) {
        (Some(oh), Some(ow)) => conv2d_sized(x, w, bias, stride, pad, (oh, ow)),
        _ => shape_err(format!("kernel {k} does not fit {h}x{wd} with pad {pad}")),
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Result<Vec<T>, NnError> {
    let (n, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (o, g) in db.iter_mut().enumerate() {
            for &v in &dy.data()[(b * c + o) * hw..][..hw] {
                *g += v;
            }
        }
    }
    Ok(db)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<T>, NnError> {
    let (n, c, h, wd) = x.dims4()?;
    let (co, _, k, _) = w.dims4()?;
    let (ny, cy, oh, ow) = dy.dims4()?;
    if (ny, cy) != (n, co) || conv_out_dim(h, k, stride, pad) != Some(oh) || conv_out_dim(wd, k, stride, pad) != Some(ow) {
        return shape_err(format!("conv grad {:?} for input {:?}", dy.shape(), x.shape()));
    }
    let (ohw, kk) = (oh * ow, c * k * k);
    let mut cols = vec![T::zero(); kk * ohw];
    let mut dw = Tensor::zeros(w.shape());
    let mut part = vec![T::zero(); co * kk];
    for b in 0..n {
        im2col(&x.data()[b * c * h * wd..][..c * h * wd], (c, h, wd), k, stride, pad, (oh, ow), &mut cols);
        gemm_bt(co, kk, ohw, &dy.data()[b * co * ohw..][..co * ohw], &cols, &mut part);
        for (a, &g) in dw.data_mut().iter_mut().zip(&part) {
            *a += g;
        }
    }
    let dx = if need_dx {
        Some(conv_transpose2d_sized(dy, w, None, stride, pad, (h, wd))?)
    } else {
        None
    };
    Ok(ConvGrads { dx, dw, db: bias_grad(dy)? })
}

/// Transposed convolution of `x [n, ci, h, w]` with `w [ci, co, k, k]`,
/// producing `(h - 1) * stride - 2 * pad + k` rows.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let (_, _, h, wd) = x.dims4()?;
    let (_, _, k, _) = w.dims4()?;
    match (deconv_out_dim(h, k, stride, pad), deconv_out_dim(wd, k, stride, pad)) {
        (Some(oh), Some(ow)) => conv_transpose2d_sized(x, w, bias, stride, pad, (oh, ow)),
        _ => shape_err(format!("empty transposed-conv output for {h}x{wd}")),
    }
}

/// Transposed convolution with an explicit output size. Each output parity
/// class `(oy mod s, ox mod s)` only meets a fixed subset of kernel taps, so
/// it is computed as its own dense product.
pub fn conv_transpose2d_sized<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    s: usize,
    p: usize,
    (oh, ow): (usize, usize),
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, wd) = x.dims4()?;
    let (ci, co, k, k2) = w.dims4()?;
    if ci != c || k != k2 || s == 0 {
        return shape_err(format!("transposed conv input {:?} with weight {:?}", x.shape(), w.shape()));
    }
    check_bias(bias, co)?;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let taps = |par: usize| -> Vec<usize> {
        (0..k).filter(|&t| (par + p + k * s - t).is_multiple_of(s)).collect()
    };
    let classes: Vec<(usize, usize)> = (0..s.min(oh)).flat_map(|py| (0..s.min(ow)).map(move |px| (py, px))).collect();
    // per-class weight matrices [co, c * taps], filled in one pass over w
    let tap_idx: Vec<Vec<usize>> = classes
        .iter()
        .map(|&(py, px)| {
            let kxs = taps(px);
            taps(py).iter().flat_map(|ky| kxs.iter().map(move |kx| ky * k + kx)).collect()
        })
        .collect();
    let mut wts: Vec<Vec<T>> = tap_idx.iter().map(|t| vec![T::zero(); co * c * t.len()]).collect();
    let wv = w.data();
    // tiles of output channels keep both the reads and the writes sequential
    const OB: usize = 16;
    for o0 in (0..co).step_by(OB) {
        for i in 0..c {
            for o in o0..(o0 + OB).min(co) {
                let kernel = &wv[(i * co + o) * k * k..][..k * k];
                for (dst, idx) in wts.iter_mut().zip(&tap_idx) {
                    let nt = idx.len();
                    let row = &mut dst[(o * c + i) * nt..][..nt];
                    for (d, &t) in row.iter_mut().zip(idx) {
                        *d = kernel[t];
                    }
                }
            }
        }
    }
    for (cls, &(py, px)) in classes.iter().enumerate() {
        let (kys, kxs) = (taps(py), taps(px));
        let oys: Vec<usize> = (py..oh).step_by(s).collect();
        let nx = (ow - px).div_ceil(s);
        let kk = c * kys.len() * kxs.len();
        let cells = oys.len() * nx;
        let mut cols = vec![T::zero(); kk * cells];
        let mut res = vec![T::zero(); co * cells];
        for b in 0..n {
            let xb = &x.data()[b * c * h * wd..][..c * h * wd];
            let mut r = 0;
            for i in 0..c {
                for &ky in &kys {
                    for &kx in &kxs {
                        let row = &mut cols[r * cells..(r + 1) * cells];
                        r += 1;
                        // ix = (px + p - kx) / s + bx for the bx-th column of the class
                        let base = (px + p) as isize - kx as isize;
                        let ix0 = base.div_euclid(s as isize);
                        let lo = (-ix0).clamp(0, nx as isize) as usize;
                        let hi = ((wd as isize - ix0).clamp(0, nx as isize) as usize).max(lo);
                        for (a, &oy) in oys.iter().enumerate() {
                            let iy = (oy as isize + p as isize - ky as isize) / s as isize;
                            let dst = &mut row[a * nx..(a + 1) * nx];
                            if iy < 0 || iy >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let src = &xb[(i * h + iy as usize) * wd..][..wd];
                            dst[..lo].fill(T::zero());
                            dst[hi..].fill(T::zero());
                            let start = (ix0 + lo as isize) as usize;
                            dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                    }
                }
            }
            gemm(co, cells, kk, &wts[cls], &cols, &mut res);
            let yb = &mut out.data_mut()[b * co * oh * ow..][..co * oh * ow];
            for o in 0..co {
                let bv = bias.map(|bs| bs[o]);
                for (a, &oy) in oys.iter().enumerate() {
                    let src = &res[o * cells + a * nx..][..nx];
                    let dst = &mut yb[(o * oh + oy) * ow..][..ow];
                    for (bx, &v) in src.iter().enumerate() {
                        dst[px + bx * s] = match bv {
                            Some(bv) => v + bv,
                            None => v,
                        };
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<T>, NnError> {
    let (n, c, h, wd) = x.dims4()?;
    let (ci, co, k, _) = w.dims4()?;
    let (ny, cy, oh, ow) = dy.dims4()?;
    if (ny, cy, ci) != (n, co, c) {
        return shape_err(format!("transposed conv grad {:?} for input {:?}", dy.shape(), x.shape()));
    }
    let (hw, kk) = (h * wd, co * k * k);
    let mut cols = vec![T::zero(); kk * hw];
    let mut dw = Tensor::zeros(w.shape());
    let mut part = vec![T::zero(); c * kk];
    for b in 0..n {
        im2col(&dy.data()[b * co * oh * ow..][..co * oh * ow], (co, oh, ow), k, stride, pad, (h, wd), &mut cols);
        gemm_bt(c, kk, hw, &x.data()[b * c * hw..][..c * hw], &cols, &mut part);
        for (a, &g) in dw.data_mut().iter_mut().zip(&part) {
            *a += g;
        }
    }
    let dx = if need_dx {
        Some(conv2d_sized(dy, w, None, stride, pad, (h, wd))?)
    } else {
        None
    };
    Ok(ConvGrads { dx, dw, db: bias_grad(dy)? })
}
