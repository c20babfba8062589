//! Forward and backward kernels. These are plain functions over tensors; the
//! tape in [`super::Tape`] records which ones ran and replays the backward
//! halves.

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias_len: usize,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, wc, kh, kw) = weight.dims4("conv2d")?;
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but weight {:?} expects {wc}", weight.shape()),
        ));
    }
    if bias_len != o {
        return Err(Error::shape(
            "conv2d",
            format!("bias has {bias_len} entries for {o} output channels"),
        ));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ),
        ));
    }
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
    })
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            T::zero()
                        } else {
                            srow[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            drow[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding and a per-output-channel bias.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, weight, bias.len(), stride, pad)?;
    let (ck, plane) = (g.ck(), g.out_plane());
    let in_stride = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.o * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ck * plane]
    };
    for b in 0..g.n {
        let x = &input.data()[b * in_stride..(b + 1) * in_stride];
        let src: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        let y = &mut out[b * g.o * plane..(b + 1) * g.o * plane];
        T::gemm(
            g.o,
            ck,
            plane,
            weight.data(),
            ck as isize,
            1,
            src,
            plane as isize,
            1,
            T::zero(),
            y,
            plane as isize,
            1,
        );
        for (o, &bo) in bias.iter().enumerate() {
            if bo != T::zero() {
                y[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Tensor::new(vec![g.n, g.o, g.ho, g.wo], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geom(input, weight, weight.shape()[0], stride, pad)?;
    let (ck, plane) = (g.ck(), g.out_plane());
    if grad_out.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient {:?} does not match output", grad_out.shape()),
        ));
    }
    let in_stride = g.c * g.h * g.w;
    let mut dw = vec![T::zero(); g.o * ck];
    let mut db = vec![T::zero(); g.o];
    let mut dx = if need_input {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ck * plane]
    };
    let mut dcols = if need_input && !g.is_pointwise() {
        vec![T::zero(); ck * plane]
    } else {
        Vec::new()
    };
    for b in 0..g.n {
        let x = &input.data()[b * in_stride..(b + 1) * in_stride];
        let dy = &grad_out.data()[b * g.o * plane..(b + 1) * g.o * plane];
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += dy[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
        let src: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        T::gemm(
            g.o,
            plane,
            ck,
            dy,
            plane as isize,
            1,
            src,
            1,
            plane as isize,
            T::one(),
            &mut dw,
            ck as isize,
            1,
        );
        if need_input {
            let dxb = &mut dx[b * in_stride..(b + 1) * in_stride];
            if g.is_pointwise() {
                T::gemm(
                    ck,
                    g.o,
                    plane,
                    weight.data(),
                    1,
                    ck as isize,
                    dy,
                    plane as isize,
                    1,
                    T::zero(),
                    dxb,
                    plane as isize,
                    1,
                );
            } else {
                T::gemm(
                    ck,
                    g.o,
                    plane,
                    weight.data(),
                    1,
                    ck as isize,
                    dy,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    plane as isize,
                    1,
                );
                col2im(&dcols, &g, dxb);
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), dx)?)
        } else {
            None
        },
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: db,
    })
}

fn upconv_dims<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias_len: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4("up_conv2")?;
    let (wc, o, kh, kw) = weight.dims4("up_conv2")?;
    if (kh, kw) != (2, 2) {
        return Err(Error::shape(
            "up_conv2",
            format!("weight must be (in, out, 2, 2), got {:?}", weight.shape()),
        ));
    }
    if wc != c {
        return Err(Error::shape(
            "up_conv2",
            format!("input has {c} channels but weight {:?} expects {wc}", weight.shape()),
        ));
    }
    if bias_len != o {
        return Err(Error::shape(
            "up_conv2",
            format!("bias has {bias_len} entries for {o} output channels"),
        ));
    }
    Ok((n, c, h, w, o))
}

/// 2x2 stride-2 transposed convolution; doubles height and width.
pub fn up_conv2<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, c, h, w, o) = upconv_dims(input, weight, bias.len())?;
    let plane = h * w;
    let o4 = o * 4;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * o * h2 * w2];
    let mut m = vec![T::zero(); o4 * plane];
    for b in 0..n {
        let x = &input.data()[b * c * plane..(b + 1) * c * plane];
        T::gemm(
            o4,
            c,
            plane,
            weight.data(),
            1,
            o4 as isize,
            x,
            plane as isize,
            1,
            T::zero(),
            &mut m,
            plane as isize,
            1,
        );
        let y = &mut out[b * o * h2 * w2..(b + 1) * o * h2 * w2];
        for oc in 0..o {
            let yo = &mut y[oc * h2 * w2..(oc + 1) * h2 * w2];
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &m[(oc * 4 + a * 2 + bb) * plane..(oc * 4 + a * 2 + bb + 1) * plane];
                    for i in 0..h {
                        let dst = &mut yo[(2 * i + a) * w2..(2 * i + a + 1) * w2];
                        for j in 0..w {
                            dst[2 * j + bb] = row[i * w + j] + bias[oc];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o, h2, w2], out)
}

pub fn up_conv2_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w, o) = upconv_dims(input, weight, weight.shape()[1])?;
    let (plane, o4, h2, w2) = (h * w, o * 4, 2 * h, 2 * w);
    if grad_out.shape() != [n, o, h2, w2] {
        return Err(Error::shape(
            "up_conv2_backward",
            format!("upstream gradient {:?} does not match output", grad_out.shape()),
        ));
    }
    let mut gathered = vec![T::zero(); o4 * plane];
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); o];
    for b in 0..n {
        let dy = &grad_out.data()[b * o * h2 * w2..(b + 1) * o * h2 * w2];
        for oc in 0..o {
            let dyo = &dy[oc * h2 * w2..(oc + 1) * h2 * w2];
            db[oc] += dyo.iter().copied().sum::<T>();
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut gathered[(oc * 4 + a * 2 + bb) * plane..(oc * 4 + a * 2 + bb + 1) * plane];
                    for i in 0..h {
                        let src = &dyo[(2 * i + a) * w2..(2 * i + a + 1) * w2];
                        for j in 0..w {
                            row[i * w + j] = src[2 * j + bb];
                        }
                    }
                }
            }
        }
        let x = &input.data()[b * c * plane..(b + 1) * c * plane];
        T::gemm(
            c,
            o4,
            plane,
            weight.data(),
            o4 as isize,
            1,
            &gathered,
            plane as isize,
            1,
            T::zero(),
            &mut dx[b * c * plane..(b + 1) * c * plane],
            plane as isize,
            1,
        );
        T::gemm(
            c,
            plane,
            o4,
            x,
            plane as isize,
            1,
            &gathered,
            1,
            plane as isize,
            T::one(),
            &mut dw,
            o4 as isize,
            1,
        );
    }
    Ok(ConvGrads {
        input: Some(Tensor::new(input.shape().to_vec(), dx)?),
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: db,
    })
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index that won (first in row-major window order on
/// ties).
pub fn max_pool2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = input.dims4("max_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("max_pool2", format!("spatial size {h}x{w} must be even")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let x = input.data();
    for nc in 0..n * c {
        let base = nc * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

pub fn max_pool2_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx as usize] += g;
    }
    Ok(dx)
}

/// Per-channel statistics saved by the batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

fn channel_iter(n: usize, c: usize, plane: usize, ch: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane)
}

/// Batch normalization. With `stats = Some((mean, var))` the given statistics
/// are used (eval mode); otherwise the batch statistics are computed.
pub fn batch_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: Option<(&[f64], &[f64])>,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, h, w) = input.dims4("batch_norm")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "gamma/beta lengths {}/{} do not match {c} channels",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut batch_mean = Vec::with_capacity(c);
    let mut batch_var = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let mut sum = 0.0;
                for r in channel_iter(n, c, plane, ch) {
                    sum += x[r].iter().map(|v| v.f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut ss = 0.0;
                for r in channel_iter(n, c, plane, ch) {
                    ss += x[r].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
                }
                batch_var.push(if count > 1 { ss / (count - 1) as f64 } else { 0.0 });
                (mean, ss / count as f64)
            }
        };
        batch_mean.push(mean);
        let istd = T::of(1.0 / (var + BN_EPSILON).sqrt());
        let m = T::of(mean);
        inv_std.push(istd);
        for r in channel_iter(n, c, plane, ch) {
            for i in r {
                let xh = (x[i] - m) * istd;
                normalized[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnSaved {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
            batch_mean,
            batch_var_unbiased: batch_var,
        },
    ))
}

pub fn batch_norm_backward<T: Element>(
    saved: &BnSaved<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
    used_batch_stats: bool,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, c, h, w) = grad_out.dims4("batch_norm_backward")?;
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let dy = grad_out.data();
    let xh = saved.normalized.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (T::zero(), T::zero());
        for r in channel_iter(n, c, plane, ch) {
            for i in r {
                sdy += dy[i];
                sdyx += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let scale = gamma[ch] * saved.inv_std[ch];
        for r in channel_iter(n, c, plane, ch) {
            for i in r {
                dx[i] = if used_batch_stats {
                    scale / count * (count * dy[i] - sdy - xh[i] * sdyx)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), dx)?, dgamma, dbeta))
}

pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("cannot concatenate {:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * ca * plane..(n + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[n * cb * plane..(n + 1) * cb * plane]);
    }
    Tensor::new(vec![na, ca + cb, ha, wa], data)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    )
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn mse<T: Element>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        ));
    }
    if prediction.is_empty() {
        return Err(Error::InvalidArgument("mse_loss on empty tensors".into()));
    }
    let sum: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).f64().powi(2))
        .sum();
    Ok(T::of(sum / prediction.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct six-loop cross-correlation used as the oracle.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let s = x.shape();
        let ws = w.shape();
        let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = bias[oc];
                        for ic in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (i * stride + ki) as isize - pad as isize;
                                    let jj = (j * stride + kj) as isize - pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        acc += x.data()[((b * c + ic) * h + ii as usize) * wd + jj as usize]
                                            * w.data()[((oc * c + ic) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_scaling_doubles() {
        let x = Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64 - 3.0);
        let w = Tensor::full(vec![1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &w, &[0.0], 1, 0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn impulse_stamps_kernel() {
        let mut x = Tensor::<f64>::zeros(vec![1, 1, 7, 7]);
        x.data_mut()[3 * 7 + 3] = 1.0;
        let w = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64 + 1.0);
        let y = conv2d(&x, &w, &[0.0], 1, 1).unwrap();
        // cross-correlation places the kernel flipped around the impulse
        for di in 0..3 {
            for dj in 0..3 {
                let v = y.data()[(2 + di) * 7 + 2 + dj];
                assert_eq!(v, w.data()[(2 - di) * 3 + (2 - dj)]);
            }
        }
        assert_eq!(y.sum(), w.sum());
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = vec![0.1, -0.2, 0.3];
        let fast = conv2d(&x, &w, &b, 1, 1).unwrap();
        let slow = naive_conv(&x, &w, &b, 1, 1);
        for (a, e) in fast.data().iter().zip(slow.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 5, 5]);
        let w = Tensor::<f64>::zeros(vec![3, 4, 3, 3]);
        let err = conv2d(&x, &w, &[0.0; 3], 1, 1).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
        assert!(conv2d(&x, &Tensor::zeros(vec![3, 2, 3, 3]), &[0.0; 3], 0, 1).is_err());
    }

    #[test]
    fn pool_basics() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::full(vec![2, 3, 6, 4], 1.5);
        let (y, arg) = max_pool2(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 1.5));
        // ties resolve to the top-left element of each window
        assert_eq!(arg[0], 0);
        assert!(max_pool2(&Tensor::<f64>::zeros(vec![1, 1, 3, 4])).is_err());
    }

    #[test]
    fn up_conv_block_and_shape() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::full(vec![1, 1, 2, 2], 1.0);
        let y = up_conv2(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        let x = Tensor::<f64>::zeros(vec![2, 3, 5, 7]);
        let y = up_conv2(&x, &Tensor::zeros(vec![3, 4, 2, 2]), &[0.0; 4]).unwrap();
        assert_eq!(y.shape(), &[2, 4, 10, 14]);
        assert!(up_conv2(&x, &Tensor::zeros(vec![2, 4, 2, 2]), &[0.0; 4]).is_err());
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f64>::full(vec![1, 3, 8, 8], 1.0);
        let b = Tensor::<f64>::full(vec![1, 5, 8, 8], 2.0);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), &[1, 8, 8, 8]);
        assert_eq!(ab.slice_channels(0, 3).unwrap(), a);
        let empty = Tensor::<f64>::zeros(vec![1, 0, 8, 8]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros(vec![1, 1, 4, 8])).is_err());
    }

    #[test]
    fn batch_norm_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 4, 4], &mut rng);
        let beta = [0.5, -1.0, 2.0];
        let (y, _) = batch_norm(&x, &[0.0; 3], &beta, None).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, beta[(i / 16) % 3]);
        }
        // a channel that is already zero-mean, unit-variance is left alone
        let vals: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::new(vec![1, 1, 4, 4], vals.clone()).unwrap();
        let (y, _) = batch_norm(&x, &[1.0], &[0.0], None).unwrap();
        for (a, b) in y.data().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(batch_norm(&x, &[1.0, 1.0], &[0.0], None).is_err());
    }

    #[test]
    fn mse_values() {
        let a = Tensor::full(vec![3, 4], 0.3f64);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = Tensor::full(vec![3, 4], 0.4f64);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&a, &Tensor::zeros(vec![4, 3])).is_err());
    }

    #[test]
    fn add_and_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 2, 3, 3], &mut rng);
        assert_eq!(add(&x, &Tensor::zeros(vec![2, 2, 3, 3])).unwrap(), x);
        assert!(add(&x, &x.map(|v| -v)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&x, &Tensor::zeros(vec![2, 2, 3])).is_err());
        assert!(relu(&Tensor::full(vec![5], -1.0f64)).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_fn(vec![5], |i| i as f64 + 0.5);
        assert_eq!(relu(&pos), pos);
    }
}
