//! Differentiable operations used by the network.
//!
//! Each operation is a pair of pure functions: a forward pass and a backward
//! pass that maps the upstream gradient of the output to gradients of the
//! inputs. Accumulations run in a fixed loop order, so results are
//! bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Geometry of a 2-D convolution. Weights are laid out `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_c: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(out_c: usize, in_c: usize, k: usize) -> Self {
        Self {
            out_c,
            in_c,
            kh: k,
            kw: k,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_c, self.in_c, self.kh, self.kw)
    }

    /// Extent covered by the dilated kernel along one axis: `d*(k-1)+1`.
    pub fn effective_extent(k: usize, dilation: usize) -> usize {
        dilation * (k - 1) + 1
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs positive stride, dilation and kernel size, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |len: usize, k: usize, name: &str| -> Result<usize> {
            let ext = Self::effective_extent(k, self.dilation);
            let padded = len + 2 * self.padding;
            if padded < ext {
                return Err(Error::Shape(format!(
                    "conv2d {name}: padded input {padded} smaller than kernel extent {ext}"
                )));
            }
            Ok((padded - ext) / self.stride + 1)
        };
        Ok((axis(h, self.kh, "height")?, axis(w, self.kw, "width")?))
    }
}

fn check_conv_args<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &[F],
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    let s = input.shape();
    if s.c != spec.in_c {
        return Err(Error::Shape(format!(
            "conv2d input channels: expected {}, got {}",
            spec.in_c, s.c
        )));
    }
    let ws = weights.shape();
    if ws != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv2d weights: expected {}, got {ws}",
            spec.weight_shape()
        )));
    }
    if bias.len() != spec.out_c {
        return Err(Error::Shape(format!(
            "conv2d bias: expected {} out channels, got {}",
            spec.out_c,
            bias.len()
        )));
    }
    spec.output_hw(s.h, s.w)
}

/// Unfold batch item `n` into a `(in_c*kh*kw) x (oh*ow)` column matrix.
fn im2col<F: Scalar>(input: &Tensor<F>, n: usize, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<F> {
    let s = input.shape();
    let p = oh * ow;
    let mut col = vec![F::zero(); spec.fan_in() * p];
    let pad = spec.padding as isize;
    for ic in 0..spec.in_c {
        let plane = input.plane(n, ic);
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ic * spec.kh + ky) * spec.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let off_y = (ky * spec.dilation) as isize - pad;
                let off_x = (kx * spec.dilation) as isize - pad;
                for oy in 0..oh {
                    let iy = (oy * spec.stride) as isize + off_y;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride) as isize + off_x;
                        if ix >= 0 && ix < s.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`]: accumulates `col` into batch item `n` of `grad`.
fn col2im<F: Scalar>(col: &[F], grad: &mut Tensor<F>, n: usize, spec: &ConvSpec, oh: usize, ow: usize) {
    let s = grad.shape();
    let p = oh * ow;
    let pad = spec.padding as isize;
    for ic in 0..spec.in_c {
        let plane = grad.plane_mut(n, ic);
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ic * spec.kh + ky) * spec.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                let off_y = (ky * spec.dilation) as isize - pad;
                let off_x = (kx * spec.dilation) as isize - pad;
                for oy in 0..oh {
                    let iy = (oy * spec.stride) as isize + off_y;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride) as isize + off_x;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed order.
#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ca = &a[i * 8..i * 8 + 8];
        let cb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// 2-D (optionally strided and dilated) convolution.
pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &[F],
    spec: &ConvSpec,
) -> Result<Tensor<F>> {
    let (oh, ow) = check_conv_args(input, weights, bias, spec)?;
    let n = input.shape().n;
    let k = spec.fan_in();
    let p = oh * ow;
    let mut out = Tensor::zeros(Shape::new(n, spec.out_c, oh, ow));
    let w = weights.data();
    for b in 0..n {
        let col = im2col(input, b, spec, oh, ow);
        for oc in 0..spec.out_c {
            let dst = out.plane_mut(b, oc);
            dst.fill(bias[oc]);
            let wrow = &w[oc * k..(oc + 1) * k];
            for (r, &wv) in wrow.iter().enumerate() {
                axpy(dst, wv, &col[r * p..(r + 1) * p]);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub struct ConvGrads<F> {
    pub input: Tensor<F>,
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    spec: &ConvSpec,
    upstream: &Tensor<F>,
) -> Result<ConvGrads<F>> {
    let bias = vec![F::zero(); spec.out_c];
    let (oh, ow) = check_conv_args(input, weights, &bias, spec)?;
    let n = input.shape().n;
    upstream.expect_shape(Shape::new(n, spec.out_c, oh, ow), "conv2d upstream")?;
    let k = spec.fan_in();
    let p = oh * ow;
    let w = weights.data();

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = bias;
    let mut dcol = vec![F::zero(); k * p];
    for b in 0..n {
        let col = im2col(input, b, spec, oh, ow);
        let dw = d_weights.data_mut();
        for oc in 0..spec.out_c {
            let g = upstream.plane(b, oc);
            d_bias[oc] += g.iter().copied().sum();
            for r in 0..k {
                dw[oc * k + r] += dot(g, &col[r * p..(r + 1) * p]);
            }
        }
        dcol.fill(F::zero());
        for r in 0..k {
            let dst = &mut dcol[r * p..(r + 1) * p];
            for oc in 0..spec.out_c {
                axpy(dst, w[oc * k + r], upstream.plane(b, oc));
            }
        }
        col2im(&dcol, &mut d_input, b, spec, oh, ow);
    }
    Ok(ConvGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}

/// Sampling taps for one axis of a half-pixel bilinear resize.
struct Taps<F> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<F>,
}

fn taps<F: Scalar>(in_len: usize, out_len: usize) -> Taps<F> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    let mut t = Taps {
        lo: Vec::with_capacity(out_len),
        hi: Vec::with_capacity(out_len),
        frac: Vec::with_capacity(out_len),
    };
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let lo = src.floor() as usize;
        t.lo.push(lo);
        t.hi.push((lo + 1).min(in_len - 1));
        t.frac.push(F::of(src - lo as f64));
    }
    t
}

/// Bilinear resize of every plane to `out_h x out_w` using half-pixel sample
/// centres (`src = (dst + 0.5) * in/out - 0.5`) clamped to the border.
pub fn resize_bilinear<F: Scalar>(input: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize {}x{} -> {out_h}x{out_w}: empty extent",
            s.h, s.w
        )));
    }
    let ty = taps::<F>(s.h, out_h);
    let tx = taps::<F>(s.w, out_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..out_h {
                let r0 = &src[ty.lo[oy] * s.w..(ty.lo[oy] + 1) * s.w];
                let r1 = &src[ty.hi[oy] * s.w..(ty.hi[oy] + 1) * s.w];
                let fy = ty.frac[oy];
                for ox in 0..out_w {
                    let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    dst[oy * out_w + ox] = top + fy * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`]: scatters `upstream` back onto an input of `in_shape`.
pub fn resize_bilinear_backward<F: Scalar>(upstream: &Tensor<F>, in_shape: Shape) -> Result<Tensor<F>> {
    let u = upstream.shape();
    if u.n != in_shape.n || u.c != in_shape.c {
        return Err(Error::Shape(format!(
            "resize backward: upstream {u} incompatible with input {in_shape}"
        )));
    }
    let ty = taps::<F>(in_shape.h, u.h);
    let tx = taps::<F>(in_shape.w, u.w);
    let one = F::one();
    let mut grad = Tensor::zeros(in_shape);
    let w = in_shape.w;
    for n in 0..u.n {
        for c in 0..u.c {
            let g = upstream.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for oy in 0..u.h {
                let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
                for ox in 0..u.w {
                    let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                    let v = g[oy * u.w + ox];
                    dst[y0 * w + x0] += v * (one - fy) * (one - fx);
                    dst[y0 * w + x1] += v * (one - fy) * fx;
                    dst[y1 * w + x0] += v * fy * (one - fx);
                    dst[y1 * w + x1] += v * fy * fx;
                }
            }
        }
    }
    Ok(grad)
}

/// Integer-factor bilinear up-sampling.
pub fn upsample_bilinear<F: Scalar>(input: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let s = input.shape();
    resize_bilinear(input, s.h * factor, s.w * factor)
}

pub fn upsample_bilinear_backward<F: Scalar>(
    upstream: &Tensor<F>,
    in_shape: Shape,
    factor: usize,
) -> Result<Tensor<F>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    upstream.expect_shape(
        Shape::new(in_shape.n, in_shape.c, in_shape.h * factor, in_shape.w * factor),
        "upsample upstream",
    )?;
    resize_bilinear_backward(upstream, in_shape)
}

/// Softmax across channels at every pixel, with max subtraction.
pub fn softmax_channel<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let s = input.shape();
    if s.c < 2 {
        return Err(Error::Shape(format!(
            "softmax_channel needs at least 2 channels, got {}",
            s.c
        )));
    }
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let x = input.data();
    let y = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for i in 0..plane {
            let mut m = F::neg_infinity();
            for c in 0..s.c {
                m = m.max(x[base + c * plane + i]);
            }
            let mut z = F::zero();
            for c in 0..s.c {
                let e = (x[base + c * plane + i] - m).exp();
                y[base + c * plane + i] = e;
                z += e;
            }
            for c in 0..s.c {
                y[base + c * plane + i] = y[base + c * plane + i] / z;
            }
        }
    }
    Ok(out)
}

/// Jacobian-vector product of softmax given its output `probs`:
/// `dx_c = y_c * (g_c - sum_k y_k g_k)`.
pub fn softmax_channel_backward<F: Scalar>(probs: &Tensor<F>, upstream: &Tensor<F>) -> Result<Tensor<F>> {
    let s = probs.shape();
    upstream.expect_shape(s, "softmax upstream")?;
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let (y, g) = (probs.data(), upstream.data());
    let dx = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for i in 0..plane {
            let mut inner = F::zero();
            for c in 0..s.c {
                let j = base + c * plane + i;
                inner += y[j] * g[j];
            }
            for c in 0..s.c {
                let j = base + c * plane + i;
                dx[j] = y[j] * (g[j] - inner);
            }
        }
    }
    Ok(out)
}

/// Concatenate along the channel axis.
pub fn concat_channels<F: Scalar>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::Shape(format!("concat: {s} incompatible with {first}")));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let mut out = Tensor::zeros(Shape::new(first.n, c, first.h, first.w));
    for n in 0..first.n {
        let mut oc = 0;
        for p in parts {
            for pc in 0..p.shape().c {
                out.plane_mut(n, oc).copy_from_slice(p.plane(n, pc));
                oc += 1;
            }
        }
    }
    Ok(out)
}

/// Split a channel-concatenated gradient back into parts with `channels` each.
pub fn split_channels<F: Scalar>(grad: &Tensor<F>, channels: &[usize]) -> Result<Vec<Tensor<F>>> {
    let s = grad.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::Shape(format!(
            "split: channel counts {channels:?} do not sum to {}",
            s.c
        )));
    }
    let mut parts = Vec::with_capacity(channels.len());
    let mut start = 0;
    for &pc in channels {
        let mut t = Tensor::zeros(Shape::new(s.n, pc, s.h, s.w));
        for n in 0..s.n {
            for c in 0..pc {
                t.plane_mut(n, c).copy_from_slice(grad.plane(n, start + c));
            }
        }
        start += pc;
        parts.push(t);
    }
    Ok(parts)
}
