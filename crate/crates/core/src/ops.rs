//! Stateless forward/backward kernels over `[N, C, H, W]` tensors.
//!
//! Batch-parallel paths write disjoint per-sample slices and reduce in sample
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Output extent along one axis.
    ///
    /// A trailing remainder is accepted only when it lies inside the padding,
    /// i.e. every real input row is still covered by some window.
    pub fn out_extent(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.pad;
        if padded < self.kernel {
            return Err(CoreError::invalid(
                "conv2d",
                format!("input extent {len} smaller than kernel {}", self.kernel),
            ));
        }
        let span = padded - self.kernel;
        let rem = span % self.stride;
        if rem > self.pad {
            return Err(CoreError::invalid(
                "conv2d",
                format!(
                    "non-integer output extent: ({len} + 2·{} − {}) / {}",
                    self.pad, self.kernel, self.stride
                ),
            ));
        }
        Ok(span / self.stride + 1)
    }

    fn cols_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(CoreError::invalid("conv2d", "kernel size must be odd"));
        }
        if self.stride == 0 {
            return Err(CoreError::invalid("conv2d", "stride must be at least 1"));
        }
        Ok(())
    }
}

fn im2col<T: Scalar>(input: &[T], h: usize, w: usize, g: &ConvGeometry, ho: usize, wo: usize, cols: &mut [T]) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..g.in_channels {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, g: &ConvGeometry, ho: usize, wo: usize, out: &mut [T]) {
    let k = g.kernel;
    let plane = ho * wo;
    out.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.in_channels {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Unfolded input columns kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    cols: Vec<T>,
}

fn conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeometry, [usize; 4], usize, usize)> {
    let [n, c_in, h, w] = input.dims4("conv2d")?;
    let [c_out, wc_in, kh, kw] = weight.dims4("conv2d")?;
    if wc_in != c_in || kh != kw {
        return Err(CoreError::ShapeMismatch {
            op: "conv2d",
            expected: vec![c_out, c_in, kh, kh],
            actual: weight.shape().to_vec(),
        });
    }
    bias.expect_shape(&[c_out], "conv2d bias")?;
    let geom = ConvGeometry {
        in_channels: c_in,
        out_channels: c_out,
        kernel: kh,
        stride,
        pad,
    };
    geom.validate()?;
    let ho = geom.out_extent(h)?;
    let wo = geom.out_extent(w)?;
    Ok((geom, [n, c_in, h, w], ho, wo))
}

/// Cross-correlation of `input [N,C_in,H,W]` with `weight [C_out,C_in,k,k]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (g, [n, c_in, h, w], ho, wo) = conv_shapes(input, weight, bias, stride, pad)?;
    let plane = ho * wo;
    let krows = g.cols_rows();
    let c_out = g.out_channels;
    let mut cols = vec![T::zero(); n * krows * plane];
    let mut out = vec![T::zero(); n * c_out * plane];
    let in_per = c_in * h * w;
    let wdata = weight.data();
    let bdata = bias.data();

    cols.par_chunks_mut(krows * plane.max(1))
        .zip(out.par_chunks_mut(c_out * plane.max(1)))
        .enumerate()
        .for_each(|(s, (col, y))| {
            im2col(&input.data()[s * in_per..(s + 1) * in_per], h, w, &g, ho, wo, col);
            for (co, row) in y.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = bdata[co]);
            }
            T::gemm(
                c_out,
                krows,
                plane,
                T::one(),
                wdata,
                (krows as isize, 1),
                col,
                (plane as isize, 1),
                T::one(),
                y,
            );
        });

    let out = Tensor::new(&[n, c_out, ho, wo], out)?;
    Ok((
        out,
        ConvCache {
            input_shape: [n, c_in, h, w],
            out_hw: (ho, wo),
            cols,
        },
    ))
}

/// Accumulates the parameter gradients only; the input gradient is skipped.
pub fn conv2d_param_grads<T: Scalar>(
    cache: &ConvCache<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    upstream: &Tensor<T>,
    weight_grad: &mut [T],
    bias_grad: &mut [T],
) -> Result<ConvGeometry> {
    let [n, c_in, _, _] = cache.input_shape;
    let (ho, wo) = cache.out_hw;
    let [c_out, _, k, _] = weight.dims4("conv2d_backward")?;
    upstream.expect_shape(&[n, c_out, ho, wo], "conv2d_backward upstream")?;
    let g = ConvGeometry {
        in_channels: c_in,
        out_channels: c_out,
        kernel: k,
        stride,
        pad,
    };
    let plane = ho * wo;
    let krows = g.cols_rows();
    let dy = upstream.data();

    // Sequential over samples for a fixed summation order.
    for s in 0..n {
        let dys = &dy[s * c_out * plane..(s + 1) * c_out * plane];
        let col = &cache.cols[s * krows * plane..(s + 1) * krows * plane];
        T::gemm(
            c_out,
            plane,
            krows,
            T::one(),
            dys,
            (plane as isize, 1),
            col,
            (1, plane as isize),
            T::one(),
            weight_grad,
        );
        for (co, row) in dys.chunks(plane).enumerate() {
            bias_grad[co] = bias_grad[co] + row.iter().copied().sum::<T>();
        }
    }
    Ok(g)
}

/// Returns the input gradient and accumulates into `weight_grad` / `bias_grad`.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    upstream: &Tensor<T>,
    weight_grad: &mut [T],
    bias_grad: &mut [T],
) -> Result<Tensor<T>> {
    let g = conv2d_param_grads(cache, weight, stride, pad, upstream, weight_grad, bias_grad)?;
    let [n, c_in, h, w] = cache.input_shape;
    let (ho, wo) = cache.out_hw;
    let c_out = g.out_channels;
    let plane = ho * wo;
    let krows = g.cols_rows();
    let dy = upstream.data();
    let in_per = c_in * h * w;
    let mut dx = vec![T::zero(); n * in_per];
    let wdata = weight.data();
    dx.par_chunks_mut(in_per.max(1)).enumerate().for_each(|(s, dxs)| {
        let dys = &dy[s * c_out * plane..(s + 1) * c_out * plane];
        let mut dcols = vec![T::zero(); krows * plane];
        T::gemm(
            krows,
            c_out,
            plane,
            T::one(),
            wdata,
            (1, krows as isize),
            dys,
            (plane as isize, 1),
            T::zero(),
            &mut dcols,
        );
        col2im(&dcols, h, w, &g, ho, wo, dxs);
    });
    Tensor::new(&[n, c_in, h, w], dx)
}

/// Source index pair and weight of the far neighbour for align-corners-false
/// bilinear resampling by an integer factor.
fn upsample_taps(in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..in_len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(CoreError::invalid("bilinear_upsample", "factor must be ≥ 1"));
    }
    let [n, c, h, w] = input.dims4("bilinear_upsample")?;
    if factor == 1 {
        return Ok(input.detached());
    }
    let (oh, ow) = (h * factor, w * factor);
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    out.par_chunks_mut(oh * ow)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::from_f64_lossy(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::from_f64_lossy(fx);
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        });
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    input_shape: [usize; 4],
    factor: usize,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (h * factor, w * factor);
    upstream.expect_shape(&[n, c, oh, ow], "bilinear_upsample_backward")?;
    if factor == 1 {
        return Ok(upstream.detached());
    }
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let mut dx = vec![T::zero(); n * c * h * w];
    dx.par_chunks_mut(h * w)
        .zip(upstream.data().par_chunks(oh * ow))
        .for_each(|(dst, g)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::from_f64_lossy(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::from_f64_lossy(fx);
                    let v = g[oy * ow + ox];
                    let top = v * (T::one() - fy);
                    let bot = v * fy;
                    dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                    dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                    dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
                }
            }
        });
    Tensor::new(&input_shape, dx)
}

/// Softmax over axis 1 of an `[N,C,H,W]` tensor.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("softmax_channels")?;
    let plane = h * w;
    let mut out = vec![T::zero(); input.numel()];
    out.par_chunks_mut(c * plane)
        .zip(input.data().par_chunks(c * plane))
        .for_each(|(dst, src)| {
            // Channel planes are walked whole so the inner loops stay contiguous.
            let mut m = vec![T::neg_infinity(); plane];
            for row in src.chunks(plane) {
                m.iter_mut().zip(row).for_each(|(m, &v)| *m = m.max(v));
            }
            let mut z = vec![T::zero(); plane];
            for (d, row) in dst.chunks_mut(plane).zip(src.chunks(plane)) {
                for p in 0..plane {
                    let e = (row[p] - m[p]).exp();
                    d[p] = e;
                    z[p] = z[p] + e;
                }
            }
            for d in dst.chunks_mut(plane) {
                d.iter_mut().zip(&z).for_each(|(v, &z)| *v = *v / z);
            }
        });
    Tensor::new(&[n, c, h, w], out)
}

pub fn softmax_channels_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c, h, w] = output.dims4("softmax_channels_backward")?;
    upstream.expect_shape(output.shape(), "softmax_channels_backward")?;
    let plane = h * w;
    let mut dx = vec![T::zero(); output.numel()];
    dx.par_chunks_mut(c * plane)
        .zip(output.data().par_chunks(c * plane))
        .zip(upstream.data().par_chunks(c * plane))
        .for_each(|((dst, y), g)| {
            for p in 0..plane {
                let mut dot = T::zero();
                for ch in 0..c {
                    dot = dot + y[ch * plane + p] * g[ch * plane + p];
                }
                for ch in 0..c {
                    let i = ch * plane + p;
                    dst[i] = y[i] * (g[i] - dot);
                }
            }
        });
    Tensor::new(output.shape(), dx)
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, slope: T, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(upstream, "leaky_relu_backward", |x, g| {
        if x > T::zero() {
            g
        } else {
            g * slope
        }
    })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    output.zip_map(upstream, "sigmoid_backward", |y, g| g * y * (T::one() - y))
}

/// Mean over the spatial axes: `[N,C,H,W] → [N,C,1,1]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let denom = T::from_usize(h * w).unwrap();
    let data = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::new(&[n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: [usize; 4], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    upstream.expect_shape(&[n, c, 1, 1], "global_avg_pool_backward")?;
    let denom = T::from_usize(h * w).unwrap();
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in upstream.data() {
        dx.extend(std::iter::repeat(g / denom).take(h * w));
    }
    Tensor::new(&input_shape, dx)
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.dims4("concat_channels")?;
    let [nb, cb, hb, wb] = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(CoreError::ShapeMismatch {
            op: "concat_channels",
            expected: vec![n, cb, h, w],
            actual: b.shape().to_vec(),
        });
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(n * (pa + pb));
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * pa..(s + 1) * pa]);
        data.extend_from_slice(&b.data()[s * pb..(s + 1) * pb]);
    }
    Tensor::new(&[n, ca + cb, h, w], data)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(g: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = g.dims4("split_channels")?;
    if first > c {
        return Err(CoreError::invalid(
            "split_channels",
            format!("split point {first} beyond {c} channels"),
        ));
    }
    let plane = h * w;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * (c - first) * plane);
    for s in g.data().chunks(c * plane) {
        a.extend_from_slice(&s[..first * plane]);
        b.extend_from_slice(&s[first * plane..]);
    }
    Ok((
        Tensor::new(&[n, first, h, w], a)?,
        Tensor::new(&[n, c - first, h, w], b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Six nested loops, straight from the definition.
    fn conv_reference(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, ci, h, w] = x.dims4("ref").unwrap();
        let [co, _, k, _] = wt.dims4("ref").unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for s in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * ci + c) * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((s * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_scaling_kernel() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let (y, _) = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 1, 5, 4], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let b = Tensor::zeros(&[1]);
        let (y, _) = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_loop_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 3, 5, 5], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let (y, _) = conv2d(&x, &w, &b, stride, pad).unwrap();
            let r = conv_reference(&x, &w, &b, stride, pad);
            assert!(y.max_abs_diff(&r).unwrap() < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv_rejects_lossy_extent_and_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 1, 6, 6]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        // (6 − 3) / 2 drops a real row
        assert!(conv2d(&x, &w, &b, 2, 0).is_err());
        // (6 + 2 − 3) / 2 only drops trailing padding
        assert_eq!(conv2d(&x, &w, &b, 2, 1).unwrap().0.shape(), &[1, 1, 3, 3]);
        let w_bad = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &w_bad, &b, 1, 1).is_err());
        let w_even = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&x, &w_even, &b, 1, 0).is_err());
    }

    #[test]
    fn upsample_identity_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 2, 3, 3], &mut rng);
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
        let c = Tensor::<f64>::full(&[1, 1, 3, 2], 0.7);
        let y = bilinear_upsample(&c, 3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(bilinear_upsample(&x, 0).is_err());
    }

    #[test]
    fn upsample_two_by_two_closed_form() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        // Output coordinate o maps to source (o + 0.5)/2 − 0.5 clamped at 0:
        // o = 0, 1, 2, 3 → 0, 0.25, 0.75, 1 (clamped past the last pixel).
        let src = [0.0, 0.25, 0.75, 1.0];
        // f(y, x) = 2y + x is exactly bilinear on this input.
        for oy in 0..4 {
            for ox in 0..4 {
                let expected = 2.0 * src[oy] + src[ox];
                assert!((y.data()[oy * 4 + ox] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 5, 3, 3], &mut rng).scale(20.0);
        let y = softmax_channels(&x).unwrap();
        for s in 0..2 {
            for p in 0..9 {
                let sum: f64 = (0..5).map(|c| y.data()[(s * 5 + c) * 9 + p]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let x = Tensor::<f64>::new(&[1], vec![-1.0]).unwrap();
        let g = Tensor::new(&[1], vec![1.0]).unwrap();
        let dx = leaky_relu_backward(&x, 0.2, &g).unwrap();
        assert_eq!(dx.data(), &[0.2]);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[2, 2, 3, 3], &mut rng);
        let b = random(&[2, 3, 3, 3], &mut rng);
        let c = concat_channels(&a, &b).unwrap();
        let (a2, b2) = split_channels(&c, 2).unwrap();
        assert_eq!((a2, b2), (a, b));
    }
}
