//! 2D convolution forward and backward kernels.
//!
//! The hot path lowers each image to an im2col matrix and runs a GEMM; the
//! backward pass reuses the same lowering so the gradient is the exact
//! adjoint of the forward linear map.

use matrixmultiply::dgemm;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Gradients of a convolution with respect to its operands.
#[derive(Debug)]
pub struct ConvGrads {
    /// Gradient w.r.t. the input; `None` when the caller opted out (first
    /// layer of a network, where the image gradient is unused).
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Output spatial extent: floor((in + 2*padding - kernel) / stride) + 1.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::shape(
            "convolution window",
            format!("kernel <= padded input ({padded})"),
            format!("kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

struct ConvDims {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k_h: usize,
    k_w: usize,
    out_h: usize,
    out_w: usize,
    /// im2col row count: in_c * k_h * k_w.
    k: usize,
    /// im2col column count: out_h * out_w.
    p: usize,
}

fn conv_dims(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<ConvDims> {
    if stride == 0 {
        return Err(Error::InvalidDimension("convolution stride must be positive".into()));
    }
    if input.order() != 4 || weights.order() != 4 {
        return Err(Error::shape(
            "convolution",
            "input [B,C,H,W] and weights [O,C,KH,KW]",
            format!("orders {} and {}", input.order(), weights.order()),
        ));
    }
    let (batch, in_c, in_h, in_w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (out_c, w_c, k_h, k_w) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    if w_c != in_c {
        return Err(Error::shape(
            "convolution channels",
            format!("weights with {in_c} input channels (input {:?})", input.shape()),
            format!("{w_c} channels (weights {:?})", weights.shape()),
        ));
    }
    if bias.shape() != [out_c] {
        return Err(Error::shape("convolution bias", format!("[{out_c}]"), format!("{:?}", bias.shape())));
    }
    let out_h = conv_output_extent(in_h, k_h, stride, padding)?;
    let out_w = conv_output_extent(in_w, k_w, stride, padding)?;
    Ok(ConvDims {
        batch,
        in_c,
        in_h,
        in_w,
        out_c,
        k_h,
        k_w,
        out_h,
        out_w,
        k: in_c * k_h * k_w,
        p: out_h * out_w,
    })
}

/// Lowers one image `[C,H,W]` into `cols[K, P]`, zero-filling padding taps.
/// Stride-1 rows inside the valid region are bulk copies.
fn im2col(image: &[f64], d: &ConvDims, stride: usize, padding: usize, cols: &mut [f64]) {
    debug_assert_eq!(cols.len(), d.k * d.p);
    let (h, w) = (d.in_h as isize, d.in_w as isize);
    let mut row = 0usize;
    for c in 0..d.in_c {
        let plane = &image[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for kh in 0..d.k_h {
            for kw in 0..d.k_w {
                let dst = &mut cols[row * d.p..(row + 1) * d.p];
                let mut col = 0usize;
                for oy in 0..d.out_h {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h {
                        dst[col..col + d.out_w].fill(0.0);
                        col += d.out_w;
                        continue;
                    }
                    let base = iy as usize * d.in_w;
                    if stride == 1 {
                        // Valid x range: 0 <= ox + kw - padding < w.
                        let lo = padding.saturating_sub(kw).min(d.out_w);
                        let hi = (w as usize + padding - kw).min(d.out_w);
                        dst[col..col + lo].fill(0.0);
                        if hi > lo {
                            let src_start = base + lo + kw - padding;
                            dst[col + lo..col + hi].copy_from_slice(&plane[src_start..src_start + (hi - lo)]);
                        }
                        dst[col + hi.max(lo)..col + d.out_w].fill(0.0);
                        col += d.out_w;
                    } else {
                        for ox in 0..d.out_w {
                            let ix = (ox * stride + kw) as isize - padding as isize;
                            dst[col] = if ix < 0 || ix >= w { 0.0 } else { plane[base + ix as usize] };
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Blocked out-of-place transpose: `src` is `[rows, cols]`, `dst` becomes
/// `[cols, rows]`.
fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    debug_assert_eq!(src.len(), rows * cols);
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                let base = r * cols;
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[base + c];
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds `cols[K, P]` back into one image.
fn col2im_add(cols: &[f64], d: &ConvDims, stride: usize, padding: usize, image: &mut [f64]) {
    let (h, w) = (d.in_h as isize, d.in_w as isize);
    let mut row = 0usize;
    for c in 0..d.in_c {
        let plane = &mut image[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for kh in 0..d.k_h {
            for kw in 0..d.k_w {
                let src = &cols[row * d.p..(row + 1) * d.p];
                let mut col = 0usize;
                for oy in 0..d.out_h {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h {
                        col += d.out_w;
                        continue;
                    }
                    let base = iy as usize * d.in_w;
                    for ox in 0..d.out_w {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        if ix >= 0 && ix < w {
                            plane[base + ix as usize] += src[col];
                        }
                        col += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of a batch with a filter bank: `W * X + b` per Eq-style
/// layer recursion. Output is `[B, out_c, out_h, out_w]`.
pub fn convolve(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let d = conv_dims(input, weights, bias, stride, padding)?;
    let mut out = Tensor::zeros(&[d.batch, d.out_c, d.out_h, d.out_w]);
    let mut cols = vec![0.0; d.k * d.p];
    let image_len = d.in_c * d.in_h * d.in_w;
    let out_len = d.out_c * d.p;
    for b in 0..d.batch {
        im2col(&input.data()[b * image_len..(b + 1) * image_len], &d, stride, padding, &mut cols);
        let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
        unsafe {
            dgemm(
                d.out_c,
                d.k,
                d.p,
                1.0,
                weights.data().as_ptr(),
                d.k as isize,
                1,
                cols.as_ptr(),
                d.p as isize,
                1,
                0.0,
                dst.as_mut_ptr(),
                d.p as isize,
                1,
            );
        }
        for oc in 0..d.out_c {
            let bv = bias.data()[oc];
            for v in &mut dst[oc * d.p..(oc + 1) * d.p] {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Backward pass: exact adjoints for input, weights and bias.
pub fn convolve_grad(
    upstream: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    need_grad_input: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(input, weights, bias, stride, padding)?;
    let expected = [d.batch, d.out_c, d.out_h, d.out_w];
    if upstream.shape() != expected {
        return Err(Error::shape("convolution upstream", format!("{expected:?}"), format!("{:?}", upstream.shape())));
    }

    let mut grad_b = Tensor::zeros(&[d.out_c]);
    let mut grad_in = if need_grad_input { Some(Tensor::zeros(input.shape())) } else { None };

    let mut cols = vec![0.0; d.k * d.p];
    let mut grad_cols = vec![0.0; d.k * d.p];
    // Accumulate grad_W transposed as [K, O] so every GEMM operand is
    // contiguous; the strided view of cols would make the packer walk a
    // huge column stride.
    let mut up_t = vec![0.0; d.p * d.out_c];
    let mut grad_w_t = vec![0.0; d.k * d.out_c];
    let image_len = d.in_c * d.in_h * d.in_w;
    let out_len = d.out_c * d.p;

    for b in 0..d.batch {
        let up = &upstream.data()[b * out_len..(b + 1) * out_len];
        for oc in 0..d.out_c {
            grad_b.data_mut()[oc] += up[oc * d.p..(oc + 1) * d.p].iter().sum::<f64>();
        }

        im2col(&input.data()[b * image_len..(b + 1) * image_len], &d, stride, padding, &mut cols);
        transpose_into(up, d.out_c, d.p, &mut up_t);
        // grad_W^T[K,O] += cols[K,P] . up^T[P,O]
        unsafe {
            dgemm(
                d.k,
                d.p,
                d.out_c,
                1.0,
                cols.as_ptr(),
                d.p as isize,
                1,
                up_t.as_ptr(),
                d.out_c as isize,
                1,
                1.0,
                grad_w_t.as_mut_ptr(),
                d.out_c as isize,
                1,
            );
        }

        if let Some(gi) = grad_in.as_mut() {
            // grad_cols[K,P] = W^T[K,O] . upstream[O,P]; W is small enough
            // that packing its strided view is cheap.
            unsafe {
                dgemm(
                    d.k,
                    d.out_c,
                    d.p,
                    1.0,
                    weights.data().as_ptr(),
                    1,
                    d.k as isize,
                    up.as_ptr(),
                    d.p as isize,
                    1,
                    0.0,
                    grad_cols.as_mut_ptr(),
                    d.p as isize,
                    1,
                );
            }
            col2im_add(
                &grad_cols,
                &d,
                stride,
                padding,
                &mut gi.data_mut()[b * image_len..(b + 1) * image_len],
            );
        }
    }

    let mut grad_w = Tensor::zeros(weights.shape());
    transpose_into(&grad_w_t, d.k, d.out_c, grad_w.data_mut());

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
