//! Fully connected layer: out = input . W^T + b per row, with exact adjoints.

use matrixmultiply::dgemm;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if input.order() != 2 || weights.order() != 2 {
        return Err(Error::shape(
            "affine",
            "input [B,F] and weights [O,F]",
            format!("orders {} and {}", input.order(), weights.order()),
        ));
    }
    let (batch, features) = (input.shape()[0], input.shape()[1]);
    let (out, w_f) = (weights.shape()[0], weights.shape()[1]);
    if w_f != features {
        return Err(Error::shape(
            "affine features",
            format!("weights [*, {features}] for input {:?}", input.shape()),
            format!("{:?}", weights.shape()),
        ));
    }
    if bias.shape() != [out] {
        return Err(Error::shape("affine bias", format!("[{out}]"), format!("{:?}", bias.shape())));
    }
    Ok((batch, features, out))
}

pub fn affine(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, features, out_dim) = check_dims(input, weights, bias)?;
    let mut out = Tensor::zeros(&[batch, out_dim]);
    // Computed as out^T[O,B] = W[O,F] . input^T[F,B] with the result written
    // through strides directly into row-major out[B,O]: this keeps the large
    // weight matrix contiguous for the GEMM packer (the W^T view would be
    // walked with a huge column stride).
    unsafe {
        dgemm(
            out_dim,
            features,
            batch,
            1.0,
            weights.data().as_ptr(),
            features as isize,
            1,
            input.data().as_ptr(),
            1,
            features as isize,
            0.0,
            out.data_mut().as_mut_ptr(),
            1,
            out_dim as isize,
        );
    }
    for b in 0..batch {
        for (o, &bv) in out.row_mut(b).iter_mut().zip(bias.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

pub fn affine_grad(upstream: &Tensor, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<AffineGrads> {
    let (batch, features, out_dim) = check_dims(input, weights, bias)?;
    if upstream.shape() != [batch, out_dim] {
        return Err(Error::shape(
            "affine upstream",
            format!("[{batch}, {out_dim}]"),
            format!("{:?}", upstream.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(&[batch, features]);
    let mut grad_w = Tensor::zeros(&[out_dim, features]);
    let mut grad_b = Tensor::zeros(&[out_dim]);

    // grad_in[B,F] = upstream[B,O] . W[O,F]
    unsafe {
        dgemm(
            batch,
            out_dim,
            features,
            1.0,
            upstream.data().as_ptr(),
            out_dim as isize,
            1,
            weights.data().as_ptr(),
            features as isize,
            1,
            0.0,
            grad_in.data_mut().as_mut_ptr(),
            features as isize,
            1,
        );
    }
    // grad_w[O,F] = upstream^T[O,B] . input[B,F]
    unsafe {
        dgemm(
            out_dim,
            batch,
            features,
            1.0,
            upstream.data().as_ptr(),
            1,
            out_dim as isize,
            input.data().as_ptr(),
            features as isize,
            1,
            0.0,
            grad_w.data_mut().as_mut_ptr(),
            features as isize,
            1,
        );
    }
    for b in 0..batch {
        for (g, &u) in grad_b.data_mut().iter_mut().zip(upstream.row(b)) {
            *g += u;
        }
    }
    Ok(AffineGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
