//! Rectified linear unit and elementwise addition, with their grad passes.

use crate::error::Result;
use crate::numerics::tensor::Tensor;

/// Elementwise max(x, 0).
pub fn rectify(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Masks upstream where the forward input was <= 0 (subgradient at 0 is 0).
/// `reference` may be either the forward input or its rectified output: the
/// strict positivity mask is identical for both.
pub fn rectify_grad(upstream: &Tensor, reference: &Tensor) -> Result<Tensor> {
    upstream.check_same_shape(reference, "rectify_grad")?;
    let mut grad = upstream.clone();
    for (g, &r) in grad.data_mut().iter_mut().zip(reference.data()) {
        if r <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// c = a + b; the grad pass forwards upstream to both operands unchanged.
pub fn add_elementwise(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "add_elementwise")?;
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bv;
    }
    Ok(out)
}
