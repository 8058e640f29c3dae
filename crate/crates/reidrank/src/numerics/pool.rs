//! Max pooling with an explicit argmax index map for the exact backward pass.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// For every pooled cell, the flat coordinate (into the input tensor's data
/// buffer) of the maximum that produced it. Ties break toward the lowest
/// flat index so the backward pass is deterministic.
#[derive(Debug, Clone)]
pub struct PoolIndexMap {
    pub output_shape: Vec<usize>,
    pub input_shape: Vec<usize>,
    indices: Vec<u32>,
}

impl PoolIndexMap {
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }
}

/// Windowed maximum over the spatial axes, stride applied to both.
/// Returns the pooled tensor and the index map for the gradient pass.
pub fn pool_max(input: &Tensor, window: (usize, usize), stride: usize) -> Result<(Tensor, PoolIndexMap)> {
    if input.order() != 4 {
        return Err(Error::shape("pool_max", "[B,C,H,W]", format!("order {}", input.order())));
    }
    if stride == 0 {
        return Err(Error::InvalidDimension("pool stride must be positive".into()));
    }
    let (batch, chans, in_h, in_w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (w_h, w_w) = window;
    if w_h == 0 || w_w == 0 || w_h > in_h || w_w > in_w {
        return Err(Error::shape(
            "pool window",
            format!("window within input {in_h}x{in_w}"),
            format!("{w_h}x{w_w}"),
        ));
    }
    let out_h = (in_h - w_h) / stride + 1;
    let out_w = (in_w - w_w) / stride + 1;
    let mut out = Tensor::zeros(&[batch, chans, out_h, out_w]);
    let mut indices = vec![0u32; batch * chans * out_h * out_w];
    let data = input.data();

    let mut cell = 0usize;
    for b in 0..batch {
        for c in 0..chans {
            let plane_base = (b * chans + c) * in_h * in_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..w_h {
                        let row_base = plane_base + (y0 + dy) * in_w + x0;
                        for dx in 0..w_w {
                            let v = data[row_base + dx];
                            if v > best {
                                best = v;
                                best_idx = row_base + dx;
                            }
                        }
                    }
                    out.data_mut()[cell] = best;
                    indices[cell] = best_idx as u32;
                    cell += 1;
                }
            }
        }
    }

    let map = PoolIndexMap {
        output_shape: out.shape().to_vec(),
        input_shape: input.shape().to_vec(),
        indices,
    };
    Ok((out, map))
}

/// Scatters each upstream value to its recorded argmax position.
pub fn pool_max_grad(upstream: &Tensor, map: &PoolIndexMap) -> Result<Tensor> {
    if upstream.shape() != map.output_shape.as_slice() {
        return Err(Error::shape(
            "pool_max upstream",
            format!("{:?}", map.output_shape),
            format!("{:?}", upstream.shape()),
        ));
    }
    let mut grad = Tensor::zeros(&map.input_shape);
    for (cell, &idx) in map.indices.iter().enumerate() {
        grad.data_mut()[idx as usize] += upstream.data()[cell];
    }
    Ok(grad)
}
