//! Concatenation along one axis and its inverse slice-back, used for the
//! feature-fusion stage and for reassembling horizontal body-part stripes.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

/// Concatenates tensors that agree on every extent except `axis`.
/// The round trip through [`split`] returns the originals bit-exactly.
pub fn concatenate(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidDimension("concatenate needs at least one part".into()))?;
    if axis >= first.order() {
        return Err(Error::InvalidDimension(format!(
            "concat axis {axis} out of range for order {}",
            first.order()
        )));
    }
    let mut total_axis = 0usize;
    for part in parts {
        if part.order() != first.order() {
            return Err(Error::shape("concatenate", format!("order {}", first.order()), format!("order {}", part.order())));
        }
        for (d, (&a, &b)) in first.shape().iter().zip(part.shape()).enumerate() {
            if d != axis && a != b {
                return Err(Error::shape(
                    "concatenate",
                    format!("{:?} up to axis {axis}", first.shape()),
                    format!("{:?}", part.shape()),
                ));
            }
        }
        total_axis += part.shape()[axis];
    }

    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total_axis;
    let mut out = Tensor::zeros(&out_shape);
    let (outer, inner) = outer_inner(&out_shape, axis);

    let mut axis_offset = 0usize;
    for part in parts {
        let extent = part.shape()[axis];
        for o in 0..outer {
            let src = &part.data()[o * extent * inner..(o + 1) * extent * inner];
            let dst_base = (o * total_axis + axis_offset) * inner;
            out.data_mut()[dst_base..dst_base + extent * inner].copy_from_slice(src);
        }
        axis_offset += extent;
    }
    Ok(out)
}

/// Slices a tensor back into parts with the given extents along `axis`.
/// This is also the gradient pass of [`concatenate`].
pub fn split(input: &Tensor, extents: &[usize], axis: usize) -> Result<Vec<Tensor>> {
    if axis >= input.order() {
        return Err(Error::InvalidDimension(format!(
            "split axis {axis} out of range for order {}",
            input.order()
        )));
    }
    let total: usize = extents.iter().sum();
    if total != input.shape()[axis] || extents.iter().any(|&e| e == 0) {
        return Err(Error::shape(
            "split extents",
            format!("sum to {} with positive parts", input.shape()[axis]),
            format!("{extents:?}"),
        ));
    }
    let (outer, inner) = outer_inner(input.shape(), axis);
    let axis_total = input.shape()[axis];

    let mut parts = Vec::with_capacity(extents.len());
    let mut axis_offset = 0usize;
    for &extent in extents {
        let mut shape = input.shape().to_vec();
        shape[axis] = extent;
        let mut part = Tensor::zeros(&shape);
        for o in 0..outer {
            let src_base = (o * axis_total + axis_offset) * inner;
            part.data_mut()[o * extent * inner..(o + 1) * extent * inner]
                .copy_from_slice(&input.data()[src_base..src_base + extent * inner]);
        }
        parts.push(part);
        axis_offset += extent;
    }
    Ok(parts)
}
