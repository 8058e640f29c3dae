//! Per-channel batch normalization over [B,C,H,W] activations.
//!
//! Train mode normalizes by batch statistics (variance floor 1e-5 in the
//! denominator) and reports updated running statistics (momentum 0.9)
//! without mutating anything; inference mode normalizes by the running
//! statistics. The backward pass differentiates through the batch mean and
//! variance.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug)]
pub struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
pub struct BnForward {
    pub output: Tensor,
    pub cache: BnCache,
    /// momentum * old + (1 - momentum) * batch statistic.
    pub new_running_mean: Tensor,
    pub new_running_var: Tensor,
}

#[derive(Debug)]
pub struct BnGrads {
    pub input: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
}

fn check_dims(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<usize> {
    if input.order() != 4 {
        return Err(Error::shape("normalize_batch", "[B,C,H,W]", format!("order {}", input.order())));
    }
    let chans = input.shape()[1];
    if scale.shape() != [chans] || shift.shape() != [chans] {
        return Err(Error::shape(
            "normalize_batch scale/shift",
            format!("[{chans}]"),
            format!("{:?} / {:?}", scale.shape(), shift.shape()),
        ));
    }
    Ok(chans)
}

pub fn normalize_batch_train(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<BnForward> {
    let chans = check_dims(input, scale, shift)?;
    let batch = input.shape()[0];
    if batch < 2 {
        return Err(Error::Batch("normalize_batch requires batch size >= 2 in train mode".into()));
    }
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let plane = h * w;
    let n = (batch * plane) as f64;

    let mut mean = vec![0.0; chans];
    let mut var = vec![0.0; chans];
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            for &v in &input.data()[base..base + plane] {
                mean[c] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            for &v in &input.data()[base..base + plane] {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= n;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut normalized = Tensor::zeros(input.shape());
    let mut output = Tensor::zeros(input.shape());
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            let (m, s) = (mean[c], inv_std[c]);
            let (g, bb) = (scale.data()[c], shift.data()[c]);
            for i in base..base + plane {
                let xh = (input.data()[i] - m) * s;
                normalized.data_mut()[i] = xh;
                output.data_mut()[i] = g * xh + bb;
            }
        }
    }

    let mut new_mean = running_mean.clone();
    let mut new_var = running_var.clone();
    for c in 0..chans {
        new_mean.data_mut()[c] = BN_MOMENTUM * running_mean.data()[c] + (1.0 - BN_MOMENTUM) * mean[c];
        new_var.data_mut()[c] = BN_MOMENTUM * running_var.data()[c] + (1.0 - BN_MOMENTUM) * var[c];
    }

    Ok(BnForward {
        output,
        cache: BnCache { normalized, inv_std },
        new_running_mean: new_mean,
        new_running_var: new_var,
    })
}

pub fn normalize_batch_infer(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Tensor> {
    let chans = check_dims(input, scale, shift)?;
    let batch = input.shape()[0];
    let plane = input.shape()[2] * input.shape()[3];
    let mut output = Tensor::zeros(input.shape());
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            let s = 1.0 / (running_var.data()[c] + BN_EPSILON).sqrt();
            let m = running_mean.data()[c];
            let (g, bb) = (scale.data()[c], shift.data()[c]);
            for i in base..base + plane {
                output.data_mut()[i] = g * (input.data()[i] - m) * s + bb;
            }
        }
    }
    Ok(output)
}

/// Train-mode backward, differentiating through the batch statistics.
pub fn normalize_batch_grad(upstream: &Tensor, cache: &BnCache, scale: &Tensor) -> Result<BnGrads> {
    upstream.check_same_shape(&cache.normalized, "normalize_batch upstream")?;
    let (batch, chans) = (upstream.shape()[0], upstream.shape()[1]);
    let plane = upstream.shape()[2] * upstream.shape()[3];
    let n = (batch * plane) as f64;

    let mut sum_dy = vec![0.0; chans];
    let mut sum_dy_xhat = vec![0.0; chans];
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            for i in base..base + plane {
                let dy = upstream.data()[i];
                sum_dy[c] += dy;
                sum_dy_xhat[c] += dy * cache.normalized.data()[i];
            }
        }
    }

    let mut grad_input = Tensor::zeros(upstream.shape());
    for b in 0..batch {
        for c in 0..chans {
            let base = (b * chans + c) * plane;
            let g = scale.data()[c];
            let s = cache.inv_std[c];
            for i in base..base + plane {
                let dy = upstream.data()[i];
                let xh = cache.normalized.data()[i];
                grad_input.data_mut()[i] = g * s / n * (n * dy - sum_dy[c] - xh * sum_dy_xhat[c]);
            }
        }
    }

    Ok(BnGrads {
        input: grad_input,
        scale: Tensor::from_vec(sum_dy_xhat),
        shift: Tensor::from_vec(sum_dy),
    })
}
