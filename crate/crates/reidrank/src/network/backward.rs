//! Reverse composition of the numerics grad passes over the whole network.

use crate::error::{Error, Result};
use crate::network::config::PART_COUNT;
use crate::network::forward::ForwardTrace;
use crate::network::params::{BnParamGrads, ParamGrads, ParamSet};
use crate::numerics::{
    add_elementwise, affine_grad, concatenate, convolve_grad, normalize_batch_grad, pool_max_grad,
    rectify_grad, split, Tensor,
};

/// Propagates per-feature gradients back to every parameter. `images` must
/// be the batch the trace was produced from; the image gradient itself is
/// not computed.
pub fn backward(params: &ParamSet, trace: &ForwardTrace, images: &Tensor, feature_grads: &Tensor) -> Result<ParamGrads> {
    if trace.config != params.config {
        return Err(Error::shape(
            "network backward",
            "trace produced by these parameters",
            "trace from a different configuration",
        ));
    }
    let config = &params.config;
    let chain = config.shape_chain()?;
    if feature_grads.shape() != [trace.batch, chain.feature_dim] {
        return Err(Error::shape(
            "feature gradients",
            format!("[{}, {}]", trace.batch, chain.feature_dim),
            format!("{:?}", feature_grads.shape()),
        ));
    }

    let mut grads = ParamGrads::zeros_like(params);
    let fused = PART_COUNT * config.fc_width;

    // Fusion stage: features = [summarizer(cat fc1) ; cat fc2].
    let top = split(feature_grads, &[fused, fused], 1)?;
    let (g_summ_out, g_fc2_cat) = (&top[0], &top[1]);

    let summ = affine_grad(g_summ_out, &trace.summ_input, &params.summarizer.weights, &params.summarizer.bias)?;
    grads.summarizer.weights = summ.weights;
    grads.summarizer.bias = summ.bias;

    let per_part = vec![config.fc_width; PART_COUNT];
    let g_fc1_fusion = split(&summ.input, &per_part, 1)?;
    let g_fc2 = split(g_fc2_cat, &per_part, 1)?;

    let mut stripe_grads: Vec<Tensor> = Vec::with_capacity(PART_COUNT);
    for p in 0..PART_COUNT {
        let part = &params.parts[p];
        let ptrace = &trace.parts[p];

        let fc2 = affine_grad(&g_fc2[p], &ptrace.fc1_relu, &part.fc2.weights, &part.fc2.bias)?;
        grads.parts[p].fc2.weights = fc2.weights;
        grads.parts[p].fc2.bias = fc2.bias;

        let g_fc1_relu = add_elementwise(&fc2.input, &g_fc1_fusion[p])?;
        let g_fc1 = rectify_grad(&g_fc1_relu, &ptrace.fc1_relu)?;

        let fc1 = affine_grad(&g_fc1, &ptrace.pool2_relu, &part.fc1.weights, &part.fc1.bias)?;
        grads.parts[p].fc1.weights = fc1.weights;
        grads.parts[p].fc1.bias = fc1.bias;

        let g_flat = rectify_grad(&fc1.input, &ptrace.pool2_relu)?;
        let (ph, pw) = chain.part_pool_out[p];
        let g_pool2 = g_flat.reshape(vec![trace.batch, config.local_channels, ph, pw])?;
        let mut g_block_out = pool_max_grad(&g_pool2, &ptrace.pool2_map)?;

        for r in (0..part.blocks.len()).rev() {
            let block = &part.blocks[r];
            let btrace = &ptrace.blocks[r];

            let g_sum = match (&block.bn, &btrace.bn_cache) {
                (Some(bn), Some(cache)) => {
                    let bng = normalize_batch_grad(&g_block_out, cache, &bn.scale)?;
                    let slot = grads.parts[p].blocks[r].bn.get_or_insert(BnParamGrads {
                        scale: Tensor::zeros(bn.scale.shape()),
                        shift: Tensor::zeros(bn.shift.shape()),
                    });
                    slot.scale = bng.scale;
                    slot.shift = bng.shift;
                    bng.input
                }
                (None, None) => g_block_out,
                _ => {
                    return Err(Error::shape(
                        "network backward",
                        "batch-norm trace matching parameters",
                        "trace/parameter batch-norm mismatch",
                    ))
                }
            };

            // output = a1 + conv2(a1): both summands feed back into a1.
            let conv2 = convolve_grad(&g_sum, &btrace.conv1_out, &block.conv2.weights, &block.conv2.bias, 1, config.local_padding, true)?;
            grads.parts[p].blocks[r].conv2.weights = conv2.weights;
            grads.parts[p].blocks[r].conv2.bias = conv2.bias;
            let g_a1 = add_elementwise(&g_sum, &conv2.input.expect("requested input grad"))?;

            let block_input: &Tensor = if r == 0 { &trace.stripes[p] } else { &ptrace.blocks[r - 1].output };
            let conv1 = convolve_grad(&g_a1, block_input, &block.conv1.weights, &block.conv1.bias, 1, config.local_padding, true)?;
            grads.parts[p].blocks[r].conv1.weights = conv1.weights;
            grads.parts[p].blocks[r].conv1.bias = conv1.bias;
            g_block_out = conv1.input.expect("requested input grad");
        }

        // The stripes are post-ReLU slices, so the mask applies per stripe.
        stripe_grads.push(rectify_grad(&g_block_out, &trace.stripes[p])?);
    }

    let stripe_refs: Vec<&Tensor> = stripe_grads.iter().collect();
    let g_pool1 = concatenate(&stripe_refs, 2)?;
    drop(stripe_grads);
    let g_conv = pool_max_grad(&g_pool1, &trace.pool1_map)?;
    drop(g_pool1);

    let global = convolve_grad(
        &g_conv,
        images,
        &params.global_conv.weights,
        &params.global_conv.bias,
        config.global_stride,
        config.global_padding,
        false,
    )?;
    grads.global_conv.weights = global.weights;
    grads.global_conv.bias = global.bias;

    Ok(grads)
}
