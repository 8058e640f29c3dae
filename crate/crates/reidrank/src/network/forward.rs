//! Batch forward pass of the part-based network.
//!
//! Pipeline: global 7x7 convolution -> 3x3/stride-3 max pool -> ReLU -> split
//! into four horizontal stripes -> per part, R residual blocks (two stacked
//! 3x3 convolutions summed elementwise, optional batch norm) -> 3x3/stride-1
//! max pool -> ReLU -> flatten (channels-major) -> fc1 -> ReLU -> fc2.
//! Fusion: the rectified fc1 outputs of the four parts are concatenated and
//! summarized by a 400-wide fully connected layer (no activation), then
//! concatenated with the four fc2 outputs into the final feature vector.

use crate::error::{Error, Result};
use crate::network::config::{NetConfig, PART_COUNT};
use crate::network::params::ParamSet;
use crate::numerics::{
    add_elementwise, affine, concatenate, convolve, normalize_batch_infer, normalize_batch_train,
    pool_max, rectify, split, BnCache, PoolIndexMap, Tensor,
};

#[derive(Debug)]
pub(crate) struct BlockTrace {
    pub conv1_out: Tensor,
    pub output: Tensor,
    pub bn_cache: Option<BnCache>,
    pub bn_new_stats: Option<(Tensor, Tensor)>,
}

#[derive(Debug)]
pub(crate) struct PartTrace {
    pub blocks: Vec<BlockTrace>,
    pub pool2_map: PoolIndexMap,
    /// Rectified pooled local features, flattened to [B, flat]; fc1's input.
    pub pool2_relu: Tensor,
    /// Rectified fc1 output; fc2's input and the fusion tap.
    pub fc1_relu: Tensor,
}

/// Saved activations and pool index maps sufficient to reproduce the
/// backward pass exactly. Discard after the update step.
#[derive(Debug)]
pub struct ForwardTrace {
    pub(crate) config: NetConfig,
    pub(crate) batch: usize,
    pub(crate) pool1_map: PoolIndexMap,
    /// Post-ReLU stripes of the pooled global feature map, one per part.
    pub(crate) stripes: Vec<Tensor>,
    pub(crate) parts: Vec<PartTrace>,
    /// Concatenated rectified fc1 outputs; the summarizer's input.
    pub(crate) summ_input: Tensor,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Rectified fc1 output of one part path, [B, fc_width].
    pub fn fc1_output(&self, part: usize) -> &Tensor {
        &self.parts[part].fc1_relu
    }

    /// Writes the updated batch-norm running statistics computed during this
    /// forward into the parameter set. Call after the gradient step.
    pub fn commit_running_stats(&self, params: &mut ParamSet) {
        for (part, ptrace) in params.parts.iter_mut().zip(&self.parts) {
            for (block, btrace) in part.blocks.iter_mut().zip(&ptrace.blocks) {
                if let (Some(bn), Some((mean, var))) = (&mut block.bn, &btrace.bn_new_stats) {
                    bn.running_mean = mean.clone();
                    bn.running_var = var.clone();
                }
            }
        }
    }
}

fn check_images(config: &NetConfig, images: &Tensor) -> Result<usize> {
    let expected = [config.input_channels, config.input_height, config.input_width];
    if images.order() != 4 || images.shape()[1..] != expected {
        return Err(Error::shape(
            "network input",
            format!("[batch, {}, {}, {}]", expected[0], expected[1], expected[2]),
            format!("{:?}", images.shape()),
        ));
    }
    Ok(images.shape()[0])
}

/// Divides a pooled feature map into four near-equal horizontal stripes.
/// Concatenating the stripes back along the height axis reproduces the
/// input exactly.
pub fn split_parts(feature_map: &Tensor) -> Result<Vec<Tensor>> {
    if feature_map.order() != 4 {
        return Err(Error::shape("split_parts", "[B,C,H,W]", format!("order {}", feature_map.order())));
    }
    let heights = crate::network::config::split_heights(feature_map.shape()[2])?;
    split(feature_map, &heights, 2)
}

enum BnMode {
    Train,
    Inference,
}

struct StageOutput {
    features: Tensor,
    trace: Option<ForwardTrace>,
}

fn run_forward(params: &ParamSet, images: &Tensor, mode: BnMode, want_trace: bool) -> Result<StageOutput> {
    let config = &params.config;
    let chain = config.shape_chain()?;
    let batch = check_images(config, images)?;

    let conv_out = convolve(
        images,
        &params.global_conv.weights,
        &params.global_conv.bias,
        config.global_stride,
        config.global_padding,
    )?;
    let (pooled, pool1_map) = pool_max(&conv_out, (config.pool1_window, config.pool1_window), config.pool1_stride)?;
    drop(conv_out);
    let rectified = rectify(&pooled);
    drop(pooled);
    let stripes = split(&rectified, &chain.stripe_heights, 2)?;
    drop(rectified);

    let mut part_traces = Vec::with_capacity(PART_COUNT);
    let mut fc1_outputs = Vec::with_capacity(PART_COUNT);
    let mut fc2_outputs = Vec::with_capacity(PART_COUNT);

    for (p, part) in params.parts.iter().enumerate() {
        let mut blocks = Vec::with_capacity(part.blocks.len());
        let mut current: &Tensor = &stripes[p];
        for block in &part.blocks {
            let a1 = convolve(current, &block.conv1.weights, &block.conv1.bias, 1, config.local_padding)?;
            let a2 = convolve(&a1, &block.conv2.weights, &block.conv2.bias, 1, config.local_padding)?;
            let summed = add_elementwise(&a1, &a2)?;
            drop(a2);
            let (output, bn_cache, bn_new_stats) = match (&block.bn, &mode) {
                (Some(bn), BnMode::Train) => {
                    let fwd = normalize_batch_train(&summed, &bn.scale, &bn.shift, &bn.running_mean, &bn.running_var)?;
                    (fwd.output, Some(fwd.cache), Some((fwd.new_running_mean, fwd.new_running_var)))
                }
                (Some(bn), BnMode::Inference) => {
                    let out = normalize_batch_infer(&summed, &bn.scale, &bn.shift, &bn.running_mean, &bn.running_var)?;
                    (out, None, None)
                }
                (None, _) => (summed, None, None),
            };
            blocks.push(BlockTrace {
                conv1_out: a1,
                output,
                bn_cache,
                bn_new_stats,
            });
            current = &blocks.last().unwrap().output;
        }

        let (pooled2, pool2_map) = pool_max(current, (config.pool2_window, config.pool2_window), config.pool2_stride)?;
        let rect2 = rectify(&pooled2);
        drop(pooled2);
        // [B,C,h,w] row-major flattens channels-major per sample.
        let flat = rect2.reshape(vec![batch, chain.part_flat[p]])?;

        let f1 = affine(&flat, &part.fc1.weights, &part.fc1.bias)?;
        let f1r = rectify(&f1);
        drop(f1);
        let f2 = affine(&f1r, &part.fc2.weights, &part.fc2.bias)?;

        fc1_outputs.push(f1r.clone());
        fc2_outputs.push(f2);
        part_traces.push(PartTrace {
            blocks,
            pool2_map,
            pool2_relu: flat,
            fc1_relu: f1r,
        });
    }

    let fc1_refs: Vec<&Tensor> = fc1_outputs.iter().collect();
    let summ_input = concatenate(&fc1_refs, 1)?;
    let summarized = affine(&summ_input, &params.summarizer.weights, &params.summarizer.bias)?;
    let fc2_refs: Vec<&Tensor> = fc2_outputs.iter().collect();
    let fc2_cat = concatenate(&fc2_refs, 1)?;
    let features = concatenate(&[&summarized, &fc2_cat], 1)?;
    debug_assert_eq!(features.shape(), &[batch, chain.feature_dim]);

    let trace = want_trace.then(|| ForwardTrace {
        config: config.clone(),
        batch,
        pool1_map,
        stripes,
        parts: part_traces,
        summ_input,
    });
    Ok(StageOutput { features, trace })
}

/// Training forward: batch-norm (when enabled) uses batch statistics, and a
/// full trace is returned for the backward pass.
pub fn forward(params: &ParamSet, images: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    let out = run_forward(params, images, BnMode::Train, true)?;
    Ok((out.features, out.trace.expect("trace requested")))
}

/// Inference forward: batch-norm uses running statistics and no trace is
/// kept, so rows are independent of batch composition.
pub fn forward_features(params: &ParamSet, images: &Tensor) -> Result<Tensor> {
    Ok(run_forward(params, images, BnMode::Inference, false)?.features)
}
