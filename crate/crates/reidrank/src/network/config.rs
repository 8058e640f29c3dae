//! Architecture configuration and the derived shape chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::conv_output_extent;

pub const PART_COUNT: usize = 4;

/// Topology knobs for the part-based network. The default values reproduce
/// the full-size architecture: 230x80x3 input, a 7x7 global convolution with
/// 64 filters, 3x3/stride-3 pooling, four non-shared residual paths with 32
/// channels, and 100-wide fully connected layers giving an 800-dimensional
/// feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub global_filters: usize,
    pub global_kernel: usize,
    pub global_stride: usize,
    pub global_padding: usize,
    pub pool1_window: usize,
    pub pool1_stride: usize,
    pub local_channels: usize,
    pub local_kernel: usize,
    pub local_padding: usize,
    pub pool2_window: usize,
    pub pool2_stride: usize,
    pub fc_width: usize,
    /// Residual blocks per part path (R). 1 for small datasets, 4 for the
    /// large-scale variant.
    pub residual_blocks: usize,
    pub use_batch_norm: bool,
    pub init_std_conv: f64,
    pub init_std_fc: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_height: 230,
            input_width: 80,
            input_channels: 3,
            global_filters: 64,
            global_kernel: 7,
            global_stride: 1,
            global_padding: 0,
            pool1_window: 3,
            pool1_stride: 3,
            local_channels: 32,
            local_kernel: 3,
            local_padding: 1,
            pool2_window: 3,
            pool2_stride: 1,
            fc_width: 100,
            residual_blocks: 1,
            use_batch_norm: false,
            init_std_conv: 0.01,
            init_std_fc: 0.001,
        }
    }
}

/// Spatial extents at each stage of the pipeline, fixed by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeChain {
    /// Global conv output (height, width).
    pub conv_out: (usize, usize),
    /// First pooling output (height, width); its height is split four ways.
    pub pool1_out: (usize, usize),
    /// Stripe heights after the near-equal horizontal split.
    pub stripe_heights: [usize; PART_COUNT],
    /// Per-part pooled output (height, width) before flattening.
    pub part_pool_out: [(usize, usize); PART_COUNT],
    /// Per-part flattened feature count entering fc1.
    pub part_flat: [usize; PART_COUNT],
    /// Final feature dimension: 2 * 4 * fc_width.
    pub feature_dim: usize,
}

/// Near-equal split of `height` into four stripes: the first `height % 4`
/// stripes take the extra row. 74 -> {19, 19, 18, 18}.
pub fn split_heights(height: usize) -> Result<[usize; PART_COUNT]> {
    if height < PART_COUNT {
        return Err(Error::InvalidDimension(format!(
            "cannot split height {height} into {PART_COUNT} stripes"
        )));
    }
    let base = height / PART_COUNT;
    let extra = height % PART_COUNT;
    let mut out = [base; PART_COUNT];
    for h in out.iter_mut().take(extra) {
        *h += 1;
    }
    Ok(out)
}

impl NetConfig {
    /// A reduced topology for gradient checking: 24x8x3 input, 4 global
    /// filters, 6 local channels, 5-wide fully connected layers.
    pub fn reduced() -> Self {
        NetConfig {
            input_height: 24,
            input_width: 8,
            input_channels: 3,
            global_filters: 4,
            global_kernel: 3,
            global_stride: 1,
            global_padding: 0,
            pool1_window: 2,
            pool1_stride: 2,
            local_channels: 6,
            local_kernel: 3,
            local_padding: 1,
            pool2_window: 2,
            pool2_stride: 1,
            fc_width: 5,
            residual_blocks: 1,
            use_batch_norm: false,
            init_std_conv: 0.1,
            init_std_fc: 0.05,
        }
    }

    /// Validates the config and computes every derived extent.
    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("input_channels", self.input_channels),
            ("global_filters", self.global_filters),
            ("global_kernel", self.global_kernel),
            ("global_stride", self.global_stride),
            ("pool1_window", self.pool1_window),
            ("pool1_stride", self.pool1_stride),
            ("local_channels", self.local_channels),
            ("local_kernel", self.local_kernel),
            ("pool2_window", self.pool2_window),
            ("pool2_stride", self.pool2_stride),
            ("fc_width", self.fc_width),
            ("residual_blocks", self.residual_blocks),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if !(self.init_std_conv > 0.0) || !(self.init_std_fc > 0.0) {
            problems.push("init std values must be positive".into());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfigList(problems));
        }

        let conv_h = conv_output_extent(self.input_height, self.global_kernel, self.global_stride, self.global_padding)?;
        let conv_w = conv_output_extent(self.input_width, self.global_kernel, self.global_stride, self.global_padding)?;
        if self.pool1_window > conv_h || self.pool1_window > conv_w {
            return Err(Error::InvalidConfig(format!(
                "pool1 window {} exceeds conv output {conv_h}x{conv_w}",
                self.pool1_window
            )));
        }
        let pool1_h = (conv_h - self.pool1_window) / self.pool1_stride + 1;
        let pool1_w = (conv_w - self.pool1_window) / self.pool1_stride + 1;
        let stripe_heights = split_heights(pool1_h)?;

        let mut part_pool_out = [(0usize, 0usize); PART_COUNT];
        let mut part_flat = [0usize; PART_COUNT];
        for (p, &sh) in stripe_heights.iter().enumerate() {
            // Local convs must preserve the stripe extent (stride 1 with
            // matching padding) so that R stacked blocks stay shape-stable.
            if self.local_kernel > sh + 2 * self.local_padding || self.local_kernel > pool1_w + 2 * self.local_padding {
                return Err(Error::InvalidConfig(format!(
                    "local kernel {} does not fit stripe {sh}x{pool1_w} with padding {}",
                    self.local_kernel, self.local_padding
                )));
            }
            let conv_keep_h = (sh + 2 * self.local_padding - self.local_kernel) + 1;
            let conv_keep_w = (pool1_w + 2 * self.local_padding - self.local_kernel) + 1;
            if conv_keep_h != sh || conv_keep_w != pool1_w {
                return Err(Error::InvalidConfig(format!(
                    "local conv must preserve stripe extents (kernel {}, padding {}), got {sh}x{pool1_w} -> {conv_keep_h}x{conv_keep_w}",
                    self.local_kernel, self.local_padding
                )));
            }
            if self.pool2_window > sh || self.pool2_window > pool1_w {
                return Err(Error::InvalidConfig(format!(
                    "pool2 window {} exceeds stripe {sh}x{pool1_w} of part {p}",
                    self.pool2_window
                )));
            }
            let ph = (sh - self.pool2_window) / self.pool2_stride + 1;
            let pw = (pool1_w - self.pool2_window) / self.pool2_stride + 1;
            part_pool_out[p] = (ph, pw);
            part_flat[p] = self.local_channels * ph * pw;
        }

        Ok(ShapeChain {
            conv_out: (conv_h, conv_w),
            pool1_out: (pool1_h, pool1_w),
            stripe_heights,
            part_pool_out,
            part_flat,
            feature_dim: 2 * PART_COUNT * self.fc_width,
        })
    }

    pub fn feature_dim(&self) -> usize {
        2 * PART_COUNT * self.fc_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain_reaches_800_features() {
        let chain = NetConfig::default().shape_chain().unwrap();
        assert_eq!(chain.conv_out, (224, 74));
        assert_eq!(chain.pool1_out, (74, 24));
        assert_eq!(chain.stripe_heights, [19, 19, 18, 18]);
        assert_eq!(chain.part_pool_out[0], (17, 22));
        assert_eq!(chain.part_pool_out[3], (16, 22));
        assert_eq!(chain.part_flat[0], 32 * 17 * 22);
        assert_eq!(chain.feature_dim, 800);
    }

    #[test]
    fn split_heights_cases() {
        assert_eq!(split_heights(74).unwrap(), [19, 19, 18, 18]);
        assert_eq!(split_heights(8).unwrap(), [2, 2, 2, 2]);
        assert_eq!(split_heights(7).unwrap(), [2, 2, 2, 1]);
        assert!(split_heights(3).is_err());
    }

    #[test]
    fn reduced_config_is_consistent() {
        let chain = NetConfig::reduced().shape_chain().unwrap();
        assert_eq!(chain.feature_dim, 40);
    }
}
