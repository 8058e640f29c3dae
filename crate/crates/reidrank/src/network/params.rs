//! The full parameter collection of the part-based network, its Gaussian
//! initialization, and the mirrored gradient container.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::config::{NetConfig, ShapeChain, PART_COUNT};
use crate::numerics::Tensor;

/// Weights plus bias of one convolutional or fully connected layer.
/// Also used as the gradient container for that layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    fn zeros_like(other: &LayerParams) -> LayerParams {
        LayerParams {
            weights: Tensor::zeros(other.weights.shape()),
            bias: Tensor::zeros(other.bias.shape()),
        }
    }
}

/// Batch-norm parameters: trainable scale/shift plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Trainable gradient slots of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnParamGrads {
    pub scale: Tensor,
    pub shift: Tensor,
}

/// One residual block: two stacked convolutions whose outputs are summed,
/// optionally followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub conv1: LayerParams,
    pub conv2: LayerParams,
    pub bn: Option<BnParams>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub conv1: LayerParams,
    pub conv2: LayerParams,
    pub bn: Option<BnParamGrads>,
}

/// One body-part path: R residual blocks and two fully connected layers.
/// The four paths never share storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PartParams {
    pub blocks: Vec<BlockParams>,
    pub fc1: LayerParams,
    pub fc2: LayerParams,
}

#[derive(Debug, Clone)]
pub struct PartGrads {
    pub blocks: Vec<BlockGrads>,
    pub fc1: LayerParams,
    pub fc2: LayerParams,
}

/// The whole network parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub config: NetConfig,
    pub global_conv: LayerParams,
    pub parts: Vec<PartParams>,
    pub summarizer: LayerParams,
}

/// Gradients shape-congruent with a [`ParamSet`] (running statistics carry
/// no gradient).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub global_conv: LayerParams,
    pub parts: Vec<PartGrads>,
    pub summarizer: LayerParams,
}

/// Draws all weights from zero-mean Gaussians: convolution layers with
/// `init_std_conv`, fully connected layers with `init_std_fc`. All biases are
/// exactly zero; batch-norm scale starts at 1, shift at 0, running stats at
/// (0, 1). Deterministic given the seed.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<ParamSet> {
    let chain = config.shape_chain()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut gaussian = |shape: &[usize], std: f64| -> Tensor {
        let dist = Normal::new(0.0, std).expect("std is validated positive");
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| dist.sample(&mut rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape validated")
    };

    let global_conv = LayerParams {
        weights: gaussian(
            &[config.global_filters, config.input_channels, config.global_kernel, config.global_kernel],
            config.init_std_conv,
        ),
        bias: Tensor::zeros(&[config.global_filters]),
    };

    let mut parts = Vec::with_capacity(PART_COUNT);
    for p in 0..PART_COUNT {
        let mut blocks = Vec::with_capacity(config.residual_blocks);
        for r in 0..config.residual_blocks {
            let in_c = if r == 0 { config.global_filters } else { config.local_channels };
            let k = config.local_kernel;
            let conv1 = LayerParams {
                weights: gaussian(&[config.local_channels, in_c, k, k], config.init_std_conv),
                bias: Tensor::zeros(&[config.local_channels]),
            };
            let conv2 = LayerParams {
                weights: gaussian(&[config.local_channels, config.local_channels, k, k], config.init_std_conv),
                bias: Tensor::zeros(&[config.local_channels]),
            };
            let bn = config.use_batch_norm.then(|| BnParams {
                scale: Tensor::filled(&[config.local_channels], 1.0),
                shift: Tensor::zeros(&[config.local_channels]),
                running_mean: Tensor::zeros(&[config.local_channels]),
                running_var: Tensor::filled(&[config.local_channels], 1.0),
            });
            blocks.push(BlockParams { conv1, conv2, bn });
        }
        let fc1 = LayerParams {
            weights: gaussian(&[config.fc_width, chain.part_flat[p]], config.init_std_fc),
            bias: Tensor::zeros(&[config.fc_width]),
        };
        let fc2 = LayerParams {
            weights: gaussian(&[config.fc_width, config.fc_width], config.init_std_fc),
            bias: Tensor::zeros(&[config.fc_width]),
        };
        parts.push(PartParams { blocks, fc1, fc2 });
    }

    let fused = PART_COUNT * config.fc_width;
    let summarizer = LayerParams {
        weights: gaussian(&[fused, fused], config.init_std_fc),
        bias: Tensor::zeros(&[fused]),
    };

    Ok(ParamSet {
        config: config.clone(),
        global_conv,
        parts,
        summarizer,
    })
}

impl ParamSet {
    pub fn shape_chain(&self) -> Result<ShapeChain> {
        self.config.shape_chain()
    }

    /// Visits every tensor with a stable dotted name, running statistics
    /// included. Visitation order is fixed and is the checkpoint order.
    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor)) {
        f("global_conv.weights".into(), &self.global_conv.weights);
        f("global_conv.bias".into(), &self.global_conv.bias);
        for (p, part) in self.parts.iter().enumerate() {
            for (r, block) in part.blocks.iter().enumerate() {
                let base = format!("part{p}.block{r}");
                f(format!("{base}.conv1.weights"), &block.conv1.weights);
                f(format!("{base}.conv1.bias"), &block.conv1.bias);
                f(format!("{base}.conv2.weights"), &block.conv2.weights);
                f(format!("{base}.conv2.bias"), &block.conv2.bias);
                if let Some(bn) = &block.bn {
                    f(format!("{base}.bn.scale"), &bn.scale);
                    f(format!("{base}.bn.shift"), &bn.shift);
                    f(format!("{base}.bn.running_mean"), &bn.running_mean);
                    f(format!("{base}.bn.running_var"), &bn.running_var);
                }
            }
            f(format!("part{p}.fc1.weights"), &part.fc1.weights);
            f(format!("part{p}.fc1.bias"), &part.fc1.bias);
            f(format!("part{p}.fc2.weights"), &part.fc2.weights);
            f(format!("part{p}.fc2.bias"), &part.fc2.bias);
        }
        f("summarizer.weights".into(), &self.summarizer.weights);
        f("summarizer.bias".into(), &self.summarizer.bias);
    }

    /// Mutable counterpart of [`for_each_tensor`], same order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, &mut Tensor)) {
        f("global_conv.weights".into(), &mut self.global_conv.weights);
        f("global_conv.bias".into(), &mut self.global_conv.bias);
        for (p, part) in self.parts.iter_mut().enumerate() {
            for (r, block) in part.blocks.iter_mut().enumerate() {
                let base = format!("part{p}.block{r}");
                f(format!("{base}.conv1.weights"), &mut block.conv1.weights);
                f(format!("{base}.conv1.bias"), &mut block.conv1.bias);
                f(format!("{base}.conv2.weights"), &mut block.conv2.weights);
                f(format!("{base}.conv2.bias"), &mut block.conv2.bias);
                if let Some(bn) = &mut block.bn {
                    f(format!("{base}.bn.scale"), &mut bn.scale);
                    f(format!("{base}.bn.shift"), &mut bn.shift);
                    f(format!("{base}.bn.running_mean"), &mut bn.running_mean);
                    f(format!("{base}.bn.running_var"), &mut bn.running_var);
                }
            }
            f(format!("part{p}.fc1.weights"), &mut part.fc1.weights);
            f(format!("part{p}.fc1.bias"), &mut part.fc1.bias);
            f(format!("part{p}.fc2.weights"), &mut part.fc2.weights);
            f(format!("part{p}.fc2.bias"), &mut part.fc2.bias);
        }
        f("summarizer.weights".into(), &mut self.summarizer.weights);
        f("summarizer.bias".into(), &mut self.summarizer.bias);
    }

    /// Sum of squared Frobenius/Euclidean norms over all trainable
    /// parameters (weights, biases, batch-norm scale and shift).
    pub fn squared_norm(&self) -> f64 {
        let mut total = 0.0;
        self.for_each_tensor(|name, t| {
            if !name.contains("running_") {
                total += t.squared_norm();
            }
        });
        total
    }

    /// Applies one descent step in place:
    /// theta <- theta - step * (grad + 2 * lambda * theta).
    /// The regularizer gradient is applied analytically as weight decay.
    pub fn sgd_step(&mut self, grads: &ParamGrads, step: f64, lambda: f64) -> Result<()> {
        self.check_congruent(grads)?;
        fn upd(p: &mut LayerParams, g: &LayerParams, step: f64, lambda: f64) {
            for (w, gw) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= step * (gw + 2.0 * lambda * *w);
            }
            for (b, gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= step * (gb + 2.0 * lambda * *b);
            }
        }
        upd(&mut self.global_conv, &grads.global_conv, step, lambda);
        for (part, gpart) in self.parts.iter_mut().zip(&grads.parts) {
            for (block, gblock) in part.blocks.iter_mut().zip(&gpart.blocks) {
                upd(&mut block.conv1, &gblock.conv1, step, lambda);
                upd(&mut block.conv2, &gblock.conv2, step, lambda);
                if let (Some(bn), Some(gbn)) = (&mut block.bn, &gblock.bn) {
                    for (s, gs) in bn.scale.data_mut().iter_mut().zip(gbn.scale.data()) {
                        *s -= step * (gs + 2.0 * lambda * *s);
                    }
                    for (s, gs) in bn.shift.data_mut().iter_mut().zip(gbn.shift.data()) {
                        *s -= step * (gs + 2.0 * lambda * *s);
                    }
                }
            }
            upd(&mut part.fc1, &gpart.fc1, step, lambda);
            upd(&mut part.fc2, &gpart.fc2, step, lambda);
        }
        upd(&mut self.summarizer, &grads.summarizer, step, lambda);
        Ok(())
    }

    fn check_congruent(&self, grads: &ParamGrads) -> Result<()> {
        let mut ok = grads.parts.len() == self.parts.len()
            && grads.global_conv.weights.shape() == self.global_conv.weights.shape()
            && grads.summarizer.weights.shape() == self.summarizer.weights.shape();
        if ok {
            for (part, gpart) in self.parts.iter().zip(&grads.parts) {
                ok &= part.blocks.len() == gpart.blocks.len()
                    && part.fc1.weights.shape() == gpart.fc1.weights.shape()
                    && part.fc2.weights.shape() == gpart.fc2.weights.shape();
                for (b, gb) in part.blocks.iter().zip(&gpart.blocks) {
                    ok &= b.conv1.weights.shape() == gb.conv1.weights.shape()
                        && b.conv2.weights.shape() == gb.conv2.weights.shape()
                        && b.bn.is_some() == gb.bn.is_some();
                }
            }
        }
        if ok {
            Ok(())
        } else {
            Err(Error::shape("sgd step", "gradients congruent with parameters", "mismatched gradient structure"))
        }
    }
}

impl ParamGrads {
    pub fn zeros_like(params: &ParamSet) -> ParamGrads {
        ParamGrads {
            global_conv: LayerParams::zeros_like(&params.global_conv),
            parts: params
                .parts
                .iter()
                .map(|part| PartGrads {
                    blocks: part
                        .blocks
                        .iter()
                        .map(|b| BlockGrads {
                            conv1: LayerParams::zeros_like(&b.conv1),
                            conv2: LayerParams::zeros_like(&b.conv2),
                            bn: b.bn.as_ref().map(|bn| BnParamGrads {
                                scale: Tensor::zeros(bn.scale.shape()),
                                shift: Tensor::zeros(bn.shift.shape()),
                            }),
                        })
                        .collect(),
                    fc1: LayerParams::zeros_like(&part.fc1),
                    fc2: LayerParams::zeros_like(&part.fc2),
                })
                .collect(),
            summarizer: LayerParams::zeros_like(&params.summarizer),
        }
    }

    /// Largest absolute gradient entry, for diagnostics.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        let mut scan = |t: &Tensor| {
            for v in t.data() {
                m = m.max(v.abs());
            }
        };
        scan(&self.global_conv.weights);
        scan(&self.global_conv.bias);
        for part in &self.parts {
            for b in &part.blocks {
                scan(&b.conv1.weights);
                scan(&b.conv1.bias);
                scan(&b.conv2.weights);
                scan(&b.conv2.bias);
                if let Some(bn) = &b.bn {
                    scan(&bn.scale);
                    scan(&bn.shift);
                }
            }
            scan(&part.fc1.weights);
            scan(&part.fc1.bias);
            scan(&part.fc2.weights);
            scan(&part.fc2.bias);
        }
        scan(&self.summarizer.weights);
        scan(&self.summarizer.bias);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_are_exactly_zero_for_any_seed() {
        for seed in [0u64, 1, 99] {
            let params = init_params(&NetConfig::reduced(), seed).unwrap();
            params.for_each_tensor(|name, t| {
                if name.ends_with(".bias") {
                    assert!(t.data().iter().all(|&v| v == 0.0), "{name} not zero");
                }
            });
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let a = init_params(&NetConfig::reduced(), 7).unwrap();
        let b = init_params(&NetConfig::reduced(), 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(&NetConfig::reduced(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_of_global_conv_block_near_configured() {
        let config = NetConfig::default();
        let params = init_params(&config, 3).unwrap();
        let w = &params.global_conv.weights;
        assert_eq!(w.shape(), &[64, 3, 7, 7]);
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - config.init_std_conv).abs() / config.init_std_conv < 0.2,
            "sample std {std} too far from {}",
            config.init_std_conv
        );
    }

    #[test]
    fn fc_layers_use_the_fc_std() {
        let config = NetConfig::default();
        let params = init_params(&config, 3).unwrap();
        let w = &params.parts[0].fc1.weights;
        let n = w.len() as f64;
        let var: f64 = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - config.init_std_fc).abs() / config.init_std_fc < 0.2);
    }

    #[test]
    fn sgd_step_rejects_mismatched_grads() {
        let mut params = init_params(&NetConfig::reduced(), 0).unwrap();
        let mut other_cfg = NetConfig::reduced();
        other_cfg.residual_blocks = 2;
        let other = init_params(&other_cfg, 0).unwrap();
        let grads = ParamGrads::zeros_like(&other);
        assert!(params.sgd_step(&grads, 0.01, 0.0).is_err());
    }

    #[test]
    fn sgd_step_with_zero_grads_is_weight_decay() {
        let mut params = init_params(&NetConfig::reduced(), 1).unwrap();
        let before = params.clone();
        let grads = ParamGrads::zeros_like(&params);
        params.sgd_step(&grads, 0.5, 0.01).unwrap();
        let factor = 1.0 - 2.0 * 0.5 * 0.01;
        let mut checked = 0;
        params.for_each_tensor(|name, t| {
            if name.contains("running_") {
                return;
            }
            let mut expected = None;
            before.for_each_tensor(|n2, t2| {
                if n2 == name {
                    expected = Some(t2.clone());
                }
            });
            let expected = expected.unwrap();
            for (a, b) in t.data().iter().zip(expected.data()) {
                assert!((a - b * factor).abs() < 1e-15);
                checked += 1;
            }
        });
        assert!(checked > 0);
    }
}
