//! The part-based architecture: global feature learning, four-way horizontal
//! split, per-part residual convolution paths, per-part fully connected
//! learning, and fusion into the final feature vector.

pub mod backward;
pub mod config;
pub mod forward;
pub mod params;

pub use backward::backward;
pub use config::{split_heights, NetConfig, ShapeChain, PART_COUNT};
pub use forward::{forward, forward_features, split_parts, ForwardTrace};
pub use params::{init_params, BlockParams, BnParams, LayerParams, ParamGrads, ParamSet, PartParams};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{concatenate, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_images(config: &NetConfig, batch: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = batch * config.input_channels * config.input_height * config.input_width;
        let data = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(
            vec![batch, config.input_channels, config.input_height, config.input_width],
            data,
        )
        .unwrap()
    }

    #[test]
    fn split_parts_round_trips() {
        let map = crate::numerics::tensor::Tensor::new(
            vec![1, 2, 8, 3],
            (0..48).map(f64::from).collect(),
        )
        .unwrap();
        let parts = split_parts(&map).unwrap();
        assert_eq!(parts.len(), 4);
        for p in &parts {
            assert_eq!(p.shape()[2], 2);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let back = concatenate(&refs, 2).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn split_parts_rejects_short_maps() {
        let map = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(split_parts(&map).is_err());
    }

    #[test]
    fn forward_produces_configured_feature_dim() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 5).unwrap();
        let images = random_images(&config, 2, 6);
        let (features, trace) = forward(&params, &images).unwrap();
        assert_eq!(features.shape(), &[2, config.feature_dim()]);
        assert_eq!(trace.batch(), 2);
        assert!(features.all_finite());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 7).unwrap();
        let images = Tensor::zeros(&[2, config.input_channels, config.input_height, config.input_width]);
        let (features, _) = forward(&params, &images).unwrap();
        assert!(features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_images_give_identical_rows() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 8).unwrap();
        let one = random_images(&config, 1, 9);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let pair = Tensor::new(
            vec![2, config.input_channels, config.input_height, config.input_width],
            data,
        )
        .unwrap();
        let (features, _) = forward(&params, &pair).unwrap();
        assert_eq!(features.row(0), features.row(1));
    }

    #[test]
    fn forward_rejects_wrong_shape_naming_expected() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 1).unwrap();
        let bad = Tensor::zeros(&[1, 3, 10, 10]);
        let err = forward(&params, &bad).unwrap_err();
        assert!(err.to_string().contains("[batch, 3, 24, 8]"), "{err}");
    }

    #[test]
    fn zero_feature_grads_give_zero_param_grads() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 2).unwrap();
        let images = random_images(&config, 2, 3);
        let (_, trace) = forward(&params, &images).unwrap();
        let grads = backward(&params, &trace, &images, &Tensor::zeros(&[2, config.feature_dim()])).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn duplicating_a_sample_doubles_its_gradient() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 4).unwrap();
        let one = random_images(&config, 1, 10);
        let mut fgrad = Tensor::zeros(&[1, config.feature_dim()]);
        for (i, v) in fgrad.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }

        let (_, trace1) = forward(&params, &one).unwrap();
        let g1 = backward(&params, &trace1, &one, &fgrad).unwrap();

        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let two = Tensor::new(
            vec![2, config.input_channels, config.input_height, config.input_width],
            data,
        )
        .unwrap();
        let mut fgrad2_data = fgrad.data().to_vec();
        fgrad2_data.extend_from_slice(fgrad.data());
        let fgrad2 = Tensor::new(vec![2, config.feature_dim()], fgrad2_data).unwrap();

        let (_, trace2) = forward(&params, &two).unwrap();
        let g2 = backward(&params, &trace2, &two, &fgrad2).unwrap();

        for (a, b) in g1.summarizer.weights.data().iter().zip(g2.summarizer.weights.data()) {
            assert!((2.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
        for (a, b) in g1.global_conv.weights.data().iter().zip(g2.global_conv.weights.data()) {
            assert!((2.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn part_paths_share_nothing() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 11).unwrap();
        let images = random_images(&config, 2, 12);
        let (feat_before, trace_before) = forward(&params, &images).unwrap();

        // Perturb every parameter of part 2's path.
        let mut mutated = params.clone();
        for block in &mut mutated.parts[2].blocks {
            for v in block.conv1.weights.data_mut() {
                *v += 0.05;
            }
        }
        for v in mutated.parts[2].fc1.weights.data_mut() {
            *v += 0.05;
        }
        let (feat_after, trace_after) = forward(&mutated, &images).unwrap();

        assert_ne!(feat_before.data(), feat_after.data());
        for p in [0usize, 1, 3] {
            assert_eq!(
                trace_before.fc1_output(p).data(),
                trace_after.fc1_output(p).data(),
                "fc1 of part {p} changed"
            );
        }
        // fc2 outputs live in the feature vector after the summarizer half.
        let fc = config.fc_width;
        let fused = 4 * fc;
        for p in [0usize, 1, 3] {
            for b in 0..2 {
                let s = fused + p * fc;
                assert_eq!(
                    &feat_before.row(b)[s..s + fc],
                    &feat_after.row(b)[s..s + fc],
                    "fc2 of part {p} changed"
                );
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let config = NetConfig::reduced();
        let params = init_params(&config, 1).unwrap();
        let images = random_images(&config, 2, 2);
        let (_, trace) = forward(&params, &images).unwrap();

        let mut other_cfg = config.clone();
        other_cfg.residual_blocks = 2;
        let other = init_params(&other_cfg, 1).unwrap();
        let fg = Tensor::zeros(&[2, config.feature_dim()]);
        assert!(backward(&other, &trace, &images, &fg).is_err());
    }
}
