use std::time::Instant;
use reidrank::network::{init_params, NetConfig};
use reidrank::numerics::*;

#[test]
#[ignore]
fn stage_timing() {
    let config = NetConfig::default();
    let params = init_params(&config, 1).unwrap();
    let batch = 8;
    let len = batch * 3 * 230 * 80;
    let images = Tensor::new(
        vec![batch, 3, 230, 80],
        (0..len).map(|i| (i % 97) as f64 / 97.0).collect(),
    ).unwrap();

    let t = Instant::now();
    let conv_out = convolve(&images, &params.global_conv.weights, &params.global_conv.bias, 1, 0).unwrap();
    println!("global conv fwd: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let (pooled, _map) = pool_max(&conv_out, (3, 3), 3).unwrap();
    println!("pool1: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let rect = rectify(&pooled);
    println!("relu: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let stripes = split(&rect, &[19, 19, 18, 18], 2).unwrap();
    println!("split: {:.3}s", t.elapsed().as_secs_f64());

    let part = &params.parts[0];
    let t = Instant::now();
    let a1 = convolve(&stripes[0], &part.blocks[0].conv1.weights, &part.blocks[0].conv1.bias, 1, 1).unwrap();
    let a2 = convolve(&a1, &part.blocks[0].conv2.weights, &part.blocks[0].conv2.bias, 1, 1).unwrap();
    println!("one part two convs fwd: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let up = Tensor::filled(conv_out.shape(), 0.1);
    let _g = convolve_grad(&up, &images, &params.global_conv.weights, &params.global_conv.bias, 1, 0, false).unwrap();
    println!("global conv grad (no input grad): {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let up2 = Tensor::filled(a2.shape(), 0.1);
    let _g2 = convolve_grad(&up2, &a1, &part.blocks[0].conv2.weights, &part.blocks[0].conv2.bias, 1, 1, true).unwrap();
    println!("one local conv grad (with input grad): {:.3}s", t.elapsed().as_secs_f64());
}
