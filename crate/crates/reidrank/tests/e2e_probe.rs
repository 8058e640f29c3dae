use std::time::Instant;
use reidrank::eval::repeat_protocol;
use reidrank::network::NetConfig;
use reidrank::sampler::{generate_synthetic, SyntheticConfig};
use reidrank::trainer::*;

#[test]
#[ignore]
fn criterion5_experiment() {
    let data_cfg = SyntheticConfig { seed: 42, ..SyntheticConfig::default() }; // 30 train, 10 test, 4/view, 230x80
    let t = Instant::now();
    let dataset = generate_synthetic(&data_cfg).unwrap();
    println!("synth: {:.1}s", t.elapsed().as_secs_f64());

    for (sc, sf) in [(0.05f64, 0.02f64), (0.1, 0.05)] {
        let net = NetConfig { init_std_conv: sc, init_std_fc: sf, ..NetConfig::default() };
        let train_cfg = TrainConfig {
            epochs: 3,
            batches_per_epoch: Some(1),
            train_cmc_ids: 6,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut state = TrainState::fresh(&net, train_cfg.seed).unwrap();
        let t = Instant::now();
        let mut hooks = TrainHooks::default();
        train_epochs(&mut state, &dataset, &train_cfg, 3, &mut hooks).unwrap();
        let train_time = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let outcome = repeat_protocol(&dataset, &state.params, 1, 0).unwrap();
        let eval_time = t.elapsed().as_secs_f64();
        println!("init ({sc},{sf}): 3 epochs in {train_time:.1}s ({:.1}s/epoch), eval {eval_time:.1}s, rank1 {:.2}", train_time/3.0, outcome.mean.rank(1));
        for row in &state.metrics.iterations {
            println!("  iter {}: loss {:.4} hinge {:.4} s {:.3e} d {:.3e} m_p {:.3e} m_n {:.3} active {:.2}",
                row.iteration, row.loss, row.hinge, row.s, row.d, row.m_p, row.m_n, row.active_fraction);
        }
    }
}
