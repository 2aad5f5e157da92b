//! Dev probe: training dynamics and throughput measurements.
//! Not part of the public surface; run with `cargo run --bin probe --release`.

use std::time::Instant;

use neuroprog::genome::Genome;
use neuroprog::netbuilder::build;
use neuroprog::optim::AdamLookahead;
use neuroprog::rng::{derive_seed, rng_for};
use neuroprog::segtrain::loss::{apply_loss, LossKind};
use neuroprog::segtrain::synth::synth_vessels;
use neuroprog::segtrain::train::{evaluate_network, stack_batch, TrainConfig};
use neuroprog::tensor::{Tape, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("train");
    match which {
        "train" => probe_train(),
        "speed" => probe_speed(),
        _ => eprintln!("unknown probe {which}"),
    }
}

fn probe_train() {
    let n = 64usize;
    let size = 64usize;
    let data = synth_vessels::<f32>(n + 8, size, 7).unwrap();
    let (train, val) = data.split_at(n);
    let genome = Genome::baseline(2, 5).unwrap();
    let cfg = TrainConfig { epochs: 20, base_channels: 8, ..TrainConfig::default() };

    for (tag, k, alpha) in [("lookahead-paper(k=6,a=0.05)", 6u64, 0.05), ("plain-adam", 1, 1.0), ("lookahead-std(k=6,a=0.5)", 6, 0.5)] {
        let t0 = Instant::now();
        let seed = 1u64;
        let mut network = build::<f32>(&genome, cfg.base_channels, 1, derive_seed(seed, "build")).unwrap();
        let init: Vec<Tensor<f32>> = network.params().iter().map(|p| p.value.clone()).collect();
        let mut opt = AdamLookahead::with_lookahead(&init, k, alpha);
        let lrs = network.lrs(cfg.lr_base, cfg.lr_quad);
        for epoch in 0..cfg.epochs {
            use rand::seq::SliceRandom as _;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng_for(seed, &format!("shuffle:{epoch}")));
            let mut losses = Vec::new();
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<_> = chunk.iter().map(|&i| train[i].clone()).collect();
                let (x, y) = stack_batch(&batch).unwrap();
                let mut tape = Tape::new();
                let pass = network.forward(&mut tape, x, true).unwrap();
                let target = tape.leaf(y, false);
                let loss = apply_loss(&mut tape, cfg.loss, pass.output, target).unwrap();
                losses.push(tape.value(loss).item());
                tape.backward(loss).unwrap();
                let grads: Vec<Tensor<f32>> =
                    pass.param_vars.iter().map(|v| tape.grad(*v).unwrap().clone()).collect();
                let mut values: Vec<&mut Tensor<f32>> =
                    network.params_mut().iter_mut().map(|p| &mut p.value).collect();
                opt.step(&mut values, &grads, &lrs).unwrap();
            }
            if epoch % 5 == 4 || epoch == 0 {
                let m = evaluate_network(&network, val, 0.5).unwrap();
                let mean_loss: f32 = losses.iter().sum::<f32>() / losses.len() as f32;
                println!(
                    "{tag} epoch {epoch:2} loss {mean_loss:.5} F1 {:.4} SE {:.3} SP {:.3}",
                    m.f1.unwrap_or(0.0),
                    m.se.unwrap_or(0.0),
                    m.sp.unwrap_or(0.0)
                );
            }
        }
        println!("{tag}: {:.1}s", t0.elapsed().as_secs_f64());
    }
}

fn probe_speed() {
    // raw conv throughput: depth-2 all-conventional forward+backward
    let data = synth_vessels::<f32>(8, 32, 3).unwrap();
    let genome = Genome::baseline(2, 5).unwrap();
    let network = build::<f32>(&genome, 8, 1, 1).unwrap();
    let (x, y) = stack_batch(&data[..4]).unwrap();
    let t0 = Instant::now();
    let iters = 30;
    for _ in 0..iters {
        let mut tape = Tape::new();
        let pass = network.forward(&mut tape, x.clone(), true).unwrap();
        let target = tape.leaf(y.clone(), false);
        let loss = apply_loss(&mut tape, LossKind::default(), pass.output, target).unwrap();
        tape.backward(loss).unwrap();
        std::hint::black_box(tape.grad(pass.param_vars[0]));
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    // rough MAC count: 25 conv nodes at width/res per level + fixed parts
    println!("fwd+bwd batch4 32x32 C8 depth2 conventional: {:.1} ms/iter", dt * 1e3);
}
