//! Quick throughput check for the conv forward/backward hot path.

use std::time::Instant;

use boxfree::imaging::ChannelStack;
use boxfree::netcore::{build_net, Activation, NetSpec, SkipFrom};

fn main() {
    let spec = NetSpec::conv_stack(2, &[12, 12, 12], 1, 3, Activation::LeakyRelu, Activation::Sigmoid)
        .with_skip(SkipFrom::Input, 3);
    let net = build_net(&spec, 0).unwrap();
    let input = ChannelStack::from_data(2, 48, 48, vec![0.4; 2 * 48 * 48]).unwrap();
    let iters = 200;

    let t = Instant::now();
    for _ in 0..iters {
        let _ = net.forward(&input).unwrap();
    }
    let fwd = t.elapsed();
    eprintln!("forward: {:?}/iter", fwd / iters);

    let t = Instant::now();
    for _ in 0..iters {
        let (out, tape) = net.forward_cached(&input).unwrap();
        let _ = net.backward(&tape, &out).unwrap();
    }
    let fb = t.elapsed();
    eprintln!("forward+backward: {:?}/iter", fb / iters);

    // Single 12->12 conv layer in isolation.
    let single = NetSpec::conv_stack(12, &[], 12, 3, Activation::Linear, Activation::Linear);
    let net1 = build_net(&single, 0).unwrap();
    let input1 = ChannelStack::from_data(12, 48, 48, vec![0.3; 12 * 48 * 48]).unwrap();
    let t = Instant::now();
    for _ in 0..iters {
        let _ = net1.forward(&input1).unwrap();
    }
    eprintln!("single 12x12 conv fwd: {:?}/iter ({:.2} GFLOP/s)",
        t.elapsed() / iters,
        (2.0 * 12.0 * 12.0 * 9.0 * 2304.0 * iters as f64) / t.elapsed().as_secs_f64() / 1e9);
}
// (appended) single-layer timing
