//! Rough per-operation timing at desk-scale shapes.

use std::time::Instant;

use saceo::agent::{critic_step, policy_rl_step, temperature_step, AgentHyper, AgentState, CriticBatch};
use saceo::nn::{MlpGradients, MlpNet, MlpSpec};
use saceo::rng::{SeededRng, Stream};

fn main() {
    let mut rng = SeededRng::new(1, Stream::Agent);
    let mut hyper = AgentHyper::defaults(1);
    hyper.hidden = vec![64, 64];
    let agent = AgentState::new(3, 1, hyper, &mut rng).unwrap();
    let b = 64;
    let states: Vec<f64> = (0..b * 3).map(|i| (i as f64 * 0.1).sin()).collect();
    let actions: Vec<f64> = (0..b).map(|i| (i as f64 * 0.3).cos()).collect();
    let rewards: Vec<f64> = (0..b).map(|i| i as f64 / b as f64).collect();
    let next_states = states.clone();
    let mut noise = vec![0.0; b];
    rng.fill_standard_normal(&mut noise);

    let iters = 2000;

    let t = Instant::now();
    for _ in 0..iters {
        let cb = CriticBatch { states: &states, actions: &actions, rewards: &rewards, next_states: &next_states, batch: b };
        std::hint::black_box(critic_step(&agent, &cb, &noise).unwrap());
    }
    println!("critic_step : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);

    let t = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(policy_rl_step(&agent, &states, b, &noise).unwrap());
    }
    println!("policy_step : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);

    let t = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(temperature_step(&agent, &states, b, &noise).unwrap());
    }
    println!("temp_step   : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);

    // Primitive costs.
    let net = MlpNet::new(&MlpSpec::new(4, &[64, 64], 1), &mut rng).unwrap();
    let xs: Vec<f64> = (0..b * 4).map(|i| (i as f64 * 0.01).sin()).collect();
    let t = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(net.apply_batch(&xs, b).unwrap());
    }
    println!("apply_batch : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);

    let t = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(net.forward_batch(&xs, b).unwrap());
    }
    println!("fwd w/ tape : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);

    let tape = net.forward_batch(&xs, b).unwrap();
    let og = vec![1.0; b];
    let mut grads = MlpGradients::zeros_like(&net);
    let t = Instant::now();
    for _ in 0..iters {
        grads.fill_zero();
        net.backward_into(&tape, &og, Some(&mut grads), None).unwrap();
    }
    println!("bwd params  : {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / iters as f64);
}
