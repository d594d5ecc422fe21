use std::time::Instant;

use rydpulse_core::noise::NoiseModel;
use rydpulse_core::optimizer::{max_phase_jump, multi_restart, OptimizerConfig};
use rydpulse_core::problem::ProblemContext;

fn pilot(
    label: &str,
    n_targets: usize,
    duration_ns: f64,
    radius: f64,
    noisy: bool,
    config: &OptimizerConfig,
) {
    let noise = if noisy {
        NoiseModel::reference()
    } else {
        NoiseModel::ideal()
    };
    let ctx = ProblemContext::new(n_targets, radius, duration_ns, 100, noise).unwrap();
    let start = Instant::now();
    let result = multi_restart(config, &ctx).unwrap();
    let best = result.best();
    println!(
        "{label}: best fid {:.5} +- {:.5} jump {:.3} iters {} time {:.1}s",
        best.fidelity_mean,
        best.fidelity_std,
        max_phase_jump(best.best.phases()),
        best.loss_history.len(),
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let n2 = OptimizerConfig {
        restarts: 3,
        iterations: 2500,
        seed: 11,
        eval_samples: 2000,
        ..OptimizerConfig::default()
    };
    pilot("N2 T575 R3.5 noisy", 2, 575.0, 3.5, true, &n2);
    let n3 = OptimizerConfig {
        restarts: 1,
        iterations: 1200,
        seed: 11,
        eval_samples: 1000,
        ..OptimizerConfig::default()
    };
    pilot("N3 T575 R4.0 noisy", 3, 575.0, 4.0, true, &n3);
}
