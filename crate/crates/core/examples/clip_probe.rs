use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rydpulse_core::noise::NoiseModel;
use rydpulse_core::objective::PenaltyParams;
use rydpulse_core::optimizer::{
    adam_step, anneal_lambda_s, loss_gradient, max_phase_jump, AdamState, OptimizerConfig,
    ParamVector,
};
use rydpulse_core::problem::ProblemContext;

fn pilot(label: &str, duration_ns: f64, radius: f64, iterations: usize, clip: f64, seeds: &[u64]) {
    let ctx = ProblemContext::new(2, radius, duration_ns, 100, NoiseModel::ideal()).unwrap();
    let config = OptimizerConfig {
        iterations,
        ..OptimizerConfig::default()
    };
    let mut results: Vec<(f64, f64)> = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamVector::random_init(ctx.n_segments, ctx.n_atoms(), &mut rng);
        let mut adam = AdamState::zeros(params.len());
        let mut top = (0.0f64, f64::INFINITY);
        for it in 0..iterations {
            let lambda_s = anneal_lambda_s(it, iterations, config.lambda_s_initial);
            let penalty = PenaltyParams {
                lambda_s,
                lambda_b: config.lambda_b,
                b: config.b,
                tau: config.tau,
            };
            let (_l, mut grad, fid) =
                loss_gradient(&params, &ctx, &penalty, 1, seed.wrapping_add(it as u64)).unwrap();
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let jump = max_phase_jump(params.phases());
            if jump < 1.0 && fid > top.0 {
                top = (fid, jump);
            }
            adam_step(&mut params.values, &grad, &mut adam, &config, it).unwrap();
        }
        results.push(top);
    }
    results.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let shown: Vec<String> = results
        .iter()
        .take(4)
        .map(|(f, j)| format!("{f:.5}/{j:.2}"))
        .collect();
    println!("{label}: top fid/jump [{}]", shown.join(" "));
}

fn main() {
    let seeds: Vec<u64> = (0..6).collect();
    for clip in [1.0] {
        pilot(&format!("T150 R3.5 it16000"), 150.0, 3.5, 16000, clip, &seeds);
    }
    pilot("T400 R3.5 it16000", 400.0, 3.5, 16000, 1.0, &seeds);
}
