//! Adam training of segment phases and compensation phases, with an
//! annealed smoothness penalty, early stopping, resumable checkpoints,
//! and multi-restart search.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::engine::FidelityEngine;
use crate::error::{Error, Result};
use crate::geometry::{interaction_matrix, sample_displacements};
use crate::objective::{
    batch_fidelity, smoothness_cost, smoothness_grad, PenaltyParams,
};
use crate::problem::ProblemContext;

/// Flat parameter vector: `n_segments` phase values followed by
/// `n_atoms` compensation phases (control first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub n_segments: usize,
    pub n_atoms: usize,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(n_segments: usize, n_atoms: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_segments + n_atoms {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                n_segments + n_atoms,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(ParamVector {
            n_segments,
            n_atoms,
            values,
        })
    }

    /// Random phases uniform in [−π, π); compensation phases start at 0.
    pub fn random_init(n_segments: usize, n_atoms: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut values = Vec::with_capacity(n_segments + n_atoms);
        for _ in 0..n_segments {
            values.push(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        }
        values.resize(n_segments + n_atoms, 0.0);
        ParamVector {
            n_segments,
            n_atoms,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.values[..self.n_segments]
    }

    pub fn comp_phases(&self) -> &[f64] {
        &self.values[self.n_segments..]
    }
}

fn default_iterations() -> usize {
    2000
}
fn default_batch_size() -> usize {
    16
}
fn default_restarts() -> usize {
    50
}
fn default_eval_samples() -> usize {
    10_000
}
fn default_patience() -> usize {
    200
}
fn default_eval_interval() -> usize {
    25
}
fn default_grad_clip_norm() -> f64 {
    1.0
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_lambda_s() -> f64 {
    0.01
}
fn default_lambda_b() -> f64 {
    1.0
}
fn default_b() -> f64 {
    2.0
}
fn default_tau() -> f64 {
    0.1
}

/// Training hyperparameters. The learning rate follows a cosine decay
/// from `learning_rate` to [`LEARNING_RATE_FLOOR`] over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lambda_s_initial: f64,
    pub lambda_b: f64,
    pub b: f64,
    pub tau: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Displacement samples for the final fidelity report.
    pub eval_samples: usize,
    /// Early stopping: abort after this many iterations without loss
    /// improvement (0 disables).
    pub patience: usize,
    /// Evaluate and track the best candidate every this many iterations.
    pub eval_interval: usize,
    /// Clip the global gradient norm to this value before the Adam step.
    /// The exponential jump penalty produces enormous gradients on rough
    /// random initialisations; without clipping those spikes inflate the
    /// second-moment estimate and stall progress for thousands of
    /// iterations afterwards.
    #[serde(default = "default_grad_clip_norm")]
    pub grad_clip_norm: f64,
}

/// Terminal value of the cosine learning-rate decay.
pub const LEARNING_RATE_FLOOR: f64 = 0.001;

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            iterations: default_iterations(),
            batch_size: default_batch_size(),
            lambda_s_initial: default_lambda_s(),
            lambda_b: default_lambda_b(),
            b: default_b(),
            tau: default_tau(),
            restarts: default_restarts(),
            seed: 0,
            eval_samples: default_eval_samples(),
            patience: default_patience(),
            eval_interval: default_eval_interval(),
            grad_clip_norm: default_grad_clip_norm(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        for (name, v) in [
            ("lambda_s_initial", self.lambda_s_initial),
            ("lambda_b", self.lambda_b),
            ("b", self.b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.batch_size == 0 || self.restarts == 0 || self.eval_samples == 0 {
            return Err(Error::invalid(
                "batch_size, restarts and eval_samples must be >= 1",
            ));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be >= 1"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::invalid("grad_clip_norm must be positive"));
        }
        Ok(())
    }

    fn penalty(&self, lambda_s: f64) -> PenaltyParams {
        PenaltyParams {
            lambda_s,
            lambda_b: self.lambda_b,
            b: self.b,
            tau: self.tau,
        }
    }

    /// Cosine decay from `learning_rate` to the floor across the run.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.learning_rate;
        }
        let t = iteration as f64 / (self.iterations - 1) as f64;
        let t = t.clamp(0.0, 1.0);
        LEARNING_RATE_FLOOR
            + (self.learning_rate - LEARNING_RATE_FLOOR)
                * 0.5
                * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Linear decay of the small-jump coefficient: `lambda_s_initial` at
/// iteration 0, zero from the half-way point onwards.
pub fn anneal_lambda_s(iteration: usize, total_iterations: usize, lambda_s_initial: f64) -> f64 {
    let half = total_iterations as f64 / 2.0;
    if half == 0.0 || iteration as f64 >= half {
        return 0.0;
    }
    lambda_s_initial * (1.0 - iteration as f64 / half)
}

/// First and second moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update in place. `iteration` counts from 0.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    config: &OptimizerConfig,
    iteration: usize,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::invalid("parameter/gradient/state shape mismatch"));
    }
    let lr = config.learning_rate_at(iteration);
    let t = (iteration + 1) as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Largest absolute phase difference between neighbouring segments.
pub fn max_phase_jump(phases: &[f64]) -> f64 {
    phases
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Batch seed for one iteration: decorrelated from neighbouring
/// iterations but a pure function of (run seed, iteration), which is
/// what makes checkpoint resumption bit-identical.
fn batch_seed(run_seed: u64, iteration: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = run_seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn restart_seed(root_seed: u64, restart: usize) -> u64 {
    root_seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Total loss (mean infidelity plus smoothness penalty) and its exact
/// gradient with respect to every parameter, over one displacement
/// batch drawn from `seed`. Returns `(loss, gradient, mean_fidelity)`.
pub fn loss_gradient(
    params: &ParamVector,
    ctx: &ProblemContext,
    penalty: &PenaltyParams,
    batch_size: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>, f64)> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    if params.n_segments != ctx.n_segments || params.n_atoms != ctx.n_atoms() {
        return Err(Error::invalid("parameter shape does not match the problem"));
    }
    let schedule = ctx.schedule(params.phases())?;
    let target = ctx.target(params.comp_phases())?;
    let per_step = crate::dynamics::KrausChannel::per_step(
        ctx.noise.gamma_per_us,
        schedule.dt_us(),
        ctx.noise.branches,
    )?;
    // Zero-width displacements make every batch element identical.
    let effective = if ctx.noise.sigma_um.iter().all(|&s| s == 0.0) {
        1
    } else {
        batch_size
    };
    let samples = sample_displacements(&ctx.noise, ctx.n_atoms(), effective, seed)?;
    let engine = FidelityEngine::new(ctx.n_atoms())?;
    let grads = crate::parallel::map_indexed(samples.len(), |i| -> Result<_> {
        let positions = ctx.layout.perturbed(&samples[i])?;
        let inter = interaction_matrix(&positions, &ctx.constants)?;
        engine.sample_gradient(&schedule, &inter, &per_step, &target)
    });

    let n = samples.len() as f64;
    let mut mean_fid = 0.0;
    let mut grad = vec![0.0; params.len()];
    for g in grads {
        let g = g?;
        mean_fid += g.fidelity / n;
        for (k, d) in g.d_phases.iter().enumerate() {
            grad[k] -= d / n;
        }
        for (j, d) in g.d_comp_phases.iter().enumerate() {
            grad[params.n_segments + j] -= d / n;
        }
    }
    let smooth = smoothness_cost(
        params.phases(),
        penalty.lambda_s,
        penalty.lambda_b,
        penalty.b,
        penalty.tau,
    );
    let sgrad = smoothness_grad(
        params.phases(),
        penalty.lambda_s,
        penalty.lambda_b,
        penalty.b,
        penalty.tau,
    );
    for (k, s) in sgrad.iter().enumerate() {
        grad[k] += s;
    }
    let loss = (1.0 - mean_fid) + smooth;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite loss ({loss}) or gradient at seed {seed}"
        )));
    }
    Ok((loss, grad, mean_fid))
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub best: ParamVector,
    /// Mean fidelity of `best` over `config.eval_samples` displacement
    /// samples.
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    /// Total loss per completed iteration (shorter than
    /// `config.iterations` when early stopping triggers).
    pub loss_history: Vec<f64>,
    pub seed: u64,
    pub config: OptimizerConfig,
}

/// Resumable training state. The displacement batches are a pure
/// function of (seed, iteration), so `iteration` doubles as the RNG
/// cursor: resuming from a checkpoint reproduces the uninterrupted run
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub iteration: usize,
    pub params: ParamVector,
    pub adam: AdamState,
    pub best_params: ParamVector,
    pub best_eval_fidelity: f64,
    pub best_loss: f64,
    pub stale_iterations: usize,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never clobbers the
        // previous checkpoint.
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Options for [`train_with_options`]; `Default` trains from scratch
/// without writing checkpoints.
#[derive(Debug, Default)]
pub struct TrainOptions<'a> {
    pub resume: Option<Checkpoint>,
    pub checkpoint_path: Option<&'a Path>,
    /// Write a checkpoint every this many iterations (0 = only write at
    /// the end, and only if a path is set).
    pub checkpoint_every: usize,
    /// Pause after reaching this iteration count (the run can be resumed
    /// from the checkpoint later). The annealing and learning-rate
    /// schedules still follow `config.iterations`.
    pub stop_after: Option<usize>,
}

/// Train from a random initialization drawn from `config.seed`.
pub fn train(config: &OptimizerConfig, ctx: &ProblemContext) -> Result<TrainingResult> {
    train_with_options(config, ctx, TrainOptions::default())
}

/// Seed used for the evaluation batches, decorrelated from training
/// batches by construction.
fn eval_seed(run_seed: u64) -> u64 {
    batch_seed(run_seed ^ 0x5851_F42D_4C95_7F2D, usize::MAX)
}

fn evaluate(
    params: &ParamVector,
    ctx: &ProblemContext,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let schedule = ctx.schedule(params.phases())?;
    let target = ctx.target(params.comp_phases())?;
    batch_fidelity(
        &schedule,
        &ctx.layout,
        &ctx.constants,
        &ctx.noise,
        &target,
        n_samples,
        seed,
    )
}

pub fn train_with_options(
    config: &OptimizerConfig,
    ctx: &ProblemContext,
    options: TrainOptions<'_>,
) -> Result<TrainingResult> {
    config.validate()?;
    ctx.validate()?;

    // Candidate tracking during the run uses a capped sample count; the
    // full `eval_samples` budget is spent once, on the winner.
    let track_samples = config.eval_samples.min(200);
    let eval_seed = eval_seed(config.seed);

    let mut state = match options.resume {
        Some(cp) => {
            if cp.params.n_segments != ctx.n_segments || cp.params.n_atoms != ctx.n_atoms() {
                return Err(Error::invalid("checkpoint shape does not match the problem"));
            }
            cp
        }
        None => {
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            let params = ParamVector::random_init(ctx.n_segments, ctx.n_atoms(), &mut rng);
            let init_fid = evaluate(&params, ctx, track_samples, eval_seed)?.0;
            Checkpoint {
                seed: config.seed,
                iteration: 0,
                adam: AdamState::zeros(params.len()),
                best_params: params.clone(),
                best_eval_fidelity: init_fid,
                best_loss: f64::INFINITY,
                stale_iterations: 0,
                params,
                loss_history: Vec::new(),
            }
        }
    };

    let stop_at = options.stop_after.unwrap_or(usize::MAX);
    let mut interrupted = false;
    while state.iteration < config.iterations {
        if state.iteration >= stop_at {
            interrupted = true;
            break;
        }
        let it = state.iteration;
        let lambda_s = anneal_lambda_s(it, config.iterations, config.lambda_s_initial);
        let penalty = config.penalty(lambda_s);
        let (loss, mut grad, _fid) = loss_gradient(
            &state.params,
            ctx,
            &penalty,
            config.batch_size,
            batch_seed(config.seed, it),
        )?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.grad_clip_norm {
            let scale = config.grad_clip_norm / norm;
            for g in &mut grad {
                *g *= scale;
            }
        }
        adam_step(&mut state.params.values, &grad, &mut state.adam, config, it)?;
        state.loss_history.push(loss);
        state.iteration += 1;

        if loss < state.best_loss - 1e-9 {
            state.best_loss = loss;
            state.stale_iterations = 0;
        } else {
            state.stale_iterations += 1;
        }

        let last = state.iteration == config.iterations;
        if state.iteration % config.eval_interval == 0 || last {
            let (fid, _) = evaluate(&state.params, ctx, track_samples, eval_seed)?;
            if fid > state.best_eval_fidelity {
                state.best_eval_fidelity = fid;
                state.best_params = state.params.clone();
            }
        }
        if let Some(path) = options.checkpoint_path {
            if (options.checkpoint_every > 0 && state.iteration % options.checkpoint_every == 0)
                || last
            {
                state.save(path)?;
            }
        }
        if config.patience > 0 && state.stale_iterations >= config.patience {
            break;
        }
    }

    // Final candidate check in case the last improvement fell between
    // evaluation points; skipped on an interrupted run so that resuming
    // reproduces the uninterrupted trajectory exactly.
    if !interrupted {
        let (fid, _) = evaluate(&state.params, ctx, track_samples, eval_seed)?;
        if fid > state.best_eval_fidelity {
            state.best_eval_fidelity = fid;
            state.best_params = state.params.clone();
        }
    }

    let (mean, std) = evaluate(&state.best_params, ctx, config.eval_samples, eval_seed)?;
    if let Some(path) = options.checkpoint_path {
        state.save(path)?;
    }
    Ok(TrainingResult {
        best: state.best_params,
        fidelity_mean: mean,
        fidelity_std: std,
        loss_history: state.loss_history,
        seed: config.seed,
        config: config.clone(),
    })
}

/// Best run plus every per-restart result, ordered by restart index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiRestartResult {
    pub best_index: usize,
    pub results: Vec<TrainingResult>,
}

impl MultiRestartResult {
    pub fn best(&self) -> &TrainingResult {
        &self.results[self.best_index]
    }
}

/// Independent trainings from `restarts` distinct seeds (restart 0 uses
/// `config.seed` itself); the winner is selected by evaluated fidelity.
pub fn multi_restart(config: &OptimizerConfig, ctx: &ProblemContext) -> Result<MultiRestartResult> {
    config.validate()?;
    ctx.validate()?;
    let outcomes = crate::parallel::map_indexed(config.restarts, |r| {
        let mut sub = config.clone();
        sub.seed = restart_seed(config.seed, r);
        sub.restarts = 1;
        train(&sub, ctx)
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(res) => results.push(res),
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    if results.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "all {} restarts failed: {}",
            config.restarts,
            failures.join("; ")
        )));
    }
    let best_index = results
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.fidelity_mean.total_cmp(&b.1.fidelity_mean))
        .map(|(i, _)| i)
        .expect("results non-empty");
    Ok(MultiRestartResult {
        best_index,
        results,
    })
}
