//! Parallel vs sequential evaluation of a displacement batch — the
//! hot loop of training and evaluation. Build with
//! `--no-default-features` to measure the fallback lane's overhead-free
//! baseline as the default `map_indexed`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rydpulse_core::dynamics::KrausChannel;
use rydpulse_core::engine::FidelityEngine;
use rydpulse_core::geometry::{
    interaction_matrix, place_atoms, sample_displacements, InteractionMatrix,
    PhysicalConstants,
};
use rydpulse_core::noise::NoiseModel;
use rydpulse_core::objective::GateTarget;
use rydpulse_core::parallel::{map_indexed, map_indexed_serial};
use rydpulse_core::pulse::PulseSchedule;

struct Workload {
    engine: FidelityEngine,
    schedule: PulseSchedule,
    per_step: KrausChannel,
    target: GateTarget,
    interactions: Vec<InteractionMatrix>,
}

fn workload(n_targets: usize, batch: usize) -> Workload {
    let constants = PhysicalConstants::reference();
    let noise = NoiseModel::reference();
    let layout = place_atoms(n_targets, 3.5).unwrap();
    let n_atoms = n_targets + 1;
    let phases: Vec<f64> = (0..24).map(|k| (k as f64 * 0.61).sin()).collect();
    let schedule = PulseSchedule::new(
        575.0,
        24,
        phases,
        10.0,
        constants.omega_max_rad_per_us,
    )
    .unwrap();
    let per_step =
        KrausChannel::per_step(noise.gamma_per_us, schedule.dt_us(), noise.branches).unwrap();
    let samples = sample_displacements(&noise, n_atoms, batch, 42).unwrap();
    let interactions = samples
        .iter()
        .map(|s| interaction_matrix(&layout.perturbed(s).unwrap(), &constants).unwrap())
        .collect();
    Workload {
        engine: FidelityEngine::new(n_atoms).unwrap(),
        schedule,
        per_step,
        target: GateTarget::new(n_targets).unwrap(),
        interactions,
    }
}

fn batch_mean(w: &Workload, parallel: bool) -> f64 {
    let eval = |i: usize| {
        w.engine
            .sample_fidelity(&w.schedule, &w.interactions[i], &w.per_step, &w.target)
            .unwrap()
    };
    let fids = if parallel {
        map_indexed(w.interactions.len(), eval)
    } else {
        map_indexed_serial(w.interactions.len(), eval)
    };
    fids.iter().sum::<f64>() / fids.len() as f64
}

fn bench_batch_fidelity(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_fidelity");
    group.sample_size(10);
    for (n_targets, batch) in [(2usize, 16usize), (3, 8)] {
        let w = workload(n_targets, batch);
        group.bench_with_input(
            BenchmarkId::new("parallel", format!("N{n_targets}_batch{batch}")),
            &w,
            |b, w| b.iter(|| batch_mean(w, true)),
        );
        group.bench_with_input(
            BenchmarkId::new("serial", format!("N{n_targets}_batch{batch}")),
            &w,
            |b, w| b.iter(|| batch_mean(w, false)),
        );
    }
    group.finish();
}

criterion_group!(benches, bench_batch_fidelity);
criterion_main!(benches);
