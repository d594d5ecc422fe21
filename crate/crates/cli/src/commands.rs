//! Command implementations shared by the thin argument-parsing layer in
//! `main.rs`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rydpulse_core::analysis::{
    average_ptm, compute_ptm, error_channels_csv, ideal_gate_channel, ideal_ptm, ptm_svg,
    rank_error_channels, run_sweep, SweepCell, SweepResult, SweepSpec, REPORT_THRESHOLD,
};
use rydpulse_core::error::{Error, Result};
use rydpulse_core::objective::{batch_fidelity, per_cz_error, GateTarget};
use rydpulse_core::optimizer::{max_phase_jump, multi_restart, OptimizerConfig, TrainingResult};
use rydpulse_core::problem::ProblemContext;
use rydpulse_core::pulse::{PulseFile, PulseSchedule};

use crate::config::ExperimentConfig;
use crate::manifest::{config_hash, RunManifest};

/// Flag overrides shared by the commands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_noise: bool,
    pub resume: bool,
    pub output_dir: Option<PathBuf>,
}

pub struct LoadedConfig {
    pub text: String,
    pub config: ExperimentConfig,
    pub problem: ProblemContext,
    pub optimizer: OptimizerConfig,
    pub output_dir: PathBuf,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::from_toml(&text)?;
    let mut problem = config.problem()?;
    let mut optimizer = config.optimizer_config();
    if let Some(seed) = overrides.seed {
        optimizer.seed = seed;
    }
    if overrides.no_noise {
        problem.noise = problem.noise.without_noise();
    }
    let output_dir = overrides
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    std::fs::create_dir_all(&output_dir)?;
    Ok(LoadedConfig {
        text,
        config,
        problem,
        optimizer,
        output_dir,
    })
}

fn write_output(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    contents: &str,
) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    manifest.record(name);
    Ok(())
}

#[derive(Debug, Serialize)]
struct OptimizeReport<'a> {
    fidelity_mean: f64,
    fidelity_std: f64,
    per_cz_error: f64,
    per_cz_error_percent: f64,
    max_phase_jump_rad: f64,
    restarts: usize,
    best_restart_seed: u64,
    config_hash: String,
    result: &'a TrainingResult,
}

pub fn cmd_optimize(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let loaded = load_config(config_path, overrides)?;
    let dir = &loaded.output_dir;
    let hash = config_hash(&loaded.text);

    if overrides.resume {
        if let Ok(text) = std::fs::read_to_string(dir.join(crate::manifest::MANIFEST_NAME)) {
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                if m.command == "optimize"
                    && m.config_hash == hash
                    && m.seed == loaded.optimizer.seed
                    && m.status == "complete"
                {
                    println!("optimize: run already complete in {}", dir.display());
                    return Ok(());
                }
            }
        }
    }

    let mut manifest = RunManifest::start("optimize", &loaded.text, loaded.optimizer.seed);
    let outcome = multi_restart(&loaded.optimizer, &loaded.problem)?;
    let best = outcome.best();
    let schedule = loaded.problem.schedule(best.best.phases())?;

    let report = OptimizeReport {
        fidelity_mean: best.fidelity_mean,
        fidelity_std: best.fidelity_std,
        per_cz_error: per_cz_error(best.fidelity_mean, loaded.problem.n_targets),
        per_cz_error_percent: 100.0 * per_cz_error(best.fidelity_mean, loaded.problem.n_targets),
        max_phase_jump_rad: max_phase_jump(best.best.phases()),
        restarts: loaded.optimizer.restarts,
        best_restart_seed: best.seed,
        config_hash: hash.clone(),
        result: best,
    };
    let pulse_file = PulseFile {
        schedule: schedule.clone(),
        compensation_phases: best.best.comp_phases().to_vec(),
        n_targets: loaded.problem.n_targets,
        radius_um: loaded.problem.layout.radius_um,
        seed: Some(best.seed),
        config_hash: Some(hash),
        fidelity_mean: Some(best.fidelity_mean),
        fidelity_std: Some(best.fidelity_std),
    };
    let mut loss_csv = String::from("iteration,loss\n");
    for (i, loss) in best.loss_history.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{loss:?}\n"));
    }
    write_output(&mut manifest, dir, "pulse.csv", &schedule.to_csv())?;
    write_output(&mut manifest, dir, "pulse.json", &pulse_file.to_json())?;
    write_output(
        &mut manifest,
        dir,
        "training_result.json",
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    write_output(&mut manifest, dir, "loss_history.csv", &loss_csv)?;
    manifest.finish(dir, "complete")?;
    println!(
        "optimize: fidelity {:.6} ± {:.6} (per-CZ error {:.4}%), artifacts in {}",
        report.fidelity_mean,
        report.fidelity_std,
        report.per_cz_error_percent,
        dir.display()
    );
    Ok(())
}

const SWEEP_CSV: &str = "sweep.csv";
const SWEEP_CELL_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

fn parse_sweep_csv(text: &str) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some("duration_ns,radius_um,best_fidelity,restarts,seed") => {}
        _ => return Err(Error::Parse("sweep csv: missing or bad header".into())),
    }
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("sweep csv row {}: bad field count", k + 2)));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("sweep csv row {}: bad {what}", k + 2)))
        };
        cells.push(SweepCell {
            duration_ns: parse_f(fields[0], "duration")?,
            radius_um: parse_f(fields[1], "radius")?,
            best_fidelity: parse_f(fields[2], "fidelity")?,
            restarts: fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("sweep csv row {}: bad restarts", k + 2)))?,
            seed: fields[4]
                .parse()
                .map_err(|_| Error::Parse(format!("sweep csv row {}: bad seed", k + 2)))?,
        });
    }
    Ok(cells)
}

pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let loaded = load_config(config_path, overrides)?;
    let sweep = loaded
        .config
        .sweep
        .clone()
        .ok_or_else(|| Error::invalid("config has no [sweep] section"))?;
    let dir = &loaded.output_dir;
    let mut manifest = RunManifest::start("sweep", &loaded.text, loaded.optimizer.seed);

    // Cells already present in an earlier run survive a --resume.
    let mut done: HashMap<(u64, u64), SweepCell> = HashMap::new();
    if overrides.resume {
        if let Ok(text) = std::fs::read_to_string(dir.join(SWEEP_CSV)) {
            for cell in parse_sweep_csv(&text)? {
                done.insert((cell.duration_ns.to_bits(), cell.radius_um.to_bits()), cell);
            }
        }
    }

    let grid: Vec<(usize, f64, f64)> = sweep
        .durations_ns
        .iter()
        .flat_map(|&d| sweep.radii_um.iter().map(move |&r| (d, r)))
        .enumerate()
        .map(|(idx, (d, r))| (idx, d, r))
        .collect();
    let missing: Vec<&(usize, f64, f64)> = grid
        .iter()
        .filter(|(_, d, r)| !done.contains_key(&(d.to_bits(), r.to_bits())))
        .collect();

    // Each missing cell is an independent single-cell sweep whose seed
    // is a pure function of the grid index, so resumed and fresh runs
    // compute identical cells.
    let computed = rydpulse_core::parallel::map_indexed(missing.len(), |k| -> Result<SweepCell> {
        let &(idx, duration_ns, radius_um) = missing[k];
        let mut cell_config = loaded.optimizer.clone();
        cell_config.seed = loaded
            .optimizer
            .seed
            .wrapping_add((idx as u64).wrapping_mul(SWEEP_CELL_SEED_STRIDE));
        let spec = SweepSpec {
            durations_ns: vec![duration_ns],
            radii_um: vec![radius_um],
            noise_enabled: sweep.noise_enabled,
        };
        let result = run_sweep(&spec, &loaded.problem, &cell_config)?;
        Ok(result.cells.into_iter().next().expect("one cell"))
    });
    for cell in computed {
        let cell = cell?;
        done.insert((cell.duration_ns.to_bits(), cell.radius_um.to_bits()), cell);
    }

    let cells: Vec<SweepCell> = grid
        .iter()
        .map(|(_, d, r)| done[&(d.to_bits(), r.to_bits())].clone())
        .collect();
    let result = SweepResult { cells };
    write_output(&mut manifest, dir, SWEEP_CSV, &result.to_csv())?;
    write_output(
        &mut manifest,
        dir,
        "sweep.json",
        &serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    // One fidelity-vs-duration series per radius, for direct plotting.
    for &r in &sweep.radii_um {
        let mut series = String::from("duration_ns,best_fidelity\n");
        for cell in result.cells.iter().filter(|c| c.radius_um == r) {
            series.push_str(&format!("{:?},{:?}\n", cell.duration_ns, cell.best_fidelity));
        }
        let name = format!("fidelity_vs_duration_R{}um.csv", format_radius(r));
        write_output(&mut manifest, dir, &name, &series)?;
    }
    manifest.finish(dir, "complete")?;
    println!(
        "sweep: {} cells written to {}",
        result.cells.len(),
        dir.display()
    );
    Ok(())
}

fn format_radius(r: f64) -> String {
    format!("{r}").replace('.', "p")
}

/// Load a pulse from either the JSON artifact or a bare schedule CSV
/// (the CSV carries no compensation phases or geometry, so those come
/// from the config).
fn load_pulse(path: &Path, loaded: &LoadedConfig) -> Result<(PulseSchedule, GateTarget, f64)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read pulse {}: {e}", path.display())))?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let (duration_ns, phases) = PulseSchedule::phases_from_csv(&text)?;
        let schedule = PulseSchedule::new(
            duration_ns,
            phases.len(),
            phases,
            loaded.problem.ramp_ns,
            loaded.problem.omega_max_rad_per_us,
        )?;
        let target = GateTarget::new(loaded.problem.n_targets)?;
        Ok((schedule, target, loaded.problem.layout.radius_um))
    } else {
        let file = PulseFile::from_json(&text)?;
        let target = GateTarget::with_compensation(file.n_targets, file.compensation_phases)?;
        Ok((file.schedule, target, file.radius_um))
    }
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    fidelity_mean: f64,
    fidelity_std: f64,
    per_cz_error: f64,
    per_cz_error_percent: f64,
    n_samples: usize,
    seed: u64,
    noise_free: bool,
}

pub fn cmd_evaluate(pulse_path: &Path, config_path: &Path, overrides: &Overrides) -> Result<()> {
    let loaded = load_config(config_path, overrides)?;
    let (schedule, target, radius_um) = load_pulse(pulse_path, &loaded)?;
    let mut problem = loaded.problem.clone();
    if target.n_targets != problem.n_targets {
        return Err(Error::invalid(format!(
            "pulse was trained for N={} targets, config says N={}",
            target.n_targets, problem.n_targets
        )));
    }
    problem.layout = rydpulse_core::geometry::place_atoms(target.n_targets, radius_um)?;
    let seed = overrides.seed.unwrap_or(loaded.optimizer.seed);
    let n_samples = loaded.config.noise.eval_samples;
    let (mean, std) = batch_fidelity(
        &schedule,
        &problem.layout,
        &problem.constants,
        &problem.noise,
        &target,
        n_samples,
        seed,
    )?;
    let report = EvaluationReport {
        fidelity_mean: mean,
        fidelity_std: std,
        per_cz_error: per_cz_error(mean, target.n_targets),
        per_cz_error_percent: 100.0 * per_cz_error(mean, target.n_targets),
        n_samples,
        seed,
        noise_free: problem.noise.is_noise_free(),
    };
    let dir = &loaded.output_dir;
    let mut manifest = RunManifest::start("evaluate", &loaded.text, seed);
    write_output(
        &mut manifest,
        dir,
        "evaluation.json",
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    manifest.finish(dir, "complete")?;
    println!(
        "evaluate: fidelity {:.6} ± {:.6} over {} samples (per-CZ error {:.4}%)",
        mean, std, n_samples, report.per_cz_error_percent
    );
    Ok(())
}

pub fn cmd_ptm(
    pulse_path: Option<&Path>,
    config_path: &Path,
    overrides: &Overrides,
    svg: bool,
    self_test: bool,
) -> Result<()> {
    let loaded = load_config(config_path, overrides)?;
    let dir = &loaded.output_dir;
    let mut manifest = RunManifest::start("ptm", &loaded.text, loaded.optimizer.seed);
    let n_qubits = loaded.problem.n_atoms();
    if n_qubits > rydpulse_core::analysis::MAX_PTM_QUBITS {
        return Err(Error::UnsupportedSize(format!(
            "transfer maps support up to {} atoms (got {n_qubits})",
            rydpulse_core::analysis::MAX_PTM_QUBITS
        )));
    }

    let plain_target = GateTarget::new(loaded.problem.n_targets)?;
    let ideal = ideal_ptm(&plain_target)?;
    let (real, threshold) = if self_test {
        // Exercise the full computation path on the exact gate unitary;
        // any deviation from the analytic map is a defect.
        let channel = ideal_gate_channel(&plain_target);
        (compute_ptm(&channel, n_qubits)?, 1e-6)
    } else {
        let pulse_path =
            pulse_path.ok_or_else(|| Error::invalid("ptm needs --pulse (or --self-test)"))?;
        let (schedule, target, radius_um) = load_pulse(pulse_path, &loaded)?;
        let mut problem = loaded.problem.clone();
        problem.layout = rydpulse_core::geometry::place_atoms(target.n_targets, radius_um)?;
        problem.duration_ns = schedule.duration_ns;
        problem.n_segments = schedule.n_segments;
        problem.ramp_ns = schedule.ramp_ns;
        problem.omega_max_rad_per_us = schedule.omega_max_rad_per_us;
        let seed = overrides.seed.unwrap_or(loaded.optimizer.seed);
        let ptm = average_ptm(
            &schedule.phases,
            target.compensation_phases.as_slice(),
            &problem,
            loaded.config.ptm.samples,
            seed,
        )?;
        (ptm, REPORT_THRESHOLD)
    };

    let ranked = rank_error_channels(&real, &ideal, threshold)?;
    write_output(&mut manifest, dir, "ptm_real.csv", &real.to_csv())?;
    write_output(&mut manifest, dir, "ptm_ideal.csv", &ideal.to_csv())?;
    write_output(
        &mut manifest,
        dir,
        "ptm_deviations.csv",
        &error_channels_csv(&ranked),
    )?;
    if svg {
        write_output(&mut manifest, dir, "ptm_real.svg", &ptm_svg(&real))?;
        write_output(&mut manifest, dir, "ptm_ideal.svg", &ptm_svg(&ideal))?;
    }
    manifest.finish(dir, "complete")?;
    if self_test && !ranked.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "self-test found {} deviations above {threshold:e} (largest {:e})",
            ranked.len(),
            ranked[0].magnitude
        )));
    }
    println!(
        "ptm: {} deviations above {threshold:e}, artifacts in {}",
        ranked.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_validate_config(config_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", config_path.display())))?;
    ExperimentConfig::from_toml(&text)?;
    println!("config OK ({})", config_hash(&text));
    Ok(())
}
