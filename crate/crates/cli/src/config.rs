//! TOML experiment configuration with strict schema validation.
//!
//! Every physical quantity carries its unit in the key name. Unknown
//! keys are rejected so typos fail loudly.

use serde::{Deserialize, Serialize};

use rydpulse_core::error::{Error, Result};
use rydpulse_core::geometry::{AtomLayout, PhysicalConstants, Point3};
use rydpulse_core::noise::NoiseModel;
use rydpulse_core::optimizer::OptimizerConfig;
use rydpulse_core::problem::ProblemContext;
use rydpulse_core::units::drive_2pi_mhz_to_internal;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub gate: GateSection,
    pub geometry: GeometrySection,
    pub pulse: PulseSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub ptm: PtmSection,
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    /// Number of target atoms N in C(Z^⊗N).
    pub n_targets: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Control-target distance for the standard layout.
    #[serde(default)]
    pub radius_um: Option<f64>,
    /// Explicit positions (control first) overriding the standard layout.
    #[serde(default)]
    pub positions_um: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub duration_ns: f64,
    pub n_segments: usize,
    #[serde(default = "default_ramp_ns")]
    pub ramp_ns: f64,
    #[serde(default = "default_omega_max_2pi_mhz")]
    pub omega_max_2pi_mhz: f64,
}

fn default_ramp_ns() -> f64 {
    10.0
}

fn default_omega_max_2pi_mhz() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Rydberg lifetime 1/γ; mutually exclusive with `gamma_per_us`.
    /// When neither is given the reference 88 μs lifetime applies.
    pub lifetime_us: Option<f64>,
    pub gamma_per_us: Option<f64>,
    pub branches: [f64; 3],
    pub sigma_x_um: f64,
    pub sigma_y_um: f64,
    pub sigma_z_um: f64,
    /// Displacement samples for fidelity evaluation.
    pub eval_samples: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            lifetime_us: None,
            gamma_per_us: None,
            branches: [0.1354, 0.2504, 0.6142],
            sigma_x_um: 0.014,
            sigma_y_um: 0.014,
            sigma_z_um: 0.16,
            eval_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lambda_s_initial: Option<f64>,
    pub lambda_b: Option<f64>,
    pub b: Option<f64>,
    pub tau: Option<f64>,
    pub restarts: Option<usize>,
    pub patience: Option<usize>,
    pub eval_interval: Option<usize>,
    pub grad_clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub durations_ns: Vec<f64>,
    pub radii_um: Vec<f64>,
    #[serde(default)]
    pub noise_enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtmSection {
    /// Displacement samples the transfer map is averaged over.
    pub samples: usize,
}

impl Default for PtmSection {
    fn default() -> Self {
        PtmSection { samples: 20 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gate.n_targets == 0 {
            return Err(Error::invalid("gate.n_targets must be >= 1"));
        }
        match (&self.geometry.radius_um, &self.geometry.positions_um) {
            (None, None) => {
                return Err(Error::invalid(
                    "geometry needs either geometry.radius_um or geometry.positions_um",
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "geometry.radius_um and geometry.positions_um are mutually exclusive",
                ))
            }
            (Some(r), None) => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::invalid("geometry.radius_um must be positive"));
                }
            }
            (None, Some(p)) => {
                if p.len() != self.gate.n_targets + 1 {
                    return Err(Error::invalid(format!(
                        "geometry.positions_um needs {} entries (control first), got {}",
                        self.gate.n_targets + 1,
                        p.len()
                    )));
                }
            }
        }
        if !(self.pulse.duration_ns > 0.0) {
            return Err(Error::invalid("pulse.duration_ns must be positive"));
        }
        if !(self.pulse.omega_max_2pi_mhz >= 0.0) {
            return Err(Error::invalid("pulse.omega_max_2pi_mhz must be >= 0"));
        }
        match (self.noise.lifetime_us, self.noise.gamma_per_us) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "noise.lifetime_us and noise.gamma_per_us are mutually exclusive",
                ))
            }
            (Some(l), None) if !(l > 0.0) => {
                return Err(Error::invalid("noise.lifetime_us must be positive"))
            }
            _ => {}
        }
        if self.noise.eval_samples == 0 {
            return Err(Error::invalid("noise.eval_samples must be >= 1"));
        }
        if self.ptm.samples == 0 {
            return Err(Error::invalid("ptm.samples must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.durations_ns.is_empty() || sweep.radii_um.is_empty() {
                return Err(Error::invalid("sweep grid must be non-empty"));
            }
        }
        // The stricter physics invariants surface through construction.
        self.noise_model()?;
        self.problem()?;
        self.optimizer_config().validate()?;
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let gamma = match (self.noise.lifetime_us, self.noise.gamma_per_us) {
            (Some(l), None) => 1.0 / l,
            (None, Some(g)) => g,
            (None, None) => 1.0 / 88.0,
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "noise.lifetime_us and noise.gamma_per_us are mutually exclusive",
                ))
            }
        };
        let model = NoiseModel {
            gamma_per_us: gamma,
            branches: self.noise.branches,
            sigma_um: [
                self.noise.sigma_x_um,
                self.noise.sigma_y_um,
                self.noise.sigma_z_um,
            ],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn layout(&self) -> Result<AtomLayout> {
        match (&self.geometry.radius_um, &self.geometry.positions_um) {
            (Some(r), None) => rydpulse_core::geometry::place_atoms(self.gate.n_targets, *r),
            (None, Some(p)) => {
                AtomLayout::from_positions(p.iter().map(|&q| q as Point3).collect())
            }
            _ => Err(Error::invalid(
                "geometry needs exactly one of radius_um or positions_um",
            )),
        }
    }

    pub fn problem(&self) -> Result<ProblemContext> {
        let ctx = ProblemContext {
            layout: self.layout()?,
            constants: PhysicalConstants::reference(),
            noise: self.noise_model()?,
            n_targets: self.gate.n_targets,
            duration_ns: self.pulse.duration_ns,
            n_segments: self.pulse.n_segments,
            ramp_ns: self.pulse.ramp_ns,
            omega_max_rad_per_us: drive_2pi_mhz_to_internal(self.pulse.omega_max_2pi_mhz),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let d = OptimizerConfig::default();
        let o = &self.optimizer;
        OptimizerConfig {
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            beta1: o.beta1.unwrap_or(d.beta1),
            beta2: o.beta2.unwrap_or(d.beta2),
            epsilon: o.epsilon.unwrap_or(d.epsilon),
            iterations: o.iterations.unwrap_or(d.iterations),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            lambda_s_initial: o.lambda_s_initial.unwrap_or(d.lambda_s_initial),
            lambda_b: o.lambda_b.unwrap_or(d.lambda_b),
            b: o.b.unwrap_or(d.b),
            tau: o.tau.unwrap_or(d.tau),
            restarts: o.restarts.unwrap_or(d.restarts),
            seed: self.seed,
            eval_samples: self.noise.eval_samples,
            patience: o.patience.unwrap_or(d.patience),
            eval_interval: o.eval_interval.unwrap_or(d.eval_interval),
            grad_clip_norm: o.grad_clip_norm.unwrap_or(d.grad_clip_norm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub const MINIMAL: &str = r#"
        [gate]
        n_targets = 2

        [geometry]
        radius_um = 3.5

        [pulse]
        duration_ns = 575.0
        n_segments = 100
    "#;

    #[test]
    fn minimal_config_fills_reference_defaults() {
        let config = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let noise = config.noise_model().unwrap();
        assert_abs_diff_eq!(noise.gamma_per_us, 1.0 / 88.0, epsilon = 1e-15);
        assert_eq!(noise.branches, [0.1354, 0.2504, 0.6142]);
        assert_eq!(noise.sigma_um, [0.014, 0.014, 0.16]);
        let ctx = config.problem().unwrap();
        assert_abs_diff_eq!(
            ctx.omega_max_rad_per_us,
            125.663_706_143_591_72,
            epsilon = 1e-9
        );
        assert_eq!(ctx.ramp_ns, 10.0);
        let opt = config.optimizer_config();
        assert_eq!(opt.eval_samples, 10_000);
        assert_eq!(opt.restarts, 50);
        assert_eq!(opt.iterations, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[gate2]\nx = 1\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("gate2"), "{err}");
        let text = MINIMAL.replace("radius_um", "radius");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn negative_radius_names_the_key() {
        let text = MINIMAL.replace("radius_um = 3.5", "radius_um = -1.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("radius_um"), "{err}");
    }

    #[test]
    fn gamma_and_lifetime_are_exclusive() {
        let text = format!("{MINIMAL}\n[noise]\nlifetime_us = 88.0\ngamma_per_us = 0.01\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[noise]\ngamma_per_us = 0.02\n");
        let config = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config.noise_model().unwrap().gamma_per_us, 0.02);
    }

    #[test]
    fn explicit_positions_layout() {
        let text = r#"
            [gate]
            n_targets = 1

            [geometry]
            positions_um = [[0.0, 0.0, 0.0], [3.5, 0.0, 0.0]]

            [pulse]
            duration_ns = 400.0
            n_segments = 20
        "#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.layout().unwrap().n_atoms(), 2);
    }
}
