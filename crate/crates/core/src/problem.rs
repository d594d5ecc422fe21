//! The optimization problem bundle: geometry, physics constants, noise,
//! gate target shape, and the pulse-schedule template that a parameter
//! vector is rendered into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AtomLayout, PhysicalConstants};
use crate::noise::NoiseModel;
use crate::objective::GateTarget;
use crate::pulse::PulseSchedule;

/// Everything about *what* is being optimized, as opposed to *how*
/// (hyperparameters live in [`crate::optimizer::OptimizerConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemContext {
    pub layout: AtomLayout,
    pub constants: PhysicalConstants,
    pub noise: NoiseModel,
    pub n_targets: usize,
    pub duration_ns: f64,
    pub n_segments: usize,
    pub ramp_ns: f64,
    pub omega_max_rad_per_us: f64,
}

impl ProblemContext {
    /// Standard problem: control-centred layout at radius `radius_um`,
    /// reference constants, 10 ns ramps, maximal Rabi drive.
    pub fn new(
        n_targets: usize,
        radius_um: f64,
        duration_ns: f64,
        n_segments: usize,
        noise: NoiseModel,
    ) -> Result<Self> {
        let constants = PhysicalConstants::reference();
        let layout = crate::geometry::place_atoms(n_targets, radius_um)?;
        let ctx = ProblemContext {
            layout,
            constants,
            noise,
            n_targets,
            duration_ns,
            n_segments,
            ramp_ns: 10.0,
            omega_max_rad_per_us: constants.omega_max_rad_per_us,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_targets + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.noise.validate()?;
        if self.layout.n_atoms() != self.n_targets + 1 {
            return Err(Error::invalid(format!(
                "layout has {} atoms but the gate needs {}",
                self.layout.n_atoms(),
                self.n_targets + 1
            )));
        }
        // Schedule invariants (duration, segment count, ramp, drive) are
        // enforced by the constructor; probe with a zero-phase render.
        self.schedule(&vec![0.0; self.n_segments])?;
        Ok(())
    }

    /// Render segment phases into a full pulse schedule.
    pub fn schedule(&self, phases: &[f64]) -> Result<PulseSchedule> {
        PulseSchedule::new(
            self.duration_ns,
            self.n_segments,
            phases.to_vec(),
            self.ramp_ns,
            self.omega_max_rad_per_us,
        )
    }

    /// Gate target with the given single-qubit compensation phases
    /// (one per atom, control first).
    pub fn target(&self, compensation_phases: &[f64]) -> Result<GateTarget> {
        GateTarget::with_compensation(self.n_targets, compensation_phases.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_problem_is_consistent() {
        let ctx = ProblemContext::new(2, 3.5, 575.0, 12, NoiseModel::reference()).unwrap();
        assert_eq!(ctx.n_atoms(), 3);
        let schedule = ctx.schedule(&vec![0.1; 12]).unwrap();
        assert_eq!(schedule.n_segments, 12);
        let target = ctx.target(&[0.0, 0.1, 0.2]).unwrap();
        assert_eq!(target.n_atoms(), 3);
    }

    #[test]
    fn wrong_phase_count_is_rejected() {
        let ctx = ProblemContext::new(1, 3.5, 400.0, 8, NoiseModel::ideal()).unwrap();
        assert!(ctx.schedule(&[0.0; 3]).is_err());
        assert!(ctx.target(&[0.0; 3]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ctx = ProblemContext::new(2, 4.0, 575.0, 16, NoiseModel::reference()).unwrap();
        let text = serde_json::to_string(&ctx).unwrap();
        let back: ProblemContext = serde_json::from_str(&text).unwrap();
        assert_eq!(back.duration_ns, ctx.duration_ns);
        assert_eq!(back.layout.positions, ctx.layout.positions);
    }
}
