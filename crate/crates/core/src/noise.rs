//! Hardware noise parameters: Rydberg decay and atom-position jitter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rydberg decay rate, branching fractions, and Gaussian displacement
/// widths.
///
/// The decay rate γ is 1/lifetime. The branching fractions
/// `(b0, b1, b2)` split the per-step decay probability p = γΔt between
/// |r⟩→|0⟩, |r⟩→|1⟩ and |r⟩→|e⟩ (leakage); they sum to one. The
/// displacement widths are the standard deviations of the per-atom
/// position perturbations in μm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Decay rate γ in 1/μs.
    pub gamma_per_us: f64,
    /// Branching fractions (|r⟩→|0⟩, |r⟩→|1⟩, |r⟩→|e⟩).
    pub branches: [f64; 3],
    /// Gaussian widths (σx, σy, σz) in μm.
    pub sigma_um: [f64; 3],
}

impl NoiseModel {
    /// Rb parameters: 88 μs Rydberg lifetime, branching fractions
    /// 0.1354 / 0.2504 / 0.6142, σx = σy = 0.014 μm, σz = 0.16 μm.
    pub fn reference() -> Self {
        NoiseModel {
            gamma_per_us: 1.0 / 88.0,
            branches: [0.1354, 0.2504, 0.6142],
            sigma_um: [0.014, 0.014, 0.16],
        }
    }

    /// Noise-free model (γ = 0, σ = 0).
    pub fn ideal() -> Self {
        NoiseModel {
            gamma_per_us: 0.0,
            branches: [0.1354, 0.2504, 0.6142],
            sigma_um: [0.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_per_us >= 0.0 && self.gamma_per_us.is_finite()) {
            return Err(Error::invalid("decay rate must be finite and >= 0"));
        }
        for (i, &b) in self.branches.iter().enumerate() {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("branch fraction {i} must be >= 0")));
            }
        }
        let sum: f64 = self.branches.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "branching fractions must sum to 1 (got {sum})"
            )));
        }
        for (axis, &s) in ["x", "y", "z"].iter().zip(self.sigma_um.iter()) {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("sigma_{axis} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn is_noise_free(&self) -> bool {
        self.gamma_per_us == 0.0 && self.sigma_um.iter().all(|&s| s == 0.0)
    }

    /// Copy with motion and decay switched off.
    pub fn without_noise(&self) -> Self {
        NoiseModel {
            gamma_per_us: 0.0,
            sigma_um: [0.0; 3],
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_model_is_valid() {
        NoiseModel::reference().validate().unwrap();
        assert!(!NoiseModel::reference().is_noise_free());
        assert!(NoiseModel::ideal().is_noise_free());
    }

    #[test]
    fn bad_branches_rejected() {
        let mut m = NoiseModel::reference();
        m.branches = [0.5, 0.5, 0.5];
        assert!(m.validate().is_err());
        m.branches = [-0.1, 0.5, 0.6];
        assert!(m.validate().is_err());
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut m = NoiseModel::reference();
        m.sigma_um[2] = -0.1;
        assert!(m.validate().is_err());
    }
}
