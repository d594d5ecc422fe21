//! Atom layouts and van-der-Waals interactions.
//!
//! The control atom sits at the origin, and N targets sit uniformly on a
//! circle of radius R in the z = 0 plane, at angles θ_j = 2πj/N. Pairwise
//! interactions follow V = C₆/d⁶. Position noise perturbs all three
//! coordinates.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::units::c6_table_to_internal;

/// Minimum allowed pairwise distance (μm) before the geometry is treated
/// as degenerate rather than returning a huge interaction.
const MIN_PAIR_DISTANCE_UM: f64 = 1e-6;

pub type Point3 = [f64; 3];

/// Physical constants of the platform, in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// C₆ coefficient in rad/μs · μm⁶.
    pub c6_rad_um6_per_us: f64,
    /// Peak Rabi angular frequency in rad/μs.
    pub omega_max_rad_per_us: f64,
}

impl PhysicalConstants {
    /// Rb reference values: C₆ = 862690 × 2π MHz·μm⁶,
    /// Ω_max = 2π × 10 MHz.
    pub fn reference() -> Self {
        PhysicalConstants {
            c6_rad_um6_per_us: c6_table_to_internal(862_690.0),
            omega_max_rad_per_us: crate::units::drive_2pi_mhz_to_internal(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c6_rad_um6_per_us > 0.0) {
            return Err(Error::invalid("C6 must be positive"));
        }
        if !(self.omega_max_rad_per_us > 0.0) {
            return Err(Error::invalid("omega_max must be positive"));
        }
        Ok(())
    }
}

/// Control atom at the origin plus N targets on a circle of radius R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomLayout {
    pub n_targets: usize,
    pub radius_um: f64,
    /// Index 0 is the control; indices 1..=N are the targets.
    pub positions: Vec<Point3>,
}

/// Place the control at the origin and target j at angle θ_j = 2πj/N on
/// the circle of radius R.
pub fn place_atoms(n_targets: usize, radius_um: f64) -> Result<AtomLayout> {
    if n_targets == 0 {
        return Err(Error::invalid("need at least one target atom"));
    }
    if !(radius_um > 0.0 && radius_um.is_finite()) {
        return Err(Error::invalid("radius_um must be positive and finite"));
    }
    let mut positions = vec![[0.0, 0.0, 0.0]];
    for j in 1..=n_targets {
        let theta = std::f64::consts::TAU * j as f64 / n_targets as f64;
        positions.push([radius_um * theta.cos(), radius_um * theta.sin(), 0.0]);
    }
    Ok(AtomLayout {
        n_targets,
        radius_um,
        positions,
    })
}

impl AtomLayout {
    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    /// Layout from explicit coordinates; index 0 is taken as the control.
    pub fn from_positions(positions: Vec<Point3>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::invalid("a layout needs a control and at least one target"));
        }
        let radius = norm3(sub3(positions[1], positions[0]));
        Ok(AtomLayout {
            n_targets: positions.len() - 1,
            radius_um: radius,
            positions,
        })
    }

    /// Positions with a displacement sample added.
    pub fn perturbed(&self, sample: &DisplacementSample) -> Result<Vec<Point3>> {
        if sample.deltas.len() != self.n_atoms() {
            return Err(Error::invalid(format!(
                "displacement sample has {} atoms, layout has {}",
                sample.deltas.len(),
                self.n_atoms()
            )));
        }
        Ok(self
            .positions
            .iter()
            .zip(sample.deltas.iter())
            .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .collect())
    }

    /// Plain-text table: one `index x y z` row per atom, μm.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# atom x_um y_um z_um\n");
        for (i, p) in self.positions.iter().enumerate() {
            out.push_str(&format!("{} {:.9} {:.9} {:.9}\n", i, p[0], p[1], p[2]));
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, Point3)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "layout table line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("layout table line {}: bad index", lineno + 1)))?;
            let mut p = [0.0; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                p[k] = f.parse().map_err(|_| {
                    Error::Parse(format!("layout table line {}: bad coordinate", lineno + 1))
                })?;
            }
            rows.push((idx, p));
        }
        rows.sort_by_key(|&(i, _)| i);
        for (expect, &(i, _)) in rows.iter().enumerate() {
            if i != expect {
                return Err(Error::Parse(format!(
                    "layout table: atom indices must be 0..n, missing {expect}"
                )));
            }
        }
        AtomLayout::from_positions(rows.into_iter().map(|(_, p)| p).collect())
    }
}

/// Symmetric pairwise interaction table in rad/μs, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub v: Array2<f64>,
}

impl InteractionMatrix {
    pub fn n_atoms(&self) -> usize {
        self.v.nrows()
    }
}

/// V_ij = C₆ / d_ij⁶ for all pairs.
pub fn interaction_matrix(
    positions: &[Point3],
    constants: &PhysicalConstants,
) -> Result<InteractionMatrix> {
    constants.validate()?;
    let n = positions.len();
    let mut v = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = norm3(sub3(positions[i], positions[j]));
            if d < MIN_PAIR_DISTANCE_UM {
                return Err(Error::DegenerateGeometry(format!(
                    "atoms {i} and {j} are {d:.3e} μm apart"
                )));
            }
            let vij = constants.c6_rad_um6_per_us / d.powi(6);
            v[[i, j]] = vij;
            v[[j, i]] = vij;
        }
    }
    Ok(InteractionMatrix { v })
}

/// Per-atom position perturbation (δx, δy, δz) in μm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSample {
    pub deltas: Vec<Point3>,
}

impl DisplacementSample {
    pub fn zero(n_atoms: usize) -> Self {
        DisplacementSample {
            deltas: vec![[0.0; 3]; n_atoms],
        }
    }
}

/// Draw `count` independent displacement samples for `n_atoms` atoms.
///
/// Each component is a zero-mean Gaussian with the corresponding width
/// from the noise model (untruncated). Deterministic given the seed.
pub fn sample_displacements(
    noise: &NoiseModel,
    n_atoms: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<DisplacementSample>> {
    noise.validate()?;
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dists: Vec<Option<Normal<f64>>> = noise
        .sigma_um
        .iter()
        .map(|&s| {
            if s > 0.0 {
                Some(Normal::new(0.0, s).expect("validated width"))
            } else {
                None
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut deltas = Vec::with_capacity(n_atoms);
        for _ in 0..n_atoms {
            let mut d = [0.0; 3];
            for (axis, dist) in dists.iter().enumerate() {
                if let Some(dist) = dist {
                    d[axis] = dist.sample(&mut rng);
                }
            }
            deltas.push(d);
        }
        samples.push(DisplacementSample { deltas });
    }
    Ok(samples)
}

fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
