//! Multi-atom three-level dynamics: Hamiltonian, segment propagators,
//! the Rydberg-decay Kraus channel, and density-matrix evolution.
//!
//! The drive couples |1⟩ ↔ |r⟩ on every atom with a common amplitude and
//! phase; atoms in |r⟩ interact pairwise through V_jk n_j n_k. Each
//! segment is propagated by the exact exponential U = exp(-i Δt H)
//! (Hermitian eigendecomposition), followed by the per-atom decay
//! channel. Leakage |r⟩→|e⟩ is not tracked explicitly: it shows up as
//! trace loss.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::InteractionMatrix;
use crate::hilbert::{HilbertSpace, LEVEL_ONE, LEVEL_RYDBERG, LEVEL_ZERO};
use crate::pulse::PulseSchedule;

pub type CMat = Array2<Complex64>;
pub type CVec = Array1<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Mixed state on the 3^n-dimensional register space.
///
/// Invariants (up to numerical tolerance): Hermitian, positive
/// semidefinite, trace ≤ 1. A trace below one signals leakage.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: CMat,
}

impl DensityMatrix {
    pub fn pure(psi: &CVec) -> Self {
        let d = psi.len();
        let rho = CMat::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj());
        DensityMatrix { rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.rho[[i, i]].re).sum()
    }

    /// Max deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                worst = worst.max((self.rho[[i, j]] - self.rho[[j, i]].conj()).norm());
            }
        }
        worst
    }
}

/// H = Σ_j (Ω/2)(e^{iφ}|r⟩⟨1|_j + e^{-iφ}|1⟩⟨r|_j) + Σ_{j<k} V_jk n_j n_k.
pub fn build_segment_hamiltonian(
    interactions: &InteractionMatrix,
    amplitude_rad_per_us: f64,
    phase_rad: f64,
) -> Result<CMat> {
    let n_atoms = interactions.n_atoms();
    let space = HilbertSpace::new(n_atoms)?;
    let dim = space.dim();
    let mut h = CMat::zeros((dim, dim));

    let half_omega = 0.5 * amplitude_rad_per_us;
    let drive_up = Complex64::from_polar(half_omega, phase_rad); // ⟨r|H|1⟩

    for idx in 0..dim {
        // diagonal: Σ_{j<k} V_jk for pairs simultaneously in |r⟩
        let mut diag = 0.0;
        for j in 0..n_atoms {
            if space.level_of(idx, j) != LEVEL_RYDBERG {
                continue;
            }
            for k in (j + 1)..n_atoms {
                if space.level_of(idx, k) == LEVEL_RYDBERG {
                    diag += interactions.v[[j, k]];
                }
            }
        }
        h[[idx, idx]] = Complex64::new(diag, 0.0);

        // drive: raise |1⟩_j → |r⟩_j
        for j in 0..n_atoms {
            if space.level_of(idx, j) == LEVEL_ONE {
                let raised = space.with_level(idx, j, LEVEL_RYDBERG);
                h[[raised, idx]] += drive_up;
                h[[idx, raised]] += drive_up.conj();
            }
        }
    }
    Ok(h)
}

/// Hermitian eigendecomposition, eigenvalues ascending.
pub fn eig_hermitian(h: &CMat) -> (Array1<f64>, CMat) {
    let n = h.nrows();
    if h.iter().all(|z| z.im == 0.0) {
        // Real symmetric: diagonalize in f64 directly.
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h[[i, j]].re);
        let eig = nalgebra::SymmetricEigen::new(m);
        let vals = Array1::from_iter(eig.eigenvalues.iter().copied());
        let vecs = CMat::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(eig.eigenvectors[(i, j)], 0.0)
        });
        return (vals, vecs);
    }
    // General Hermitian case via the real symmetric embedding
    //   S = [[Re H, -Im H], [Im H, Re H]],
    // whose spectrum is that of H with each eigenvalue doubled: if
    // H(a+ib) = λ(a+ib) then S(a;b) = λ(a;b). Each complex eigenvector
    // appears as the pair (a;b), (-b;a), which map to the same complex
    // direction (a+ib and i(a+ib)), so within every degenerate cluster a
    // pivoted Gram-Schmidt pass recovers exactly half of the real vectors
    // as an orthonormal complex basis.
    let s = nalgebra::DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, ij) = (j / n, j % n);
        match (bi, bj) {
            (0, 0) | (1, 1) => h[[ii, ij]].re,
            (0, 1) => -h[[ii, ij]].im,
            _ => h[[ii, ij]].im,
        }
    });
    let eig = nalgebra::SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = order
        .iter()
        .map(|&k| eig.eigenvalues[k].abs())
        .fold(1.0, f64::max);
    // Wide enough to always capture the numerically-split copies produced
    // by the embedding. Merging close-but-distinct levels is harmless: the
    // candidates stay unmixed and each picked vector is re-tagged with its
    // Rayleigh quotient below.
    let cluster_tol = 1e-8 * scale;

    let mut vals = Vec::with_capacity(n);
    let mut vecs = CMat::zeros((n, n));
    let mut taken = 0usize;
    let mut start = 0usize;
    while start < 2 * n && taken < n {
        // Extend the cluster of near-equal eigenvalues.
        let mut end = start + 1;
        while end < 2 * n
            && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= cluster_tol
        {
            end += 1;
        }
        let mut candidates: Vec<Array1<Complex64>> = order[start..end]
            .iter()
            .map(|&k| {
                Array1::from_shape_fn(n, |i| {
                    Complex64::new(eig.eigenvectors[(i, k)], eig.eigenvectors[(n + i, k)])
                })
            })
            .collect();
        let want = ((end - start) / 2).min(n - taken);
        for _ in 0..want {
            // Pick the candidate with the largest remaining norm.
            let (best, norm) = candidates
                .iter()
                .enumerate()
                .map(|(idx, c)| (idx, c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("cluster candidates exhausted");
            let mut v = candidates.swap_remove(best);
            v.mapv_inplace(|z| z / norm);
            for c in candidates.iter_mut() {
                let overlap: Complex64 = v.iter().zip(c.iter()).map(|(a, b)| a.conj() * b).sum();
                for (ci, vi) in c.iter_mut().zip(v.iter()) {
                    *ci -= overlap * vi;
                }
            }
            let col = taken;
            for i in 0..n {
                vecs[[i, col]] = v[i];
            }
            // Rayleigh quotient: more accurate than the cluster head when
            // nearby eigenvalues were merged.
            let mut quad = 0.0;
            for i in 0..n {
                let mut row = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    row += h[[i, j]] * v[j];
                }
                quad += (v[i].conj() * row).re;
            }
            vals.push(quad);
            taken += 1;
        }
        start = end;
    }
    debug_assert_eq!(taken, n);
    (Array1::from(vals), vecs)
}

fn hermiticity_defect(h: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            worst = worst.max((h[[i, j]] - h[[j, i]].conj()).norm());
        }
    }
    worst
}

/// U = exp(-i Δt H) via eigendecomposition of Hermitian H.
pub fn segment_propagator(h: &CMat, dt_us: f64) -> Result<CMat> {
    if !(dt_us > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    if hermiticity_defect(h) > 1e-9 * scale {
        return Err(Error::invalid("matrix is not Hermitian within tolerance"));
    }
    let (vals, vecs) = eig_hermitian(h);
    Ok(unitary_from_eig(&vals, &vecs, dt_us))
}

/// Assemble exp(-i Δt H) from (λ, V) with H = V diag(λ) V†.
pub fn unitary_from_eig(vals: &Array1<f64>, vecs: &CMat, dt_us: f64) -> CMat {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -dt_us * vals[j]);
        col.mapv_inplace(|z| z * phase);
    }
    let mut vdag = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            vdag[[i, j]] = vecs[[j, i]].conj();
        }
    }
    scaled.dot(&vdag)
}

/// ‖U†U − I‖_max.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    let mut udag = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            udag[[i, j]] = u[[j, i]].conj();
        }
    }
    let prod = udag.dot(u);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { ONE } else { ZERO };
            worst = worst.max((prod[[i, j]] - expect).norm());
        }
    }
    worst
}

/// Per-step Rydberg decay channel.
///
/// Single-atom Kraus operators on {|0⟩, |1⟩, |r⟩}:
/// E0 = diag(1, 1, √(1−p)), E1 = √(p·b0) |0⟩⟨r|, E2 = √(p·b1) |1⟩⟨r|.
/// The |r⟩→|e⟩ branch carries no operator; its weight p·b2 leaves the
/// trace. The channel acts independently on every atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrausChannel {
    /// Total per-step decay probability p = γΔt.
    pub p: f64,
    /// Branching fractions (b0, b1, b2), summing to 1.
    pub branches: [f64; 3],
}

impl KrausChannel {
    pub fn new(p: f64, branches: [f64; 3]) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::invalid(format!("decay probability p = {p} not in [0, 1]")));
        }
        if branches.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("branch fractions must be >= 0"));
        }
        let sum: f64 = branches.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "branch fractions must sum to 1 (got {sum})"
            )));
        }
        Ok(KrausChannel { p, branches })
    }

    /// p = γΔt for one segment.
    pub fn per_step(gamma_per_us: f64, dt_us: f64, branches: [f64; 3]) -> Result<Self> {
        KrausChannel::new(gamma_per_us * dt_us, branches)
    }

    pub fn identity() -> Self {
        KrausChannel {
            p: 0.0,
            branches: [0.1354, 0.2504, 0.6142],
        }
    }

    /// The three single-atom Kraus operators as 3×3 matrices.
    pub fn single_atom_operators(&self) -> [CMat; 3] {
        let mut e0 = CMat::eye(3);
        e0[[LEVEL_RYDBERG, LEVEL_RYDBERG]] = Complex64::new((1.0 - self.p).sqrt(), 0.0);
        let mut e1 = CMat::zeros((3, 3));
        e1[[LEVEL_ZERO, LEVEL_RYDBERG]] = Complex64::new((self.p * self.branches[0]).sqrt(), 0.0);
        let mut e2 = CMat::zeros((3, 3));
        e2[[LEVEL_ONE, LEVEL_RYDBERG]] = Complex64::new((self.p * self.branches[1]).sqrt(), 0.0);
        [e0, e1, e2]
    }
}

/// Apply the decay channel to every atom (independent per-atom channels,
/// composed sequentially).
pub fn apply_kraus(rho: &DensityMatrix, channel: &KrausChannel) -> Result<DensityMatrix> {
    let dim = rho.dim();
    let n_atoms = match dim {
        3 => 1,
        9 => 2,
        27 => 3,
        81 => 4,
        _ => {
            return Err(Error::invalid(format!(
                "density matrix dimension {dim} is not 3^n for n <= 4"
            )))
        }
    };
    KrausChannel::new(channel.p, channel.branches)?;
    let space = HilbertSpace::new(n_atoms)?;
    let mut out = rho.rho.clone();
    for atom in 0..n_atoms {
        out = apply_kraus_single_atom(&out, &space, atom, channel);
    }
    Ok(DensityMatrix { rho: out })
}

/// One atom's channel: ρ' = Σ_m E_m ρ E_m†, with E_m embedded at `atom`.
fn apply_kraus_single_atom(
    rho: &CMat,
    space: &HilbertSpace,
    atom: usize,
    channel: &KrausChannel,
) -> CMat {
    let dim = space.dim();
    let sqrt_keep = (1.0 - channel.p).sqrt();
    let w0 = (channel.p * channel.branches[0]).sqrt();
    let w1 = (channel.p * channel.branches[1]).sqrt();

    // E0 ρ E0†: scale rows/columns whose `atom` level is |r⟩ by √(1-p).
    let mut out = rho.clone();
    for i in 0..dim {
        let ri = space.level_of(i, atom) == LEVEL_RYDBERG;
        for j in 0..dim {
            let rj = space.level_of(j, atom) == LEVEL_RYDBERG;
            let f = match (ri, rj) {
                (true, true) => sqrt_keep * sqrt_keep,
                (true, false) | (false, true) => sqrt_keep,
                (false, false) => 1.0,
            };
            if f != 1.0 {
                out[[i, j]] *= f;
            }
        }
    }

    // E1/E2 ρ E1†/E2†: move the (r, r) block of `atom` to (0,0) / (1,1).
    for (level, w) in [(LEVEL_ZERO, w0), (LEVEL_ONE, w1)] {
        if w == 0.0 {
            continue;
        }
        let w2 = w * w;
        for i in 0..dim {
            if space.level_of(i, atom) != LEVEL_RYDBERG {
                continue;
            }
            let ti = space.with_level(i, atom, level);
            for j in 0..dim {
                if space.level_of(j, atom) != LEVEL_RYDBERG {
                    continue;
                }
                let tj = space.with_level(j, atom, level);
                let add = rho[[i, j]] * w2;
                out[[ti, tj]] += add;
            }
        }
    }
    out
}

/// Propagate `initial` through the whole schedule: for each segment,
/// exact unitary evolution followed by the decay channel.
pub fn evolve(
    initial: &DensityMatrix,
    schedule: &PulseSchedule,
    interactions: &InteractionMatrix,
    per_step: &KrausChannel,
) -> Result<DensityMatrix> {
    let compiled = CompiledChannel::compile(schedule, interactions, per_step)?;
    compiled.apply(initial)
}

/// A schedule's full evolution with the segment propagators precomputed,
/// applicable to any input density matrix. This is the exact simulation
/// path; the optimizer uses the faster expansion in [`crate::engine`].
pub struct CompiledChannel {
    pub space: HilbertSpace,
    pub propagators: Vec<CMat>,
    pub kraus: KrausChannel,
}

impl CompiledChannel {
    pub fn compile(
        schedule: &PulseSchedule,
        interactions: &InteractionMatrix,
        per_step: &KrausChannel,
    ) -> Result<Self> {
        let space = HilbertSpace::new(interactions.n_atoms())?;
        let dt = schedule.dt_us();
        let kraus = KrausChannel::new(per_step.p, per_step.branches)?;
        let env = schedule.envelope();
        let mut propagators = Vec::with_capacity(schedule.n_segments);
        // H(Ω, φ) = Q H(Ω, 0) Q† with Q = diag(e^{iφ m}) and m the Rydberg
        // count, so exp(-i dt H(Ω, φ))[a,b] = e^{iφ(m_a - m_b)} U0[a,b].
        // H(Ω, 0) is real symmetric, which keeps the eigensolve on the
        // well-conditioned real path.
        let dim = space.dim();
        let ryd: Vec<f64> = (0..dim).map(|s| space.rydberg_count(s) as f64).collect();
        for k in 0..schedule.n_segments {
            let h0 = build_segment_hamiltonian(interactions, env.amplitudes[k], 0.0)?;
            let (vals, vecs) = eig_hermitian(&h0);
            let mut u = unitary_from_eig(&vals, &vecs, dt);
            let phi = schedule.phases[k];
            if phi != 0.0 {
                for a in 0..dim {
                    for b in 0..dim {
                        u[[a, b]] *= Complex64::from_polar(1.0, phi * (ryd[a] - ryd[b]));
                    }
                }
            }
            propagators.push(u);
        }
        Ok(CompiledChannel {
            space,
            propagators,
            kraus,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn apply(&self, initial: &DensityMatrix) -> Result<DensityMatrix> {
        if initial.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "state dimension {} does not match channel dimension {}",
                initial.dim(),
                self.dim()
            )));
        }
        let mut rho = initial.clone();
        for u in &self.propagators {
            rho = conjugate(u, &rho);
            if self.kraus.p > 0.0 {
                rho = apply_kraus(&rho, &self.kraus)?;
            }
        }
        Ok(rho)
    }

    /// Dense superoperator S with vec(ρ') = S vec(ρ) (row-major vec),
    /// built by evolving the complete |i⟩⟨j| operator basis. Limited to
    /// dim ≤ 27: the 81-dimensional superoperator (81²×81² complex
    /// entries) does not fit the memory budget; use [`apply`] instead.
    pub fn superoperator(&self) -> Result<CMat> {
        let d = self.dim();
        if d > 27 {
            return Err(Error::UnsupportedSize(format!(
                "dense superoperator limited to dim <= 27 (got {d})"
            )));
        }
        let d2 = d * d;
        let mut sup = CMat::zeros((d2, d2));
        let columns = crate::parallel::map_indexed(d2, |col| {
            let (i, j) = (col / d, col % d);
            let mut basis = CMat::zeros((d, d));
            basis[[i, j]] = ONE;
            let out = self
                .apply(&DensityMatrix { rho: basis })
                .expect("dimension checked");
            out.rho
        });
        for (col, out) in columns.into_iter().enumerate() {
            for r in 0..d {
                for c in 0..d {
                    sup[[r * d + c, col]] = out[[r, c]];
                }
            }
        }
        Ok(sup)
    }
}

/// U ρ U†.
pub fn conjugate(u: &CMat, rho: &DensityMatrix) -> DensityMatrix {
    let urho = u.dot(&rho.rho);
    let n = u.nrows();
    let mut udag = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            udag[[i, j]] = u[[j, i]].conj();
        }
    }
    DensityMatrix {
        rho: urho.dot(&udag),
    }
}

pub fn adjoint(m: &CMat) -> CMat {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = CMat::zeros((c, r));
    for i in 0..r {
        for j in 0..c {
            out[[j, i]] = m[[i, j]].conj();
        }
    }
    out
}
