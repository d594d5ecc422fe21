//! Pauli Transfer Maps, error-channel ranking, and fidelity sweeps over
//! gate duration and array radius.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CMat, CompiledChannel, DensityMatrix, KrausChannel};
use crate::error::{Error, Result};
use crate::geometry::{interaction_matrix, place_atoms, sample_displacements};
use crate::objective::GateTarget;
use crate::optimizer::{multi_restart, OptimizerConfig, TrainingResult};
use crate::problem::ProblemContext;

/// Deviation magnitude above which an error channel is reported.
pub const REPORT_THRESHOLD: f64 = 1e-3;

/// Largest qubit count for transfer-map analysis.
pub const MAX_PTM_QUBITS: usize = 4;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Anything that maps operators on the 3^n-dimensional atomic space
/// linearly (channels are applied entrywise on an operator basis, so no
/// positivity of the input is assumed).
pub trait QuantumChannel {
    fn dim(&self) -> usize;
    fn apply_matrix(&self, m: &CMat) -> Result<CMat>;
}

impl QuantumChannel for CompiledChannel {
    fn dim(&self) -> usize {
        CompiledChannel::dim(self)
    }

    fn apply_matrix(&self, m: &CMat) -> Result<CMat> {
        Ok(self.apply(&DensityMatrix { rho: m.clone() })?.rho)
    }
}

/// Plain conjugation channel ρ → UρU†.
#[derive(Debug, Clone)]
pub struct UnitaryChannel {
    pub u: CMat,
}

impl QuantumChannel for UnitaryChannel {
    fn dim(&self) -> usize {
        self.u.nrows()
    }

    fn apply_matrix(&self, m: &CMat) -> Result<CMat> {
        if m.nrows() != self.dim() {
            return Err(Error::invalid("operator dimension mismatch"));
        }
        Ok(crate::dynamics::conjugate(&self.u, &DensityMatrix { rho: m.clone() }).rho)
    }
}

/// Channel given by an explicit Kraus family Σ_k E_k ρ E_k†.
#[derive(Debug, Clone)]
pub struct KrausFamilyChannel {
    pub operators: Vec<CMat>,
}

impl QuantumChannel for KrausFamilyChannel {
    fn dim(&self) -> usize {
        self.operators[0].nrows()
    }

    fn apply_matrix(&self, m: &CMat) -> Result<CMat> {
        let d = self.dim();
        if m.nrows() != d {
            return Err(Error::invalid("operator dimension mismatch"));
        }
        let mut out = CMat::zeros((d, d));
        for e in &self.operators {
            out += &crate::dynamics::conjugate(e, &DensityMatrix { rho: m.clone() }).rho;
        }
        Ok(out)
    }
}

const PAULI_CHARS: [char; 4] = ['I', 'X', 'Y', 'Z'];

fn pauli_1q(which: usize) -> [[Complex64; 2]; 2] {
    let z = Complex64::new(0.0, 0.0);
    match which {
        0 => [[ONE, z], [z, ONE]],
        1 => [[z, ONE], [ONE, z]],
        2 => [[z, -Complex64::i()], [Complex64::i(), z]],
        _ => [[ONE, z], [z, -ONE]],
    }
}

/// n-qubit Pauli as a 2^n × 2^n matrix. Digit j of `index` (base 4,
/// qubit 0 most significant) selects I/X/Y/Z on qubit j.
pub fn pauli_matrix(n_qubits: usize, index: usize) -> CMat {
    let dim = 1 << n_qubits;
    let factors: Vec<[[Complex64; 2]; 2]> = (0..n_qubits)
        .map(|q| pauli_1q((index >> (2 * (n_qubits - 1 - q))) & 3))
        .collect();
    CMat::from_shape_fn((dim, dim), |(r, c)| {
        let mut v = ONE;
        for (q, f) in factors.iter().enumerate() {
            let rb = (r >> (n_qubits - 1 - q)) & 1;
            let cb = (c >> (n_qubits - 1 - q)) & 1;
            v *= f[rb][cb];
        }
        v
    })
}

/// Label such as "XZI" for a base-4 Pauli index (qubit 0 first).
pub fn pauli_label(n_qubits: usize, index: usize) -> String {
    (0..n_qubits)
        .map(|q| PAULI_CHARS[(index >> (2 * (n_qubits - 1 - q))) & 3])
        .collect()
}

/// Full-space index of a computational basis state (each bit 0/1 maps
/// onto the corresponding level of the three-level atom).
fn comp_to_full(n_qubits: usize, comp: usize) -> usize {
    let mut full = 0;
    for q in 0..n_qubits {
        full = full * 3 + ((comp >> (n_qubits - 1 - q)) & 1);
    }
    full
}

/// The transfer map R_ij = (1/2^n) Tr[P_i 𝓔(P_j)], with the Paulis
/// living on the computational subspace: inputs carry no Rydberg
/// amplitude and outputs are projected back before the trace, so
/// residual |r⟩ population shows up as amplitude loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTransferMap {
    pub n_qubits: usize,
    /// 4^n × 4^n, rows = output Pauli, columns = input Pauli.
    pub r: Array2<f64>,
}

impl PauliTransferMap {
    pub fn n_paulis(&self) -> usize {
        self.r.nrows()
    }

    pub fn identity(n_qubits: usize) -> Self {
        let np = 1 << (2 * n_qubits);
        PauliTransferMap {
            n_qubits,
            r: Array2::eye(np),
        }
    }

    pub fn max_deviation(&self, other: &PauliTransferMap) -> f64 {
        self.r
            .iter()
            .zip(other.r.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV matrix with Pauli labels on both axes.
    pub fn to_csv(&self) -> String {
        let np = self.n_paulis();
        let mut out = String::from("output\\input");
        for j in 0..np {
            out.push(',');
            out.push_str(&pauli_label(self.n_qubits, j));
        }
        out.push('\n');
        for i in 0..np {
            out.push_str(&pauli_label(self.n_qubits, i));
            for j in 0..np {
                out.push_str(&format!(",{:?}", self.r[[i, j]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Transfer map of a channel on the 3^n_qubits-dimensional space.
pub fn compute_ptm<C: QuantumChannel + Sync>(
    channel: &C,
    n_qubits: usize,
) -> Result<PauliTransferMap> {
    if n_qubits == 0 || n_qubits > MAX_PTM_QUBITS {
        return Err(Error::invalid(format!(
            "n_qubits must lie in 1..={MAX_PTM_QUBITS}"
        )));
    }
    let full_dim = 3usize.pow(n_qubits as u32);
    if channel.dim() != full_dim {
        return Err(Error::invalid(format!(
            "channel dimension {} does not match 3^{n_qubits} = {full_dim}",
            channel.dim()
        )));
    }
    let comp_dim = 1 << n_qubits;
    let np = comp_dim * comp_dim;
    let full_index: Vec<usize> = (0..comp_dim).map(|u| comp_to_full(n_qubits, u)).collect();

    let columns = crate::parallel::map_indexed(np, |j| -> Result<Vec<f64>> {
        let p_in = pauli_matrix(n_qubits, j);
        let mut embedded = CMat::zeros((full_dim, full_dim));
        for (u, &fu) in full_index.iter().enumerate() {
            for (v, &fv) in full_index.iter().enumerate() {
                embedded[[fu, fv]] = p_in[[u, v]];
            }
        }
        let out_full = channel.apply_matrix(&embedded)?;
        let projected = CMat::from_shape_fn((comp_dim, comp_dim), |(u, v)| {
            out_full[[full_index[u], full_index[v]]]
        });
        let mut col = Vec::with_capacity(np);
        for i in 0..np {
            let p_out = pauli_matrix(n_qubits, i);
            // Tr[P_i ρ'] with Hermitian P_i.
            let mut tr = Complex64::new(0.0, 0.0);
            for u in 0..comp_dim {
                for v in 0..comp_dim {
                    tr += p_out[[u, v]] * projected[[v, u]];
                }
            }
            col.push(tr.re / comp_dim as f64);
        }
        Ok(col)
    });

    let mut r = Array2::zeros((np, np));
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            r[[i, j]] = v;
        }
    }
    Ok(PauliTransferMap { n_qubits, r })
}

/// Exact transfer map of the target C(Z^⊗N) unitary (with its
/// compensation phases) by direct conjugation of every Pauli.
pub fn ideal_ptm(target: &GateTarget) -> Result<PauliTransferMap> {
    let n_qubits = target.n_atoms();
    if n_qubits > MAX_PTM_QUBITS {
        return Err(Error::invalid(format!(
            "transfer maps support up to {MAX_PTM_QUBITS} qubits"
        )));
    }
    let comp_dim = 1usize << n_qubits;
    let np = comp_dim * comp_dim;
    let diag: Vec<Complex64> = (0..comp_dim).map(|u| target.phase_factor(u)).collect();
    let mut r = Array2::zeros((np, np));
    for j in 0..np {
        let p_in = pauli_matrix(n_qubits, j);
        // U P_j U† with diagonal U.
        let conj = CMat::from_shape_fn((comp_dim, comp_dim), |(u, v)| {
            diag[u] * p_in[[u, v]] * diag[v].conj()
        });
        for i in 0..np {
            let p_out = pauli_matrix(n_qubits, i);
            let mut tr = Complex64::new(0.0, 0.0);
            for u in 0..comp_dim {
                for v in 0..comp_dim {
                    tr += p_out[[u, v]] * conj[[v, u]];
                }
            }
            r[[i, j]] = tr.re / comp_dim as f64;
        }
    }
    Ok(PauliTransferMap { n_qubits, r })
}

/// Coarse classification of a Pauli-to-Pauli deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelClass {
    /// Labels differ only by X↔Y swaps (coherent Z-rotation signature).
    XToY,
    /// Labels differ only by Z↔I swaps (population damping signature).
    ZToI,
    Other,
}

/// One ranked transfer-map deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorChannel {
    pub input: String,
    pub output: String,
    pub magnitude: f64,
    pub class: ChannelClass,
}

fn classify(input: &str, output: &str) -> ChannelClass {
    let mut xy = 0usize;
    let mut zi = 0usize;
    let mut other = 0usize;
    for (a, b) in input.chars().zip(output.chars()) {
        if a == b {
            continue;
        }
        match (a, b) {
            ('X', 'Y') | ('Y', 'X') => xy += 1,
            ('Z', 'I') | ('I', 'Z') => zi += 1,
            _ => other += 1,
        }
    }
    if other == 0 && xy > 0 && zi == 0 {
        ChannelClass::XToY
    } else if other == 0 && zi > 0 && xy == 0 {
        ChannelClass::ZToI
    } else {
        ChannelClass::Other
    }
}

/// Entries of |real − ideal| above `threshold`, sorted descending and
/// annotated with their channel class.
pub fn rank_error_channels(
    real: &PauliTransferMap,
    ideal: &PauliTransferMap,
    threshold: f64,
) -> Result<Vec<ErrorChannel>> {
    if real.n_qubits != ideal.n_qubits {
        return Err(Error::invalid("transfer maps have different qubit counts"));
    }
    let np = real.n_paulis();
    let mut out = Vec::new();
    for j in 0..np {
        // Classify deviations against the ideal image of the input: for
        // a signed-permutation ideal map the gate itself dresses Paulis
        // (e.g. X on the control becomes X⊗Z…Z), and the error class is
        // read off relative to that image.
        let image = (0..np)
            .max_by(|&a, &b| ideal.r[[a, j]].abs().total_cmp(&ideal.r[[b, j]].abs()))
            .filter(|&i| ideal.r[[i, j]].abs() > 0.5)
            .unwrap_or(j);
        let image_label = pauli_label(real.n_qubits, image);
        for i in 0..np {
            // Shrinkage along the ideal image is an amplitude error, not a
            // transfer between Pauli channels; skip it so the ranking lists
            // genuine cross-channel leakage.
            if i == image {
                continue;
            }
            let magnitude = (real.r[[i, j]] - ideal.r[[i, j]]).abs();
            if magnitude > threshold {
                let input = pauli_label(real.n_qubits, j);
                let output = pauli_label(real.n_qubits, i);
                let class = classify(&image_label, &output);
                out.push(ErrorChannel {
                    input,
                    output,
                    magnitude,
                    class,
                });
            }
        }
    }
    out.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    Ok(out)
}

/// CSV listing of ranked deviations.
pub fn error_channels_csv(channels: &[ErrorChannel]) -> String {
    let mut out = String::from("rank,input,output,magnitude,class\n");
    for (k, c) in channels.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{:?},{}\n",
            k + 1,
            c.input,
            c.output,
            c.magnitude,
            match c.class {
                ChannelClass::XToY => "X<->Y",
                ChannelClass::ZToI => "Z<->I",
                ChannelClass::Other => "other",
            }
        ));
    }
    out
}

/// The target C(Z^⊗N) as an explicit unitary on the full atomic space
/// (identity on every level pattern with Rydberg support).
pub fn ideal_gate_channel(target: &GateTarget) -> UnitaryChannel {
    let n = target.n_atoms();
    let d = 3usize.pow(n as u32);
    let mut u = CMat::eye(d);
    for comp in 0..(1usize << n) {
        let f = comp_to_full(n, comp);
        u[[f, f]] = target.phase_factor(comp);
    }
    UnitaryChannel { u }
}

/// A compiled channel followed by the per-atom virtual-Z compensation.
struct CompensatedChannel<'a> {
    inner: &'a CompiledChannel,
    diag: Vec<Complex64>,
}

impl QuantumChannel for CompensatedChannel<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_matrix(&self, m: &CMat) -> Result<CMat> {
        let mut out = self.inner.apply_matrix(m)?;
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let fi = self.diag[i];
            for (j, v) in row.iter_mut().enumerate() {
                *v *= fi * self.diag[j].conj();
            }
        }
        Ok(out)
    }
}

/// e^{iθ_j} on |1⟩ of atom j, over the full-space diagonal.
fn compensation_diag(n_atoms: usize, comp_phases: &[f64]) -> Vec<Complex64> {
    let d = 3usize.pow(n_atoms as u32);
    (0..d)
        .map(|mut idx| {
            let mut theta = 0.0;
            for j in (0..n_atoms).rev() {
                if idx % 3 == 1 {
                    theta += comp_phases[j];
                }
                idx /= 3;
            }
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Transfer map of a trained pulse under the full noise model, averaged
/// over displacement samples (decay enters through the per-step Kraus
/// channel; motion through the sampled interaction matrices). The
/// compensation phases are folded in as a trailing virtual-Z layer, so
/// the result is comparable against the plain-gate [`ideal_ptm`].
pub fn average_ptm(
    params_phases: &[f64],
    comp_phases: &[f64],
    ctx: &ProblemContext,
    n_samples: usize,
    seed: u64,
) -> Result<PauliTransferMap> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let schedule = ctx.schedule(params_phases)?;
    let per_step = KrausChannel::per_step(
        ctx.noise.gamma_per_us,
        schedule.dt_us(),
        ctx.noise.branches,
    )?;
    let effective = if ctx.noise.sigma_um.iter().all(|&s| s == 0.0) {
        1
    } else {
        n_samples
    };
    let samples = sample_displacements(&ctx.noise, ctx.n_atoms(), effective, seed)?;
    let n_qubits = ctx.n_atoms();
    if comp_phases.len() != n_qubits {
        return Err(Error::invalid(format!(
            "expected {n_qubits} compensation phases, got {}",
            comp_phases.len()
        )));
    }
    let diag = compensation_diag(n_qubits, comp_phases);
    let np = 1usize << (2 * n_qubits);
    let mut acc = Array2::<f64>::zeros((np, np));
    for sample in &samples {
        let positions = ctx.layout.perturbed(sample)?;
        let inter = interaction_matrix(&positions, &ctx.constants)?;
        let channel = CompiledChannel::compile(&schedule, &inter, &per_step)?;
        let compensated = CompensatedChannel {
            inner: &channel,
            diag: diag.clone(),
        };
        let ptm = compute_ptm(&compensated, n_qubits)?;
        acc += &ptm.r;
    }
    acc /= samples.len() as f64;
    Ok(PauliTransferMap {
        n_qubits,
        r: acc,
    })
}

/// SVG heat map of a transfer map with logarithmic magnitude coloring
/// (decades from 1 down to 1e-6); positive entries render red, negative
/// blue.
pub fn ptm_svg(ptm: &PauliTransferMap) -> String {
    let np = ptm.n_paulis();
    let cell = 14usize;
    let margin = 46usize;
    let size = margin + np * cell + 4;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         font-family=\"monospace\" font-size=\"9\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for i in 0..np {
        for j in 0..np {
            let v = ptm.r[[i, j]];
            // log-magnitude intensity: 1.0 at |v| = 1, 0 below 1e-6
            let mag = v.abs().max(1e-12);
            let intensity = ((mag.log10() + 6.0) / 6.0).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - intensity)) as u8;
            let fill = if v >= 0.0 {
                format!("rgb(255,{shade},{shade})")
            } else {
                format!("rgb({shade},{shade},255)")
            };
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" \
                 stroke=\"#ddd\" stroke-width=\"0.5\"/>\n",
                margin + j * cell,
                margin + i * cell
            ));
        }
    }
    for k in 0..np {
        let label = pauli_label(ptm.n_qubits, k);
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>\n",
            margin - 4,
            margin + k * cell + cell - 3
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" transform=\"rotate(-60 {} {})\">{label}</text>\n",
            margin + k * cell + 2,
            margin - 4,
            margin + k * cell + 2,
            margin - 4
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// A duration × radius grid to optimize over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub durations_ns: Vec<f64>,
    pub radii_um: Vec<f64>,
    /// When false (the default), cells run under ideal conditions — no
    /// motion, no decay — regardless of the problem's noise model.
    #[serde(default)]
    pub noise_enabled: bool,
}

/// One optimized grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub duration_ns: f64,
    pub radius_um: f64,
    pub best_fidelity: f64,
    pub restarts: usize,
    pub seed: u64,
}

/// All cells in row-major (duration-major) grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("duration_ns,radius_um,best_fidelity,restarts,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:?},{:?},{:?},{},{}\n",
                c.duration_ns, c.radius_um, c.best_fidelity, c.restarts, c.seed
            ));
        }
        out
    }

    pub fn cell(&self, duration_ns: f64, radius_um: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.duration_ns == duration_ns && c.radius_um == radius_um)
    }
}

/// Multi-restart optimization of every (duration, radius) cell. The
/// problem supplies everything but duration and radius; cells are
/// independent jobs with deterministic per-cell seeds.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &ProblemContext,
    config: &OptimizerConfig,
) -> Result<SweepResult> {
    if spec.durations_ns.is_empty() || spec.radii_um.is_empty() {
        return Err(Error::invalid("sweep grid must be non-empty"));
    }
    config.validate()?;
    let n_cells = spec.durations_ns.len() * spec.radii_um.len();
    let outcomes = crate::parallel::map_indexed(n_cells, |idx| -> Result<SweepCell> {
        let (di, ri) = (idx / spec.radii_um.len(), idx % spec.radii_um.len());
        let duration_ns = spec.durations_ns[di];
        let radius_um = spec.radii_um[ri];
        let result = sweep_cell(spec, base, config, idx, duration_ns, radius_um)?;
        Ok(SweepCell {
            duration_ns,
            radius_um,
            best_fidelity: result.fidelity_mean,
            restarts: config.restarts,
            seed: cell_seed(config.seed, idx),
        })
    });
    let mut cells = Vec::with_capacity(n_cells);
    for c in outcomes {
        cells.push(c?);
    }
    Ok(SweepResult { cells })
}

fn cell_seed(root: u64, idx: usize) -> u64 {
    root.wrapping_add((idx as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn sweep_cell(
    spec: &SweepSpec,
    base: &ProblemContext,
    config: &OptimizerConfig,
    idx: usize,
    duration_ns: f64,
    radius_um: f64,
) -> Result<TrainingResult> {
    let mut ctx = base.clone();
    ctx.layout = place_atoms(base.n_targets, radius_um)?;
    ctx.duration_ns = duration_ns;
    if !spec.noise_enabled {
        ctx.noise = ctx.noise.without_noise();
    }
    ctx.validate()?;
    let mut cell_config = config.clone();
    cell_config.seed = cell_seed(config.seed, idx);
    Ok(multi_restart(&cell_config, &ctx)?.best().clone())
}
