//! Non-Hermitian effective Hamiltonians, their biorthogonal spectra, state
//! classification and decay channels, together with closed-form spectra
//! for qubit, harmonic and two-pair arrays.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::{
    CouplingError, CouplingRegime, CouplingTables, Emitter, EmitterLayout, Preset, SiteKind, SiteModel,
    WaveguideGeometry, SPEED_OF_LIGHT,
};
use crate::fock::{self, FockBasis, FockError, Truncation};
use crate::linalg::{self, dotc, LinalgError};
use crate::sparse::CsrMatrix;
use crate::C64;

#[derive(Debug, thiserror::Error)]
pub enum SpectraError {
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported model: {0}")]
    Model(String),
    #[error("decay matrix is not positive semidefinite (eigenvalue {0:.3e} rad/s)")]
    NotPositiveSemidefinite(f64),
    #[error("defective eigenvalue cluster near {lambda}: bilinear norm {norm:.3e} below tolerance")]
    Defective { lambda: C64, norm: f64 },
    #[error("invalid Dicke labels s={s}, m_z={mz} for L={l}")]
    InvalidDicke { l: usize, s: i64, mz: i64 },
    #[error("decay channels need manifold {0} in the spectrum")]
    MissingManifold(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Direct capacitive hopping `J_jk (â_j†â_k + h.c.)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capacitive {
    pub j: usize,
    pub k: usize,
    /// Hopping strength (rad/s).
    pub coupling: f64,
}

/// Complete description of an emitter array: layout, waveguide, coupling
/// regime, capacitive links and bulk loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayModel {
    pub layout: EmitterLayout,
    pub geometry: Option<WaveguideGeometry>,
    pub regime: CouplingRegime,
    pub capacitive: Vec<Capacitive>,
    /// Bulk loss rate κ per site (rad/s).
    pub kappa: f64,
}

impl ArrayModel {
    /// Sites spaced by whole wavelengths at `omega0`, all in phase.
    pub fn in_phase(kind: SiteKind, l: usize, omega0: f64, anharmonicity: f64, gamma: f64) -> Self {
        let model = match kind {
            SiteKind::Qubit => SiteModel::qubit(omega0),
            SiteKind::Harmonic => SiteModel::harmonic(omega0),
            SiteKind::Transmon => SiteModel::transmon(omega0, anharmonicity),
        };
        let lambda = 2.0 * PI * SPEED_OF_LIGHT / omega0;
        let emitters = (0..l)
            .map(|j| Emitter { x: 0.0, z: j as f64 * lambda, gamma, model })
            .collect();
        Self {
            layout: EmitterLayout::new(emitters),
            geometry: None,
            regime: CouplingRegime::Simplified { reference_frequency: omega0 },
            capacitive: Vec::new(),
            kappa: 0.0,
        }
    }

    /// Two capacitively coupled pairs half a wavelength apart at the mean
    /// frequency. Pair one sits at `ω̄ + Δ/2`, pair two at `ω̄ − Δ/2`.
    pub fn two_pair(kind: SiteKind, preset: &Preset, detuning: f64) -> Self {
        let omega_bar = preset.omega0;
        let make = |w: f64| match kind {
            SiteKind::Qubit => SiteModel::qubit(w),
            SiteKind::Harmonic => SiteModel::harmonic(w),
            SiteKind::Transmon => SiteModel::transmon(w, preset.anharmonicity),
        };
        let half = PI * SPEED_OF_LIGHT / omega_bar;
        let w1 = omega_bar + detuning / 2.0;
        let w2 = omega_bar - detuning / 2.0;
        let emitters = [(w1, 0.0), (w1, 0.0), (w2, half), (w2, half)]
            .iter()
            .map(|&(w, z)| Emitter { x: 0.0, z, gamma: preset.gamma, model: make(w) })
            .collect();
        Self {
            layout: EmitterLayout::new(emitters),
            geometry: None,
            regime: CouplingRegime::Simplified { reference_frequency: omega_bar },
            capacitive: vec![
                Capacitive { j: 0, k: 1, coupling: preset.capacitive_j },
                Capacitive { j: 2, k: 3, coupling: preset.capacitive_j },
            ],
            kappa: preset.kappa,
        }
    }

    pub fn sites(&self) -> usize {
        self.layout.len()
    }

    /// Common site kind, rejecting arrays that mix qubits with bosonic
    /// sites.
    pub fn site_kind(&self) -> Result<SiteKind, SpectraError> {
        let kinds: Vec<SiteKind> = self.layout.emitters.iter().map(|e| e.model.kind).collect();
        let qubits = kinds.iter().filter(|&&k| k == SiteKind::Qubit).count();
        if qubits > 0 && qubits < kinds.len() {
            return Err(SpectraError::Model("qubit sites cannot share a basis with bosonic sites".into()));
        }
        Ok(kinds.first().copied().unwrap_or(SiteKind::Harmonic))
    }

    /// Level cap to use for a requested cap: qubit arrays are pinned to 2.
    pub fn level_cap(&self, requested: usize) -> Result<usize, SpectraError> {
        Ok(match self.site_kind()? {
            SiteKind::Qubit => 2,
            _ => requested,
        })
    }

    /// Coupling tables for basis level cap `d`.
    pub fn tables(&self, d: usize) -> Result<CouplingTables, SpectraError> {
        Ok(CouplingTables::build(self.geometry.as_ref(), &self.layout, d - 1, self.regime)?)
    }

    /// Mean of the 0→1 transition frequencies.
    pub fn mean_frequency(&self) -> f64 {
        self.layout.emitters.iter().map(|e| e.model.omega).sum::<f64>() / self.sites().max(1) as f64
    }

    fn check_basis(&self, basis: &FockBasis) -> Result<(), SpectraError> {
        if basis.sites() != self.sites() {
            return Err(SpectraError::Dimension(format!(
                "basis has {} sites, model has {}",
                basis.sites(),
                self.sites()
            )));
        }
        if self.site_kind()? == SiteKind::Qubit && basis.cap() != 2 {
            return Err(SpectraError::Model(format!("qubit arrays need level cap 2, basis has {}", basis.cap())));
        }
        Ok(())
    }
}

/// Basis holding the images of lowering operators acting on `basis`.
fn lowered_basis(basis: &FockBasis) -> Result<Option<FockBasis>, FockError> {
    match basis.truncation() {
        Truncation::Manifold(0) => Ok(None),
        Truncation::Manifold(n) => Ok(Some(FockBasis::new(basis.sites(), basis.cap(), Truncation::Manifold(n - 1))?)),
        _ => Ok(Some(basis.clone())),
    }
}

/// A Lindblad jump operator `√rate · op`.
#[derive(Clone, Debug)]
pub struct JumpOperator {
    pub rate: f64,
    pub op: CsrMatrix,
}

/// Transition lowering operators `σ̂_−^{mj}` from `basis` into `target`,
/// in table order.
fn transition_lowerings(
    basis: &FockBasis,
    target: &FockBasis,
    tables: &CouplingTables,
) -> Result<Vec<CsrMatrix>, FockError> {
    let mut ops = Vec::with_capacity(tables.sites() * tables.levels());
    for j in 0..tables.sites() {
        for m in 0..tables.levels() {
            ops.push(fock::sigma_minus_between(basis, target, m, j)?);
        }
    }
    Ok(ops)
}

/// Diagonalizes the collective decay matrix into independent jump
/// operators mapping `basis` into `target`.
pub fn collective_jumps_between(
    basis: &FockBasis,
    target: &FockBasis,
    tables: &CouplingTables,
) -> Result<Vec<JumpOperator>, SpectraError> {
    let lowers = transition_lowerings(basis, target, tables)?;
    let eig = nalgebra::SymmetricEigen::new(tables.gamma.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut jumps = Vec::new();
    for (mu, &rate) in eig.eigenvalues.iter().enumerate() {
        if rate < -1e-10 * max.max(f64::MIN_POSITIVE) {
            return Err(SpectraError::NotPositiveSemidefinite(rate));
        }
        if rate <= 1e-12 * max {
            continue;
        }
        let u = eig.eigenvectors.column(mu);
        let mut op = CsrMatrix::zeros(target.len(), basis.len());
        for (p, l) in lowers.iter().enumerate() {
            if u[p].norm() > 0.0 {
                op = op.add_scaled(linalg::one(), l, u[p]);
            }
        }
        jumps.push(JumpOperator { rate, op: op.pruned(1e-15) });
    }
    Ok(jumps)
}

/// Collective jump operators acting within `basis`.
pub fn collective_jumps(basis: &FockBasis, tables: &CouplingTables) -> Result<Vec<JumpOperator>, SpectraError> {
    collective_jumps_between(basis, basis, tables)
}

/// Non-Hermitian effective Hamiltonian over ħ (rad/s).
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub basis: Arc<FockBasis>,
    /// Full `H_eff/ħ`.
    pub matrix: CsrMatrix,
    /// Hermitian part `H_sys + Σ J σ̂₊σ̂₋` in the chosen frame.
    pub hermitian: CsrMatrix,
    /// Decay operator `Σ γ σ̂₊σ̂₋`; `H_eff = H − (i/2)·decay`.
    pub decay: CsrMatrix,
    /// Rotating-frame frequency subtracted as `ω_f N̂`.
    pub frame: f64,
    pub regime: CouplingRegime,
    pub capacitive: Vec<Capacitive>,
}

/// Assembles `H_eff = H_sys + Σ (J_{mj,nk} − iγ_{mj,nk}/2) σ̂₊^{nk}σ̂₋^{mj}`
/// plus capacitive hopping.
pub fn build_h_eff(
    basis: Arc<FockBasis>,
    model: &ArrayModel,
    tables: &CouplingTables,
) -> Result<EffectiveHamiltonian, SpectraError> {
    build_h_eff_in_frame(basis, model, tables, 0.0)
}

/// As [`build_h_eff`], in a frame rotating at `frame` (subtracts `frame·N̂`).
pub fn build_h_eff_in_frame(
    basis: Arc<FockBasis>,
    model: &ArrayModel,
    tables: &CouplingTables,
    frame: f64,
) -> Result<EffectiveHamiltonian, SpectraError> {
    model.check_basis(&basis)?;
    if tables.sites() != basis.sites() || tables.levels() + 1 != basis.cap() {
        return Err(SpectraError::Dimension(format!(
            "tables cover {} sites x {} levels, basis has {} sites with cap {}",
            tables.sites(),
            tables.levels(),
            basis.sites(),
            basis.cap()
        )));
    }
    let n = basis.len();
    let diag: Vec<C64> = basis
        .states()
        .iter()
        .map(|s| {
            let e: f64 = (0..s.sites())
                .map(|j| model.layout.emitters[j].model.level_energy(s.occupation(j)))
                .sum();
            C64::new(e - frame * s.total() as f64, 0.0)
        })
        .collect();
    let mut hermitian = CsrMatrix::from_diagonal(&diag);
    let mut decay = CsrMatrix::zeros(n, n);
    if let Some(low) = lowered_basis(&basis)? {
        for c in &model.capacitive {
            let aj = fock::annihilation_between(&basis, &low, c.j)?;
            let ak = fock::annihilation_between(&basis, &low, c.k)?;
            let hop = aj.adjoint().matmul(&ak);
            let hop = hop.add(&hop.adjoint());
            hermitian = hermitian.add_scaled(linalg::one(), &hop, C64::new(c.coupling, 0.0));
        }
        let lowers = transition_lowerings(&basis, &low, tables)?;
        let dim = lowers.len();
        for q in 0..dim {
            let mut kx = CsrMatrix::zeros(low.len(), n);
            let mut kg = CsrMatrix::zeros(low.len(), n);
            for (p, lp) in lowers.iter().enumerate() {
                let x = tables.exchange[(p, q)];
                let g = tables.gamma[(p, q)];
                if x.norm() > 0.0 {
                    kx = kx.add_scaled(linalg::one(), lp, x);
                }
                if g.norm() > 0.0 {
                    kg = kg.add_scaled(linalg::one(), lp, g);
                }
            }
            let raise = lowers[q].adjoint();
            if kx.nnz() > 0 {
                hermitian = hermitian.add(&raise.matmul(&kx));
            }
            if kg.nnz() > 0 {
                decay = decay.add(&raise.matmul(&kg));
            }
        }
    }
    let hermitian = hermitian.pruned(0.0);
    let matrix = hermitian.add_scaled(linalg::one(), &decay, C64::new(0.0, -0.5));
    Ok(EffectiveHamiltonian {
        basis,
        matrix,
        hermitian,
        decay,
        frame,
        regime: tables.regime,
        capacitive: model.capacitive.clone(),
    })
}

impl EffectiveHamiltonian {
    /// Whether the matrix is block diagonal in the total excitation number.
    pub fn conserves_number(&self) -> bool {
        let totals = self.basis.totals();
        self.matrix.iter().all(|(r, c, _)| totals[r] == totals[c])
    }

    pub fn dense(&self) -> DMatrix<C64> {
        self.matrix.to_dense()
    }
}

/// Tolerances for [`diagonalize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    /// Relative distance `|λ_a − λ_b|/|λ|` below which eigenvalues are
    /// treated as degenerate.
    pub degeneracy_tol: f64,
    /// Smallest accepted bilinear norm `|⟨α̃|α⟩|` of unit vectors.
    pub defect_tol: f64,
    /// Diagonalize each excitation manifold separately.
    pub blocked: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { degeneracy_tol: 1e-9, defect_tol: 1e-8, blocked: true }
    }
}

/// Eigenpairs of one diagonal block.
#[derive(Clone, Debug)]
pub struct SpectrumBlock {
    /// Excitation number, or `None` for the unblocked full matrix.
    pub manifold: Option<usize>,
    /// Basis positions spanned by the block.
    pub indices: Vec<usize>,
    pub eigenvalues: Vec<C64>,
    /// Unit right eigenvectors as columns.
    pub right: DMatrix<C64>,
    /// Unit left eigenvectors as columns, `⟨α̃|H = λ_α⟨α̃|`.
    pub left: DMatrix<C64>,
    /// Bilinear norms `⟨α̃|α⟩`, real and positive by phase choice.
    pub bilinear: Vec<C64>,
}

impl SpectrumBlock {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `E_α/ħ = Re λ_α`.
    pub fn energy(&self, a: usize) -> f64 {
        self.eigenvalues[a].re
    }

    /// `Γ_α = −2 Im λ_α`.
    pub fn decay_rate(&self, a: usize) -> f64 {
        -2.0 * self.eigenvalues[a].im
    }
}

/// Biorthogonal eigensystem of an effective Hamiltonian.
#[derive(Clone, Debug)]
pub struct BiorthogonalSpectrum {
    pub basis: Arc<FockBasis>,
    pub blocks: Vec<SpectrumBlock>,
}

impl BiorthogonalSpectrum {
    pub fn block(&self, n: usize) -> Option<&SpectrumBlock> {
        self.blocks.iter().find(|b| b.manifold == Some(n))
    }

    /// All eigenvalues with their manifold labels.
    pub fn eigenvalues(&self) -> Vec<(Option<usize>, C64)> {
        self.blocks
            .iter()
            .flat_map(|b| b.eigenvalues.iter().map(move |&l| (b.manifold, l)))
            .collect()
    }

    /// Right eigenvector `a` of `block` embedded in the full basis.
    pub fn right_full(&self, block: &SpectrumBlock, a: usize) -> Vec<C64> {
        embed(self.basis.len(), &block.indices, block.right.column(a).iter().copied())
    }

    pub fn left_full(&self, block: &SpectrumBlock, a: usize) -> Vec<C64> {
        embed(self.basis.len(), &block.indices, block.left.column(a).iter().copied())
    }
}

fn embed(n: usize, indices: &[usize], values: impl Iterator<Item = C64>) -> Vec<C64> {
    let mut v = vec![linalg::zero(); n];
    for (&i, x) in indices.iter().zip(values) {
        v[i] = x;
    }
    v
}

fn blocks_of(h: &EffectiveHamiltonian, blocked: bool) -> Vec<(Option<usize>, Vec<usize>)> {
    if blocked && h.conserves_number() {
        h.basis.manifold_indices().into_iter().map(|(n, idx)| (Some(n), idx)).collect()
    } else {
        vec![(None, (0..h.basis.len()).collect())]
    }
}

fn block_matrix(h: &EffectiveHamiltonian, idx: &[usize]) -> DMatrix<C64> {
    h.matrix.select(idx, idx).to_dense()
}

fn trace_shift(a: &DMatrix<C64>) -> C64 {
    let n = a.nrows().max(1) as f64;
    a.trace() / n
}

/// Eigenvalues only, per block, sorted by `(Re, Im)`. Safe at exceptional
/// points where eigenvectors coalesce.
pub fn eigenvalues(h: &EffectiveHamiltonian, blocked: bool) -> Result<Vec<(Option<usize>, Vec<C64>)>, SpectraError> {
    let mut out = Vec::new();
    for (n, idx) in blocks_of(h, blocked) {
        let a = block_matrix(h, &idx);
        let s = trace_shift(&a);
        let shifted = &a - DMatrix::<C64>::identity(a.nrows(), a.nrows()) * s;
        let (_, t) = linalg::schur(shifted)?;
        let mut vals: Vec<C64> = (0..t.nrows()).map(|i| t[(i, i)] + s).collect();
        sort_eigenvalues(&mut vals, 1e-12);
        out.push((n, vals));
    }
    Ok(out)
}

/// Sorts by real part, treating real parts within `tol·scale` as equal and
/// then ordering by imaginary part.
fn sort_eigenvalues(vals: &mut [C64], tol: f64) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    sort_order(vals, &mut order, tol);
    let sorted: Vec<C64> = order.iter().map(|&i| vals[i]).collect();
    vals.copy_from_slice(&sorted);
}

fn sort_order(vals: &[C64], order: &mut [usize], tol: f64) {
    let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let q = tol * scale;
    let key = |v: C64| (v.re / q).round();
    order.sort_by(|&a, &b| {
        key(vals[a])
            .partial_cmp(&key(vals[b]))
            .unwrap()
            .then(vals[a].im.partial_cmp(&vals[b].im).unwrap())
    });
}

/// Diagonalizes `H_eff` into a biorthogonal eigensystem.
///
/// Left eigenvectors come from the same Schur factorization as the right
/// ones, so every pair shares its eigenvalue by construction. Degenerate
/// clusters are re-biorthogonalized with [`biorthogonalize_degenerate`].
pub fn diagonalize(h: &EffectiveHamiltonian, opts: &SpectrumOptions) -> Result<BiorthogonalSpectrum, SpectraError> {
    let mut blocks = Vec::new();
    for (n, idx) in blocks_of(h, opts.blocked) {
        blocks.push(diagonalize_block(n, idx, h, opts)?);
    }
    Ok(BiorthogonalSpectrum { basis: h.basis.clone(), blocks })
}

fn diagonalize_block(
    manifold: Option<usize>,
    idx: Vec<usize>,
    h: &EffectiveHamiltonian,
    opts: &SpectrumOptions,
) -> Result<SpectrumBlock, SpectraError> {
    let a = block_matrix(h, &idx);
    let dim = a.nrows();
    let s = trace_shift(&a);
    let shifted = &a - DMatrix::<C64>::identity(dim, dim) * s;
    let (q, t) = linalg::schur(shifted)?;
    let mut right = linalg::matmul(&q, &linalg::triangular_right_eigenvectors(&t));
    let mut left = linalg::matmul(&q, &linalg::triangular_left_eigenvectors(&t));
    let vals: Vec<C64> = (0..dim).map(|i| t[(i, i)] + s).collect();
    for k in 0..dim {
        normalize_column(&mut right, k);
        normalize_column(&mut left, k);
    }

    // cluster degenerate eigenvalues with a union-find over close pairs
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for a_i in 0..dim {
        for b_i in a_i + 1..dim {
            let scale = vals[a_i].norm().max(vals[b_i].norm()).max(f64::MIN_POSITIVE);
            if (vals[a_i] - vals[b_i]).norm() <= opts.degeneracy_tol * scale {
                let ra = find(&mut parent, a_i);
                let rb = find(&mut parent, b_i);
                parent[ra] = rb;
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dim {
        let r = find(&mut parent, i);
        clusters.entry(r).or_default().push(i);
    }
    for members in clusters.values().filter(|m| m.len() > 1) {
        let rc: Vec<Vec<C64>> = members.iter().map(|&i| right.column(i).iter().copied().collect()).collect();
        let lc: Vec<Vec<C64>> = members.iter().map(|&i| left.column(i).iter().copied().collect()).collect();
        let (rn, ln) = biorthogonalize_degenerate(&rc, &lc, opts.defect_tol).map_err(|e| match e {
            SpectraError::Defective { norm, .. } => SpectraError::Defective { lambda: vals[members[0]], norm },
            other => other,
        })?;
        for (slot, &i) in members.iter().enumerate() {
            right.set_column(i, &DVector::from_vec(rn[slot].clone()));
            left.set_column(i, &DVector::from_vec(ln[slot].clone()));
        }
    }

    let mut bilinear = Vec::with_capacity(dim);
    for k in 0..dim {
        let overlap = left.column(k).dotc(&right.column(k));
        if overlap.norm() < opts.defect_tol {
            return Err(SpectraError::Defective { lambda: vals[k], norm: overlap.norm() });
        }
        // phase of the left vector makes ⟨α̃|α⟩ real positive
        let phase = overlap / overlap.norm();
        let mut col = left.column_mut(k);
        col *= phase;
        bilinear.push(C64::new(overlap.norm(), 0.0));
    }

    let mut order: Vec<usize> = (0..dim).collect();
    sort_order(&vals, &mut order, 1e-12);
    let pick = |m: &DMatrix<C64>| DMatrix::from_fn(dim, dim, |r, c| m[(r, order[c])]);
    Ok(SpectrumBlock {
        manifold,
        indices: idx,
        eigenvalues: order.iter().map(|&i| vals[i]).collect(),
        right: pick(&right),
        left: pick(&left),
        bilinear: order.iter().map(|&i| bilinear[i]).collect(),
    })
}

fn normalize_column(m: &mut DMatrix<C64>, k: usize) {
    let n = m.column(k).norm();
    if n > 0.0 {
        let mut col = m.column_mut(k);
        col /= C64::new(n, 0.0);
    }
}

fn orthonormalize(vs: &[Vec<C64>], tol: f64) -> Result<Vec<Vec<C64>>, SpectraError> {
    let mut out: Vec<Vec<C64>> = Vec::with_capacity(vs.len());
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let c = dotc(u, &w);
                linalg::axpy(-c, u, &mut w);
            }
        }
        let n = linalg::norm2(&w);
        let scale = linalg::norm2(v).max(f64::MIN_POSITIVE);
        if n <= tol * scale {
            return Err(SpectraError::Defective { lambda: linalg::zero(), norm: n / scale });
        }
        out.push(w.iter().map(|x| x / n).collect());
    }
    Ok(out)
}

/// Biorthogonalizes a degenerate cluster of right vectors `|α_k⟩` and left
/// vectors `|α̃_k⟩` by the two-sided Gram–Schmidt recursion
///
/// `φ^k = α_k − Σ_{j<k} (⟨φ̃^j|α_k⟩/⟨φ̃^j|φ^j⟩) φ^j`,
/// `φ̃^k = α̃_k − Σ_{j<k} (⟨φ^j|α̃_k⟩/⟨φ^j|φ̃^j⟩) φ̃^j`,
///
/// choosing at each step the remaining right/left pair with the largest
/// overlap as pivot. Outputs are unit vectors with `⟨φ̃^j|φ^k⟩ = 0` for
/// `j ≠ k`.
pub fn biorthogonalize_degenerate(
    right: &[Vec<C64>],
    left: &[Vec<C64>],
    tol: f64,
) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>), SpectraError> {
    if right.len() != left.len() {
        return Err(SpectraError::Dimension(format!(
            "cluster has {} right and {} left vectors",
            right.len(),
            left.len()
        )));
    }
    let mut r = orthonormalize(right, tol)?;
    let mut l = orthonormalize(left, tol)?;
    let k = r.len();
    let mut out_r = Vec::with_capacity(k);
    let mut out_l = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = (0, 0, -1.0f64);
        for (i, ri) in r.iter().enumerate() {
            for (j, lj) in l.iter().enumerate() {
                let o = dotc(lj, ri).norm() / (linalg::norm2(ri) * linalg::norm2(lj)).max(f64::MIN_POSITIVE);
                if o > best.2 {
                    best = (i, j, o);
                }
            }
        }
        let (bi, bj, overlap) = best;
        if overlap < tol {
            return Err(SpectraError::Defective { lambda: linalg::zero(), norm: overlap });
        }
        let phi = r.swap_remove(bi);
        let phit = l.swap_remove(bj);
        let pivot = dotc(&phit, &phi);
        for v in r.iter_mut() {
            let c = dotc(&phit, v) / pivot;
            linalg::axpy(-c, &phi, v);
        }
        for v in l.iter_mut() {
            let c = dotc(&phi, v) / pivot.conj();
            linalg::axpy(-c, &phit, v);
        }
        let nr = linalg::norm2(&phi);
        let nl = linalg::norm2(&phit);
        out_r.push(phi.iter().map(|x| x / nr).collect());
        out_l.push(phit.iter().map(|x| x / nl).collect());
    }
    Ok((out_r, out_l))
}

/// Pair-exchange parity of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Antisymmetric,
    None,
}

impl Symmetry {
    pub fn as_str(&self) -> &'static str {
        match self {
            Symmetry::Symmetric => "symmetric",
            Symmetry::Antisymmetric => "antisymmetric",
            Symmetry::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Brightness {
    Dark,
    Weak,
    Faint,
    Bright,
}

impl Brightness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Brightness::Dark => "dark",
            Brightness::Weak => "weak",
            Brightness::Faint => "faint",
            Brightness::Bright => "bright",
        }
    }
}

/// Decay-rate bands in units of a reference rate γ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrightnessBands {
    /// `Γ < dark·γ` is dark.
    pub dark: f64,
    /// `Γ < weak·γ` is weak.
    pub weak: f64,
    /// `Γ ≤ bright·γ` is faint, above is bright.
    pub bright: f64,
}

impl Default for BrightnessBands {
    fn default() -> Self {
        Self { dark: 0.05, weak: 0.5, bright: 2.0 }
    }
}

impl BrightnessBands {
    pub fn label(&self, gamma_rate: f64, gamma: f64) -> Brightness {
        let x = gamma_rate / gamma;
        if x < self.dark {
            Brightness::Dark
        } else if x < self.weak {
            Brightness::Weak
        } else if x <= self.bright {
            Brightness::Faint
        } else {
            Brightness::Bright
        }
    }
}

/// Symmetry of `v` under the permutation `p`, within `tol` relative to `‖v‖`.
pub fn symmetry_of(p: &CsrMatrix, v: &[C64], tol: f64) -> Symmetry {
    let pv = p.matvec(v);
    let n = linalg::norm2(v).max(f64::MIN_POSITIVE);
    let plus: f64 = pv.iter().zip(v).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let minus: f64 = pv.iter().zip(v).map(|(a, b)| (a + b).norm_sqr()).sum::<f64>().sqrt();
    if plus <= tol * n {
        Symmetry::Symmetric
    } else if minus <= tol * n {
        Symmetry::Antisymmetric
    } else {
        Symmetry::None
    }
}

/// Labels of one eigenstate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateLabel {
    pub manifold: Option<usize>,
    pub index: usize,
    pub symmetry: Symmetry,
    pub brightness: Brightness,
}

/// Labels every eigenstate by pair-exchange symmetry (when `exchange` is
/// given) and by decay-rate band relative to `gamma`.
pub fn classify(
    spectrum: &BiorthogonalSpectrum,
    exchange: Option<&CsrMatrix>,
    gamma: f64,
    bands: &BrightnessBands,
) -> Vec<StateLabel> {
    let mut out = Vec::new();
    for b in &spectrum.blocks {
        for a in 0..b.len() {
            let symmetry = match exchange {
                Some(p) => symmetry_of(p, &spectrum.right_full(b, a), 1e-6),
                None => Symmetry::None,
            };
            out.push(StateLabel {
                manifold: b.manifold,
                index: a,
                symmetry,
                brightness: bands.label(b.decay_rate(a), gamma),
            });
        }
    }
    out
}

/// Rate of one decay channel `α → β` through jump operator `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayChannel {
    pub from_manifold: usize,
    pub from: usize,
    pub to_manifold: usize,
    pub to: usize,
    pub jump: usize,
    /// `Γ^k_{α→β}` (rad/s).
    pub rate: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DecayChannelTable {
    pub channels: Vec<DecayChannel>,
}

impl DecayChannelTable {
    /// `Σ_{β,k} Γ^k_{α→β}` for state `from` of manifold `n`.
    pub fn total_from(&self, n: usize, from: usize) -> f64 {
        self.channels
            .iter()
            .filter(|c| c.from_manifold == n && c.from == from)
            .map(|c| c.rate)
            .sum()
    }

    /// Rate summed over jump operators from `(n, from)` into `(n−1, to)`.
    pub fn rate(&self, n: usize, from: usize, to: usize) -> f64 {
        self.channels
            .iter()
            .filter(|c| c.from_manifold == n && c.from == from && c.to == to)
            .map(|c| c.rate)
            .sum()
    }
}

/// Decay rates `Γ^k_{α→β} = γ_k⟨α|b̂_k†|β⟩⟨β̃|b̂_k|α⟩ / (⟨α|α⟩⟨β̃|β⟩)` for
/// every state of the manifolds in `spectrum` that have a lower neighbor.
pub fn decay_channels(spectrum: &BiorthogonalSpectrum, jumps: &[JumpOperator]) -> Result<DecayChannelTable, SpectraError> {
    let mut table = DecayChannelTable::default();
    for upper in &spectrum.blocks {
        let Some(n) = upper.manifold else {
            return Err(SpectraError::Model("decay channels need a manifold-blocked spectrum".into()));
        };
        if n == 0 {
            continue;
        }
        let lower = spectrum.block(n - 1).ok_or(SpectraError::MissingManifold(n - 1))?;
        for (k, jump) in jumps.iter().enumerate() {
            let b = jump.op.select(&lower.indices, &upper.indices).to_dense();
            let b_right = &b * &upper.right;
            for a in 0..upper.len() {
                let ra = upper.right.column(a);
                let na = ra.dotc(&ra).re;
                let bra = b_right.column(a);
                for bt in 0..lower.len() {
                    let rb = lower.right.column(bt);
                    let lb = lower.left.column(bt);
                    let up = rb.dotc(&bra).conj();
                    let down = lb.dotc(&bra);
                    let value = jump.rate * up * down / (na * lower.bilinear[bt]);
                    table.channels.push(DecayChannel {
                        from_manifold: n,
                        from: a,
                        to_manifold: n - 1,
                        to: bt,
                        jump: k,
                        rate: value.re,
                    });
                }
            }
        }
    }
    Ok(table)
}

/// Writes the spectrum as CSV with columns
/// `manifold_N, index, E_over_hbar_rad_s, Gamma_rad_s, symmetry, brightness`.
pub fn write_spectrum_csv<W: Write>(
    out: W,
    spectrum: &BiorthogonalSpectrum,
    labels: &[StateLabel],
) -> Result<(), SpectraError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["manifold_N", "index", "E_over_hbar_rad_s", "Gamma_rad_s", "symmetry", "brightness"])?;
    let mut li = labels.iter();
    for b in &spectrum.blocks {
        for a in 0..b.len() {
            let label = li.next();
            w.write_record([
                b.manifold.map_or_else(|| "all".to_string(), |n| n.to_string()),
                a.to_string(),
                format!("{:.17e}", b.energy(a)),
                format!("{:.17e}", b.decay_rate(a)),
                label.map_or("none", |l| l.symmetry.as_str()).to_string(),
                label.map_or("", |l| l.brightness.as_str()).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `λ_{3,4} = (ω_1+ω_2)/2 + J − iγ ± ½√((ω_1−ω_2)² − 4γ²)` for the two
/// collective one-excitation states of two detuned pairs.
pub fn two_pair_oracle(omega1: f64, omega2: f64, j: f64, gamma: f64) -> [C64; 2] {
    let center = C64::new(0.5 * (omega1 + omega2) + j, -gamma);
    let d = omega1 - omega2;
    let root = C64::new(d * d - 4.0 * gamma * gamma, 0.0).sqrt() * 0.5;
    [center + root, center - root]
}

/// Energy over ħ and decay rate of the Dicke state `|s, m_z⟩` of `L`
/// in-phase qubits: `E = ω0(m_z+L)/2`, `Γ = γ(s+m_z)(s−m_z+2)/4`.
pub fn qubit_dicke_oracle(l: usize, s: i64, mz: i64, omega0: f64, gamma: f64) -> Result<(f64, f64), SpectraError> {
    let li = l as i64;
    if s < 0 || s > li || (li - s) % 2 != 0 || mz.abs() > s || (s - mz) % 2 != 0 {
        return Err(SpectraError::InvalidDicke { l, s, mz });
    }
    let e = omega0 * (mz + li) as f64 / 2.0;
    let g = gamma * ((s + mz) * (s - mz + 2)) as f64 / 4.0;
    Ok((e, g))
}

fn binomial(n: i64, k: i64) -> u64 {
    if k < 0 || k > n {
        return 0;
    }
    (1..=k).fold(1u64, |acc, i| acc * (n - k + i) as u64 / i as u64)
}

/// Full spectrum of `L` in-phase qubits as `(N, E, Γ, multiplicity)`.
pub fn qubit_dicke_multiset(l: usize, omega0: f64, gamma: f64) -> Vec<(usize, f64, f64, u64)> {
    let li = l as i64;
    let mut out = Vec::new();
    let mut s = li;
    while s >= 0 {
        let q = (li - s) / 2;
        let mult = binomial(li, q) - binomial(li, q - 1);
        let mut mz = -s;
        while mz <= s {
            let (e, g) = qubit_dicke_oracle(l, s, mz, omega0, gamma).expect("labels are valid by construction");
            out.push((((mz + li) / 2) as usize, e, g, mult));
            mz += 2;
        }
        s -= 2;
    }
    out
}

/// Eigenvalues of `L` in-phase harmonic sites in manifold `N` as
/// `(λ, multiplicity)` with `λ = ω0N − i mLγ/2` and multiplicity
/// `D_{N−m, L−1}`.
pub fn harmonic_oracle(l: usize, n: usize, omega0: f64, gamma: f64) -> Vec<(C64, u128)> {
    (0..=n)
        .map(|m| {
            let lam = C64::new(omega0 * n as f64, -((m * l) as f64) * gamma / 2.0);
            (lam, fock::manifold_dimension(n - m, l - 1))
        })
        .filter(|&(_, mult)| mult > 0)
        .collect()
}
