//! Vectorized master equations: Liouvillian assembly, steady states,
//! Krylov propagation and Magnus stepping for time-dependent drives.
//!
//! Density operators are stacked column by column, so `vec(AρB) =
//! (Bᵀ ⊗ A) vec(ρ)` and entry `ρ_ij` sits at position `i + n·j`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingTables;
use crate::fock::{self, FockBasis};
use crate::linalg::{self, dotc, norm2, CommutatorSylvester, LinalgError};
use crate::sparse::CsrMatrix;
use crate::spectra::{self, EffectiveHamiltonian, JumpOperator, SpectraError};
use crate::C64;

#[derive(Debug, thiserror::Error)]
pub enum LiouvilleError {
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fock(#[from] fock::FockError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("steady state is not unique (null space dimension at least {dimension})")]
    NullSpace { dimension: usize },
    #[error("steady-state solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("Krylov propagation needed more than {0} substeps")]
    TooManySubsteps(usize),
    #[error("trace drifted by {drift:.3e} in one step (tolerance {tol:.1e})")]
    TraceDrift { drift: f64, tol: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Column-stacked density operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityVector {
    pub dim: usize,
    pub data: Vec<C64>,
}

impl DensityVector {
    pub fn from_data(dim: usize, data: Vec<C64>) -> Result<Self, LiouvilleError> {
        if data.len() != dim * dim {
            return Err(LiouvilleError::Dimension(format!("{} entries for dimension {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &[C64]) -> Self {
        let n = psi.len();
        let mut data = vec![linalg::zero(); n * n];
        for j in 0..n {
            for i in 0..n {
                data[i + n * j] = psi[i] * psi[j].conj();
            }
        }
        Self { dim: n, data }
    }

    /// Basis projector `|k⟩⟨k|`.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        let mut data = vec![linalg::zero(); dim * dim];
        data[k + dim * k] = linalg::one();
        Self { dim, data }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * (self.dim + 1)]).sum()
    }

    /// `tr(Oρ)`.
    pub fn expectation(&self, op: &CsrMatrix) -> C64 {
        let n = self.dim;
        op.iter().map(|(i, j, v)| v * self.data[j + n * i]).sum()
    }

    pub fn element(&self, i: usize, j: usize) -> C64 {
        self.data[i + self.dim * j]
    }

    /// Largest `|ρ_ij − ρ_ji*|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.data[i + n * j] - self.data[j + n * i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = devectorize(self);
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn vectorize(rho: &DMatrix<C64>) -> DensityVector {
    assert!(rho.is_square(), "density operator must be square");
    DensityVector { dim: rho.nrows(), data: rho.as_slice().to_vec() }
}

pub fn devectorize(r: &DensityVector) -> DMatrix<C64> {
    DMatrix::from_column_slice(r.dim, r.dim, &r.data)
}

/// `vec(ρ) ↦ vec(Aρ)`.
pub fn left_superop(a: &CsrMatrix) -> CsrMatrix {
    CsrMatrix::identity(a.ncols()).kron(a)
}

/// `vec(ρ) ↦ vec(ρB)`.
pub fn right_superop(b: &CsrMatrix) -> CsrMatrix {
    b.transpose().kron(&CsrMatrix::identity(b.nrows()))
}

/// `vec(ρ) ↦ vec(−i[V, ρ])` for Hermitian `V`.
pub fn commutator_superop(v: &CsrMatrix) -> CsrMatrix {
    let i = C64::new(0.0, 1.0);
    left_superop(v).add_scaled(-i, &right_superop(v), i)
}

/// `vec(ρ) ↦ vec(CρC† − ½{C†C, ρ})`.
pub fn dissipator_superop(c: &CsrMatrix) -> CsrMatrix {
    let cdc = c.adjoint().matmul(c);
    let half = C64::new(-0.5, 0.0);
    c.conj()
        .kron(c)
        .add(&left_superop(&cdc).scale(half))
        .add(&right_superop(&cdc).scale(half))
}

/// Constant Liouvillian superoperator.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    /// Hilbert-space dimension `n`; the superoperator is `n² × n²`.
    pub dim: usize,
    pub matrix: CsrMatrix,
    /// `K = H − (i/2)Σ C†C`, the no-jump generator.
    pub effective: CsrMatrix,
    /// Jump operators scaled by the square roots of their rates.
    pub jumps: Vec<CsrMatrix>,
}

impl Liouvillian {
    /// `L = −i(K ⊗-commutator) + Σ C̄ ⊗ C` from a Hermitian Hamiltonian
    /// and jump operators.
    pub fn from_parts(hamiltonian: &CsrMatrix, jumps: &[JumpOperator]) -> Result<Self, LiouvilleError> {
        let n = hamiltonian.nrows();
        if !hamiltonian.is_square() {
            return Err(LiouvilleError::Dimension("Hamiltonian must be square".into()));
        }
        let mut scaled = Vec::with_capacity(jumps.len());
        let mut decay = CsrMatrix::zeros(n, n);
        for j in jumps {
            if j.op.nrows() != n || j.op.ncols() != n {
                return Err(LiouvilleError::Dimension("jump operator shape differs from Hamiltonian".into()));
            }
            let c = j.op.scale(C64::new(j.rate.sqrt(), 0.0));
            decay = decay.add(&c.adjoint().matmul(&c));
            scaled.push(c);
        }
        let effective = hamiltonian.add_scaled(linalg::one(), &decay, C64::new(0.0, -0.5));
        let i = C64::new(0.0, 1.0);
        let mut matrix = left_superop(&effective).scale(-i).add(&right_superop(&effective.adjoint()).scale(i));
        for c in &scaled {
            matrix = matrix.add(&c.conj().kron(c));
        }
        Ok(Self { dim: n, matrix: matrix.pruned(0.0), effective, jumps: scaled })
    }

    pub fn apply(&self, r: &[C64]) -> Vec<C64> {
        self.matrix.matvec(r)
    }

    /// Largest column sum of `vec(I)† L`; zero for a trace-preserving map.
    pub fn trace_defect(&self) -> f64 {
        let n = self.dim;
        let mut sums = vec![linalg::zero(); n * n];
        for (r, c, v) in self.matrix.iter() {
            if r % (n + 1) == 0 {
                sums[c] += v;
            }
        }
        sums.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.matrix.norm_inf()
    }

    /// Superoperator restricted to the given vectorized indices.
    pub fn restrict(&self, indices: &[usize]) -> CsrMatrix {
        self.matrix.select(indices, indices)
    }
}

/// Liouvillian of the master equation with collective waveguide decay,
/// bulk loss `κ` on every site and an optional extra Hermitian term such as
/// a rotating-frame drive.
pub fn build_liouvillian(
    h: &EffectiveHamiltonian,
    tables: &CouplingTables,
    kappa: f64,
    extra: Option<&CsrMatrix>,
) -> Result<Liouvillian, LiouvilleError> {
    let basis = &h.basis;
    let mut jumps = spectra::collective_jumps(basis, tables)?;
    jumps.extend(bulk_jumps(basis, kappa)?);
    let hamiltonian = match extra {
        Some(v) => h.hermitian.add(v),
        None => h.hermitian.clone(),
    };
    Liouvillian::from_parts(&hamiltonian, &jumps)
}

/// `√κ â_j` for every site.
pub fn bulk_jumps(basis: &FockBasis, kappa: f64) -> Result<Vec<JumpOperator>, LiouvilleError> {
    if kappa <= 0.0 {
        return Ok(Vec::new());
    }
    (0..basis.sites())
        .map(|j| Ok(JumpOperator { rate: kappa, op: fock::annihilation(basis, j)? }))
        .collect()
}

/// Vectorized positions `i + n·j` of entries `ρ_ij` with
/// `N_i − N_j = q`. Number-conserving Liouvillians leave these sectors
/// invariant.
pub fn coherence_sector(basis: &FockBasis, q: i64) -> Vec<usize> {
    let totals = basis.totals();
    let n = basis.len();
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if totals[i] as i64 - totals[j] as i64 == q {
                out.push(i + n * j);
            }
        }
    }
    out
}

/// Coefficient function of a time-dependent term.
pub type Coefficient = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// `f(t)·G` with a fixed superoperator `G`.
#[derive(Clone)]
pub struct DriveTerm {
    pub label: String,
    pub generator: CsrMatrix,
    pub coefficient: Coefficient,
}

impl std::fmt::Debug for DriveTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriveTerm").field("label", &self.label).field("nnz", &self.generator.nnz()).finish()
    }
}

/// `L(t) = L_0 + Σ_k f_k(t) G_k`.
#[derive(Clone, Debug)]
pub struct TimeDependentLiouvillian {
    pub constant: Liouvillian,
    pub terms: Vec<DriveTerm>,
}

impl TimeDependentLiouvillian {
    pub fn new(constant: Liouvillian) -> Self {
        Self { constant, terms: Vec::new() }
    }

    /// Adds `f(t)·(−i[V, ρ])` for a Hermitian operator `V`.
    pub fn with_hamiltonian_term(mut self, label: &str, v: &CsrMatrix, f: Coefficient) -> Self {
        self.terms.push(DriveTerm { label: label.to_string(), generator: commutator_superop(v), coefficient: f });
        self
    }

    pub fn dim(&self) -> usize {
        self.constant.dim
    }

    /// Instantaneous superoperator with coefficients `f_k` already evaluated.
    pub fn combine(&self, coefficients: &[C64]) -> CsrMatrix {
        let mut m = self.constant.matrix.clone();
        for (term, &f) in self.terms.iter().zip(coefficients) {
            if f.norm() > 0.0 {
                m = m.add_scaled(linalg::one(), &term.generator, f);
            }
        }
        m
    }

    pub fn at(&self, t: f64) -> CsrMatrix {
        let f: Vec<C64> = self.terms.iter().map(|k| (k.coefficient)(t)).collect();
        self.combine(&f)
    }
}

/// Solver settings for time propagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    /// Krylov subspace dimension.
    pub krylov_dim: usize,
    /// Magnus step for time-dependent generators (s).
    pub dt: f64,
    /// Per-step Krylov error tolerance relative to the vector norm.
    pub tol: f64,
    /// Largest accepted per-step trace change relative to the state norm.
    pub trace_tol: f64,
    /// Cap on adaptive Krylov substeps per call.
    pub max_substeps: usize,
    pub quadrature: Quadrature,
    /// Include the second-order commutator term (Gauss–Legendre only).
    pub second_order: bool,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            krylov_dim: 30,
            dt: 1e-9,
            tol: 1e-12,
            trace_tol: 1e-8,
            max_substeps: 100_000,
            quadrature: Quadrature::Midpoint,
            second_order: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Midpoint,
    GaussLegendre2,
}

/// Result of [`expv`].
#[derive(Clone, Debug)]
pub struct ExpvOutcome {
    pub w: Vec<C64>,
    /// Accumulated a-posteriori error estimate.
    pub error: f64,
    pub substeps: usize,
}

/// `w = exp(tA) v` by Arnoldi projection with adaptive substeps.
///
/// `apply` writes `A x` into its second argument and `anorm` estimates
/// `‖A‖`. `tol` bounds the local error relative to `‖v‖`.
pub fn expv<F>(apply: F, anorm: f64, t: f64, v: &[C64], m: usize, tol: f64, max_substeps: usize) -> Result<ExpvOutcome, LiouvilleError>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = v.len();
    let beta0 = norm2(v);
    if n == 0 || beta0 == 0.0 || t == 0.0 || anorm == 0.0 {
        return Ok(ExpvOutcome { w: v.to_vec(), error: 0.0, substeps: 0 });
    }
    let m = m.clamp(1, n);
    let abs_tol = tol * beta0;
    let btol = 1e-14 * anorm;
    let gamma = 0.9;
    let delta = 1.2;
    let sgn = t.signum();
    let t_out = t.abs();
    let rndoff = anorm * f64::EPSILON;
    let round_step = |x: f64| {
        let s = 10f64.powf(x.log10().floor() - 1.0);
        (x / s).ceil() * s
    };
    let mf = m as f64;
    let fact = ((mf + 1.0) / std::f64::consts::E).powf(mf + 1.0) * (2.0 * std::f64::consts::PI * (mf + 1.0)).sqrt();
    let mut t_new = (1.0 / anorm) * ((fact * abs_tol) / (4.0 * beta0 * anorm)).powf(1.0 / mf);
    t_new = round_step(t_new);
    let mut t_now = 0.0;
    let mut w = v.to_vec();
    let mut beta = beta0;
    let mut s_error = 0.0;
    let mut substeps = 0usize;
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let mut p = vec![linalg::zero(); n];
    while t_now < t_out {
        substeps += 1;
        if substeps > max_substeps {
            return Err(LiouvilleError::TooManySubsteps(max_substeps));
        }
        let mut t_step = (t_out - t_now).min(t_new);
        basis.clear();
        basis.push(w.iter().map(|x| x / beta).collect());
        let mut h = DMatrix::<C64>::zeros(m + 2, m + 2);
        let mut k1 = 2usize;
        let mut mb = m;
        for j in 0..m {
            apply(&basis[j], &mut p);
            for _ in 0..2 {
                for (i, vi) in basis.iter().enumerate() {
                    let c = dotc(vi, &p);
                    h[(i, j)] += c;
                    linalg::axpy(-c, vi, &mut p);
                }
            }
            let s = norm2(&p);
            if s < btol {
                k1 = 0;
                mb = j + 1;
                t_step = t_out - t_now;
                break;
            }
            h[(j + 1, j)] = C64::new(s, 0.0);
            basis.push(p.iter().map(|x| x / s).collect());
        }
        let mut avnorm = 0.0;
        if k1 != 0 {
            h[(m + 1, m)] = linalg::one();
            apply(&basis[m], &mut p);
            avnorm = norm2(&p);
        }
        let mut xm = 1.0 / mf;
        let mut err_loc;
        let mut f;
        let mut rejects = 0;
        loop {
            let mx = mb + k1;
            let sub = h.view((0, 0), (mx, mx)).into_owned() * C64::new(sgn * t_step, 0.0);
            f = linalg::expm(&sub);
            if k1 == 0 {
                err_loc = 0.0;
                break;
            }
            let phi1 = (beta * f[(m, 0)]).norm();
            let phi2 = (beta * f[(m + 1, 0)] * avnorm).norm();
            if phi1 > 10.0 * phi2 {
                err_loc = phi2;
                xm = 1.0 / mf;
            } else if phi1 > phi2 {
                err_loc = phi1 * phi2 / (phi1 - phi2);
                xm = 1.0 / mf;
            } else {
                err_loc = phi1;
                xm = 1.0 / (mf - 1.0).max(1.0);
            }
            if err_loc <= delta * t_step * abs_tol || rejects > 50 {
                break;
            }
            t_step = round_step(gamma * t_step * (t_step * abs_tol / err_loc).powf(xm));
            rejects += 1;
        }
        let mx = mb + k1.saturating_sub(1).min(1);
        let mx = mx.min(basis.len());
        let mut next = vec![linalg::zero(); n];
        for (i, vi) in basis.iter().take(mx).enumerate() {
            linalg::axpy(f[(i, 0)] * beta, vi, &mut next);
        }
        w = next;
        beta = norm2(&w);
        t_now += t_step;
        if err_loc > 0.0 {
            t_new = round_step(gamma * t_step * (t_step * abs_tol / err_loc).powf(xm));
        } else {
            t_new = t_out;
        }
        s_error += err_loc.max(rndoff);
        if beta == 0.0 {
            break;
        }
    }
    Ok(ExpvOutcome { w, error: s_error, substeps })
}

/// `exp(Δt·L) r` for a constant superoperator.
pub fn krylov_step(l: &CsrMatrix, r: &[C64], dt: f64, cfg: &PropagatorConfig) -> Result<Vec<C64>, LiouvilleError> {
    let out = expv(|x, y| l.matvec_into(x, y), l.norm_inf(), dt, r, cfg.krylov_dim, cfg.tol, cfg.max_substeps)?;
    Ok(out.w)
}

fn vec_trace(r: &[C64], n: usize) -> C64 {
    (0..n).map(|i| r[i * (n + 1)]).sum()
}

/// One Magnus step `r' = exp(Δt·B) r` over `[t, t+Δt]`, where `B` is the
/// quadrature average of `L(t)` and, optionally, the second-order
/// commutator correction.
pub fn magnus_step(
    l: &TimeDependentLiouvillian,
    r: &[C64],
    t: f64,
    dt: f64,
    cfg: &PropagatorConfig,
) -> Result<Vec<C64>, LiouvilleError> {
    let n = l.dim();
    let out = if l.terms.is_empty() {
        krylov_step(&l.constant.matrix, r, dt, cfg)?
    } else {
        match cfg.quadrature {
            Quadrature::Midpoint => krylov_step(&l.at(t + 0.5 * dt), r, dt, cfg)?,
            Quadrature::GaussLegendre2 => {
                let c = 3f64.sqrt() / 6.0;
                let a1 = l.at(t + (0.5 - c) * dt);
                let a2 = l.at(t + (0.5 + c) * dt);
                let mean = a1.add(&a2).scale(C64::new(0.5, 0.0));
                if cfg.second_order {
                    let k = C64::new(3f64.sqrt() / 12.0 * dt, 0.0);
                    let anorm = mean.norm_inf() + k.re * 2.0 * a1.norm_inf() * a2.norm_inf();
                    let apply = |x: &[C64], y: &mut [C64]| {
                        let mut u = vec![linalg::zero(); x.len()];
                        let mut v = vec![linalg::zero(); x.len()];
                        mean.matvec_into(x, y);
                        a1.matvec_into(x, &mut u);
                        a2.matvec_into(&u, &mut v);
                        a2.matvec_into(x, &mut u);
                        let mut w = vec![linalg::zero(); x.len()];
                        a1.matvec_into(&u, &mut w);
                        for i in 0..y.len() {
                            y[i] += k * (v[i] - w[i]);
                        }
                    };
                    expv(apply, anorm, dt, r, cfg.krylov_dim, cfg.tol, cfg.max_substeps)?.w
                } else {
                    krylov_step(&mean, r, dt, cfg)?
                }
            }
        }
    };
    let before = vec_trace(r, n);
    let after = vec_trace(&out, n);
    let scale = before.norm().max(norm2(r));
    let drift = (after - before).norm();
    if drift > cfg.trace_tol * scale {
        return Err(LiouvilleError::TraceDrift { drift: drift / scale, tol: cfg.trace_tol });
    }
    Ok(out)
}

/// Named observable for [`evolve`].
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: CsrMatrix,
}

/// Sampled expectation values.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[k][i]` is observable `k` at `times[i]`.
    pub values: Vec<Vec<C64>>,
    /// `|tr ρ(t) − tr ρ(0)|` at each sample.
    pub trace_drift: Vec<f64>,
    /// Largest Hermiticity defect seen at any sample.
    pub max_hermiticity_defect: f64,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[C64]> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k].as_slice())
    }

    /// Writes `t_s, observable_name, value_re, value_im, trace_drift`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LiouvilleError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "observable_name", "value_re", "value_im", "trace_drift"])?;
        for (i, t) in self.times.iter().enumerate() {
            for (k, name) in self.names.iter().enumerate() {
                let v = self.values[k][i];
                w.write_record([
                    format!("{t:.9e}"),
                    name.clone(),
                    format!("{:.12e}", v.re),
                    format!("{:.12e}", v.im),
                    format!("{:.3e}", self.trace_drift[i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Propagates `r0` over `t_grid` and samples `tr(Oρ(t))`. Constant
/// generators jump between samples with adaptive Krylov steps;
/// time-dependent ones take Magnus steps no longer than `cfg.dt`.
pub fn evolve(
    l: &TimeDependentLiouvillian,
    r0: &DensityVector,
    t_grid: &[f64],
    observables: &[Observable],
    cfg: &PropagatorConfig,
) -> Result<(Trajectory, DensityVector), LiouvilleError> {
    let n = l.dim();
    if r0.dim != n {
        return Err(LiouvilleError::Dimension(format!("state dimension {} vs Liouvillian {n}", r0.dim)));
    }
    let mut traj = Trajectory {
        times: Vec::with_capacity(t_grid.len()),
        names: observables.iter().map(|o| o.name.clone()).collect(),
        values: vec![Vec::with_capacity(t_grid.len()); observables.len()],
        trace_drift: Vec::with_capacity(t_grid.len()),
        max_hermiticity_defect: 0.0,
    };
    let tr0 = r0.trace();
    let mut state = r0.clone();
    let mut t_prev = t_grid.first().copied().unwrap_or(0.0);
    for &t in t_grid {
        let span = t - t_prev;
        if span > 0.0 {
            if l.terms.is_empty() {
                state.data = krylov_step(&l.constant.matrix, &state.data, span, cfg)?;
            } else {
                let steps = (span / cfg.dt).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                for s in 0..steps {
                    state.data = magnus_step(l, &state.data, t_prev + s as f64 * h, h, cfg)?;
                }
            }
        }
        t_prev = t;
        traj.times.push(t);
        for (k, o) in observables.iter().enumerate() {
            traj.values[k].push(state.expectation(&o.op));
        }
        traj.trace_drift.push((state.trace() - tr0).norm());
        traj.max_hermiticity_defect = traj.max_hermiticity_defect.max(state.hermiticity_defect());
    }
    Ok((traj, state))
}

/// Steady-state solver choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStateMethod {
    /// Dense LU below `dense_limit`, preconditioned GMRES above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateOptions {
    pub method: SteadyStateMethod,
    /// Largest superoperator dimension solved densely under `Auto`.
    pub dense_limit: usize,
    /// Relative GMRES residual target.
    pub tol: f64,
    /// Largest stalled residual still returned, with a warning.
    pub accept_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { method: SteadyStateMethod::Auto, dense_limit: 1600, tol: 1e-9, accept_tol: 1e-6, restart: 60, max_iter: 600 }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityVector,
    /// `‖L r‖ / (‖L‖ ‖r‖)`.
    pub residual: f64,
    pub iterations: usize,
    /// Magnitude of the anti-Hermitian part removed by symmetrization.
    pub symmetrized: f64,
}

/// Solves `L r = 0` with `tr ρ = 1`.
///
/// The dense route replaces the first equation by the trace condition. The
/// iterative route solves `(L + x t†) r = x` with `t = vec(I)` and
/// `x = vec(|0⟩⟨0|)` by GMRES, right-preconditioned with the no-jump part
/// `S(ρ) = −i(Kρ − ρK†) + x tr(ρ)` inverted through a Sylvester solver.
pub fn steady_state(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState, LiouvilleError> {
    let n = l.dim;
    let nn = n * n;
    let dense = match opts.method {
        SteadyStateMethod::Dense => true,
        SteadyStateMethod::Iterative => false,
        SteadyStateMethod::Auto => nn <= opts.dense_limit,
    };
    let (raw, iterations) = if dense { dense_steady(l)? } else { iterative_steady(l, opts)? };
    let mut rho = DensityVector { dim: n, data: raw };
    let tr = rho.trace();
    if tr.norm() < f64::EPSILON {
        return Err(LiouvilleError::NullSpace { dimension: 2 });
    }
    rho.data.iter_mut().for_each(|x| *x /= tr);
    let m = devectorize(&rho);
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let symmetrized = (&m - &herm).norm();
    if symmetrized > 1e-10 {
        log::debug!("steady state symmetrized, anti-Hermitian part {symmetrized:.3e}");
    }
    rho = vectorize(&herm);
    let lr = l.apply(&rho.data);
    let residual = norm2(&lr) / (l.norm() * norm2(&rho.data)).max(f64::MIN_POSITIVE);
    Ok(SteadyState { rho, residual, iterations, symmetrized })
}

fn dense_steady(l: &Liouvillian) -> Result<(Vec<C64>, usize), LiouvilleError> {
    let n = l.dim;
    let nn = n * n;
    let mut a = l.matrix.to_dense();
    for c in 0..nn {
        a[(0, c)] = linalg::zero();
    }
    for i in 0..n {
        a[(0, i * (n + 1))] = linalg::one();
    }
    let mut b = nalgebra::DVector::<C64>::zeros(nn);
    b[0] = linalg::one();
    let lu = a.lu();
    let u = lu.u();
    let umax = u.diagonal().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tiny = u.diagonal().iter().filter(|v| v.norm() <= 1e-12 * umax).count();
    if tiny > 0 {
        return Err(LiouvilleError::NullSpace { dimension: tiny + 1 });
    }
    let x = lu.solve(&b).ok_or(LiouvilleError::NullSpace { dimension: 2 })?;
    Ok((x.as_slice().to_vec(), 1))
}

fn iterative_steady(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<(Vec<C64>, usize), LiouvilleError> {
    let n = l.dim;
    let nn = n * n;
    let mut syl = CommutatorSylvester::new(&l.effective.to_dense())?;
    let scale = l.norm().max(f64::MIN_POSITIVE);
    let mut x = vec![linalg::zero(); nn];
    x[0] = C64::new(scale, 0.0);
    // The longest-lived mode of K carries the trace constraint, so the
    // preconditioner gives it the eigenvalue `scale` of `ρ ↦ x tr ρ`.
    let slow = syl
        .eigenvalues()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.im.abs().total_cmp(&b.1.im.abs()))
        .map(|(k, _)| k)
        .ok_or(LiouvilleError::Linalg(LinalgError::Singular))?;
    syl.pin(slow, C64::new(0.0, scale));
    let i = C64::new(0.0, 1.0);
    // S⁻¹ v with S(ρ) = −i(Kρ − ρK†)
    let precond = |v: &[C64]| -> Vec<C64> {
        let m = DMatrix::from_column_slice(n, n, v) * i;
        syl.solve(&m).as_slice().to_vec()
    };
    let apply_m = |r: &[C64]| -> Vec<C64> {
        let mut y = l.apply(r);
        let tr = vec_trace(r, n);
        linalg::axpy(tr, &x, &mut y);
        y
    };
    let (out, converged) = linalg::gmres_best(|v| apply_m(&precond(v)), &x, None, opts.tol, opts.restart, opts.max_iter)?;
    if !converged {
        if out.residual > opts.accept_tol {
            return Err(LiouvilleError::NoConvergence { residual: out.residual, iterations: out.iterations });
        }
        log::warn!(
            "steady-state GMRES stalled at residual {:.3e} (target {:.1e}); accepting",
            out.residual,
            opts.tol
        );
    }
    Ok((precond(&out.x), out.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{FockBasis, Truncation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn vectorization_identities() {
        let id = DMatrix::<C64>::identity(2, 2);
        let v = vectorize(&id);
        assert_eq!(v.data, vec![linalg::one(), linalg::zero(), linalg::zero(), linalg::one()]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3);
        let b = random_matrix(&mut rng, 3);
        let rho = random_matrix(&mut rng, 3);
        assert_eq!(devectorize(&vectorize(&rho)), rho);
        let lhs = vectorize(&(&a * &rho * b.adjoint()));
        let sup = b.adjoint().transpose().kronecker(&a);
        let rhs = &sup * nalgebra::DVector::from_vec(vectorize(&rho).data);
        for (x, y) in lhs.data.iter().zip(rhs.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    fn single_site(gamma: f64, d: usize) -> (FockBasis, Liouvillian) {
        let basis = FockBasis::new(1, d, Truncation::Full).unwrap();
        let a = fock::annihilation(&basis, 0).unwrap();
        let h = CsrMatrix::zeros(d, d);
        let l = Liouvillian::from_parts(&h, &[JumpOperator { rate: gamma, op: a }]).unwrap();
        (basis, l)
    }

    #[test]
    fn amplitude_damping_rate() {
        let (_, l) = single_site(2.0, 3);
        let r = DensityVector::basis_state(3, 1);
        let d = l.apply(&r.data);
        assert!((d[1 + 3] - C64::new(-2.0, 0.0)).norm() < 1e-14);
        assert!(l.trace_defect() < 1e-14);
    }

    #[test]
    fn krylov_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5usize, 40, 100] {
            let a = random_matrix(&mut rng, n) * C64::new(1.0 / (n as f64).sqrt(), 0.0);
            let sparse = CsrMatrix::from_dense(&a, 0.0);
            let v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
            let dt = 1.0 / sparse.norm_inf();
            let exact = linalg::expm(&(&a * C64::new(dt, 0.0))) * nalgebra::DVector::from_vec(v.clone());
            let cfg = PropagatorConfig { krylov_dim: 30, tol: 1e-12, ..Default::default() };
            let w = krylov_step(&sparse, &v, dt, &cfg).unwrap();
            let err: f64 = w.iter().zip(exact.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            assert!(err / exact.norm() < 1e-8, "n={n} err={err:e}");
        }
    }

    #[test]
    fn krylov_exact_subspace_and_diagonal() {
        let diag: Vec<C64> = (0..6).map(|k| C64::new(-(k as f64), 0.3 * k as f64)).collect();
        let l = CsrMatrix::from_diagonal(&diag);
        let v = vec![linalg::one(); 6];
        let cfg = PropagatorConfig { krylov_dim: 40, ..Default::default() };
        let w = krylov_step(&l, &v, 0.7, &cfg).unwrap();
        for k in 0..6 {
            assert!((w[k] - (diag[k] * 0.7).exp()).norm() < 1e-12);
        }
    }

    #[test]
    fn magnus_with_scalar_profile_is_exact() {
        let (_, l) = single_site(1.0, 3);
        let generator = l.matrix.clone();
        let zero = Liouvillian { matrix: CsrMatrix::zeros(9, 9), ..l.clone() };
        let mut td = TimeDependentLiouvillian::new(zero);
        td.terms.push(DriveTerm {
            label: "profile".into(),
            generator: generator.clone(),
            coefficient: Arc::new(|t: f64| C64::new(1.0 + t, 0.0)),
        });
        let r0 = DensityVector::basis_state(3, 2);
        let cfg = PropagatorConfig { dt: 0.05, ..Default::default() };
        let mut r = r0.data.clone();
        for s in 0..20 {
            r = magnus_step(&td, &r, s as f64 * 0.05, 0.05, &cfg).unwrap();
        }
        // ∫₀¹ (1 + t) dt = 1.5
        let exact = krylov_step(&generator, &r0.data, 1.5, &cfg).unwrap();
        let err: f64 = r.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn steady_states_agree() {
        let basis = FockBasis::new(2, 3, Truncation::Full).unwrap();
        let a0 = fock::annihilation(&basis, 0).unwrap();
        let a1 = fock::annihilation(&basis, 1).unwrap();
        let drive = a0.add(&a0.adjoint()).scale(C64::new(0.3, 0.0));
        let hop = a0.adjoint().matmul(&a1);
        let h = fock::total_number(&basis).scale(C64::new(0.2, 0.0)).add(&drive).add(&hop.add(&hop.adjoint()));
        let jumps = vec![JumpOperator { rate: 1.0, op: a0.add(&a1) }, JumpOperator { rate: 0.01, op: a1.clone() }];
        let l = Liouvillian::from_parts(&h, &jumps).unwrap();
        let dense = steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Dense, ..Default::default() }).unwrap();
        let iter = steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Iterative, tol: 1e-13, ..Default::default() }).unwrap();
        assert!(dense.residual < 1e-12 && iter.residual < 1e-12, "{} {}", dense.residual, iter.residual);
        let diff: f64 = dense.rho.data.iter().zip(&iter.rho.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff:e}");
        assert!(dense.rho.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn decaying_system_relaxes_to_vacuum() {
        let (_, l) = single_site(1.0, 4);
        let ss = steady_state(&l, &SteadyStateOptions::default()).unwrap();
        assert!((ss.rho.element(0, 0) - linalg::one()).norm() < 1e-12);
    }

    #[test]
    fn coherence_sector_is_invariant() {
        let basis = FockBasis::new(2, 3, Truncation::Full).unwrap();
        let a0 = fock::annihilation(&basis, 0).unwrap();
        let l = Liouvillian::from_parts(&fock::total_number(&basis), &[JumpOperator { rate: 1.0, op: a0 }]).unwrap();
        let sector = coherence_sector(&basis, -1);
        let mut inside = vec![false; 81];
        sector.iter().for_each(|&k| inside[k] = true);
        for (r, c, _) in l.matrix.iter() {
            assert_eq!(inside[r], inside[c]);
        }
    }
}
