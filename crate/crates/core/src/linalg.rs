//! Dense linear-algebra kernels shared by the spectral and dynamical
//! solvers: matrix exponential, Schur-based eigenvectors, a Sylvester
//! solver for commutator-type equations, and restarted GMRES.

use nalgebra::DMatrix;
#[cfg(test)]
use nalgebra::DVector;

use crate::C64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("Schur decomposition did not converge for a {0}x{0} matrix")]
    SchurNoConvergence(usize),
    #[error("singular linear system")]
    Singular,
    #[error("GMRES stalled at relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
}

pub(crate) fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

pub(crate) fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Conjugate-linear inner product `⟨a|b⟩ = Σ conj(a_i) b_i`.
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `y += s·x`.
pub fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// One-norm (maximum absolute column sum).
pub fn norm1(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by degree-13 Padé approximation with scaling and
/// squaring.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let nrm = norm1(a);
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(0.5f64.powi(s), 0.0);
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Complex Schur form `A = Q T Q†` with `T` upper triangular.
///
/// The QR iteration deflates on a test relative to neighbouring diagonal
/// entries, which stalls for clusters at the origin, so the spectrum is
/// moved away from zero by `2‖A‖₁` during the iteration.
pub fn schur(a: DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>), LinalgError> {
    let n = a.nrows();
    let sigma = C64::new(2.0 * norm1(&a), 0.0);
    let shifted = a + DMatrix::<C64>::identity(n, n) * sigma;
    let s = nalgebra::linalg::Schur::try_new(shifted, 8.0 * f64::EPSILON, 200 * n.max(10))
        .ok_or(LinalgError::SchurNoConvergence(n))?;
    let (q, mut t) = s.unpack();
    for i in 0..n {
        t[(i, i)] -= sigma;
    }
    for j in 0..n {
        for i in j + 1..n {
            t[(i, j)] = zero();
        }
    }
    Ok((q, t))
}

fn perturbed(d: C64, smin: f64) -> C64 {
    if d.norm() < smin {
        C64::new(smin, 0.0)
    } else {
        d
    }
}

fn triangular_smin(t: &DMatrix<C64>) -> f64 {
    let scale = t.iter().map(|v| v.norm()).fold(0.0, f64::max);
    (f64::EPSILON * scale).max(f64::MIN_POSITIVE * 1e3)
}

/// Right eigenvectors of an upper-triangular matrix, one per column, with
/// unit entry at the diagonal position. Near-zero pivots are replaced by a
/// tiny positive value as in LAPACK's `trevc`.
pub fn triangular_right_eigenvectors(t: &DMatrix<C64>) -> DMatrix<C64> {
    let n = t.nrows();
    let smin = triangular_smin(t);
    let mut x = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        x[(k, k)] = one();
        for i in (0..k).rev() {
            let mut s = zero();
            for l in i + 1..=k {
                s += t[(i, l)] * x[(l, k)];
            }
            x[(i, k)] = -s / perturbed(t[(i, i)] - lam, smin);
        }
    }
    x
}

/// Left eigenvectors `y` of an upper-triangular matrix, `y† T = λ y†`, one
/// per column.
pub fn triangular_left_eigenvectors(t: &DMatrix<C64>) -> DMatrix<C64> {
    let n = t.nrows();
    let smin = triangular_smin(t);
    let mut y = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)].conj();
        y[(k, k)] = one();
        for i in k + 1..n {
            let mut s = zero();
            for l in k..i {
                s += t[(l, i)].conj() * y[(l, k)];
            }
            y[(i, k)] = -s / perturbed(t[(i, i)].conj() - lam, smin);
        }
    }
    y
}

/// Complex matrix product through four real products, which uses the
/// blocked real kernel behind nalgebra's `f64` multiplication.
pub fn matmul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let ar = a.map(|z| z.re);
    let ai = a.map(|z| z.im);
    let br = b.map(|z| z.re);
    let bi = b.map(|z| z.im);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, C64::new)
}

/// Solver for `H X − X H† = C` with a fixed square `H`, using one Schur
/// factorization and triangular back-substitution per right-hand side.
#[derive(Clone, Debug)]
pub struct CommutatorSylvester {
    q: DMatrix<C64>,
    t: DMatrix<C64>,
    floor: f64,
    pinned: Option<(usize, C64)>,
}

impl CommutatorSylvester {
    pub fn new(h: &DMatrix<C64>) -> Result<Self, LinalgError> {
        let (q, t) = schur(h.clone())?;
        let scale = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        Ok(Self { q, t, floor: scale * 1e-14, pinned: None })
    }

    /// Eigenvalues of `H` in Schur order.
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.t.diagonal().iter().copied().collect()
    }

    /// Replaces the divisor `λ_i − λ_i*` of the diagonal Schur mode `i`
    /// by `value`.
    pub fn pin(&mut self, i: usize, value: C64) {
        self.pinned = Some((i, value));
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Solves `H X − X H† = C`.
    pub fn solve(&self, c: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.dim();
        let ct = matmul(&self.q.adjoint(), &matmul(c, &self.q));
        // T Y − Y T† = Ct, solved column by column from the right
        let mut y = DMatrix::<C64>::zeros(n, n);
        let t = &self.t;
        let mut rhs = vec![zero(); n];
        for j in (0..n).rev() {
            for i in 0..n {
                let mut s = ct[(i, j)];
                for k in j + 1..n {
                    s += y[(i, k)] * t[(j, k)].conj();
                }
                rhs[i] = s;
            }
            let shift = t[(j, j)].conj();
            for i in (0..n).rev() {
                let mut s = rhs[i];
                for l in i + 1..n {
                    s -= t[(i, l)] * y[(l, j)];
                }
                let mut d = t[(i, i)] - shift;
                if let Some((_, value)) = self.pinned.filter(|&(p, _)| p == i && p == j) {
                    d = value;
                } else if d.norm() < self.floor {
                    d = C64::new(0.0, -self.floor);
                }
                y[(i, j)] = s / d;
            }
        }
        matmul(&self.q, &matmul(&y, &self.q.adjoint()))
    }
}

/// Result of an iterative solve.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Restarted GMRES for `A x = b` with modified Gram–Schmidt and Givens
/// rotations. `apply` evaluates `A v`.
pub fn gmres<F>(
    apply: F,
    b: &[C64],
    x0: Option<Vec<C64>>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome, LinalgError>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let (out, converged) = gmres_best(apply, b, x0, tol, restart, max_iter)?;
    if converged {
        Ok(out)
    } else {
        Err(LinalgError::NoConvergence { residual: out.residual, iterations: out.iterations })
    }
}

/// GMRES returning the last iterate and whether it met `tol`.
pub fn gmres_best<F>(
    mut apply: F,
    b: &[C64],
    x0: Option<Vec<C64>>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(GmresOutcome, bool), LinalgError>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = x0.unwrap_or_else(|| vec![zero(); n]);
    let mut total = 0usize;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok((GmresOutcome { x, iterations: total, residual: rel }, true));
        }
        let m = restart.min(max_iter - total).max(1);
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = DMatrix::<C64>::zeros(m + 1, m);
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![zero(); m];
        let mut g = vec![zero(); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            let mut w = apply(&v[k]);
            total += 1;
            for (i, vi) in v.iter().enumerate() {
                let hik = dotc(vi, &w);
                h[(i, k)] = hik;
                axpy(-hik, vi, &mut w);
            }
            // second pass guards against loss of orthogonality
            for (i, vi) in v.iter().enumerate() {
                let corr = dotc(vi, &w);
                h[(i, k)] += corr;
                axpy(-corr, vi, &mut w);
            }
            let hnext = norm2(&w);
            h[(k + 1, k)] = C64::new(hnext, 0.0);
            for i in 0..k {
                let a = h[(i, k)];
                let bb = h[(i + 1, k)];
                h[(i, k)] = cs[i] * a + sn[i] * bb;
                h[(i + 1, k)] = -sn[i].conj() * a + cs[i] * bb;
            }
            let a = h[(k, k)];
            let bb = h[(k + 1, k)];
            let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = one();
            } else {
                cs[k] = a.norm() / r;
                sn[k] = (a / a.norm()) * bb.conj() / r;
            }
            h[(k, k)] = cs[k] * a + sn[k] * bb;
            h[(k + 1, k)] = zero();
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let rel = g[k + 1].norm() / bnorm;
            if rel <= tol || hnext <= f64::EPSILON * bnorm {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }
        let mut yk = vec![zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[(i, l)] * yk[l];
            }
            if h[(i, i)].norm() == 0.0 {
                return Err(LinalgError::Singular);
            }
            yk[i] = s / h[(i, i)];
        }
        for (i, yi) in yk.iter().enumerate() {
            axpy(*yi, &v[i], &mut x);
        }
    }
    let ax = apply(&x);
    let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let final_rel = norm2(&r) / bnorm;
    Ok((GmresOutcome { x, iterations: total, residual: final_rel }, final_rel <= tol))
}

#[cfg(test)]
fn to_dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}
