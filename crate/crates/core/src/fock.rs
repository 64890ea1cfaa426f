//! Occupation-number bases and the site-local and collective operators
//! acting on them.
//!
//! States are ordered lexicographically ascending on their occupation
//! vectors, with site 0 as the most significant digit. Every other module
//! relies on this ordering.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;
use crate::C64;

/// Operators are stored as sparse complex matrices.
pub type OperatorMatrix = CsrMatrix;

/// Largest basis the enumerator builds unless told otherwise.
pub const DEFAULT_MAX_DIM: usize = 1 << 20;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FockError {
    #[error("basis needs L ≥ 1 and 2 ≤ d ≤ 255 (got L={l}, d={d})")]
    InvalidShape { l: usize, d: usize },
    #[error("basis dimension {size} exceeds the configured maximum {max}")]
    CapacityExceeded { size: u128, max: usize },
    #[error("site {site} out of range for {l} sites")]
    SiteOutOfRange { site: usize, l: usize },
    #[error("level {m} has no upper partner below the cap d={d}")]
    LevelOutOfRange { m: usize, d: usize },
    #[error("collective mode index {k} outside 1..={l}")]
    ModeOutOfRange { k: usize, l: usize },
    #[error("pair exchange needs exactly 4 sites, basis has {0}")]
    NotTwoPairs(usize),
}

/// Occupation numbers `n_j` of every site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FockState(pub Vec<u8>);

impl FockState {
    pub fn new(occupations: &[usize]) -> Self {
        Self(occupations.iter().map(|&n| n as u8).collect())
    }

    pub fn vacuum(l: usize) -> Self {
        Self(vec![0; l])
    }

    pub fn sites(&self) -> usize {
        self.0.len()
    }

    pub fn occupation(&self, j: usize) -> usize {
        self.0[j] as usize
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    fn with(&self, j: usize, n: usize) -> Self {
        let mut s = self.clone();
        s.0[j] = n as u8;
        s
    }
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        for n in &self.0 {
            write!(f, "{n}")?;
        }
        write!(f, "⟩")
    }
}

/// Which occupation vectors belong to a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Truncation {
    /// Every vector with `0 ≤ n_j < d`.
    Full,
    /// Vectors with total excitation number exactly `N`.
    Manifold(usize),
    /// Vectors with total excitation number at most `N`.
    UpTo(usize),
}

impl Truncation {
    fn admits(&self, total: usize) -> bool {
        match *self {
            Truncation::Full => true,
            Truncation::Manifold(n) => total == n,
            Truncation::UpTo(n) => total <= n,
        }
    }
}

/// Enumerated occupation-number basis.
#[derive(Clone, Debug)]
pub struct FockBasis {
    sites: usize,
    cap: usize,
    truncation: Truncation,
    states: Vec<FockState>,
    index: HashMap<FockState, usize>,
}

/// Number of states with `L` sites summing to `N` excitations, `C(N+L−1, N)`.
pub fn manifold_dimension(n: usize, l: usize) -> u128 {
    if l == 0 {
        return u128::from(n == 0);
    }
    let mut acc: u128 = 1;
    for i in 1..=n as u128 {
        acc = acc * (l as u128 - 1 + i) / i;
    }
    acc
}

fn count_states(l: usize, d: usize, truncation: Truncation) -> u128 {
    let max_total = match truncation {
        Truncation::Full => (d - 1) * l,
        Truncation::Manifold(n) | Truncation::UpTo(n) => n,
    };
    // ways[t] = number of vectors over the sites seen so far summing to t
    let mut ways = vec![0u128; max_total + 1];
    ways[0] = 1;
    for _ in 0..l {
        let mut next = vec![0u128; max_total + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for n in 0..d {
                if t + n > max_total {
                    break;
                }
                next[t + n] = next[t + n].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter()
        .enumerate()
        .filter(|(t, _)| truncation.admits(*t))
        .fold(0u128, |a, (_, &w)| a.saturating_add(w))
}

impl FockBasis {
    /// Enumerates a basis of `l` sites with level cap `d`, capped at
    /// [`DEFAULT_MAX_DIM`] states.
    pub fn new(l: usize, d: usize, truncation: Truncation) -> Result<Self, FockError> {
        Self::with_max_dim(l, d, truncation, DEFAULT_MAX_DIM)
    }

    pub fn with_max_dim(l: usize, d: usize, truncation: Truncation, max_dim: usize) -> Result<Self, FockError> {
        if l == 0 || d < 2 || d > u8::MAX as usize {
            return Err(FockError::InvalidShape { l, d });
        }
        let size = count_states(l, d, truncation);
        if size > max_dim as u128 {
            return Err(FockError::CapacityExceeded { size, max: max_dim });
        }
        let mut states = Vec::with_capacity(size as usize);
        let mut current = vec![0u8; l];
        let budget = match truncation {
            Truncation::Full => usize::MAX,
            Truncation::Manifold(n) | Truncation::UpTo(n) => n,
        };
        enumerate(0, budget, d, truncation, &mut current, &mut states);
        let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Self { sites: l, cap: d, truncation, states, index })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Per-site level cap `d`.
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[FockState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &FockState {
        &self.states[i]
    }

    pub fn index_of(&self, s: &FockState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Total excitation number of every basis state, in basis order.
    pub fn totals(&self) -> Vec<usize> {
        self.states.iter().map(FockState::total).collect()
    }

    /// Basis positions grouped by total excitation number.
    pub fn manifold_indices(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut by_n: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, s) in self.states.iter().enumerate() {
            by_n.entry(s.total()).or_default().push(i);
        }
        groups.extend(by_n);
        groups
    }

    /// Unit ket for a basis state, as a dense vector.
    pub fn ket(&self, s: &FockState) -> Option<Vec<C64>> {
        let i = self.index_of(s)?;
        let mut v = vec![C64::new(0.0, 0.0); self.len()];
        v[i] = C64::new(1.0, 0.0);
        Some(v)
    }

    fn check_site(&self, j: usize) -> Result<(), FockError> {
        if j >= self.sites {
            return Err(FockError::SiteOutOfRange { site: j, l: self.sites });
        }
        Ok(())
    }
}

fn enumerate(
    site: usize,
    budget: usize,
    d: usize,
    truncation: Truncation,
    current: &mut Vec<u8>,
    out: &mut Vec<FockState>,
) {
    let l = current.len();
    if site == l {
        let total: usize = current.iter().map(|&n| n as usize).sum();
        if truncation.admits(total) {
            out.push(FockState(current.clone()));
        }
        return;
    }
    // prune: the remaining sites cannot reach an exact manifold
    if let Truncation::Manifold(_) = truncation {
        if budget > (l - site) * (d - 1) {
            return;
        }
    }
    for n in 0..d.min(budget.saturating_add(1)) {
        current[site] = n as u8;
        enumerate(site + 1, budget - n, d, truncation, current, out);
    }
    current[site] = 0;
}

/// Matrix of a single-site lowering map between two bases.
///
/// `amplitude(n)` gives the matrix element taking occupation `n` to `n − 1`
/// on site `j`; states whose image leaves `target` are dropped.
fn lowering_between<F>(source: &FockBasis, target: &FockBasis, j: usize, amplitude: F) -> OperatorMatrix
where
    F: Fn(usize) -> f64,
{
    let mut t = Vec::new();
    for (col, s) in source.states.iter().enumerate() {
        let n = s.occupation(j);
        if n == 0 {
            continue;
        }
        let a = amplitude(n);
        if a == 0.0 {
            continue;
        }
        if let Some(row) = target.index_of(&s.with(j, n - 1)) {
            t.push((row, col, C64::new(a, 0.0)));
        }
    }
    CsrMatrix::from_triplets(target.len(), source.len(), t)
}

/// Bosonic annihilation operator `â_j` acting within one basis.
pub fn annihilation(basis: &FockBasis, j: usize) -> Result<OperatorMatrix, FockError> {
    basis.check_site(j)?;
    Ok(lowering_between(basis, basis, j, |n| (n as f64).sqrt()))
}

/// Annihilation operator `â_j` mapping states of `source` into `target`,
/// for example manifold `N` into manifold `N − 1`.
pub fn annihilation_between(source: &FockBasis, target: &FockBasis, j: usize) -> Result<OperatorMatrix, FockError> {
    source.check_site(j)?;
    target.check_site(j)?;
    Ok(lowering_between(source, target, j, |n| (n as f64).sqrt()))
}

/// Creation operator `â_j†` within one basis (truncated at the cap).
pub fn creation(basis: &FockBasis, j: usize) -> Result<OperatorMatrix, FockError> {
    Ok(annihilation(basis, j)?.adjoint())
}

/// Level lowering operator `σ̂_−^{mj} = |m⟩⟨m+1|` on site `j`.
pub fn sigma_minus(basis: &FockBasis, m: usize, j: usize) -> Result<OperatorMatrix, FockError> {
    sigma_minus_between(basis, basis, m, j)
}

pub fn sigma_minus_between(
    source: &FockBasis,
    target: &FockBasis,
    m: usize,
    j: usize,
) -> Result<OperatorMatrix, FockError> {
    source.check_site(j)?;
    target.check_site(j)?;
    if m + 1 >= source.cap {
        return Err(FockError::LevelOutOfRange { m, d: source.cap });
    }
    Ok(lowering_between(source, target, j, |n| if n == m + 1 { 1.0 } else { 0.0 }))
}

/// Occupation operator `n̂_j`.
pub fn number(basis: &FockBasis, j: usize) -> Result<OperatorMatrix, FockError> {
    basis.check_site(j)?;
    let diag: Vec<C64> = basis.states.iter().map(|s| C64::new(s.occupation(j) as f64, 0.0)).collect();
    Ok(CsrMatrix::from_diagonal(&diag))
}

/// Total excitation number `N̂ = Σ_j n̂_j`.
pub fn total_number(basis: &FockBasis) -> OperatorMatrix {
    let diag: Vec<C64> = basis.states.iter().map(|s| C64::new(s.total() as f64, 0.0)).collect();
    CsrMatrix::from_diagonal(&diag)
}

/// Fourier phase `exp(2πi jk/L)` for 0-based site `j` and mode `k`, with
/// sites counted from 1 in the exponent.
fn mode_phase(j: usize, k: usize, l: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * ((j + 1) * k) as f64 / l as f64)
}

/// Collective mode `ĉ_k = L^{−1/2} Σ_j exp(2πi jk/L) â_j` for `1 ≤ k ≤ L`.
///
/// Sites enter the phase with 1-based labels, so `ĉ_L` is the symmetric
/// combination.
pub fn collective_mode(basis: &FockBasis, k: usize) -> Result<OperatorMatrix, FockError> {
    collective_mode_between(basis, basis, k)
}

pub fn collective_mode_between(source: &FockBasis, target: &FockBasis, k: usize) -> Result<OperatorMatrix, FockError> {
    let l = source.sites;
    if k == 0 || k > l {
        return Err(FockError::ModeOutOfRange { k, l });
    }
    let norm = 1.0 / (l as f64).sqrt();
    let mut acc = CsrMatrix::zeros(target.len(), source.len());
    for j in 0..l {
        let a = annihilation_between(source, target, j)?;
        acc = acc.add_scaled(C64::new(1.0, 0.0), &a, mode_phase(j, k, l) * norm);
    }
    Ok(acc)
}

/// Pair exchange `P̂|n₁n₂n₃n₄⟩ = |n₃n₄n₁n₂⟩` on a four-site basis.
pub fn pair_exchange(basis: &FockBasis) -> Result<OperatorMatrix, FockError> {
    if basis.sites != 4 {
        return Err(FockError::NotTwoPairs(basis.sites));
    }
    let t = basis
        .states
        .iter()
        .enumerate()
        .map(|(col, s)| {
            let o = &s.0;
            let swapped = FockState(vec![o[2], o[3], o[0], o[1]]);
            let row = basis.index_of(&swapped).expect("pair exchange preserves every truncation");
            (row, col, C64::new(1.0, 0.0))
        })
        .collect();
    Ok(CsrMatrix::from_triplets(basis.len(), basis.len(), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(o: &[usize]) -> FockState {
        FockState::new(o)
    }

    #[test]
    fn ordering_is_lexicographic() {
        let b = FockBasis::new(2, 3, Truncation::Manifold(2)).unwrap();
        assert_eq!(b.states(), &[st(&[0, 2]), st(&[1, 1]), st(&[2, 0])]);
        let full = FockBasis::new(3, 2, Truncation::Full).unwrap();
        assert!(full.states().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sizes() {
        assert_eq!(FockBasis::new(2, 3, Truncation::Manifold(2)).unwrap().len(), 3);
        assert_eq!(FockBasis::new(8, 2, Truncation::Full).unwrap().len(), 256);
        assert_eq!(FockBasis::new(4, 5, Truncation::Manifold(4)).unwrap().len(), 35);
        assert_eq!(FockBasis::new(4, 3, Truncation::UpTo(3)).unwrap().len(), 1 + 4 + 10 + 16);
    }

    #[test]
    fn capacity_is_enforced() {
        let err = FockBasis::with_max_dim(10, 4, Truncation::Full, 1000).unwrap_err();
        assert_eq!(err, FockError::CapacityExceeded { size: 1 << 20, max: 1000 });
    }

    #[test]
    fn annihilation_elements() {
        let one = FockBasis::new(1, 3, Truncation::Full).unwrap();
        let a = annihilation(&one, 0).unwrap();
        assert_eq!(a.get(0, 1), C64::new(1.0, 0.0));
        assert!((a.get(1, 2).re - 2f64.sqrt()).abs() < 1e-15);

        let two = FockBasis::new(2, 3, Truncation::Full).unwrap();
        let a1 = annihilation(&two, 0).unwrap();
        let row = two.index_of(&st(&[1, 1])).unwrap();
        let col = two.index_of(&st(&[2, 1])).unwrap();
        assert!((a1.get(row, col).re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn annihilation_between_manifolds() {
        let b2 = FockBasis::new(2, 3, Truncation::Manifold(2)).unwrap();
        let b1 = FockBasis::new(2, 3, Truncation::Manifold(1)).unwrap();
        let a = annihilation_between(&b2, &b1, 0).unwrap();
        assert_eq!((a.nrows(), a.ncols()), (2, 3));
        let col = b2.index_of(&st(&[2, 0])).unwrap();
        let row = b1.index_of(&st(&[1, 0])).unwrap();
        assert!((a.get(row, col).re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sigma_minus_levels() {
        let one = FockBasis::new(1, 3, Truncation::Full).unwrap();
        let s0 = sigma_minus(&one, 0, 0).unwrap();
        assert_eq!(s0.get(0, 1), C64::new(1.0, 0.0));
        let s1 = sigma_minus(&one, 1, 0).unwrap();
        assert_eq!(s1.get(0, 1), C64::new(0.0, 0.0));
        assert_eq!(s1.get(1, 2), C64::new(1.0, 0.0));
        assert!(sigma_minus(&one, 2, 0).is_err());
    }

    #[test]
    fn ladder_decomposition() {
        let b = FockBasis::new(2, 4, Truncation::Full).unwrap();
        for j in 0..2 {
            let mut sum = CsrMatrix::zeros(b.len(), b.len());
            for m in 0..3 {
                let s = sigma_minus(&b, m, j).unwrap();
                sum = sum.add_scaled(C64::new(1.0, 0.0), &s, C64::new(((m + 1) as f64).sqrt(), 0.0));
            }
            assert!(sum.max_abs_diff(&annihilation(&b, j).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn two_site_modes() {
        let b = FockBasis::new(2, 3, Truncation::Full).unwrap();
        let a1 = annihilation(&b, 0).unwrap();
        let a2 = annihilation(&b, 1).unwrap();
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let c2 = collective_mode(&b, 2).unwrap();
        assert!(c2.max_abs_diff(&a1.add_scaled(h, &a2, h)) < 1e-15);
        let c1 = collective_mode(&b, 1).unwrap();
        assert!(c1.max_abs_diff(&a1.add_scaled(-h, &a2, h)) < 1e-15);

        let n = c2.adjoint().matmul(&c2);
        let i = b.index_of(&st(&[1, 1])).unwrap();
        assert!((n.get(i, i).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_site_mode_is_annihilation() {
        let b = FockBasis::new(1, 4, Truncation::Full).unwrap();
        let c = collective_mode(&b, 1).unwrap();
        assert!(c.max_abs_diff(&annihilation(&b, 0).unwrap()) < 1e-15);
    }

    #[test]
    fn pair_exchange_action() {
        let b = FockBasis::new(4, 2, Truncation::Manifold(1)).unwrap();
        let p = pair_exchange(&b).unwrap();
        let from = b.index_of(&st(&[1, 0, 0, 0])).unwrap();
        let to = b.index_of(&st(&[0, 0, 1, 0])).unwrap();
        assert_eq!(p.get(to, from), C64::new(1.0, 0.0));
        assert!(p.matmul(&p).max_abs_diff(&CsrMatrix::identity(b.len())) == 0.0);
        assert!(pair_exchange(&FockBasis::new(3, 2, Truncation::Full).unwrap()).is_err());
    }
}
