//! N-qubit pure states and density matrices.
//!
//! Basis labels are read with qubit 0 as the most significant bit, so for
//! `n = 3` the product `|1⟩|0⟩|0⟩` lives at index 4.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex64;

/// Largest register the dense kernels accept.
pub const MAX_QUBITS: usize = 12;

/// Max entrywise deviation from Hermiticity accepted by validation.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Max deviation of the trace from one accepted by validation.
pub const TRACE_TOL: f64 = 1e-10;
/// Floor on the smallest eigenvalue accepted by validation.
pub const EIGENVALUE_FLOOR: f64 = -1e-8;
/// Normalization tolerance for pure states.
pub const NORM_TOL: f64 = 1e-10;

/// Number of two-level subsystems of a multipartite register (at least two).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct QubitCount(usize);

impl QubitCount {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("qubit count must be at least 2, got {n}")));
        }
        if n > MAX_QUBITS {
            return Err(invalid(format!("qubit count {n} exceeds the supported maximum {MAX_QUBITS}")));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn dim(self) -> usize {
        1 << self.0
    }
}

impl TryFrom<usize> for QubitCount {
    type Error = crate::Error;

    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<QubitCount> for usize {
    fn from(n: QubitCount) -> usize {
        n.0
    }
}

/// Bit position of qubit `k` inside a basis label of an `n`-qubit register.
#[inline]
pub fn qubit_bit(n: usize, k: usize) -> usize {
    n - 1 - k
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(invalid(format!("dimension {dim} is not a power of two ≥ 2")));
    }
    let n = dim.trailing_zeros() as usize;
    if n > MAX_QUBITS {
        return Err(invalid(format!("{n} qubits exceeds the supported maximum {MAX_QUBITS}")));
    }
    Ok(n)
}

/// Set of qubits kept by a partial trace. Bit `k` of `bits` set means qubit
/// `k` is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubsetMask {
    bits: u32,
    n: usize,
}

impl SubsetMask {
    /// Any nonempty subset, including the full register.
    pub fn new(bits: u32, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(invalid(format!("mask over {n} qubits is out of range")));
        }
        let full = (1u32 << n) - 1;
        if bits == 0 || bits > full {
            return Err(invalid(format!("mask {bits:#b} out of range for {n} qubits")));
        }
        Ok(Self { bits, n })
    }

    /// A proper nonempty subset (`1 ≤ bits ≤ 2^n − 2`).
    pub fn proper(bits: u32, n: usize) -> Result<Self> {
        let mask = Self::new(bits, n)?;
        if !mask.is_proper() {
            return Err(invalid(format!("mask {bits:#b} keeps every qubit")));
        }
        Ok(mask)
    }

    /// Mask keeping exactly the listed qubits.
    pub fn from_qubits(qubits: &[usize], n: usize) -> Result<Self> {
        let mut bits = 0u32;
        for &k in qubits {
            if k >= n {
                return Err(invalid(format!("qubit {k} out of range for {n} qubits")));
            }
            bits |= 1 << k;
        }
        Self::new(bits, n)
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn num_qubits(self) -> usize {
        self.n
    }

    pub fn is_proper(self) -> bool {
        self.bits != (1u32 << self.n) - 1
    }

    pub fn kept_count(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn contains(self, k: usize) -> bool {
        self.bits >> k & 1 == 1
    }

    pub fn kept(self) -> Vec<usize> {
        (0..self.n).filter(|&k| self.contains(k)).collect()
    }

    pub fn traced(self) -> Vec<usize> {
        (0..self.n).filter(|&k| !self.contains(k)).collect()
    }

    /// Complement of a proper subset.
    pub fn complement(self) -> Result<Self> {
        Self::new(!self.bits & ((1u32 << self.n) - 1), self.n)
    }

    /// All proper nonempty subsets in ascending bitmask order.
    pub fn proper_subsets(n: usize) -> impl Iterator<Item = SubsetMask> {
        let full = (1u32 << n) - 1;
        (1..full).map(move |bits| SubsetMask { bits, n })
    }
}

/// Basis-label offsets of every assignment of `qubits` (first listed qubit
/// is most significant), embedded in an `n`-qubit label.
pub(crate) fn label_offsets(qubits: &[usize], n: usize) -> Vec<usize> {
    let k = qubits.len();
    (0..1usize << k)
        .map(|local| {
            qubits.iter().enumerate().fold(0usize, |acc, (j, &q)| {
                if local >> (k - 1 - j) & 1 == 1 {
                    acc | 1 << qubit_bit(n, q)
                } else {
                    acc
                }
            })
        })
        .collect()
}

/// Normalized amplitude vector of an `n`-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n: usize,
    amps: Vec<C64>,
}

impl PureState {
    /// Validates that the length is a power of two and the norm is one.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let n = qubits_for_dim(amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("state is not normalized (squared norm {norm})")));
        }
        Ok(Self { n, amps })
    }

    /// Rescales an arbitrary nonzero vector to unit norm.
    pub fn normalized(mut amps: Vec<C64>) -> Result<Self> {
        let n = qubits_for_dim(amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { n, amps })
    }

    pub(crate) fn from_raw(n: usize, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), 1 << n);
        Self { n, amps }
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(invalid(format!("{n} qubits out of range")));
        }
        if index >= 1 << n {
            return Err(invalid(format!("basis index {index} out of range for {n} qubits")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Tensor product `self ⊗ other`; `self` supplies the leading qubits.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let n = self.n + other.n;
        if n > MAX_QUBITS {
            return Err(invalid(format!("product of {n} qubits exceeds {MAX_QUBITS}")));
        }
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        Ok(PureState { n, amps })
    }

    /// Applies a 2×2 operator to qubit `k` in place of the amplitudes.
    pub fn apply_single_qubit(&self, k: usize, op: &[[C64; 2]; 2]) -> Result<PureState> {
        if k >= self.n {
            return Err(invalid(format!("qubit {k} out of range for {} qubits", self.n)));
        }
        let mask = 1usize << qubit_bit(self.n, k);
        let mut amps = self.amps.clone();
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | mask]);
                amps[i] = op[0][0] * a0 + op[0][1] * a1;
                amps[i | mask] = op[1][0] * a0 + op[1][1] * a1;
            }
        }
        Ok(PureState { n: self.n, amps })
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }
}

/// `(|0…0⟩ + |1…1⟩)/√2`.
pub fn ghz_state(n: QubitCount) -> PureState {
    let dim = n.dim();
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    amps[0] = a;
    amps[dim - 1] = a;
    PureState { n: n.get(), amps }
}

/// Equal superposition of the `n` single-excitation basis states.
pub fn w_state(n: QubitCount) -> PureState {
    let mut amps = vec![C64::new(0.0, 0.0); n.dim()];
    let a = C64::new(1.0 / (n.get() as f64).sqrt(), 0.0);
    for k in 0..n.get() {
        amps[1 << k] = a;
    }
    PureState { n: n.get(), amps }
}

/// Tensor product of normalized factors in qubit order.
pub fn product_state(factors: &[PureState]) -> Result<PureState> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| invalid("product of an empty factor list"))?;
    for f in factors {
        if (f.norm_sqr() - 1.0).abs() > NORM_TOL {
            return Err(invalid("product factor is not normalized"));
        }
    }
    rest.iter().try_fold(first.clone(), |acc, f| acc.tensor(f))
}

/// Hermitian, positive-semidefinite, unit-trace operator on `n` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    mat: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps and validates a square matrix.
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(invalid(format!("matrix is {}×{}, not square", mat.nrows(), mat.ncols())));
        }
        let n = qubits_for_dim(mat.nrows())?;
        let rho = Self { n, mat };
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<C64>) -> Self {
        let n = mat.nrows().trailing_zeros() as usize;
        Self { n, mat }
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn from_pure(psi: &PureState) -> Self {
        let v = &psi.amps;
        let mat = DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj());
        Self { n: psi.n, mat }
    }

    /// `𝟙 / 2^n`.
    pub fn maximally_mixed(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(invalid(format!("{n} qubits out of range")));
        }
        let dim = 1usize << n;
        let mat = DMatrix::from_diagonal_element(dim, dim, C64::new(1.0 / dim as f64, 0.0));
        Ok(Self { n, mat })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues in descending order with matching eigenvector columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<C64>) {
        hermitian_eigen(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (vals, _) = self.eigen();
        vals.last().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues above `cutoff`.
    pub fn rank(&self, cutoff: f64) -> usize {
        self.eigen().0.iter().filter(|&&l| l > cutoff).count()
    }

    /// Checks Hermiticity, unit trace and the eigenvalue floor.
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(invalid(format!("matrix is not Hermitian (max deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(invalid(format!("trace {tr} differs from one")));
        }
        let min = self.min_eigenvalue();
        if min < EIGENVALUE_FLOOR {
            return Err(invalid(format!("minimum eigenvalue {min:e} below floor")));
        }
        Ok(())
    }

    /// `self ⊗ other`.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let n = self.n + other.n;
        if n > MAX_QUBITS {
            return Err(invalid(format!("product of {n} qubits exceeds {MAX_QUBITS}")));
        }
        Ok(DensityMatrix { n, mat: self.mat.kronecker(&other.mat) })
    }

    /// Reduced state on the kept qubits, by direct index summation over the
    /// traced labels. Kept qubits retain their relative order.
    pub fn partial_trace(&self, keep: SubsetMask) -> Result<DensityMatrix> {
        if keep.num_qubits() != self.n {
            return Err(invalid(format!(
                "mask is over {} qubits, state has {}",
                keep.num_qubits(),
                self.n
            )));
        }
        let kept = label_offsets(&keep.kept(), self.n);
        let traced = label_offsets(&keep.traced(), self.n);
        let dk = kept.len();
        let mut out = DMatrix::<C64>::zeros(dk, dk);
        for (a, &ka) in kept.iter().enumerate() {
            for (b, &kb) in kept.iter().enumerate() {
                out[(a, b)] = traced.iter().map(|&t| self.mat[(ka | t, kb | t)]).sum();
            }
        }
        Ok(DensityMatrix { n: keep.kept_count(), mat: out })
    }

    /// `tr ρ²`.
    pub fn purity(&self) -> f64 {
        // tr ρ² = Σ |ρ_ij|² for Hermitian ρ
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Half the sum of absolute eigenvalues of `self − other`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let diff = &self.mat - &other.mat;
        let (vals, _) = hermitian_eigen(&diff);
        Ok(0.5 * vals.iter().map(|l| l.abs()).sum::<f64>())
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eigen(mat: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    // symmetrize so round-off in the lower triangle cannot leak in
    let sym = (mat + mat.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(mat.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}
