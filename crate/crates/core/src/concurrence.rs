//! Multipartite concurrence of pure states,
//! `C_N(Ψ) = 2^{1−N/2} √((2^N−2)⟨Ψ|Ψ⟩² − Σ_α tr ϱ_α²)`,
//! where `α` runs over every proper nonempty subset of qubits.
//!
//! The radicand is homogeneous of degree four in the amplitudes, so the same
//! kernel evaluates `p·C_N(ψ)` directly on an unnormalized vector `√p·ψ`;
//! the convex-roof optimizer relies on that.
//!
//! Reduced purities come in complement pairs (`tr ϱ_S² = tr ϱ_{S̄}²` for pure
//! states), so only `2^{N−1} − 1` representative subsets are evaluated, in
//! ascending bitmask order, and their sum is doubled.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::state::{label_offsets, DensityMatrix, PureState, QubitCount, SubsetMask, C64, MAX_QUBITS};

/// Radicands down to this value are clamped to zero.
pub const RADICAND_CLAMP: f64 = -1e-10;

/// Eigenvalues of ρ at or below this are treated as zero by the two-qubit
/// formula.
const WOOTTERS_CUTOFF: f64 = 1e-14;

/// A nonnegative concurrence value.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConcurrenceValue(f64);

impl ConcurrenceValue {
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(invalid(format!("concurrence must be nonnegative, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for ConcurrenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Gather pattern reshaping an `n`-qubit vector into a `rows × cols` matrix
/// whose row index runs over the kept labels of one representative subset.
struct SubsetEntry {
    rows: usize,
    cols: usize,
    gather: Vec<u32>,
}

struct SubsetTable {
    entries: Vec<SubsetEntry>,
    max_block: usize,
}

impl SubsetTable {
    fn build(n: usize) -> Self {
        let full = (1u32 << n) - 1;
        let entries: Vec<SubsetEntry> = SubsetMask::proper_subsets(n)
            .filter(|m| m.bits() < full ^ m.bits())
            .map(|mask| {
                let kept = label_offsets(&mask.kept(), n);
                let traced = label_offsets(&mask.traced(), n);
                let gather = kept
                    .iter()
                    .flat_map(|&k| traced.iter().map(move |&t| (k | t) as u32))
                    .collect();
                SubsetEntry { rows: kept.len(), cols: traced.len(), gather }
            })
            .collect();
        let max_block = entries.iter().map(|e| e.rows.min(e.cols).pow(2)).max().unwrap_or(0);
        Self { entries, max_block }
    }
}

fn subset_table(n: usize) -> &'static SubsetTable {
    static TABLES: [OnceLock<SubsetTable>; MAX_QUBITS + 1] = [const { OnceLock::new() }; MAX_QUBITS + 1];
    TABLES[n].get_or_init(|| SubsetTable::build(n))
}

/// `2^{1−N/2}`.
pub fn prefactor(n: usize) -> f64 {
    2f64.powf(1.0 - n as f64 / 2.0)
}

/// Reusable evaluator of the homogeneous concurrence and its gradient for
/// vectors of one fixed register size.
pub struct PureKernel {
    n: usize,
    table: &'static SubsetTable,
    mat: Vec<C64>,
    gram: Vec<C64>,
    prod: Vec<C64>,
}

impl PureKernel {
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=MAX_QUBITS).contains(&n) {
            return Err(invalid(format!("concurrence needs 2..={MAX_QUBITS} qubits, got {n}")));
        }
        let table = subset_table(n);
        Ok(Self {
            n,
            table,
            mat: vec![C64::new(0.0, 0.0); 1 << n],
            gram: vec![C64::new(0.0, 0.0); table.max_block],
            prod: vec![C64::new(0.0, 0.0); 1 << n],
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Gram matrix of the reshaped vector on its smaller side; returns its
    /// squared Frobenius norm, which is the reduced purity.
    fn gram(&mut self, idx: usize, v: &[C64]) -> f64 {
        let e = &self.table.entries[idx];
        for (dst, &g) in self.mat.iter_mut().zip(&e.gather) {
            *dst = v[g as usize];
        }
        let (rows, cols) = (e.rows, e.cols);
        let m = &self.mat[..rows * cols];
        let mut purity = 0.0;
        if rows <= cols {
            for a in 0..rows {
                for b in a..rows {
                    let ra = &m[a * cols..(a + 1) * cols];
                    let rb = &m[b * cols..(b + 1) * cols];
                    let s: C64 = ra.iter().zip(rb).map(|(x, y)| x * y.conj()).sum();
                    self.gram[a * rows + b] = s;
                    self.gram[b * rows + a] = s.conj();
                    purity += if a == b { s.norm_sqr() } else { 2.0 * s.norm_sqr() };
                }
            }
        } else {
            for a in 0..cols {
                for b in a..cols {
                    let mut s = C64::new(0.0, 0.0);
                    for r in 0..rows {
                        s += m[r * cols + a].conj() * m[r * cols + b];
                    }
                    self.gram[a * cols + b] = s;
                    self.gram[b * cols + a] = s.conj();
                    purity += if a == b { s.norm_sqr() } else { 2.0 * s.norm_sqr() };
                }
            }
        }
        purity
    }

    /// `Σ_α tr ϱ_α²` over all proper subsets for an unnormalized vector.
    pub fn purity_sum(&mut self, v: &[C64]) -> f64 {
        debug_assert_eq!(v.len(), 1 << self.n);
        let mut sum = 0.0;
        for idx in 0..self.table.entries.len() {
            sum += self.gram(idx, v);
        }
        2.0 * sum
    }

    /// `(2^N − 2)‖v‖⁴ − Σ_α tr ϱ_α(v)²`.
    pub fn radicand(&mut self, v: &[C64]) -> f64 {
        let norm2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
        ((1u64 << self.n) - 2) as f64 * norm2 * norm2 - self.purity_sum(v)
    }

    /// `‖v‖² · C_N(v/‖v‖)`, clamping negative round-off to zero.
    pub fn weighted_concurrence(&mut self, v: &[C64]) -> f64 {
        prefactor(self.n) * self.radicand(v).max(0.0).sqrt()
    }

    /// Radicand and `‖v‖²`, with the Wirtinger gradient `∂Q/∂v̄` written
    /// into `grad`.
    fn radicand_grad(&mut self, v: &[C64], grad: &mut [C64]) -> (f64, f64) {
        let n = self.n;
        let norm2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
        let dim_term = ((1u64 << n) - 2) as f64;
        // ∂Q/∂v̄ = 2(2^N−2)‖v‖² v − 4 Σ_rep M M† M
        let coeff = C64::new(2.0 * dim_term * norm2, 0.0);
        for (g, a) in grad.iter_mut().zip(v) {
            *g = coeff * a;
        }
        let mut purity_half = 0.0;
        for idx in 0..self.table.entries.len() {
            purity_half += self.gram(idx, v);
            let e = &self.table.entries[idx];
            let (rows, cols) = (e.rows, e.cols);
            let m = &self.mat[..rows * cols];
            let p = &mut self.prod[..rows * cols];
            if rows <= cols {
                // G M with G = M M†
                for a in 0..rows {
                    let out = &mut p[a * cols..(a + 1) * cols];
                    out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                    for b in 0..rows {
                        let g = self.gram[a * rows + b];
                        for (o, x) in out.iter_mut().zip(&m[b * cols..(b + 1) * cols]) {
                            *o += g * x;
                        }
                    }
                }
            } else {
                // M H with H = M† M
                for r in 0..rows {
                    let row = &m[r * cols..(r + 1) * cols];
                    for b in 0..cols {
                        let mut s = C64::new(0.0, 0.0);
                        for (a, x) in row.iter().enumerate() {
                            s += x * self.gram[a * cols + b];
                        }
                        p[r * cols + b] = s;
                    }
                }
            }
            for (&gidx, val) in e.gather.iter().zip(p.iter()) {
                grad[gidx as usize] -= val * 4.0;
            }
        }
        (dim_term * norm2 * norm2 - 2.0 * purity_half, norm2)
    }

    /// Value of `‖v‖² · C_N(v/‖v‖)` and its Wirtinger gradient `∂/∂v̄`
    /// (so `dF = 2 Re⟨grad, dv⟩`) written into `grad`. At zero radicand the
    /// zero subgradient is returned.
    pub fn weighted_concurrence_grad(&mut self, v: &[C64], grad: &mut [C64]) -> f64 {
        let (q, _) = self.radicand_grad(v, grad);
        let c = prefactor(self.n);
        if q <= 0.0 {
            grad.iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
            return 0.0;
        }
        let root = q.sqrt();
        let scale = c / (2.0 * root);
        grad.iter_mut().for_each(|g| *g *= scale);
        c * root
    }

    /// Smoothed weight `√(c²Q + μ²‖v‖⁴) − μ‖v‖²`, i.e. `p(√(C² + μ²) − μ)`
    /// for `v = √p Ψ`. Differentiable where `C = 0`; tends to
    /// [`Self::weighted_concurrence`] as `μ → 0`.
    pub fn smoothed_concurrence(&mut self, v: &[C64], mu: f64) -> f64 {
        let norm2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
        let c = prefactor(self.n);
        let cq = c * c * self.radicand(v).max(0.0);
        (cq + mu * mu * norm2 * norm2).sqrt() - mu * norm2
    }

    /// [`Self::smoothed_concurrence`] and its Wirtinger gradient, plus the
    /// unsmoothed weight as the second value.
    pub fn smoothed_concurrence_grad(&mut self, v: &[C64], grad: &mut [C64], mu: f64) -> (f64, f64) {
        let (q, norm2) = self.radicand_grad(v, grad);
        let c = prefactor(self.n);
        let c2 = c * c;
        let exact = c * q.max(0.0).sqrt();
        if q <= 0.0 {
            grad.iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
        }
        let root = (c2 * q.max(0.0) + mu * mu * norm2 * norm2).sqrt();
        if root == 0.0 {
            grad.iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
            return (0.0, 0.0);
        }
        let lin = mu * mu * norm2 / root - mu;
        for (g, a) in grad.iter_mut().zip(v) {
            *g = *g * (c2 / (2.0 * root)) + a * lin;
        }
        (root - mu * norm2, exact)
    }
}

/// `C_N` of a normalized pure state.
pub fn concurrence_pure(psi: &PureState) -> Result<ConcurrenceValue> {
    let n = psi.num_qubits();
    if n < 2 {
        return Err(invalid("multipartite concurrence needs at least two qubits"));
    }
    if (psi.norm_sqr() - 1.0).abs() > crate::state::NORM_TOL {
        return Err(invalid("state is not normalized"));
    }
    let mut kernel = PureKernel::new(n)?;
    let q = kernel.radicand(psi.amplitudes());
    if q < RADICAND_CLAMP {
        return Err(Error::NumericInconsistency { radicand: q });
    }
    ConcurrenceValue::new(prefactor(n) * q.max(0.0).sqrt())
}

/// `C_2(Ψ) = √(2(1 − tr ϱ_r²))` for the bipartition given by `cut`.
pub fn concurrence_bipartite_pure(psi: &PureState, cut: SubsetMask) -> Result<ConcurrenceValue> {
    if cut.num_qubits() != psi.num_qubits() {
        return Err(invalid("cut and state have different qubit counts"));
    }
    if !cut.is_proper() {
        return Err(invalid("bipartition must leave both sides nonempty"));
    }
    let reduced = DensityMatrix::from_pure(psi).partial_trace(cut)?;
    let q = 2.0 * (1.0 - reduced.purity());
    if q < RADICAND_CLAMP {
        return Err(Error::NumericInconsistency { radicand: q });
    }
    ConcurrenceValue::new(q.max(0.0).sqrt())
}

/// Closed-form `C_N(GHZ_N) = 2^{1−N/2} √((2^N − 2)/2)`; valid up to `N = 1023`.
pub fn ghz_concurrence(n: usize) -> f64 {
    let two_n = 2f64.powi(n as i32);
    prefactor(n) * ((two_n - 2.0) / 2.0).sqrt()
}

/// Closed-form `C_N(GHZ)/C_N(W) = √((1 − 2^{1−N}) N/(N − 1))`.
pub fn ghz_w_ratio(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("ratio needs n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    Ok(((1.0 - 2f64.powi(1 - n as i32)) * nf / (nf - 1.0)).sqrt())
}

/// Exact two-qubit mixed-state concurrence, `max(0, λ1 − λ2 − λ3 − λ4)` with
/// `λ_i` the decreasing square roots of the eigenvalues of `ρ ρ̃`,
/// `ρ̃ = (σ_y⊗σ_y) ρ* (σ_y⊗σ_y)`.
pub fn wootters_concurrence_2q(rho: &DensityMatrix) -> Result<ConcurrenceValue> {
    if rho.num_qubits() != 2 {
        return Err(invalid(format!("two-qubit state required, got {} qubits", rho.num_qubits())));
    }
    let yy = DMatrix::from_fn(4, 4, |i, j| match (i, j) {
        (0, 3) | (3, 0) => C64::new(-1.0, 0.0),
        (1, 2) | (2, 1) => C64::new(1.0, 0.0),
        _ => C64::new(0.0, 0.0),
    });
    // λ_i are the singular values of τ = Wᵀ (σ_y⊗σ_y) W for any ρ = W W†
    let (vals, vecs) = rho.eigen();
    let kept: Vec<usize> = (0..4).filter(|&j| vals[j] > WOOTTERS_CUTOFF).collect();
    let w = DMatrix::from_fn(4, kept.len(), |r, c| vecs[(r, kept[c])] * vals[kept[c]].sqrt());
    let tau = w.transpose() * yy * &w;
    let mut l: Vec<f64> = tau.singular_values().iter().copied().collect();
    l.sort_by(|a, b| b.total_cmp(a));
    l.resize(4, 0.0);
    ConcurrenceValue::new((l[0] - l[1] - l[2] - l[3]).max(0.0))
}

/// `C_N` of the GHZ and W states of `n` qubits, evaluated from amplitudes.
pub fn family_concurrences(n: QubitCount) -> Result<(f64, f64)> {
    let g = concurrence_pure(&crate::state::ghz_state(n))?.value();
    let w = concurrence_pure(&crate::state::w_state(n))?.value();
    Ok((g, w))
}
