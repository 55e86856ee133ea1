//! Convex-roof extension of the multipartite concurrence,
//! `C_N(ρ) = inf Σ_i p_i C_N(Ψ_i)` over decompositions `ρ = Σ_i p_i |Ψ_i⟩⟨Ψ_i|`.
//!
//! Every `m`-member decomposition of a rank-`r` state is reached from the
//! eigen-ensemble `{√λ_j e_j}` through an `m × r` isometry. The estimator
//! keeps the current ensemble as `m` unnormalized vectors and moves it by
//! left multiplication with `exp(X)`, `X` anti-Hermitian, so every iterate
//! reconstructs ρ exactly up to round-off. Since the concurrence radicand is
//! homogeneous, `p_i C_N(Ψ_i)` is evaluated directly on `√p_i Ψ_i`.
//!
//! The result is always an upper estimate of the infimum.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concurrence::{concurrence_pure, prefactor, ConcurrenceValue, PureKernel};
use crate::error::{invalid, Error, Result};
use crate::random::{random_unitary, stream_rng};
use crate::state::{hermitian_eigen, DensityMatrix, PureState, C64};

/// Eigenvalue cutoff for the canonical eigen-ensemble.
pub const EIGEN_CUTOFF: f64 = 1e-12;
/// Rank cutoff deciding eligibility for [`roof_rank2`].
pub const RANK2_CUTOFF: f64 = 1e-10;
/// Members with squared norm below this are dropped from a decomposition.
pub const MEMBER_FLOOR: f64 = 1e-14;
/// Armijo sufficient-decrease constant.
pub const ARMIJO: f64 = 1e-4;
/// Curvature pairs kept by the quasi-Newton direction.
const LBFGS_MEMORY: usize = 12;
/// Smallest trial step before the line search gives up.
const MIN_STEP: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Probability-weighted pure-state ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    probs: Vec<f64>,
    states: Vec<PureState>,
}

impl Decomposition {
    pub fn new(probs: Vec<f64>, states: Vec<PureState>) -> Result<Self> {
        if probs.is_empty() || probs.len() != states.len() {
            return Err(invalid("decomposition needs matching, nonempty weight and state lists"));
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(invalid("decomposition weights must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("decomposition weights sum to {total}")));
        }
        let dim = states[0].dim();
        if states.iter().any(|s| s.dim() != dim) {
            return Err(invalid("decomposition members have different dimensions"));
        }
        Ok(Self { probs, states })
    }

    /// Builds from unnormalized member vectors `√p_i Ψ_i`; members below
    /// [`MEMBER_FLOOR`] are dropped.
    pub(crate) fn from_weighted(n: usize, vectors: impl IntoIterator<Item = Vec<C64>>) -> Self {
        let mut probs = Vec::new();
        let mut states = Vec::new();
        for v in vectors {
            let p: f64 = v.iter().map(|a| a.norm_sqr()).sum();
            if p < MEMBER_FLOOR {
                continue;
            }
            let s = p.sqrt();
            probs.push(p);
            states.push(PureState::from_raw(n, v.into_iter().map(|a| a / s).collect()));
        }
        Self { probs, states }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn states(&self) -> &[PureState] {
        &self.states
    }

    pub fn num_qubits(&self) -> usize {
        self.states[0].num_qubits()
    }

    /// `√p_i Ψ_i` as the columns of a `dim × len` matrix.
    pub fn weighted_columns(&self) -> DMatrix<C64> {
        let dim = self.states[0].dim();
        DMatrix::from_fn(dim, self.len(), |r, c| self.states[c].amplitudes()[r] * self.probs[c].sqrt())
    }

    /// `Σ_i p_i |Ψ_i⟩⟨Ψ_i|`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let w = self.weighted_columns();
        &w * w.adjoint()
    }

    /// Max entrywise deviation of the reconstruction from `rho`.
    pub fn reconstruction_error(&self, rho: &DensityMatrix) -> f64 {
        (self.reconstruct() - rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Eigenvectors with eigenvalue above `cutoff`, weighted by their eigenvalues.
pub fn eigen_decomposition(rho: &DensityMatrix, cutoff: f64) -> Decomposition {
    let (vals, vecs) = rho.eigen();
    let kept: Vec<usize> = (0..vals.len()).filter(|&j| vals[j] > cutoff).collect();
    let total: f64 = kept.iter().map(|&j| vals[j]).sum();
    let n = rho.num_qubits();
    let probs = kept.iter().map(|&j| vals[j] / total).collect();
    let states = kept
        .iter()
        .map(|&j| PureState::from_raw(n, vecs.column(j).iter().copied().collect()))
        .collect();
    Decomposition { probs, states }
}

fn isometry_error(mixer: &DMatrix<C64>) -> f64 {
    let gram = mixer.adjoint() * mixer;
    (gram - DMatrix::identity(mixer.ncols(), mixer.ncols()))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `v_i = Σ_j mixer[i,j] √p_j Ψ_j`, renormalized into a new decomposition of
/// the same state.
pub fn mix_decomposition(base: &Decomposition, mixer: &DMatrix<C64>) -> Result<Decomposition> {
    if mixer.ncols() != base.len() {
        return Err(invalid(format!(
            "mixer has {} columns, decomposition has {} members",
            mixer.ncols(),
            base.len()
        )));
    }
    if mixer.nrows() < mixer.ncols() {
        return Err(invalid("mixer must have at least as many rows as columns"));
    }
    let err = isometry_error(mixer);
    if err > 1e-10 {
        return Err(invalid(format!("mixer columns are not orthonormal (deviation {err:e})")));
    }
    let mixed = base.weighted_columns() * mixer.transpose();
    let n = base.num_qubits();
    Ok(Decomposition::from_weighted(
        n,
        mixed.column_iter().map(|c| c.iter().copied().collect()),
    ))
}

/// `Σ_i p_i C_N(Ψ_i)`.
pub fn average_concurrence(d: &Decomposition) -> Result<f64> {
    d.probs
        .iter()
        .zip(&d.states)
        .map(|(p, s)| concurrence_pure(s).map(|c| p * c.value()))
        .sum()
}

/// How the descent direction is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    /// Closed-form Wirtinger gradient of the homogeneous concurrence.
    Analytic,
    /// Central differences along a basis of anti-Hermitian generators.
    FiniteDifference { step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofConfig {
    /// Ensemble size; `None` means twice the rank (at least rank + 2).
    pub ensemble_size: Option<usize>,
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub gradient: GradientMethod,
}

impl Default for RoofConfig {
    fn default() -> Self {
        Self {
            ensemble_size: None,
            restarts: 8,
            max_iters: 500,
            grad_tol: 1e-8,
            seed: 0,
            gradient: GradientMethod::Analytic,
        }
    }
}

impl RoofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol must be positive"));
        }
        if let GradientMethod::FiniteDifference { step } = self.gradient {
            if !(step > 0.0) {
                return Err(invalid("finite-difference step must be positive"));
            }
        }
        Ok(())
    }

    pub fn ensemble_size_for(&self, rank: usize) -> Result<usize> {
        match self.ensemble_size {
            None => Ok((2 * rank).max(rank + 2)),
            Some(m) if m >= rank => Ok(m),
            Some(m) => Err(invalid(format!("ensemble size {m} is below the rank {rank}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoofEstimate {
    pub value: ConcurrenceValue,
    pub converged: bool,
    pub iterations_used: usize,
    /// Max minus min of the final values across starts.
    pub spread: f64,
    /// Decomposition attaining `value`.
    pub decomposition: Decomposition,
}

/// Sum of `p_i C_N(Ψ_i)` over the columns of an ensemble matrix, optionally
/// smoothed at the conical zeros of `C_N` with width `mu`.
struct Objective {
    kernel: PureKernel,
    mu: f64,
}

impl Objective {
    fn exact(kernel: PureKernel) -> Self {
        Self { kernel, mu: 0.0 }
    }

    fn value(&mut self, v: &DMatrix<C64>) -> f64 {
        let dim = v.nrows();
        let mu = self.mu;
        v.as_slice()
            .chunks(dim)
            .map(|col| {
                if mu > 0.0 {
                    self.kernel.smoothed_concurrence(col, mu)
                } else {
                    self.kernel.weighted_concurrence(col)
                }
            })
            .sum()
    }

    /// Objective value with its Wirtinger gradient, plus the unsmoothed value.
    fn value_grad(&mut self, v: &DMatrix<C64>, grad: &mut DMatrix<C64>) -> (f64, f64) {
        let dim = v.nrows();
        let (mut total, mut exact) = (0.0, 0.0);
        for (col, g) in v.as_slice().chunks(dim).zip(grad.as_mut_slice().chunks_mut(dim)) {
            if col.iter().all(|a| a.norm_sqr() == 0.0) {
                g.iter_mut().for_each(|z| *z = ZERO);
                continue;
            }
            if self.mu > 0.0 {
                let (f, e) = self.kernel.smoothed_concurrence_grad(col, g, self.mu);
                total += f;
                exact += e;
            } else {
                let f = self.kernel.weighted_concurrence_grad(col, g);
                total += f;
                exact += f;
            }
        }
        (total, exact)
    }
}

/// Rotates the ensemble: column `i` of the result is `Σ_k E_ik v_k`.
fn rotate(v: &DMatrix<C64>, e: &DMatrix<C64>) -> DMatrix<C64> {
    v * e.transpose()
}

/// Two-loop recursion: `−H∇` for the inverse-Hessian model built from the
/// stored `(step, gradient change, 1/⟨step, change⟩)` triples. Steps and
/// gradients are left-trivialized, i.e. all live in the Lie algebra.
fn lbfgs_direction(d: &DMatrix<C64>, history: &VecDeque<(DMatrix<C64>, DMatrix<C64>, f64)>) -> DMatrix<C64> {
    let mut q = d.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = rho * c_dot(s, &q);
        q -= y * C64::new(alpha, 0.0);
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = history.back() {
        q *= C64::new(c_dot(s, y) / y.norm_squared(), 0.0);
    }
    for ((s, y, rho), alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * c_dot(y, &q);
        q += s * C64::new(alpha - beta, 0.0);
    }
    -q
}

/// `Re tr(A† B)`.
fn c_dot(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `exp(η S)` for anti-Hermitian `S = iH`, given the eigenpairs of `H`.
fn skew_exp(vals: &[f64], vecs: &DMatrix<C64>, eta: f64) -> DMatrix<C64> {
    let phases = DVector::from_iterator(vals.len(), vals.iter().map(|&h| C64::from_polar(1.0, eta * h)));
    let mut scaled = vecs.clone();
    for (j, ph) in phases.iter().enumerate() {
        for z in scaled.column_mut(j).iter_mut() {
            *z *= ph;
        }
    }
    scaled * vecs.adjoint()
}

/// Riemannian gradient on u(m) for the objective with Wirtinger gradients
/// `grad` at ensemble `v`.
fn skew_gradient(grad: &DMatrix<C64>, v: &DMatrix<C64>) -> DMatrix<C64> {
    let y = (grad.adjoint() * v).conjugate() * C64::new(2.0, 0.0);
    (&y - y.adjoint()) * C64::new(0.5, 0.0)
}

/// Generators of u(m) orthogonal under `Re tr(X†Y)`, with squared norms.
fn skew_basis(m: usize) -> Vec<(DMatrix<C64>, f64)> {
    let mut basis = Vec::with_capacity(m * m);
    for i in 0..m {
        let mut d = DMatrix::zeros(m, m);
        d[(i, i)] = C64::new(0.0, 1.0);
        basis.push((d, 1.0));
        for k in i + 1..m {
            let mut re = DMatrix::zeros(m, m);
            re[(i, k)] = C64::new(1.0, 0.0);
            re[(k, i)] = C64::new(-1.0, 0.0);
            basis.push((re, 2.0));
            let mut im = DMatrix::zeros(m, m);
            im[(i, k)] = C64::new(0.0, 1.0);
            im[(k, i)] = C64::new(0.0, 1.0);
            basis.push((im, 2.0));
        }
    }
    basis
}

fn finite_difference_gradient(obj: &mut Objective, v: &DMatrix<C64>, step: f64) -> DMatrix<C64> {
    let m = v.ncols();
    let mut out = DMatrix::zeros(m, m);
    for (b, norm2) in skew_basis(m) {
        let hb = b.clone() * C64::new(step, 0.0);
        let plus = rotate(v, &hb.exp());
        let minus = rotate(v, &(-hb).exp());
        let deriv = (obj.value(&plus) - obj.value(&minus)) / (2.0 * step);
        out += b * C64::new(deriv / norm2, 0.0);
    }
    out
}

struct DescentOutcome {
    value: f64,
    ensemble: DMatrix<C64>,
    iterations: usize,
    converged: bool,
    stalled_at_start: bool,
}

/// Smoothing widths for the continuation, ending on the exact objective.
const SMOOTHING: [f64; 4] = [1e-2, 1e-4, 1e-6, 0.0];

/// Steepest descent on the unitary orbit of `start`. `C_N` has conical
/// zeros where a member becomes a product state, and plain descent tends to
/// stall on those kinks, so the objective is first smoothed and the width
/// shrunk stage by stage. The best exact value seen is returned, so more
/// iterations never give a worse result.
fn descend(kernel: PureKernel, start: DMatrix<C64>, cfg: &RoofConfig) -> DescentOutcome {
    let mut obj = Objective::exact(kernel);
    let mut v = start;
    let mut grad = DMatrix::zeros(v.nrows(), v.ncols());
    let mut best = (obj.value(&v), v.clone());
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled_at_start = false;
    for (stage, &mu) in SMOOTHING.iter().enumerate() {
        obj.mu = mu;
        let last_stage = stage + 1 == SMOOTHING.len();
        let tol = cfg.grad_tol.max(mu * 0.1);
        let (mut f, mut exact) = obj.value_grad(&v, &mut grad);
        let mut stage_done = false;
        let mut history = VecDeque::with_capacity(LBFGS_MEMORY);
        let mut pending: Option<(DMatrix<C64>, DMatrix<C64>)> = None;
        while iterations < cfg.max_iters {
            if exact < best.0 {
                best = (exact, v.clone());
            }
            if exact <= 1e-15 {
                stage_done = true;
                break;
            }
            let d = match cfg.gradient {
                GradientMethod::Analytic => skew_gradient(&grad, &v),
                GradientMethod::FiniteDifference { step } => finite_difference_gradient(&mut obj, &v, step),
            };
            let gnorm2 = d.norm_squared();
            if gnorm2.sqrt() < tol {
                stage_done = true;
                break;
            }
            if let Some((d_old, step)) = pending.take() {
                let y = &d - d_old;
                let sy = c_dot(&step, &y);
                if sy > 1e-12 * step.norm() * y.norm() {
                    if history.len() == LBFGS_MEMORY {
                        history.pop_front();
                    }
                    history.push_back((step, y, 1.0 / sy));
                }
            }
            let mut dir = lbfgs_direction(&d, &history);
            let mut slope = c_dot(&d, &dir);
            if slope >= 0.0 {
                history.clear();
                dir = -&d;
                slope = -gnorm2;
            }
            let (vals, vecs) = hermitian_eigen(&(&dir * C64::new(0.0, -1.0)));
            let mut eta = 1.0;
            let mut accepted = None;
            while eta >= MIN_STEP {
                let trial = rotate(&v, &skew_exp(&vals, &vecs, eta));
                if obj.value(&trial) <= f + ARMIJO * eta * slope {
                    accepted = Some(trial);
                    break;
                }
                eta *= 0.5;
            }
            let Some(next) = accepted else {
                if !history.is_empty() {
                    // retry along the plain gradient
                    history.clear();
                    continue;
                }
                // no decrease at any trial step: stationary to line-search precision
                stalled_at_start |= stage == 0 && iterations == 0;
                stage_done = true;
                break;
            };
            pending = Some((d, dir * C64::new(eta, 0.0)));
            v = next;
            (f, exact) = obj.value_grad(&v, &mut grad);
            iterations += 1;
        }
        if exact < best.0 {
            best = (exact, v.clone());
        }
        if best.0 <= 1e-15 {
            converged = true;
            break;
        }
        if last_stage {
            converged = stage_done;
        }
        if iterations >= cfg.max_iters {
            break;
        }
    }
    DescentOutcome { value: best.0, ensemble: best.1, iterations, converged, stalled_at_start }
}

/// Least-squares isometry (polar factor) closest to `a`.
fn polar_isometry(a: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V†");
    u * vt
}

/// Ensemble matrix for the start in slot `slot`: 0 is the eigen-ensemble,
/// 1 the warm start when given, the rest Haar-random isometries.
fn start_ensemble(
    weighted_eigen: &DMatrix<C64>,
    m: usize,
    slot: usize,
    warm: Option<&DMatrix<C64>>,
    seed: u64,
) -> DMatrix<C64> {
    let (dim, r) = weighted_eigen.shape();
    let mut padded = DMatrix::zeros(dim, m);
    padded.columns_mut(0, r).copy_from(weighted_eigen);
    if slot == 0 {
        return padded;
    }
    if let (1, Some(mixer)) = (slot, warm) {
        return rotate(&padded, mixer);
    }
    let mut rng = stream_rng(seed, slot as u64);
    let u = random_unitary(m, &mut rng);
    rotate(&padded, &u)
}

/// Unitary `m × m` mixer that carries the eigen-ensemble of `rho` closest to
/// a previous decomposition (of a nearby state).
fn warm_mixer(prev: &Decomposition, vals: &[f64], vecs: &DMatrix<C64>, m: usize) -> DMatrix<C64> {
    let r = vals.len();
    let w = prev.weighted_columns();
    let rows = m.max(w.ncols());
    // A_ij = ⟨e_j|w_i⟩ / √λ_j, padded with zero rows
    let mut a = DMatrix::zeros(rows, m);
    for i in 0..w.ncols() {
        for j in 0..r {
            let overlap: C64 = vecs.column(j).iter().zip(w.column(i).iter()).map(|(e, x)| e.conj() * x).sum();
            a[(i, j)] = overlap / vals[j].sqrt();
        }
    }
    // complete the unused columns so the polar factor is a full unitary
    let mut rng = stream_rng(0x5eed, 0);
    let fill = random_unitary(rows, &mut rng);
    for j in r..m {
        for i in 0..rows {
            a[(i, j)] = fill[(i, j)] * 1e-3;
        }
    }
    let iso = polar_isometry(&a);
    iso.rows(0, m).into_owned()
}

/// Minimizes the average concurrence over decompositions of `rho` by
/// multi-start local descent on the unitary group.
pub fn estimate_roof(rho: &DensityMatrix, cfg: &RoofConfig) -> Result<RoofEstimate> {
    estimate_roof_from(rho, cfg, None)
}

/// As [`estimate_roof`], with an extra start seeded from `warm`, a
/// decomposition of a nearby state (e.g. the previous trajectory sample).
pub fn estimate_roof_from(
    rho: &DensityMatrix,
    cfg: &RoofConfig,
    warm: Option<&Decomposition>,
) -> Result<RoofEstimate> {
    cfg.validate()?;
    let n = rho.num_qubits();
    PureKernel::new(n)?;
    let (all_vals, all_vecs) = rho.eigen();
    let r = all_vals.iter().filter(|&&l| l > EIGEN_CUTOFF).count();
    if r == 0 {
        return Err(invalid("state has no eigenvalue above the cutoff"));
    }
    let total: f64 = all_vals[..r].iter().sum();
    let vals: Vec<f64> = all_vals[..r].iter().map(|l| l / total).collect();
    let vecs = all_vecs.columns(0, r).into_owned();
    let weighted = DMatrix::from_fn(vecs.nrows(), r, |i, j| vecs[(i, j)] * vals[j].sqrt());

    if r == 1 {
        let psi = PureState::from_raw(n, vecs.column(0).iter().copied().collect());
        let value = concurrence_pure(&psi)?;
        return Ok(RoofEstimate {
            value,
            converged: true,
            iterations_used: 0,
            spread: 0.0,
            decomposition: Decomposition { probs: vec![1.0], states: vec![psi] },
        });
    }

    let m = cfg.ensemble_size_for(r)?;
    let warm_u = warm
        .filter(|d| d.num_qubits() == n && d.len() <= m)
        .map(|d| warm_mixer(d, &vals, &vecs, m));
    let mut slots: Vec<usize> = vec![0];
    if warm_u.is_some() {
        slots.push(1);
    }
    slots.extend((0..cfg.restarts.saturating_sub(1)).map(|k| k + 2));

    let outcomes: Vec<DescentOutcome> = slots
        .par_iter()
        .map(|&slot| {
            let start = start_ensemble(&weighted, m, slot, warm_u.as_ref(), cfg.seed);
            descend(PureKernel::new(n).expect("checked above"), start, cfg)
        })
        .collect();

    // first minimal start wins ties, independent of completion order
    let best = outcomes
        .iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one start");
    let max = outcomes.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
    let spread = max - best.value;
    if outcomes.iter().all(|o| o.stalled_at_start) && best.value > 1e-12 && r > 1 && outcomes.len() > 1 {
        return Err(Error::OptimizationStalled { best: best.value });
    }
    let decomposition = Decomposition::from_weighted(
        n,
        best.ensemble.column_iter().map(|c| c.iter().copied().collect()),
    );
    Ok(RoofEstimate {
        value: ConcurrenceValue::new(best.value.max(0.0))?,
        converged: best.converged,
        iterations_used: best.iterations,
        spread,
        decomposition,
    })
}

/// Homogeneous radicand restricted to the span of two orthonormal vectors,
/// as a quadratic polynomial in the Bloch vector of the coefficient pair.
struct SpanQuadratic {
    coeffs: [f64; 9],
}

impl SpanQuadratic {
    fn features(b: [f64; 3]) -> [f64; 9] {
        let [x, y, z] = b;
        [1.0, x, y, z, x * x, y * y, x * y, x * z, y * z]
    }

    /// Radicand at coefficient pair `(a, b)`, i.e. of `a e1 + b e2`.
    fn radicand(&self, a: C64, b: C64) -> f64 {
        let norm2 = a.norm_sqr() + b.norm_sqr();
        if norm2 == 0.0 {
            return 0.0;
        }
        let cross = a.conj() * b;
        let bloch = [2.0 * cross.re / norm2, 2.0 * cross.im / norm2, (a.norm_sqr() - b.norm_sqr()) / norm2];
        let f = Self::features(bloch);
        norm2 * norm2 * f.iter().zip(&self.coeffs).map(|(x, c)| x * c).sum::<f64>()
    }
}

fn fit_span_quadratic(kernel: &mut PureKernel, e1: &[C64], e2: &[C64]) -> Option<SpanQuadratic> {
    // sample directions on the Bloch sphere
    let mut dirs = Vec::new();
    for i in 0..6 {
        let theta = PI * (i as f64 + 0.5) / 6.0;
        for j in 0..8 {
            let phi = 2.0 * PI * j as f64 / 8.0;
            dirs.push((theta, phi));
        }
    }
    dirs.push((0.0, 0.0));
    dirs.push((PI, 0.0));
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut v = vec![ZERO; e1.len()];
    for &(theta, phi) in &dirs {
        let a = C64::new((theta / 2.0).cos(), 0.0);
        let b = C64::from_polar((theta / 2.0).sin(), phi);
        for ((x, p), q) in v.iter_mut().zip(e1).zip(e2) {
            *x = a * p + b * q;
        }
        rows.push(SpanQuadratic::features([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]));
        rhs.push(kernel.radicand(&v));
    }
    let design = DMatrix::from_fn(rows.len(), 9, |i, j| rows[i][j]);
    let target = DVector::from_vec(rhs.clone());
    let svd = design.clone().svd(true, true);
    let sol = svd.solve(&target, 1e-12).ok()?;
    let residual = (&design * &sol - &target).amax();
    let scale = target.amax().max(1e-300);
    if residual > 1e-9 * scale.max(1.0) {
        return None;
    }
    let mut coeffs = [0.0; 9];
    coeffs.copy_from_slice(sol.as_slice());
    Some(SpanQuadratic { coeffs })
}

/// Numerically exact roof for states of rank at most two: exhaustive search
/// over two-member decompositions, parametrized by the first mixer row
/// `(cos θ, e^{iφ} sin θ)`, on a 512 × 512 grid followed by pattern-search
/// refinement from the best grid cells.
pub fn roof_rank2(rho: &DensityMatrix) -> Result<RoofEstimate> {
    let n = rho.num_qubits();
    let mut kernel = PureKernel::new(n)?;
    let (vals, vecs) = rho.eigen();
    let rank = vals.iter().filter(|&&l| l > RANK2_CUTOFF).count();
    if rank > 2 {
        return Err(invalid(format!("roof_rank2 needs rank ≤ 2, state has rank {rank}")));
    }
    if rank <= 1 {
        let psi = PureState::from_raw(n, vecs.column(0).iter().copied().collect());
        return Ok(RoofEstimate {
            value: concurrence_pure(&psi)?,
            converged: true,
            iterations_used: 0,
            spread: 0.0,
            decomposition: Decomposition { probs: vec![1.0], states: vec![psi] },
        });
    }
    let total = vals[0] + vals[1];
    let (l1, l2) = (vals[0] / total, vals[1] / total);
    let e1: Vec<C64> = vecs.column(0).iter().copied().collect();
    let e2: Vec<C64> = vecs.column(1).iter().copied().collect();
    let pref = prefactor(n);
    let (s1, s2) = (l1.sqrt(), l2.sqrt());

    let members = |theta: f64, phi: f64| -> [(C64, C64); 2] {
        let (st, ct) = theta.sin_cos();
        let ph = C64::from_polar(1.0, phi);
        [
            (C64::new(ct * s1, 0.0), ph * st * s2),
            (-ph.conj() * st * s1, C64::new(ct * s2, 0.0)),
        ]
    };
    let mut exact_buf = vec![ZERO; e1.len()];
    let mut exact = |theta: f64, phi: f64, kernel: &mut PureKernel| -> f64 {
        members(theta, phi)
            .iter()
            .map(|&(a, b)| {
                for ((x, p), q) in exact_buf.iter_mut().zip(&e1).zip(&e2) {
                    *x = a * p + b * q;
                }
                kernel.weighted_concurrence(&exact_buf)
            })
            .sum()
    };
    let quad = fit_span_quadratic(&mut kernel, &e1, &e2);

    const GRID: usize = 512;
    let dtheta = (PI / 2.0) / (GRID - 1) as f64;
    let dphi = 2.0 * PI / GRID as f64;
    let mut grid_vals = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        let theta = i as f64 * dtheta;
        for j in 0..GRID {
            let phi = j as f64 * dphi;
            let val = match &quad {
                Some(q) => members(theta, phi)
                    .iter()
                    .map(|&(a, b)| pref * q.radicand(a, b).max(0.0).sqrt())
                    .sum(),
                None => exact(theta, phi, &mut kernel),
            };
            grid_vals.push((val, theta, phi));
        }
    }
    grid_vals.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut iterations = 0;
    for &(_, theta0, phi0) in grid_vals.iter().take(8) {
        let (mut theta, mut phi) = (theta0, phi0);
        let mut f = exact(theta, phi, &mut kernel);
        let (mut st, mut sp) = (dtheta, dphi);
        while st > 1e-12 || sp > 1e-12 {
            let mut moved = false;
            for (dt, dp) in [(st, 0.0), (-st, 0.0), (0.0, sp), (0.0, -sp)] {
                let (t2, p2) = ((theta + dt).clamp(0.0, PI / 2.0), phi + dp);
                let f2 = exact(t2, p2, &mut kernel);
                iterations += 1;
                if f2 < f {
                    f = f2;
                    theta = t2;
                    phi = p2;
                    moved = true;
                    break;
                }
            }
            if !moved {
                st *= 0.5;
                sp *= 0.5;
            }
        }
        if f < best.0 {
            best = (f, theta, phi);
        }
    }
    let (value, theta, phi) = best;
    let decomposition = Decomposition::from_weighted(
        n,
        members(theta, phi).iter().map(|&(a, b)| e1.iter().zip(&e2).map(|(p, q)| a * p + b * q).collect()),
    );
    Ok(RoofEstimate {
        value: ConcurrenceValue::new(value.max(0.0))?,
        converged: true,
        iterations_used: iterations,
        spread: 0.0,
        decomposition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concurrence::wootters_concurrence_2q;
    use crate::environment::{evolve_exact, EnvironmentKind, EnvironmentSpec};
    use crate::random::{random_density, random_product_state, random_pure_state};
    use crate::state::{ghz_state, w_state, QubitCount};

    fn q(n: usize) -> QubitCount {
        QubitCount::new(n).unwrap()
    }

    fn dephased_ghz(n: usize, gt: f64) -> DensityMatrix {
        let env = EnvironmentSpec::new(EnvironmentKind::Dephasing, 1.0).unwrap();
        evolve_exact(&DensityMatrix::from_pure(&ghz_state(q(n))), &env, gt).unwrap()
    }

    fn mixture(states: &[PureState], weights: &[f64]) -> DensityMatrix {
        let d = states[0].dim();
        let mut m = DMatrix::zeros(d, d);
        for (s, w) in states.iter().zip(weights) {
            m += DensityMatrix::from_pure(s).matrix() * C64::new(*w, 0.0);
        }
        DensityMatrix::from_matrix(m).unwrap()
    }

    #[test]
    fn eigen_decomposition_examples() {
        let pure = DensityMatrix::from_pure(&w_state(q(3)));
        assert_eq!(eigen_decomposition(&pure, EIGEN_CUTOFF).len(), 1);

        let rho = dephased_ghz(3, 1.0);
        let d = eigen_decomposition(&rho, EIGEN_CUTOFF);
        assert_eq!(d.len(), 2);
        let c = (-1.5f64).exp();
        assert!((d.probs()[0] - (1.0 + c) / 2.0).abs() < 1e-12);
        assert!((d.probs()[1] - (1.0 - c) / 2.0).abs() < 1e-12);
        assert!(d.reconstruction_error(&rho) < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        let d = eigen_decomposition(&mixed, EIGEN_CUTOFF);
        assert_eq!(d.len(), 2);
        assert!(d.probs().iter().all(|p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn mixing_identity_and_rotation() {
        let rho = dephased_ghz(3, 1.0);
        let base = eigen_decomposition(&rho, EIGEN_CUTOFF);
        let same = mix_decomposition(&base, &DMatrix::identity(2, 2)).unwrap();
        for (a, b) in same.probs().iter().zip(base.probs()) {
            assert!((a - b).abs() < 1e-14);
        }

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rot = DMatrix::from_row_slice(2, 2, &[
            C64::new(h, 0.0), C64::new(h, 0.0),
            C64::new(-h, 0.0), C64::new(h, 0.0),
        ]);
        let mixed = mix_decomposition(&base, &rot).unwrap();
        assert!(mixed.reconstruction_error(&rho) < 1e-12);
        assert!((mixed.probs()[0] - 0.5).abs() < 1e-12);
        assert!((mixed.probs()[1] - 0.5).abs() < 1e-12);
        // members are a|0…0⟩ + b|1…1⟩ with |a|² = (1 ± e^{−3/2})/2
        let c = (-1.5f64).exp();
        for s in mixed.states() {
            let amps = s.amplitudes();
            assert!(amps[1..7].iter().all(|a| a.norm() < 1e-12));
            let pops = [amps[0].norm_sqr(), amps[7].norm_sqr()];
            assert!((pops[0].max(pops[1]) - (1.0 + (1.0 - c * c).sqrt()) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_random_isometry_reconstructs() {
        let mut rng = stream_rng(1, 0);
        let rho = random_density(3, 4, &mut rng);
        let base = eigen_decomposition(&rho, EIGEN_CUTOFF);
        let u = random_unitary(7, &mut rng);
        let mixer = u.columns(0, 4).into_owned();
        let mixed = mix_decomposition(&base, &mixer).unwrap();
        assert!(mixed.reconstruction_error(&rho) < 1e-10);
        let bad = DMatrix::from_element(7, 4, C64::new(1.0, 0.0));
        assert!(mix_decomposition(&base, &bad).is_err());
    }

    #[test]
    fn average_concurrence_examples() {
        let g = ghz_state(q(3));
        let d = Decomposition::new(vec![1.0], vec![g.clone()]).unwrap();
        assert!((average_concurrence(&d).unwrap() - 1.5f64.sqrt()).abs() < 1e-12);

        let a = PureState::basis(3, 0).unwrap();
        let b = PureState::basis(3, 5).unwrap();
        let d = Decomposition::new(vec![0.5, 0.5], vec![a, b]).unwrap();
        assert!(average_concurrence(&d).unwrap() < 1e-12);

        let d = eigen_decomposition(&dephased_ghz(3, 0.0), EIGEN_CUTOFF);
        assert!((average_concurrence(&d).unwrap() - 1.5f64.sqrt()).abs() < 1e-12);
        assert!(Decomposition::new(vec![0.5, 0.4], vec![g.clone(), g]).is_err());
    }

    #[test]
    fn roof_of_pure_state() {
        let psi = w_state(q(4));
        let rho = DensityMatrix::from_pure(&psi);
        let est = estimate_roof(&rho, &RoofConfig::default()).unwrap();
        assert!((est.value.value() - concurrence_pure(&psi).unwrap().value()).abs() < 1e-10);
        let r2 = roof_rank2(&rho).unwrap();
        assert!((r2.value.value() - est.value.value()).abs() < 1e-10);
    }

    #[test]
    fn fully_dephased_ghz_is_separable() {
        for n in [2, 3, 4] {
            let d = 1 << n;
            let states = [PureState::basis(n, 0).unwrap(), PureState::basis(n, d - 1).unwrap()];
            let rho = mixture(&states, &[0.5, 0.5]);
            let est = estimate_roof(&rho, &RoofConfig::default()).unwrap();
            assert!(est.value.value() < 1e-6, "n={n}: {}", est.value);
        }
    }

    #[test]
    fn dephased_ghz_matches_coherence() {
        for gt in [0.2, 0.7, 1.5] {
            let rho = dephased_ghz(3, gt);
            let expect = 1.5f64.sqrt() * (-1.5 * gt).exp();
            let est = estimate_roof(&rho, &RoofConfig::default()).unwrap();
            assert!((est.value.value() - expect).abs() < 1e-6, "gt={gt}: {} vs {expect}", est.value);
            let r2 = roof_rank2(&rho).unwrap();
            assert!((r2.value.value() - expect).abs() < 1e-8);
            assert!(est.decomposition.reconstruction_error(&rho) < 1e-8);
        }
    }

    #[test]
    fn werner_like_states_match_wootters() {
        let bell = DensityMatrix::from_pure(&ghz_state(q(2)));
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        for p in [0.2, 0.4, 0.6, 0.9] {
            let m = bell.matrix() * C64::new(p, 0.0) + mixed.matrix() * C64::new(1.0 - p, 0.0);
            let rho = DensityMatrix::from_matrix(m).unwrap();
            let w = wootters_concurrence_2q(&rho).unwrap().value();
            let est = estimate_roof(&rho, &RoofConfig::default()).unwrap().value.value();
            assert!((est - w).abs() < 2e-3, "p={p}: {est} vs {w}");
            assert!(est >= w - 1e-9);
        }
    }

    #[test]
    fn rank2_two_qubit_matches_wootters() {
        let mut rng = stream_rng(77, 0);
        for _ in 0..10 {
            let rho = random_density(2, 2, &mut rng);
            let w = wootters_concurrence_2q(&rho).unwrap().value();
            let r2 = roof_rank2(&rho).unwrap().value.value();
            assert!((r2 - w).abs() < 1e-4, "{r2} vs {w}");
        }
        let full = random_density(2, 4, &mut rng);
        assert!(roof_rank2(&full).is_err());
    }

    #[test]
    fn finite_difference_gradient_agrees() {
        let mut rng = stream_rng(8, 0);
        let rho = random_density(2, 3, &mut rng);
        let base = eigen_decomposition(&rho, EIGEN_CUTOFF);
        let v0 = base.weighted_columns();
        let mut padded = DMatrix::zeros(4, 4);
        padded.columns_mut(0, 3).copy_from(&v0);
        let v = rotate(&padded, &random_unitary(4, &mut rng));
        let mut obj = Objective::exact(PureKernel::new(2).unwrap());
        let mut grad = DMatrix::zeros(4, 4);
        obj.value_grad(&v, &mut grad);
        let analytic = skew_gradient(&grad, &v);
        let fd = finite_difference_gradient(&mut obj, &v, 1e-5);
        let diff = (&analytic - &fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-7, "max deviation {diff}");
        // directional secant at 1e-7 along the analytic direction
        let h = 1e-7;
        let dir = &analytic * C64::new(h, 0.0);
        let fp = obj.value(&rotate(&v, &dir.exp()));
        let fm = obj.value(&rotate(&v, &(-dir).exp()));
        let secant = (fp - fm) / (2.0 * h);
        assert!((secant - analytic.norm_squared()).abs() < 1e-5 * analytic.norm_squared().max(1.0));
    }

    #[test]
    fn finite_difference_mode_runs() {
        let rho = dephased_ghz(2, 0.5);
        let cfg = RoofConfig {
            gradient: GradientMethod::FiniteDifference { step: 1e-5 },
            restarts: 3,
            ..RoofConfig::default()
        };
        let est = estimate_roof(&rho, &cfg).unwrap();
        let expect = (-0.5f64).exp();
        assert!((est.value.value() - expect).abs() < 1e-5);
    }

    #[test]
    fn restarts_are_monotone() {
        let mut rng = stream_rng(4, 0);
        let rho = random_density(3, 3, &mut rng);
        let mut last = f64::INFINITY;
        for restarts in 1..=5 {
            let cfg = RoofConfig { restarts, max_iters: 60, ..RoofConfig::default() };
            let v = estimate_roof(&rho, &cfg).unwrap().value.value();
            assert!(v <= last + 1e-15);
            last = v;
        }
    }

    #[test]
    fn product_mixtures_are_separable() {
        let mut rng = stream_rng(12, 0);
        for (n, k) in [(3, 3), (3, 4), (4, 3), (4, 5)] {
            let states: Vec<PureState> = (0..k).map(|_| random_product_state(n, &mut rng)).collect();
            let raw: Vec<f64> = (1..=k).map(|j| j as f64).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let rho = mixture(&states, &weights);
            let est = estimate_roof(&rho, &RoofConfig::default()).unwrap();
            assert!(est.value.value() < 1e-4, "n={n} k={k}: {}", est.value);
            assert!(est.decomposition.reconstruction_error(&rho) < 1e-8);
        }
    }

    #[test]
    fn warm_start_is_used() {
        let rho = dephased_ghz(3, 0.5);
        let prev = estimate_roof(&dephased_ghz(3, 0.45), &RoofConfig::default()).unwrap();
        let cfg = RoofConfig { restarts: 1, ..RoofConfig::default() };
        let est = estimate_roof_from(&rho, &cfg, Some(&prev.decomposition)).unwrap();
        let expect = 1.5f64.sqrt() * (-0.75f64).exp();
        assert!((est.value.value() - expect).abs() < 1e-6);
    }

    #[test]
    fn ensemble_size_below_rank_rejected() {
        let mut rng = stream_rng(2, 0);
        let rho = random_density(2, 4, &mut rng);
        let cfg = RoofConfig { ensemble_size: Some(3), ..RoofConfig::default() };
        assert!(estimate_roof(&rho, &cfg).is_err());
        let _ = random_pure_state(2, &mut rng);
    }
}
