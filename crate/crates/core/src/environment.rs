//! Local Markovian decoherence: the three single-qubit environments, the
//! summed N-qubit generator, and two independent propagators.
//!
//! Conventions: ground `|0⟩`, excited `|1⟩`, `σ− = |0⟩⟨1|`, `σ+ = |1⟩⟨0|`,
//! so `σ+σ− = |1⟩⟨1|`.
//!
//! Every qubit couples to its own reservoir, so each single-qubit term acts
//! on the 2×2 blocks of ρ that share all other labels. Both the generator and
//! the exact channels are applied block by block as 4×4 superoperators; no
//! `4^N`-sized superoperator is ever built.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::state::{qubit_bit, DensityMatrix, C64};

/// Largest `Γ·dt` accepted for the RK4 propagator.
pub const RK4_STEP_GUARD: f64 = 0.05;
/// Completeness tolerance for Kraus sets.
pub const KRAUS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvironmentKind {
    /// Zero-temperature bath: `c = σ−`.
    #[serde(rename = "zero-t")]
    ZeroTemperature,
    /// Infinite-temperature bath: `c₁ = σ−`, `c₂ = σ+`, equal rates.
    #[serde(rename = "infinite-t")]
    InfiniteTemperature,
    /// Pure dephasing: `c = σ+σ−`.
    #[serde(rename = "dephasing")]
    Dephasing,
}

impl EnvironmentKind {
    pub const ALL: [EnvironmentKind; 3] = [
        EnvironmentKind::ZeroTemperature,
        EnvironmentKind::InfiniteTemperature,
        EnvironmentKind::Dephasing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EnvironmentKind::ZeroTemperature => "zero-t",
            EnvironmentKind::InfiniteTemperature => "infinite-t",
            EnvironmentKind::Dephasing => "dephasing",
        }
    }
}

impl fmt::Display for EnvironmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EnvironmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| invalid(format!("unknown environment '{s}'")))
    }
}

/// One decoherence model together with its rate `Γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub kind: EnvironmentKind,
    pub gamma: f64,
}

fn m2(a: f64, b: f64, c: f64, d: f64) -> Matrix2<C64> {
    Matrix2::new(C64::new(a, 0.0), C64::new(b, 0.0), C64::new(c, 0.0), C64::new(d, 0.0))
}

pub fn sigma_minus() -> Matrix2<C64> {
    m2(0.0, 1.0, 0.0, 0.0)
}

pub fn sigma_plus() -> Matrix2<C64> {
    m2(0.0, 0.0, 1.0, 0.0)
}

impl EnvironmentSpec {
    pub fn new(kind: EnvironmentKind, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid(format!("rate must be positive and finite, got {gamma}")));
        }
        Ok(Self { kind, gamma })
    }

    /// Coupling operators `c_i` with their rates `Γ_i`.
    pub fn couplings(&self) -> Vec<(f64, Matrix2<C64>)> {
        match self.kind {
            EnvironmentKind::ZeroTemperature => vec![(self.gamma, sigma_minus())],
            EnvironmentKind::InfiniteTemperature => {
                vec![(self.gamma, sigma_minus()), (self.gamma, sigma_plus())]
            }
            EnvironmentKind::Dephasing => vec![(self.gamma, sigma_plus() * sigma_minus())],
        }
    }

    /// Single-qubit Lindbladian
    /// `Σ_i Γ_i/2 (2 c_i ρ c_i† − c_i†c_i ρ − ρ c_i†c_i)` as a superoperator.
    pub fn lindbladian_superop(&self) -> Matrix4<C64> {
        let couplings = self.couplings();
        superop(|b| {
            couplings.iter().fold(Matrix2::zeros(), |acc, (g, c)| {
                let cd = c.adjoint();
                let cdc = cd * c;
                acc + (c * b * cd * C64::new(2.0, 0.0) - cdc * b - b * cdc) * C64::new(g / 2.0, 0.0)
            })
        })
    }
}

/// Row-major vectorization `(b00, b01, b10, b11)` of a 2×2 block.
fn vec2(b: &Matrix2<C64>) -> [C64; 4] {
    [b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]]
}

fn superop(map: impl Fn(&Matrix2<C64>) -> Matrix2<C64>) -> Matrix4<C64> {
    let mut s = Matrix4::zeros();
    for col in 0..4 {
        let mut basis = Matrix2::zeros();
        basis[(col / 2, col % 2)] = C64::new(1.0, 0.0);
        let out = vec2(&map(&basis));
        for row in 0..4 {
            s[(row, col)] = out[row];
        }
    }
    s
}

/// Applies a 4×4 single-qubit superoperator to qubit `k` of `mat`, adding
/// `scale ·` result into `out` (or overwriting when `accumulate` is false).
fn apply_block_superop(
    mat: &DMatrix<C64>,
    n: usize,
    k: usize,
    s: &Matrix4<C64>,
    out: &mut DMatrix<C64>,
    accumulate: bool,
) {
    let dim = mat.nrows();
    let mask = 1usize << qubit_bit(n, k);
    for j in (0..dim).filter(|j| j & mask == 0) {
        let j1 = j | mask;
        for i in (0..dim).filter(|i| i & mask == 0) {
            let i1 = i | mask;
            let b = [mat[(i, j)], mat[(i, j1)], mat[(i1, j)], mat[(i1, j1)]];
            let mut r = [C64::new(0.0, 0.0); 4];
            for (row, r) in r.iter_mut().enumerate() {
                *r = s[(row, 0)] * b[0] + s[(row, 1)] * b[1] + s[(row, 2)] * b[2] + s[(row, 3)] * b[3];
            }
            let idx = [(i, j), (i, j1), (i1, j), (i1, j1)];
            for (p, v) in idx.into_iter().zip(r) {
                if accumulate {
                    out[p] += v;
                } else {
                    out[p] = v;
                }
            }
        }
    }
}

/// `dρ/dt = Σ_k (𝟙⊗…⊗L_k⊗…⊗𝟙) ρ`.
pub fn apply_generator(rho: &DensityMatrix, env: &EnvironmentSpec) -> DMatrix<C64> {
    generator_matrix(rho.matrix(), rho.num_qubits(), &env.lindbladian_superop())
}

fn generator_matrix(mat: &DMatrix<C64>, n: usize, s: &Matrix4<C64>) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for k in 0..n {
        apply_block_superop(mat, n, k, s, &mut out, true);
    }
    out
}

/// Kraus representation of the exact single-qubit evolution over time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleQubitChannel {
    pub kraus: Vec<Matrix2<C64>>,
    pub time: f64,
}

impl SingleQubitChannel {
    /// `Σ K†K − 𝟙`, max entrywise.
    pub fn completeness_error(&self) -> f64 {
        let sum = self.kraus.iter().fold(Matrix2::<C64>::zeros(), |acc, k| acc + k.adjoint() * k);
        (sum - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn superop(&self) -> Matrix4<C64> {
        superop(|b| self.kraus.iter().fold(Matrix2::zeros(), |acc, k| acc + k * b * k.adjoint()))
    }

    /// Applies the channel to a single-qubit matrix.
    pub fn apply(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        self.kraus.iter().fold(Matrix2::zeros(), |acc, k| acc + k * rho * k.adjoint())
    }
}

/// Exact solution of the single-qubit master equation as a Kraus set.
///
/// Zero temperature is amplitude damping with excited-population factor
/// `e^{−Γt}`; dephasing scales coherences by `e^{−Γt/2}`; infinite
/// temperature is the Pauli channel that shrinks the Bloch `z` component by
/// `e^{−2Γt}` and `x, y` by `e^{−Γt}`. Zero-weight operators are dropped.
pub fn single_qubit_channel(env: &EnvironmentSpec, t: f64) -> Result<SingleQubitChannel> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("channel time must be nonnegative, got {t}")));
    }
    let gt = env.gamma * t;
    let pauli_x = m2(0.0, 1.0, 1.0, 0.0);
    let pauli_y = Matrix2::new(
        C64::new(0.0, 0.0),
        C64::new(0.0, -1.0),
        C64::new(0.0, 1.0),
        C64::new(0.0, 0.0),
    );
    let pauli_z = m2(1.0, 0.0, 0.0, -1.0);
    let weighted: Vec<(f64, Matrix2<C64>)> = match env.kind {
        EnvironmentKind::ZeroTemperature => {
            let decay = -(-gt).exp_m1(); // 1 − e^{−Γt}
            let keep = (-gt).exp();
            vec![
                (1.0, m2(1.0, 0.0, 0.0, keep.sqrt())),
                (1.0, m2(0.0, decay.sqrt(), 0.0, 0.0)),
            ]
        }
        EnvironmentKind::Dephasing => {
            let lambda = (-gt / 2.0).exp();
            vec![
                ((1.0 + lambda) / 2.0, Matrix2::identity()),
                (-(-gt / 2.0).exp_m1() / 2.0, pauli_z),
            ]
        }
        EnvironmentKind::InfiniteTemperature => {
            let s = (-gt).exp();
            let one_minus_s = -(-gt).exp_m1();
            vec![
                ((1.0 + s) * (1.0 + s) / 4.0, Matrix2::identity()),
                (one_minus_s * (1.0 + s) / 4.0, pauli_x),
                (one_minus_s * (1.0 + s) / 4.0, pauli_y),
                (one_minus_s * one_minus_s / 4.0, pauli_z),
            ]
        }
    };
    let kraus = weighted
        .into_iter()
        .map(|(w, k)| k * C64::new(w.sqrt(), 0.0))
        .filter(|k| k.iter().any(|z| z.norm() > 0.0))
        .collect();
    Ok(SingleQubitChannel { kraus, time: t })
}

/// Applies the exact channel for time `t` to every qubit.
pub fn evolve_exact(rho0: &DensityMatrix, env: &EnvironmentSpec, t: f64) -> Result<DensityMatrix> {
    let channel = single_qubit_channel(env, t)?;
    let s = channel.superop();
    let n = rho0.num_qubits();
    let mut cur = rho0.matrix().clone();
    let mut next = DMatrix::zeros(cur.nrows(), cur.ncols());
    for k in 0..n {
        apply_block_superop(&cur, n, k, &s, &mut next, false);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(DensityMatrix::from_matrix_unchecked(cur))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropagatorMethod {
    #[serde(rename = "exact")]
    ExactChannel,
    #[serde(rename = "rk4")]
    RungeKutta4,
}

impl FromStr for PropagatorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::ExactChannel),
            "rk4" => Ok(Self::RungeKutta4),
            _ => Err(invalid(format!("unknown propagator '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    pub method: PropagatorMethod,
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: usize,
}

impl PropagatorConfig {
    pub fn validate(&self, env: &EnvironmentSpec) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(invalid(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.dt > self.t_max {
            return Err(invalid(format!("dt {} exceeds t_max {}", self.dt, self.t_max)));
        }
        if self.sample_every == 0 {
            return Err(invalid("sample_every must be at least 1"));
        }
        if self.method == PropagatorMethod::RungeKutta4 && env.gamma * self.dt > RK4_STEP_GUARD {
            return Err(invalid(format!(
                "RK4 step guard violated: Γ·dt = {} > {RK4_STEP_GUARD}",
                env.gamma * self.dt
            )));
        }
        Ok(())
    }

    /// Number of integration steps; the effective step `t_max / steps` never
    /// exceeds `dt`.
    pub fn steps(&self) -> usize {
        ((self.t_max / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn step_size(&self) -> f64 {
        self.t_max / self.steps() as f64
    }

    /// Step indices at which samples are stored, starting at zero.
    pub fn sample_steps(&self) -> Vec<usize> {
        (0..=self.steps()).step_by(self.sample_every).collect()
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let h = self.step_size();
        self.sample_steps().into_iter().map(|s| s as f64 * h).collect()
    }
}

/// Density-matrix samples of one propagation run.
#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Classic fixed-step fourth-order Runge–Kutta integration of the generator.
pub fn evolve_ode(
    rho0: &DensityMatrix,
    env: &EnvironmentSpec,
    cfg: &PropagatorConfig,
) -> Result<StateTrajectory> {
    cfg.validate(env)?;
    let n = rho0.num_qubits();
    let s = env.lindbladian_superop();
    let h = C64::new(cfg.step_size(), 0.0);
    let half = C64::new(0.5, 0.0);
    let two = C64::new(2.0, 0.0);
    let sixth = C64::new(1.0 / 6.0, 0.0);
    let mut cur = rho0.matrix().clone();
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    for step in 1..=cfg.steps() {
        let k1 = generator_matrix(&cur, n, &s);
        let k2 = generator_matrix(&(&cur + &k1 * (h * half)), n, &s);
        let k3 = generator_matrix(&(&cur + &k2 * (h * half)), n, &s);
        let k4 = generator_matrix(&(&cur + &k3 * h), n, &s);
        cur += (k1 + k2 * two + k3 * two + k4) * (h * sixth);
        if step % cfg.sample_every == 0 {
            let rho = DensityMatrix::from_matrix_unchecked(cur.clone());
            if let Err(e) = rho.validate() {
                return Err(Error::IntegrationDiverged { step, reason: e.to_string() });
            }
            times.push(step as f64 * cfg.step_size());
            states.push(rho);
        }
    }
    Ok(StateTrajectory { times, states })
}

/// Samples the exact product-channel solution on the configured time grid.
pub fn propagate_exact(
    rho0: &DensityMatrix,
    env: &EnvironmentSpec,
    cfg: &PropagatorConfig,
) -> Result<StateTrajectory> {
    cfg.validate(env)?;
    let times = cfg.sample_times();
    let states = times
        .iter()
        .map(|&t| evolve_exact(rho0, env, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateTrajectory { times, states })
}

/// Dispatches on `cfg.method`.
pub fn propagate(
    rho0: &DensityMatrix,
    env: &EnvironmentSpec,
    cfg: &PropagatorConfig,
) -> Result<StateTrajectory> {
    match cfg.method {
        PropagatorMethod::ExactChannel => propagate_exact(rho0, env, cfg),
        PropagatorMethod::RungeKutta4 => evolve_ode(rho0, env, cfg),
    }
}
