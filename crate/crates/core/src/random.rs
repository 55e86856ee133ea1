//! Seeded sampling of states and unitaries.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::state::{DensityMatrix, PureState, C64};

/// Generator for stream `stream` of master seed `seed`. Streams are
/// independent, so work split by stream does not depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random pure state on `n` qubits.
pub fn random_pure_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PureState {
    let amps = (0..1usize << n).map(|_| complex_normal(rng)).collect();
    PureState::normalized(amps).expect("gaussian vector is nonzero")
}

/// Random density matrix of the given rank (induced Ginibre ensemble).
pub fn random_density<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let dim = 1usize << n;
    let g = DMatrix::from_fn(dim, rank, |_, _| complex_normal(rng));
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::from_matrix_unchecked(m / tr)
}

/// Haar-random `m × m` unitary (QR of a Ginibre matrix with the phase fix).
pub fn random_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::from_fn(m, m, |_, _| complex_normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..m {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar-random single-qubit unitary as a 2×2 array.
pub fn random_qubit_unitary<R: Rng + ?Sized>(rng: &mut R) -> [[C64; 2]; 2] {
    let u = random_unitary(2, rng);
    [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]
}

/// Random product of `n` single-qubit pure states.
pub fn random_product_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PureState {
    let factors: Vec<PureState> = (0..n).map(|_| random_pure_state(1, rng)).collect();
    crate::state::product_state(&factors).expect("normalized factors")
}
