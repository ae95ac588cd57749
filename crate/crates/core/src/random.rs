//! Seeded generators for random states and local unitaries, used by the
//! property checks and the acceptance suite. Everything is deterministic in
//! the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::{c, C64, ComplexMatrix};
use crate::states::{DensityMatrix, PureState};

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent substream addressed by a word path under a master seed.
/// Each word is absorbed into a splitmix64 chain and the final state is
/// expanded into a full 256-bit ChaCha key, so streams for distinct paths
/// are unrelated and the result does not depend on the order in which
/// different paths are consumed.
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    splitmix64(&mut state);
    for &word in path {
        state ^= word.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(1);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

fn normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_complex(rng: &mut ChaCha12Rng) -> C64 {
    c(normal(rng), normal(rng))
}

/// Haar-like random pure state from normalized Gaussian amplitudes.
pub fn random_pure(rng: &mut ChaCha12Rng, dim: usize) -> PureState {
    loop {
        let amps: Vec<C64> = (0..dim).map(|_| random_complex(rng)).collect();
        if let Ok(s) = PureState::normalized(amps) {
            return s;
        }
    }
}

/// Full-rank random density matrix from a Ginibre factor G via G G^dagger.
pub fn random_density(rng: &mut ChaCha12Rng, dim: usize) -> DensityMatrix {
    let mut g = ComplexMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            g[(i, j)] = random_complex(rng);
        }
    }
    let raw = g.mul(&g.adjoint());
    let tr = raw.trace().re;
    DensityMatrix::new(raw.scale_re(1.0 / tr), 1e-10).expect("Ginibre construction is physical")
}

/// Random 2x2 unitary by Gram-Schmidt on Gaussian columns.
pub fn random_unitary_2(rng: &mut ChaCha12Rng) -> ComplexMatrix {
    loop {
        let a = [random_complex(rng), random_complex(rng)];
        let norm_a = (a[0].norm_sqr() + a[1].norm_sqr()).sqrt();
        if norm_a < 1e-6 {
            continue;
        }
        let u0 = [a[0] / norm_a, a[1] / norm_a];
        // Orthogonal complement of a unit vector in C^2 is determined up to phase.
        let u1 = [-u0[1].conj(), u0[0].conj()];
        let mut m = ComplexMatrix::zeros(2);
        m[(0, 0)] = u0[0];
        m[(1, 0)] = u0[1];
        m[(0, 1)] = u1[0];
        m[(1, 1)] = u1[1];
        return m;
    }
}
