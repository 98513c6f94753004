//! Seeded inputs shared by the benchmarks.

use ltcmh::hashlearn::HashCodes;
use ltcmh::{LabelMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn codes(bits: usize, n: usize, rng: &mut ChaCha8Rng) -> HashCodes {
    HashCodes::from_sign(&uniform(bits, n, rng))
}

/// One label per row, drawn uniformly from `c`.
pub fn labels(n: usize, c: usize, rng: &mut ChaCha8Rng) -> LabelMatrix {
    let lists: Vec<Vec<usize>> = (0..n).map(|_| vec![rng.gen_range(0..c)]).collect();
    LabelMatrix::from_lists(c, &lists).expect("labels in range")
}

/// 0/1 relevance between two label sets.
pub fn similarity(a: &LabelMatrix, b: &LabelMatrix) -> Matrix {
    Matrix::from_fn(a.n(), b.n(), |i, j| if a.shares_label(i, b, j) { 1.0 } else { 0.0 })
}
