//! Hash-code learning. With `φ = ½ Mxᵀ My`,
//!
//! ```text
//! Loss2 = −Σ_ij (S_ij φ_ij − log(1 + e^φ_ij)) + γ(‖B − Mx‖² + ‖B − My‖²) + η(‖Mx·1‖² + ‖My·1‖²)
//! ```
//!
//! The hash-side networks are trained by SGD on this loss with `B` fixed;
//! `B = sign(Mx + My)` is refreshed once per epoch over the whole base set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::similarity_block;
use crate::dataset::{Dataset, Modality};
use crate::diffkernel::{sigmoid, softplus, Matrix};
use crate::error::{Error, Result};
use crate::icae::{encode, encode_single, IcaeParams};
use crate::meta::{side_backward, side_forward, side_predict, HashSideParams, Variant};

/// `k × n` codes with entries exactly ±1, stored sample by sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashCodes {
    bits: usize,
    n: usize,
    signs: Vec<i8>,
}

impl HashCodes {
    /// Entrywise sign of a `k × n` matrix, `sign(0) = +1`.
    pub fn from_sign(m: &Matrix) -> Self {
        let (k, n) = m.shape();
        let mut signs = Vec::with_capacity(k * n);
        for j in 0..n {
            for r in 0..k {
                signs.push(if m[(r, j)] >= 0.0 { 1 } else { -1 });
            }
        }
        HashCodes { bits: k, n, signs }
    }

    /// From per-sample sign vectors; every entry must be ±1.
    pub fn from_signs(bits: usize, signs: Vec<i8>) -> Result<Self> {
        if bits == 0 || signs.len() % bits != 0 {
            return Err(Error::invalid(format!("{} signs do not form {bits}-bit codes", signs.len())));
        }
        if let Some(v) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!("hash code entry {v} is not ±1")));
        }
        Ok(HashCodes {
            bits,
            n: signs.len() / bits,
            signs,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn code(&self, j: usize) -> &[i8] {
        &self.signs[j * self.bits..(j + 1) * self.bits]
    }

    pub fn as_signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.bits, self.n, |r, j| self.signs[j * self.bits + r] as f64)
    }

    pub fn select(&self, idx: &[usize]) -> HashCodes {
        let signs = idx.iter().flat_map(|&j| self.code(j).iter().copied()).collect();
        HashCodes {
            bits: self.bits,
            n: idx.len(),
            signs,
        }
    }

    /// Fraction of entries that agree with `other`.
    pub fn agreement(&self, other: &HashCodes) -> Result<f64> {
        if self.bits != other.bits || self.n != other.n {
            return Err(Error::shape("HashCodes::agreement", (self.bits, self.n), (other.bits, other.n)));
        }
        if self.signs.is_empty() {
            return Ok(1.0);
        }
        let same = self.signs.iter().zip(&other.signs).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.signs.len() as f64)
    }

    /// `−1 ↦ 0`, `+1 ↦ 1`, each code padded to whole bytes, least significant bit first.
    pub fn pack(&self) -> Vec<u8> {
        let per = self.bits.div_ceil(8);
        let mut out = vec![0u8; per * self.n];
        for j in 0..self.n {
            for (r, &s) in self.code(j).iter().enumerate() {
                if s > 0 {
                    out[j * per + r / 8] |= 1 << (r % 8);
                }
            }
        }
        out
    }

    pub fn unpack(bits: usize, n: usize, bytes: &[u8]) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("codes need at least one bit"));
        }
        let per = bits.div_ceil(8);
        if bytes.len() != per * n {
            return Err(Error::shape("HashCodes::unpack", (per * n, 1), (bytes.len(), 1)));
        }
        let mut signs = Vec::with_capacity(bits * n);
        for j in 0..n {
            for r in 0..bits {
                signs.push(if bytes[j * per + r / 8] >> (r % 8) & 1 == 1 { 1 } else { -1 });
            }
            if bits % 8 != 0 && bytes[j * per + per - 1] >> (bits % 8) != 0 {
                return Err(Error::invalid(format!("code {j} has padding bits set")));
            }
        }
        Ok(HashCodes { bits, n, signs })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashHyper {
    pub gamma: f64,
    pub eta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for HashHyper {
    fn default() -> Self {
        HashHyper {
            gamma: 1.0,
            eta: 1.0,
            lr: 10f64.powf(-1.5),
            batch_size: 128,
            max_epochs: 500,
        }
    }
}

impl HashHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.eta >= 0.0) {
            return Err(Error::invalid("gamma and eta must be non-negative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::invalid("learning rate and batch size must be positive"));
        }
        Ok(())
    }
}

/// `φ_ij = ½ ⟨Mx_i, My_j⟩`.
pub fn phi(mx: &Matrix, my: &Matrix) -> Result<Matrix> {
    Ok(mx.matmul_tn(my)?.scale(0.5))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss2Parts {
    pub likelihood: f64,
    pub quantization: f64,
    pub balance: f64,
    pub total: f64,
}

fn check_meta(op: &'static str, mx: &Matrix, my: &Matrix, s: &Matrix, b: &Matrix) -> Result<()> {
    if my.shape() != mx.shape() {
        return Err(Error::shape(op, mx.shape(), my.shape()));
    }
    if s.shape() != (mx.cols(), my.cols()) {
        return Err(Error::shape(op, (mx.cols(), my.cols()), s.shape()));
    }
    if b.shape() != mx.shape() {
        return Err(Error::shape(op, mx.shape(), b.shape()));
    }
    Ok(())
}

pub fn loss2_parts(mx: &Matrix, my: &Matrix, s: &Matrix, b: &Matrix, gamma: f64, eta: f64) -> Result<Loss2Parts> {
    check_meta("loss2", mx, my, s, b)?;
    let p = phi(mx, my)?;
    let likelihood: f64 = -p
        .as_slice()
        .iter()
        .zip(s.as_slice())
        .map(|(&f, &sij)| sij * f - softplus(f))
        .sum::<f64>();
    let quantization = gamma * (b.sub(mx)?.frobenius_sq() + b.sub(my)?.frobenius_sq());
    let sq = |m: &Matrix| m.row_sums().iter().map(|v| v * v).sum::<f64>();
    let balance = eta * (sq(mx) + sq(my));
    Ok(Loss2Parts {
        likelihood,
        quantization,
        balance,
        total: likelihood + quantization + balance,
    })
}

pub fn loss2(mx: &Matrix, my: &Matrix, s: &Matrix, b: &Matrix, gamma: f64, eta: f64) -> Result<f64> {
    loss2_parts(mx, my, s, b, gamma, eta).map(|p| p.total)
}

/// Gradient of Loss2 w.r.t. the columns `m` of one modality's meta features.
///
/// `m` holds the columns being differentiated (`k × N`), `other` all of the
/// other modality's columns (`k × n`), `s` the `N × n` relevance rows, `b`
/// the matching code columns and `m_sum` this modality's full row sums `M·1`.
/// Column `i` is `½ Σ_j (σ(φ_ij) − S_ij) other_j + 2γ(m_i − b_i) + 2η·M·1`.
pub fn grad_meta_columns(m: &Matrix, other: &Matrix, s: &Matrix, b: &Matrix, m_sum: &[f64], gamma: f64, eta: f64) -> Result<Matrix> {
    let (k, nb) = m.shape();
    if other.rows() != k || s.shape() != (nb, other.cols()) || b.shape() != (k, nb) || m_sum.len() != k {
        return Err(Error::shape("grad_meta", (nb, other.cols()), s.shape()));
    }
    let mut g = phi(m, other)?;
    for (v, &sij) in g.as_mut_slice().iter_mut().zip(s.as_slice()) {
        *v = sigmoid(*v) - sij;
    }
    // other · gᵀ gives Σ_j g_ij other_j in column i
    let mut out = other.matmul_nt(&g)?.scale(0.5);
    for r in 0..k {
        for i in 0..nb {
            out[(r, i)] += 2.0 * gamma * (m[(r, i)] - b[(r, i)]) + 2.0 * eta * m_sum[r];
        }
    }
    Ok(out)
}

/// `∂Loss2/∂Mx` over the full set.
pub fn grad_meta_x(mx: &Matrix, my: &Matrix, s: &Matrix, b: &Matrix, gamma: f64, eta: f64) -> Result<Matrix> {
    check_meta("grad_meta_x", mx, my, s, b)?;
    grad_meta_columns(mx, my, s, b, &mx.row_sums(), gamma, eta)
}

/// `∂Loss2/∂My`: the same expression with the roles of the modalities exchanged.
pub fn grad_meta_y(mx: &Matrix, my: &Matrix, s: &Matrix, b: &Matrix, gamma: f64, eta: f64) -> Result<Matrix> {
    check_meta("grad_meta_y", mx, my, s, b)?;
    grad_meta_columns(my, mx, &s.transpose(), b, &my.row_sums(), gamma, eta)
}

/// `B = sign(Mx + My)` with `sign(0) = +1`.
pub fn update_b(mx: &Matrix, my: &Matrix) -> Result<HashCodes> {
    Ok(HashCodes::from_sign(&mx.add(my)?))
}

/// Where the commonality code fed to each side's meta features comes from
/// during hash training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommonInput {
    /// Both modalities of the training pair.
    Paired,
    /// Only the side's own modality, the other block zeroed, as at query time.
    #[default]
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashConfig {
    pub hyper: HashHyper,
    pub variant: Variant,
    pub common_input: CommonInput,
    pub seed: u64,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            hyper: HashHyper::default(),
            variant: Variant::Full,
            common_input: CommonInput::default(),
            seed: 0,
        }
    }
}

/// Frozen autoencoder outputs feeding the meta features of a sample set.
#[derive(Clone, Debug)]
pub struct FrozenCodes {
    pub raw_x: Matrix,
    pub raw_y: Matrix,
    pub cstar_x: Matrix,
    pub cstar_y: Matrix,
    pub px: Matrix,
    pub py: Matrix,
}

impl FrozenCodes {
    pub fn new(icae: &IcaeParams, dataset: &Dataset, idx: &[usize], common: CommonInput) -> Result<Self> {
        let raw_x = dataset.columns(Modality::Image, idx);
        let raw_y = dataset.columns(Modality::Text, idx);
        let (cstar_x, cstar_y, px, py) = match common {
            CommonInput::Paired => {
                let c = encode(icae, &raw_x, &raw_y)?;
                (c.cstar.clone(), c.cstar, c.px, c.py)
            }
            CommonInput::Single => {
                let (cx, px) = encode_single(icae, Modality::Image, &raw_x)?;
                let (cy, py) = encode_single(icae, Modality::Text, &raw_y)?;
                (cx, cy, px, py)
            }
        };
        Ok(FrozenCodes {
            raw_x,
            raw_y,
            cstar_x,
            cstar_y,
            px,
            py,
        })
    }

    pub fn len(&self) -> usize {
        self.raw_x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn parts(&self, modality: Modality) -> (&Matrix, &Matrix, &Matrix) {
        match modality {
            Modality::Image => (&self.raw_x, &self.cstar_x, &self.px),
            Modality::Text => (&self.raw_y, &self.cstar_y, &self.py),
        }
    }

    /// Meta features of every sample for one modality.
    pub fn meta(&self, side: &HashSideParams, variant: Variant, modality: Modality) -> Result<Matrix> {
        let (raw, c, p) = self.parts(modality);
        side_predict(side.side(modality), raw, c, p, variant.terms(modality))
    }
}

/// Per-epoch full-base Loss2 divided by `n²`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HashTrace {
    pub loss2: Vec<f64>,
}

fn side_step(
    side: &mut HashSideParams,
    frozen: &FrozenCodes,
    variant: Variant,
    modality: Modality,
    batch: &[usize],
    own_all: &mut Matrix,
    other_all: &Matrix,
    s_rows: &Matrix,
    b_batch: &Matrix,
    hyper: &HashHyper,
) -> Result<()> {
    let (raw, c, p) = frozen.parts(modality);
    *own_all = frozen.meta(side, variant, modality)?;
    let nets = side.side(modality);
    let (m, cache) = side_forward(
        nets,
        &raw.select_cols(batch),
        &c.select_cols(batch),
        &p.select_cols(batch),
        variant.terms(modality),
    )?;
    let grad = grad_meta_columns(&m, other_all, s_rows, b_batch, &own_all.row_sums(), hyper.gamma, hyper.eta)?;
    let scale = 1.0 / (other_all.cols() * batch.len()) as f64;
    let g = side_backward(nets, &cache, &grad.scale(scale))?;
    if !g.to_flat().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{} side gradient", modality.name())));
    }
    side.side_mut(modality).sgd_step(&g, hyper.lr)
}

/// Alternating optimization over the base split: per mini-batch an SGD step on
/// the image side then the text side (the other side's meta features and `B`
/// held fixed), and `B = sign(Mx + My)` after every epoch.
///
/// Each step differentiates the full-base Loss2 w.r.t. the batch columns and
/// divides by `n·N`. The stepping side's meta features are recomputed over
/// the whole base first, so the balance term sees current parameters.
pub fn train_hash(
    dataset: &Dataset,
    icae: &IcaeParams,
    mut side: HashSideParams,
    config: &HashConfig,
) -> Result<(HashSideParams, HashCodes, HashTrace)> {
    let hyper = &config.hyper;
    hyper.validate()?;
    side.validate()?;
    if dataset.base.is_empty() {
        return Err(Error::invalid("training needs a non-empty base split"));
    }
    if side.code_bits() != icae.code_bits() {
        return Err(Error::invalid(format!(
            "hash side code length {} differs from the autoencoder's {}",
            side.code_bits(),
            icae.code_bits()
        )));
    }
    let base = &dataset.base;
    let n = base.len();
    let frozen = FrozenCodes::new(icae, dataset, base, config.common_input)?;
    let base_labels = dataset.labels.select_rows(base);
    let all: Vec<usize> = (0..n).collect();
    let s_all = similarity_block(&base_labels, &all, &base_labels, &all);

    let mut mx = frozen.meta(&side, config.variant, Modality::Image)?;
    let mut my = frozen.meta(&side, config.variant, Modality::Text)?;
    let mut b = update_b(&mx, &my)?;
    let mut bm = b.to_matrix();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = all.clone();
    let mut trace = HashTrace::default();
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        for (iter, batch) in order.chunks(hyper.batch_size).enumerate() {
            let s_rows = s_all.select_rows(batch);
            let b_batch = bm.select_cols(batch);
            let tag = |e: Error| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {}, iteration {}: {msg}", epoch + 1, iter + 1)),
                other => other,
            };
            side_step(&mut side, &frozen, config.variant, Modality::Image, batch, &mut mx, &my, &s_rows, &b_batch, hyper)
                .map_err(tag)?;
            side_step(&mut side, &frozen, config.variant, Modality::Text, batch, &mut my, &mx, &s_rows, &b_batch, hyper)
                .map_err(tag)?;
        }
        mx = frozen.meta(&side, config.variant, Modality::Image)?;
        my = frozen.meta(&side, config.variant, Modality::Text)?;
        b = update_b(&mx, &my)?;
        bm = b.to_matrix();
        let value = loss2(&mx, &my, &s_all, &bm, hyper.gamma, hyper.eta)? / (n * n) as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("Loss2 after epoch {}", epoch + 1)));
        }
        trace.loss2.push(value);
    }
    Ok((side, b, trace))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::diffkernel::{finite_diff_grad, relative_error};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_s(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = 1.0;
            for j in 0..i {
                let v = rng.gen_bool(0.4) as u8 as f64;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    #[test]
    fn phi_cases() {
        let mx = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let my = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = phi(&mx, &my).unwrap();
        assert_eq!(p[(0, 0)], 0.0);
        assert_eq!(sigmoid(p[(0, 0)]), 0.5);
        let q = phi(&mx, &mx).unwrap();
        assert_eq!(q[(0, 0)], 0.5);
        assert_eq!(q[(1, 1)], 0.5);

        let (a, b) = (random(4, 3, 1), random(4, 3, 2));
        let p = phi(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..4).map(|r| a[(r, i)] * b[(r, j)]).sum();
                assert!((p[(i, j)] - 0.5 * dot).abs() < 1e-15);
            }
        }
        assert!(phi(&a, &random(3, 3, 0)).is_err());
    }

    #[test]
    fn loss2_single_sample() {
        let one = Matrix::filled(1, 1, 1.0);
        let parts = loss2_parts(&one, &one, &one, &one, 1.0, 1.0).unwrap();
        assert!((parts.likelihood - -(0.5 - (1.0 + 0.5f64.exp()).ln())).abs() < 1e-15);
        assert_eq!(parts.quantization, 0.0);
        assert_eq!(parts.balance, 2.0);
        assert!((parts.total - (parts.likelihood + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn loss2_zero_phi() {
        let n = 4;
        let z = Matrix::zeros(3, n);
        let v = loss2(&z, &z, &random_s(n, 3), &Matrix::filled(3, n, 1.0), 0.0, 0.0).unwrap();
        assert!((v - (n * n) as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_scales_quantization_only() {
        let (mx, my, s) = (random(3, 4, 4), random(3, 4, 5), random_s(4, 6));
        let b = update_b(&random(3, 4, 7), &Matrix::zeros(3, 4)).unwrap().to_matrix();
        let a = loss2_parts(&mx, &my, &s, &b, 0.7, 0.3).unwrap();
        let d = loss2_parts(&mx, &my, &s, &b, 1.4, 0.3).unwrap();
        assert!((d.quantization - 2.0 * a.quantization).abs() < 1e-12);
        assert_eq!(d.likelihood, a.likelihood);
        assert_eq!(d.balance, a.balance);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // Zero-sum columns, B = Mx, and S = σ(φ).
        let mx = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let my = Matrix::from_rows(&[vec![0.5, -0.5], vec![0.3, -0.3]]).unwrap();
        let s = phi(&mx, &my).unwrap().map(sigmoid);
        let g = grad_meta_x(&mx, &my, &s, &mx, 1.0, 1.0).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let (k, n) = (4, 5);
            let (mx, my, s) = (random(k, n, 10 + seed), random(k, n, 20 + seed), random_s(n, 30 + seed));
            let b = update_b(&random(k, n, 40 + seed), &Matrix::zeros(k, n)).unwrap().to_matrix();
            let (gamma, eta) = (0.8, 0.6);
            let gx = grad_meta_x(&mx, &my, &s, &b, gamma, eta).unwrap();
            let nx = finite_diff_grad(|m| loss2(m, &my, &s, &b, gamma, eta).unwrap(), &mx, 1e-5).unwrap();
            assert!(relative_error(gx.as_slice(), nx.as_slice()) < 1e-4);
            let gy = grad_meta_y(&mx, &my, &s, &b, gamma, eta).unwrap();
            let ny = finite_diff_grad(|m| loss2(&mx, m, &s, &b, gamma, eta).unwrap(), &my, 1e-5).unwrap();
            assert!(relative_error(gy.as_slice(), ny.as_slice()) < 1e-4);
        }
    }

    #[test]
    fn y_gradient_is_x_gradient_with_roles_exchanged() {
        let (mx, my) = (random(3, 4, 50), random(3, 4, 51));
        let mut s = random_s(4, 52);
        s[(0, 1)] = 1.0;
        s[(1, 0)] = 0.0;
        let b = update_b(&mx, &my).unwrap().to_matrix();
        let gy = grad_meta_y(&mx, &my, &s, &b, 1.0, 1.0).unwrap();
        let swapped = grad_meta_x(&my, &mx, &s.transpose(), &b, 1.0, 1.0).unwrap();
        assert_eq!(gy, swapped);
    }

    #[test]
    fn column_gradient_matches_full() {
        let (mx, my, s) = (random(3, 6, 60), random(3, 6, 61), random_s(6, 62));
        let b = update_b(&mx, &my).unwrap().to_matrix();
        let full = grad_meta_x(&mx, &my, &s, &b, 1.0, 0.5).unwrap();
        let cols = [4, 1];
        let part = grad_meta_columns(&mx.select_cols(&cols), &my, &s.select_rows(&cols), &b.select_cols(&cols), &mx.row_sums(), 1.0, 0.5).unwrap();
        assert!(part.sub(&full.select_cols(&cols)).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn sign_update_cases() {
        let b = update_b(&Matrix::filled(2, 3, 0.5), &Matrix::filled(2, 3, 0.1)).unwrap();
        assert!(b.as_signs().iter().all(|&s| s == 1));
        let b = update_b(&Matrix::filled(1, 1, 0.5), &Matrix::filled(1, 1, -0.5)).unwrap();
        assert_eq!(b.as_signs(), &[1]);
        let b = update_b(&Matrix::filled(1, 1, -0.5), &Matrix::filled(1, 1, 0.25)).unwrap();
        assert_eq!(b.as_signs(), &[-1]);
    }

    #[test]
    fn sign_update_is_optimal_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..20 {
            let k = rng.gen_range(1..=3);
            let n = rng.gen_range(1..=12 / k);
            let (mx, my) = (random(k, n, rng.gen()), random(k, n, rng.gen()));
            let sum = mx.add(&my).unwrap();
            let best = update_b(&mx, &my).unwrap().to_matrix().hadamard(&sum).unwrap().sum();
            for mask in 0u32..(1 << (k * n)) {
                let cand = Matrix::from_fn(k, n, |r, j| if mask >> (r * n + j) & 1 == 1 { 1.0 } else { -1.0 });
                assert!(cand.hadamard(&sum).unwrap().sum() <= best + 1e-12);
            }
        }
    }

    #[test]
    fn pack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for bits in [1, 7, 8, 9, 16, 33] {
            let signs: Vec<i8> = (0..bits * 5).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let codes = HashCodes::from_signs(bits, signs).unwrap();
            let packed = codes.pack();
            assert_eq!(packed.len(), bits.div_ceil(8) * 5);
            assert_eq!(HashCodes::unpack(bits, 5, &packed).unwrap(), codes);
        }
        assert!(HashCodes::unpack(3, 1, &[0b1000]).is_err());
        assert!(HashCodes::from_signs(2, vec![1, 0]).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = random(5, 4, 90);
        let codes = HashCodes::from_sign(&m);
        assert_eq!(HashCodes::from_sign(&codes.to_matrix()), codes);
        assert_eq!(codes.select(&[2]).code(0), codes.code(2));
    }
}
