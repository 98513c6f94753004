//! Individuality-commonality autoencoder.
//!
//! Two individuality encoders map each modality to `Px`, `Py`; a commonality
//! encoder maps the stacked modalities `[Fx; Fy]` to `C*`; each decoder
//! reconstructs its modality from `[C*; Pv]`. Training minimizes
//!
//! ```text
//! Loss1 = α·J1(C*) + β·HSIC(Px, Py) + Σ_v ‖Fv − dec_v([C*; Pv])‖² / (n·d_v)
//! ```
//!
//! with J1 evaluated on the batch's label prototypes of `C*`.
//!
//! During training one modality's block of the commonality input is zeroed
//! on a random subset of batches, so `C*` stays meaningful when only one
//! modality is available at query time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{label_affinity, j1_with_laplacian, LabelAffinity, PrototypePooling};
use crate::dataset::{Dataset, LabelMatrix, Modality};
use crate::diffkernel::{Activation, Matrix, Mlp, MlpGrads};
use crate::error::{Error, Result};
use crate::hsic::hsic_grad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeHyper {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AeHyper {
    fn default() -> Self {
        AeHyper { alpha: 0.05, beta: 0.05 }
    }
}

pub fn hidden_width(code_bits: usize) -> usize {
    (2 * code_bits).max(64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcaeParams {
    pub enc_ind_x: Mlp,
    pub enc_ind_y: Mlp,
    pub enc_common: Mlp,
    pub dec_x: Mlp,
    pub dec_y: Mlp,
    pub hyper: AeHyper,
}

/// Individuality and commonality codes, `k × n` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Codes {
    pub px: Matrix,
    pub py: Matrix,
    pub cstar: Matrix,
}

#[derive(Clone, Debug)]
pub struct IcaeGrads {
    pub enc_ind_x: MlpGrads,
    pub enc_ind_y: MlpGrads,
    pub enc_common: MlpGrads,
    pub dec_x: MlpGrads,
    pub dec_y: MlpGrads,
}

impl IcaeGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.enc_ind_x, &self.enc_ind_y, &self.enc_common, &self.dec_x, &self.dec_y]
            .iter()
            .flat_map(|g| g.to_flat())
            .collect()
    }
}

/// Per-modality label affinities used by J1.
#[derive(Clone, Debug)]
pub struct LabelAffinities {
    pub x: LabelAffinity,
    pub y: LabelAffinity,
}

impl LabelAffinities {
    /// Affinities from the base split's features.
    pub fn from_base(dataset: &Dataset) -> Result<Self> {
        let labels = dataset.labels.select_rows(&dataset.base);
        Ok(LabelAffinities {
            x: label_affinity(&dataset.features_x.select_rows(&dataset.base), &labels)?,
            y: label_affinity(&dataset.features_y.select_rows(&dataset.base), &labels)?,
        })
    }
}

fn two_layer(input: usize, output: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    Mlp::build(&[input, hidden, output], Activation::Tanh, Activation::Identity, rng)
}

impl IcaeParams {
    pub fn new(dim_x: usize, dim_y: usize, code_bits: usize, hyper: AeHyper, seed: u64) -> Result<Self> {
        if dim_x == 0 || dim_y == 0 || code_bits == 0 {
            return Err(Error::invalid("autoencoder dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hidden_width(code_bits);
        Ok(IcaeParams {
            enc_ind_x: two_layer(dim_x, code_bits, h, &mut rng)?,
            enc_ind_y: two_layer(dim_y, code_bits, h, &mut rng)?,
            enc_common: two_layer(dim_x + dim_y, code_bits, h, &mut rng)?,
            dec_x: two_layer(2 * code_bits, dim_x, h, &mut rng)?,
            dec_y: two_layer(2 * code_bits, dim_y, h, &mut rng)?,
            hyper,
        })
    }

    pub fn code_bits(&self) -> usize {
        self.enc_common.out_dim()
    }

    pub fn dim_x(&self) -> usize {
        self.enc_ind_x.in_dim()
    }

    pub fn dim_y(&self) -> usize {
        self.enc_ind_y.in_dim()
    }

    pub fn networks(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("enc_ind_x", &self.enc_ind_x),
            ("enc_ind_y", &self.enc_ind_y),
            ("enc_common", &self.enc_common),
            ("dec_x", &self.dec_x),
            ("dec_y", &self.dec_y),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.code_bits();
        if self.enc_ind_x.out_dim() != k || self.enc_ind_y.out_dim() != k {
            return Err(Error::invalid("individuality encoders must output k dims"));
        }
        if self.enc_common.in_dim() != self.dim_x() + self.dim_y() {
            return Err(Error::invalid("commonality encoder input must be dim_x + dim_y"));
        }
        if self.dec_x.in_dim() != 2 * k || self.dec_y.in_dim() != 2 * k {
            return Err(Error::invalid("decoders take [C*; Pv], 2k dims"));
        }
        if self.dec_x.out_dim() != self.dim_x() || self.dec_y.out_dim() != self.dim_y() {
            return Err(Error::invalid("decoders must reconstruct the input dims"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|(_, m)| m.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.networks().iter().flat_map(|(_, m)| m.to_flat()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("IcaeParams::set_flat", (self.param_count(), 1), (flat.len(), 1)));
        }
        let mut off = 0;
        for m in [
            &mut self.enc_ind_x,
            &mut self.enc_ind_y,
            &mut self.enc_common,
            &mut self.dec_x,
            &mut self.dec_y,
        ] {
            let n = m.param_count();
            m.set_flat(&flat[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    /// Rescales every code dimension to unit root-mean-square over the given
    /// batch. Encoder output rows are divided by the scale and the matching
    /// decoder input columns multiplied by it, so reconstructions and the
    /// individuality HSIC are unchanged. Returns the scales `[C*, Px, Py]`.
    pub fn standardize_codes(&mut self, fx: &Matrix, fy: &Matrix) -> Result<[Vec<f64>; 3]> {
        let codes = encode(self, fx, fy)?;
        let k = self.code_bits();
        let rms = |m: &Matrix| -> Vec<f64> {
            (0..k)
                .map(|r| {
                    let ms = m.row(r).iter().map(|v| v * v).sum::<f64>() / m.cols().max(1) as f64;
                    ms.sqrt().max(1e-8)
                })
                .collect()
        };
        let scales = [rms(&codes.cstar), rms(&codes.px), rms(&codes.py)];
        fn shrink_output(mlp: &mut Mlp, s: &[f64]) {
            let last = mlp.layers.last_mut().expect("encoder has layers");
            for (r, &sr) in s.iter().enumerate() {
                for c in 0..last.weight.cols() {
                    last.weight[(r, c)] /= sr;
                }
                last.bias[r] /= sr;
            }
        }
        fn grow_input(mlp: &mut Mlp, sc: &[f64], sp: &[f64]) {
            let first = &mut mlp.layers[0];
            let k = sc.len();
            for o in 0..first.weight.rows() {
                for r in 0..k {
                    first.weight[(o, r)] *= sc[r];
                    first.weight[(o, k + r)] *= sp[r];
                }
            }
        }
        shrink_output(&mut self.enc_common, &scales[0]);
        shrink_output(&mut self.enc_ind_x, &scales[1]);
        shrink_output(&mut self.enc_ind_y, &scales[2]);
        grow_input(&mut self.dec_x, &scales[0], &scales[1]);
        grow_input(&mut self.dec_y, &scales[0], &scales[2]);
        Ok(scales)
    }

    fn sgd_step(&mut self, g: &IcaeGrads, lr: f64) -> Result<()> {
        self.enc_ind_x.sgd_step(&g.enc_ind_x, lr)?;
        self.enc_ind_y.sgd_step(&g.enc_ind_y, lr)?;
        self.enc_common.sgd_step(&g.enc_common, lr)?;
        self.dec_x.sgd_step(&g.dec_x, lr)?;
        self.dec_y.sgd_step(&g.dec_y, lr)
    }
}

fn common_input(fx: &Matrix, fy: &Matrix, drop: Option<Modality>) -> Result<Matrix> {
    match drop {
        None => fx.vstack(fy),
        Some(Modality::Image) => Matrix::zeros(fx.rows(), fx.cols()).vstack(fy),
        Some(Modality::Text) => fx.vstack(&Matrix::zeros(fy.rows(), fy.cols())),
    }
}

fn check_batch(params: &IcaeParams, fx: &Matrix, fy: &Matrix) -> Result<()> {
    if fx.rows() != params.dim_x() {
        return Err(Error::shape("icae image input", (params.dim_x(), fx.cols()), fx.shape()));
    }
    if fy.rows() != params.dim_y() {
        return Err(Error::shape("icae text input", (params.dim_y(), fy.cols()), fy.shape()));
    }
    if fx.cols() != fy.cols() {
        return Err(Error::shape("icae batch", (fy.rows(), fx.cols()), fy.shape()));
    }
    Ok(())
}

/// Codes for a batch (`fx`: `d_x × n`, `fy`: `d_y × n`). `drop` zeroes one
/// modality's block of the commonality encoder input.
pub fn encode_masked(params: &IcaeParams, fx: &Matrix, fy: &Matrix, drop: Option<Modality>) -> Result<Codes> {
    check_batch(params, fx, fy)?;
    Ok(Codes {
        px: params.enc_ind_x.predict(fx)?,
        py: params.enc_ind_y.predict(fy)?,
        cstar: params.enc_common.predict(&common_input(fx, fy, drop)?)?,
    })
}

pub fn encode(params: &IcaeParams, fx: &Matrix, fy: &Matrix) -> Result<Codes> {
    encode_masked(params, fx, fy, None)
}

/// Commonality and individuality for one modality alone; the other block of
/// the commonality input is zero.
pub fn encode_single(params: &IcaeParams, modality: Modality, features: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = features.cols();
    let (fx, fy) = match modality {
        Modality::Image => (features.clone(), Matrix::zeros(params.dim_y(), n)),
        Modality::Text => (Matrix::zeros(params.dim_x(), n), features.clone()),
    };
    check_batch(params, &fx, &fy)?;
    let cstar = params.enc_common.predict(&common_input(&fx, &fy, Some(modality.other()))?)?;
    let p = match modality {
        Modality::Image => params.enc_ind_x.predict(&fx)?,
        Modality::Text => params.enc_ind_y.predict(&fy)?,
    };
    Ok((cstar, p))
}

#[derive(Clone, Debug)]
pub struct ReconstructionGrads {
    pub dec_x: MlpGrads,
    pub dec_y: MlpGrads,
    pub cstar: Matrix,
    pub px: Matrix,
    pub py: Matrix,
}

/// `J3 = Σ_v ‖Fv − dec_v([C*; Pv])‖²_F / (n·d_v)` with gradients for the
/// decoders and the codes.
pub fn reconstruction_loss(params: &IcaeParams, fx: &Matrix, fy: &Matrix, codes: &Codes) -> Result<(f64, ReconstructionGrads)> {
    check_batch(params, fx, fy)?;
    let k = params.code_bits();
    let n = fx.cols();
    let mut j3 = 0.0;
    let mut dcstar = Matrix::zeros(k, n);
    let mut side = |dec: &Mlp, target: &Matrix, p: &Matrix| -> Result<(MlpGrads, Matrix)> {
        let input = codes.cstar.vstack(p)?;
        let (rec, tape) = dec.forward(&input)?;
        let resid = rec.sub(target)?;
        let norm = 1.0 / (n * target.rows()) as f64;
        j3 += resid.frobenius_sq() * norm;
        let (grads, dinput) = dec.backward(&tape, &resid.scale(2.0 * norm))?;
        let (dc, dp) = dinput.split_rows(k);
        dcstar.add_scaled(&dc, 1.0)?;
        Ok((grads, dp))
    };
    let (dec_x, px) = side(&params.dec_x, fx, &codes.px)?;
    let (dec_y, py) = side(&params.dec_y, fy, &codes.py)?;
    Ok((
        j3,
        ReconstructionGrads {
            dec_x,
            dec_y,
            cstar: dcstar,
            px,
            py,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct Loss1Output {
    pub value: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub grads: IcaeGrads,
}

/// `α·J1 + β·J2 + J3` on one batch and gradients for every autoencoder parameter.
///
/// `labels` are the batch's rows; J1 only uses labels present in the batch.
pub fn loss1(
    params: &IcaeParams,
    fx: &Matrix,
    fy: &Matrix,
    labels: &LabelMatrix,
    affinities: &LabelAffinities,
    drop: Option<Modality>,
) -> Result<Loss1Output> {
    check_batch(params, fx, fy)?;
    let n = fx.cols();
    if labels.n() != n {
        return Err(Error::shape("loss1 labels", (n, labels.num_labels()), (labels.n(), labels.num_labels())));
    }
    let AeHyper { alpha, beta } = params.hyper;

    let (px, tape_x) = params.enc_ind_x.forward(fx)?;
    let (py, tape_y) = params.enc_ind_y.forward(fy)?;
    let cin = common_input(fx, fy, drop)?;
    let (cstar, tape_c) = params.enc_common.forward(&cin)?;
    let codes = Codes { px, py, cstar };

    let pooling = PrototypePooling::new(labels);
    let protos = pooling.pool(&codes.cstar)?;
    let lap = affinities
        .x
        .laplacian(Some(&pooling.present))
        .add(&affinities.y.laplacian(Some(&pooling.present)))?;
    let (j1, gproto) = j1_with_laplacian(&protos, &lap)?;
    let dc_j1 = pooling.unpool(&gproto)?;

    let (j2, gx_j2, gy_j2) = if n >= 2 {
        let h = hsic_grad(&codes.px, &codes.py)?;
        (h.value, h.grad_x, h.grad_y)
    } else {
        let k = params.code_bits();
        (0.0, Matrix::zeros(k, n), Matrix::zeros(k, n))
    };

    let (j3, rec) = reconstruction_loss(params, fx, fy, &codes)?;

    let mut dc = rec.cstar;
    dc.add_scaled(&dc_j1, alpha)?;
    let mut dpx = rec.px;
    dpx.add_scaled(&gx_j2, beta)?;
    let mut dpy = rec.py;
    dpy.add_scaled(&gy_j2, beta)?;

    let (enc_ind_x, _) = params.enc_ind_x.backward(&tape_x, &dpx)?;
    let (enc_ind_y, _) = params.enc_ind_y.backward(&tape_y, &dpy)?;
    let (enc_common, _) = params.enc_common.backward(&tape_c, &dc)?;

    let value = alpha * j1 + beta * j2 + j3;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("Loss1 (J1 = {j1}, J2 = {j2}, J3 = {j3})")));
    }
    Ok(Loss1Output {
        value,
        j1,
        j2,
        j3,
        grads: IcaeGrads {
            enc_ind_x,
            enc_ind_y,
            enc_common,
            dec_x: rec.dec_x,
            dec_y: rec.dec_y,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Probability per batch of zeroing one modality in the commonality input.
    pub modality_dropout: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            batch_size: 128,
            lr: 0.01,
            max_epochs: 500,
            modality_dropout: 0.5,
            seed: 0,
        }
    }
}

/// Epoch means of Loss1 and its parts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeTrace {
    pub loss1: Vec<f64>,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub j3: Vec<f64>,
}

/// Mini-batch SGD on Loss1 over the base split for `max_epochs` epochs of
/// `⌈n/N⌉` iterations.
pub fn train_ae(dataset: &Dataset, mut params: IcaeParams, config: &AeConfig) -> Result<(IcaeParams, AeTrace)> {
    let affinities = LabelAffinities::from_base(dataset)?;
    let trace = train_ae_with(dataset, &mut params, config, &affinities, |_, _| {})?;
    Ok((params, trace))
}

/// Like [`train_ae`] with precomputed affinities; `on_epoch(epoch, mean_loss1)` runs after every epoch.
pub fn train_ae_with(
    dataset: &Dataset,
    params: &mut IcaeParams,
    config: &AeConfig,
    affinities: &LabelAffinities,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<AeTrace> {
    params.validate()?;
    if dataset.base.is_empty() {
        return Err(Error::invalid("training needs a non-empty base split"));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    if params.dim_x() != dataset.raw_dim_x() || params.dim_y() != dataset.raw_dim_y() {
        return Err(Error::invalid("autoencoder input dims do not match the dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = dataset.base.clone();
    let mut trace = AeTrace::default();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (iter, batch) in order.chunks(config.batch_size).enumerate() {
            let fx = dataset.columns(Modality::Image, batch);
            let fy = dataset.columns(Modality::Text, batch);
            let labels = dataset.labels.select_rows(batch);
            let drop = if rng.gen::<f64>() < config.modality_dropout {
                Some(if rng.gen_bool(0.5) { Modality::Image } else { Modality::Text })
            } else {
                None
            };
            let out = loss1(params, &fx, &fy, &labels, affinities, drop).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {}, iteration {}: {msg}", epoch + 1, iter + 1)),
                other => other,
            })?;
            params.sgd_step(&out.grads, config.lr)?;
            for (s, v) in sums.iter_mut().zip([out.value, out.j1, out.j2, out.j3]) {
                *s += v;
            }
            batches += 1;
        }
        let b = batches as f64;
        trace.loss1.push(sums[0] / b);
        trace.j1.push(sums[1] / b);
        trace.j2.push(sums[2] / b);
        trace.j3.push(sums[3] / b);
        on_epoch(epoch + 1, sums[0] / b);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::datagen::{generate, split, LongTailSpec};
    use crate::diffkernel::relative_error;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn small_dataset(seed: u64) -> Dataset {
        let spec = LongTailSpec {
            num_labels: 4,
            head_count: 40,
            raw_dim_x: 6,
            raw_dim_y: 5,
            shared_dim: 3,
            private_dim: 2,
            seed,
            ..LongTailSpec::default()
        }
        .with_imbalance(5.0)
        .unwrap();
        let d = generate(&spec).unwrap();
        split(d, 10, seed).unwrap()
    }

    #[test]
    fn shapes_and_validation() {
        let p = IcaeParams::new(6, 5, 4, AeHyper::default(), 1).unwrap();
        p.validate().unwrap();
        assert_eq!(p.enc_common.in_dim(), 11);
        assert_eq!(p.dec_x.in_dim(), 8);
        let codes = encode(&p, &random(6, 7, 2), &random(5, 7, 3)).unwrap();
        assert_eq!(codes.px.shape(), (4, 7));
        assert_eq!(codes.cstar.shape(), (4, 7));
        assert!(encode(&p, &random(5, 7, 2), &random(5, 7, 3)).is_err());
        assert!(encode(&p, &random(6, 7, 2), &random(5, 6, 3)).is_err());
        assert!(IcaeParams::new(0, 5, 4, AeHyper::default(), 1).is_err());
    }

    #[test]
    fn single_modality_encoding_matches_masked_batch() {
        let p = IcaeParams::new(6, 5, 4, AeHyper::default(), 4).unwrap();
        let fx = random(6, 3, 5);
        let (c, px) = encode_single(&p, Modality::Image, &fx).unwrap();
        let masked = encode_masked(&p, &fx, &Matrix::zeros(5, 3), Some(Modality::Text)).unwrap();
        assert_eq!(c, masked.cstar);
        assert_eq!(px, masked.px);
    }

    #[test]
    fn perfect_reconstruction_has_zero_j3() {
        let mut p = IcaeParams::new(3, 3, 2, AeHyper::default(), 6).unwrap();
        for dec in [&mut p.dec_x, &mut p.dec_y] {
            let n = dec.param_count();
            dec.set_flat(&vec![0.0; n]).unwrap();
        }
        let z = Matrix::zeros(3, 4);
        let codes = encode(&p, &z, &z).unwrap();
        let (j3, _) = reconstruction_loss(&p, &z, &z, &codes).unwrap();
        assert_eq!(j3, 0.0);
    }

    #[test]
    fn j3_is_normalized_mse() {
        let p = IcaeParams::new(3, 2, 2, AeHyper::default(), 7).unwrap();
        let (fx, fy) = (random(3, 5, 8), random(2, 5, 9));
        let codes = encode(&p, &fx, &fy).unwrap();
        let (j3, _) = reconstruction_loss(&p, &fx, &fy, &codes).unwrap();
        let rx = p.dec_x.predict(&codes.cstar.vstack(&codes.px).unwrap()).unwrap();
        let ry = p.dec_y.predict(&codes.cstar.vstack(&codes.py).unwrap()).unwrap();
        let want = rx.sub(&fx).unwrap().frobenius_sq() / 15.0 + ry.sub(&fy).unwrap().frobenius_sq() / 10.0;
        assert!((j3 - want).abs() < 1e-14);
    }

    #[test]
    fn standardized_codes_keep_reconstruction() {
        let mut p = IcaeParams::new(5, 4, 3, AeHyper::default(), 11).unwrap();
        let (fx, fy) = (random(5, 20, 12), random(4, 20, 13));
        let before = encode(&p, &fx, &fy).unwrap();
        let (j3_before, _) = reconstruction_loss(&p, &fx, &fy, &before).unwrap();
        let scales = p.standardize_codes(&fx, &fy).unwrap();
        let after = encode(&p, &fx, &fy).unwrap();
        let (j3_after, _) = reconstruction_loss(&p, &fx, &fy, &after).unwrap();
        assert!((j3_before - j3_after).abs() < 1e-12);
        for (m, s) in [(&after.cstar, &scales[0]), (&after.px, &scales[1]), (&after.py, &scales[2])] {
            assert!(s.iter().all(|&v| v > 0.0));
            for r in 0..3 {
                let ms = m.row(r).iter().map(|v| v * v).sum::<f64>() / 20.0;
                assert!((ms - 1.0).abs() < 1e-10);
            }
        }
    }

    fn batch_fixture(seed: u64) -> (IcaeParams, Matrix, Matrix, LabelMatrix, LabelAffinities) {
        let hyper = AeHyper { alpha: 0.3, beta: 0.7 };
        let p = IcaeParams::new(4, 3, 3, hyper, seed).unwrap();
        let (fx, fy) = (random(4, 6, seed + 1), random(3, 6, seed + 2));
        let labels = LabelMatrix::from_lists(3, &[vec![0], vec![1], vec![0, 2], vec![1], vec![2], vec![0]]).unwrap();
        let aff = LabelAffinities {
            x: label_affinity(&fx.transpose(), &labels).unwrap(),
            y: label_affinity(&fy.transpose(), &labels).unwrap(),
        };
        (p, fx, fy, labels, aff)
    }

    fn flat_fd(p: &IcaeParams, mut f: impl FnMut(&IcaeParams) -> f64) -> Vec<f64> {
        let base = p.to_flat();
        let eps = 1e-6;
        let mut q = p.clone();
        (0..base.len())
            .map(|i| {
                let mut v = base.clone();
                v[i] = base[i] + eps;
                q.set_flat(&v).unwrap();
                let up = f(&q);
                v[i] = base[i] - eps;
                q.set_flat(&v).unwrap();
                let down = f(&q);
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn loss1_gradient_matches_finite_differences() {
        for seed in [10, 20] {
            for drop in [None, Some(Modality::Image), Some(Modality::Text)] {
                let (p, fx, fy, labels, aff) = batch_fixture(seed);
                let out = loss1(&p, &fx, &fy, &labels, &aff, drop).unwrap();
                // Bandwidths are constants of the gradient; freeze them for the numeric side.
                let codes = encode_masked(&p, &fx, &fy, drop).unwrap();
                let sx = crate::hsic::mean_sq_distance_bandwidth(&codes.px);
                let sy = crate::hsic::mean_sq_distance_bandwidth(&codes.py);
                let num = flat_fd(&p, |q| {
                    let c = encode_masked(q, &fx, &fy, drop).unwrap();
                    let protos = crate::affinity::label_prototypes(&c.cstar, &labels).unwrap();
                    let j1 = crate::affinity::j1_pairwise(&protos, &aff.x, &aff.y).unwrap();
                    let j2 = crate::hsic::hsic_grad_with_bandwidth(&c.px, &c.py, sx, sy).unwrap().value;
                    let (j3, _) = reconstruction_loss(q, &fx, &fy, &c).unwrap();
                    0.3 * j1 + 0.7 * j2 + j3
                });
                let err = relative_error(&out.grads.to_flat(), &num);
                assert!(err < 1e-4, "seed {seed} drop {drop:?}: {err}");
            }
        }
    }

    #[test]
    fn loss1_value_is_weighted_sum() {
        let (p, fx, fy, labels, aff) = batch_fixture(30);
        let out = loss1(&p, &fx, &fy, &labels, &aff, None).unwrap();
        assert!((out.value - (0.3 * out.j1 + 0.7 * out.j2 + out.j3)).abs() < 1e-14);
        assert!(out.j1 >= 0.0 && out.j2 >= -1e-12 && out.j3 >= 0.0);
    }

    #[test]
    fn shared_individuality_codes_raise_hsic() {
        // Identical individuality codes are maximally dependent; independent
        // encoders on independent inputs are not.
        let mut same = 0.0;
        let mut indep = 0.0;
        for seed in 0..5 {
            let p = IcaeParams::new(4, 4, 3, AeHyper::default(), 100 + seed).unwrap();
            let fx = random(4, 16, 200 + seed);
            let fy = random(4, 16, 300 + seed);
            let c = encode(&p, &fx, &fy).unwrap();
            same += crate::hsic::hsic_of_codes(&c.px, &c.px).unwrap();
            indep += crate::hsic::hsic_of_codes(&c.px, &c.py).unwrap();
        }
        assert!(same > indep);
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let d = small_dataset(1);
        let p = IcaeParams::new(6, 5, 4, AeHyper::default(), 2).unwrap();
        let cfg = AeConfig { max_epochs: 0, ..AeConfig::default() };
        let (q, trace) = train_ae(&d, p.clone(), &cfg).unwrap();
        assert_eq!(p, q);
        assert!(trace.loss1.is_empty());
    }

    #[test]
    fn training_reduces_reconstruction() {
        let d = small_dataset(3);
        let p = IcaeParams::new(6, 5, 4, AeHyper::default(), 4).unwrap();
        let cfg = AeConfig {
            max_epochs: 150,
            batch_size: 16,
            lr: 0.05,
            seed: 5,
            ..AeConfig::default()
        };
        let (_, trace) = train_ae(&d, p, &cfg).unwrap();
        assert_eq!(trace.loss1.len(), 150);
        assert!(trace.loss1.iter().all(|v| v.is_finite()));
        assert!(trace.j3.last().unwrap() <= &(0.5 * trace.j3[0]), "{:?}", (trace.j3[0], trace.j3.last()));
        assert!(trace.loss1.last().unwrap() < &trace.loss1[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let d = small_dataset(6);
        let cfg = AeConfig { max_epochs: 3, batch_size: 16, seed: 7, ..AeConfig::default() };
        let a = train_ae(&d, IcaeParams::new(6, 5, 4, AeHyper::default(), 8).unwrap(), &cfg).unwrap();
        let b = train_ae(&d, IcaeParams::new(6, 5, 4, AeHyper::default(), 8).unwrap(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn diverging_training_reports_non_finite() {
        let d = small_dataset(9);
        let p = IcaeParams::new(6, 5, 4, AeHyper { alpha: 1e6, beta: 0.05 }, 10).unwrap();
        let cfg = AeConfig { max_epochs: 200, batch_size: 16, lr: 10.0, seed: 11, ..AeConfig::default() };
        let err = train_ae(&d, p, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }
}
