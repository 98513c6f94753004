//! Synthetic long-tail two-modality data with planted commonality and
//! individuality structure.
//!
//! Per-label sample counts follow Zipf's law, `z_a = z1 · a^(−μ)`. Every label
//! `a` owns a shared latent prototype `s_a` and one private prototype per
//! modality. A sample with label set `A` gets
//!
//! ```text
//! x = G_x · Σ_{a∈A} s_a + H_x · Σ_{a∈A} p_a^x + noise
//! y = G_y · Σ_{a∈A} s_a + H_y · Σ_{a∈A} p_a^y + noise
//! ```
//!
//! The rarest `round(exclusive_tail_fraction · c)` labels are modality
//! exclusive: they add only their private term, and only to one modality
//! (alternating, starting with text for the rarest label).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetMeta, LabelMatrix, MixingMaps, Modality};
use crate::diffkernel::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    /// Number of labels `c`.
    pub num_labels: usize,
    /// Sample count of the most frequent label, `z1`.
    pub head_count: usize,
    /// Zipf exponent `μ`.
    pub mu: f64,
    pub raw_dim_x: usize,
    pub raw_dim_y: usize,
    pub shared_dim: usize,
    pub private_dim: usize,
    pub noise_sigma: f64,
    pub exclusive_tail_fraction: f64,
    pub labels_per_sample_max: usize,
    /// Probability that a sample receives a second label.
    pub secondary_prob: f64,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        LongTailSpec {
            num_labels: 12,
            head_count: 1000,
            mu: mu_from_if(50.0, 12).expect("valid defaults"),
            raw_dim_x: 64,
            raw_dim_y: 64,
            shared_dim: 8,
            private_dim: 8,
            noise_sigma: 0.5,
            exclusive_tail_fraction: 0.0,
            labels_per_sample_max: 2,
            secondary_prob: 0.5,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    /// Sets `μ` from an imbalance factor `IF = z1 / zc`.
    pub fn with_imbalance(mut self, imbalance: f64) -> Result<Self> {
        self.mu = mu_from_if(imbalance, self.num_labels)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::invalid("need at least 2 labels"));
        }
        if self.head_count < 1 {
            return Err(Error::invalid("head label count z1 must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("Zipf exponent must be finite and non-negative"));
        }
        if self.raw_dim_x == 0 || self.raw_dim_y == 0 || self.shared_dim == 0 || self.private_dim == 0 {
            return Err(Error::invalid("all dimensions must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        for (name, v) in [
            ("exclusive_tail_fraction", self.exclusive_tail_fraction),
            ("secondary_prob", self.secondary_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.labels_per_sample_max == 0 {
            return Err(Error::invalid("labels_per_sample_max must be at least 1"));
        }
        Ok(())
    }

    pub fn zipf_counts(&self) -> Result<Vec<usize>> {
        zipf_counts(self.head_count, self.num_labels, self.mu)
    }

    /// Labels that only carry signal in one modality, with that modality.
    pub fn exclusive_labels(&self) -> Vec<(usize, Modality)> {
        let c = self.num_labels;
        let e = ((self.exclusive_tail_fraction * c as f64).round() as usize).min(c);
        (0..e)
            .map(|t| {
                let m = if t % 2 == 0 { Modality::Text } else { Modality::Image };
                (c - 1 - t, m)
            })
            .collect()
    }
}

/// `z_a = max(1, round(z1 · a^(−μ)))` for `a = 1..=c`.
pub fn zipf_counts(head_count: usize, num_labels: usize, mu: f64) -> Result<Vec<usize>> {
    if head_count < 1 || num_labels < 1 || !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!(
            "zipf_counts needs z1 >= 1, c >= 1, mu >= 0 (got {head_count}, {num_labels}, {mu})"
        )));
    }
    Ok((1..=num_labels)
        .map(|a| {
            let z = head_count as f64 * (a as f64).powf(-mu);
            (z.round() as usize).max(1)
        })
        .collect())
}

/// `μ = ln(IF) / ln(c)`, so that `z1 · c^(−μ) = z1 / IF`.
pub fn mu_from_if(imbalance: f64, num_labels: usize) -> Result<f64> {
    if !(imbalance > 1.0 && imbalance.is_finite()) {
        return Err(Error::invalid(format!("imbalance factor must exceed 1, got {imbalance}")));
    }
    if num_labels < 2 {
        return Err(Error::invalid("imbalance factor needs at least 2 labels"));
    }
    Ok(imbalance.ln() / (num_labels as f64).ln())
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Label sets with exact per-label totals `counts`.
///
/// Labels are filled from the rarest to the most frequent. A sample whose
/// primary label is `a` may take a secondary label among the more frequent
/// labels, which then need fewer samples of their own. At most half of a
/// label's count is spent on secondary annotations.
fn assign_labels(spec: &LongTailSpec, counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let c = counts.len();
    let mut received = vec![0usize; c];
    let mut samples = Vec::new();
    for a in (0..c).rev() {
        let own = counts[a] - received[a];
        for _ in 0..own {
            let mut labels = vec![a];
            if spec.labels_per_sample_max >= 2 && a > 0 && rng.gen::<f64>() < spec.secondary_prob {
                let open: Vec<usize> = (0..a).filter(|&b| received[b] < counts[b] / 2).collect();
                if let Some(&b) = open.choose(rng) {
                    received[b] += 1;
                    labels.push(b);
                }
            }
            samples.push(labels);
        }
    }
    samples.shuffle(rng);
    samples
}

/// Draws a complete dataset; everything starts in the base split.
pub fn generate(spec: &LongTailSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_labels;
    let counts = spec.zipf_counts()?;

    let shared_proto = gaussian_matrix(c, spec.shared_dim, 1.0, &mut rng);
    let private_x = gaussian_matrix(c, spec.private_dim, 1.0, &mut rng);
    let private_y = gaussian_matrix(c, spec.private_dim, 1.0, &mut rng);
    let mixing = MixingMaps {
        shared_x: gaussian_matrix(spec.raw_dim_x, spec.shared_dim, (spec.raw_dim_x as f64).powf(-0.5), &mut rng),
        private_x: gaussian_matrix(spec.raw_dim_x, spec.private_dim, (spec.raw_dim_x as f64).powf(-0.5), &mut rng),
        shared_y: gaussian_matrix(spec.raw_dim_y, spec.shared_dim, (spec.raw_dim_y as f64).powf(-0.5), &mut rng),
        private_y: gaussian_matrix(spec.raw_dim_y, spec.private_dim, (spec.raw_dim_y as f64).powf(-0.5), &mut rng),
    };

    let mut exclusive: Vec<Option<Modality>> = vec![None; c];
    for (a, m) in spec.exclusive_labels() {
        exclusive[a] = Some(m);
    }

    // Per-label signal in raw space: columns are labels.
    let signal = |shared: &Matrix, private: &Matrix, proto: &Matrix, side: Modality| -> Result<Matrix> {
        let common = shared.matmul_nt(&shared_proto)?;
        let own = private.matmul_nt(proto)?;
        let mut out = Matrix::zeros(common.rows(), c);
        for a in 0..c {
            let (use_common, use_own) = match exclusive[a] {
                None => (true, true),
                Some(m) if m == side => (false, true),
                Some(_) => (false, false),
            };
            for r in 0..out.rows() {
                let mut v = 0.0;
                if use_common {
                    v += common[(r, a)];
                }
                if use_own {
                    v += own[(r, a)];
                }
                out[(r, a)] = v;
            }
        }
        Ok(out)
    };
    let label_signal_x = signal(&mixing.shared_x, &mixing.private_x, &private_x, Modality::Image)?;
    let label_signal_y = signal(&mixing.shared_y, &mixing.private_y, &private_y, Modality::Text)?;

    let label_sets = assign_labels(spec, &counts, &mut rng);
    let n = label_sets.len();
    let mut fx = Matrix::zeros(n, spec.raw_dim_x);
    let mut fy = Matrix::zeros(n, spec.raw_dim_y);
    for (i, labels) in label_sets.iter().enumerate() {
        for (out, sig) in [(&mut fx, &label_signal_x), (&mut fy, &label_signal_y)] {
            let row = out.row_mut(i);
            for &a in labels {
                for (r, v) in row.iter_mut().enumerate() {
                    *v += sig[(r, a)];
                }
            }
            if spec.noise_sigma > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise_sigma * z;
                }
            }
        }
    }

    let labels = LabelMatrix::from_lists(c, &label_sets)?;
    let mut ds = Dataset::new(fx, fy, labels)?;
    ds.meta = DatasetMeta {
        spec: Some(spec.clone()),
        zipf_counts: Some(counts),
        mixing: Some(mixing),
    };
    Ok(ds)
}

/// Random base/query split that never removes the last base sample of a label.
pub fn split(mut dataset: Dataset, query_size: usize, seed: u64) -> Result<Dataset> {
    let n = dataset.n();
    if query_size >= n {
        return Err(Error::invalid(format!("query size {query_size} must be smaller than n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut remaining = dataset.labels.counts();
    let mut in_query = vec![false; n];
    let mut taken = 0;
    for &i in &order {
        if taken == query_size {
            break;
        }
        if dataset.labels.labels_of(i).all(|a| remaining[a] >= 2) {
            for a in dataset.labels.labels_of(i) {
                remaining[a] -= 1;
            }
            in_query[i] = true;
            taken += 1;
        }
    }
    if taken < query_size {
        return Err(Error::invalid(format!(
            "only {taken} of {query_size} query samples can be drawn without emptying a label in base"
        )));
    }
    dataset.query = (0..n).filter(|&i| in_query[i]).collect();
    dataset.base = (0..n).filter(|&i| !in_query[i]).collect();
    Ok(dataset)
}
