//! Sample- and label-level similarity: the pairwise relevance matrix `S`,
//! average Hausdorff distances between per-label sample sets, the label
//! similarity `R = exp(−H/σ²)`, and the cross-modal commonality regularizer
//!
//! ```text
//! J1 = ½ Σ_{a,b} ‖C_a − C_b‖² (Rx_ab + Ry_ab) = tr(C (Lx + Ly) Cᵀ),   L = D − R
//! ```
//!
//! evaluated on label prototypes `C` (mean commonality code per label).

use crate::dataset::LabelMatrix;
use crate::diffkernel::Matrix;
use crate::error::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-8;

/// `S_ij = 1` iff samples `i` and `j` share at least one label.
pub fn pair_similarity(labels: &LabelMatrix) -> Result<Matrix> {
    labels.ensure_every_row_labelled()?;
    let n = labels.n();
    Ok(Matrix::from_fn(n, n, |i, j| labels.shares_label(i, labels, j) as u8 as f64))
}

/// Relevance block between rows `rows` of `row_labels` and rows `cols` of `col_labels`.
pub fn similarity_block(row_labels: &LabelMatrix, rows: &[usize], col_labels: &LabelMatrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |r, c| {
        row_labels.shares_label(rows[r], col_labels, cols[c]) as u8 as f64
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Average Hausdorff distance between two point sets (rows), with the shared
/// denominator `|A| + |B|`.
pub fn avg_hausdorff(set_a: &Matrix, set_b: &Matrix) -> Result<f64> {
    if set_a.rows() == 0 || set_b.rows() == 0 {
        return Err(Error::invalid("average Hausdorff distance of an empty set"));
    }
    if set_a.cols() != set_b.cols() {
        return Err(Error::shape("avg_hausdorff", set_a.shape(), set_b.shape()));
    }
    let mut min_a = vec![f64::INFINITY; set_a.rows()];
    let mut min_b = vec![f64::INFINITY; set_b.rows()];
    for (i, ma) in min_a.iter_mut().enumerate() {
        for (j, mb) in min_b.iter_mut().enumerate() {
            let d = euclid(set_a.row(i), set_b.row(j));
            *ma = ma.min(d);
            *mb = mb.min(d);
        }
    }
    let total: f64 = min_a.iter().sum::<f64>() + min_b.iter().sum::<f64>();
    Ok(total / (set_a.rows() + set_b.rows()) as f64)
}

/// Label-level affinity for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelAffinity {
    /// `c × c` average Hausdorff distances.
    pub hausdorff: Matrix,
    /// `c × c` label similarity `exp(−H/σ²)`.
    pub similarity: Matrix,
    /// Diagonal of `D`, the row sums of `similarity`.
    pub degree: Vec<f64>,
    pub sigma: f64,
}

impl LabelAffinity {
    /// Builds `H`, `σ` (mean off-diagonal `H`), `R` and `D` from a given distance matrix.
    pub fn from_hausdorff(hausdorff: Matrix) -> Result<Self> {
        let c = hausdorff.rows();
        if hausdorff.cols() != c {
            return Err(Error::shape("LabelAffinity", (c, c), hausdorff.shape()));
        }
        hausdorff.ensure_finite("Hausdorff distances")?;
        let off: f64 = (0..c)
            .flat_map(|a| (0..c).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| hausdorff[(a, b)])
            .sum();
        let pairs = (c * c.saturating_sub(1)).max(1) as f64;
        let sigma = (off / pairs).max(SIGMA_FLOOR);
        let s2 = sigma * sigma;
        let similarity = hausdorff.map(|h| (-h / s2).exp());
        let degree = similarity.row_sums();
        Ok(LabelAffinity {
            hausdorff,
            similarity,
            degree,
            sigma,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.similarity.rows()
    }

    /// `D − R`, optionally restricted to a subset of labels (degrees recomputed on the subset).
    pub fn laplacian(&self, subset: Option<&[usize]>) -> Matrix {
        let all: Vec<usize>;
        let idx = match subset {
            Some(s) => s,
            None => {
                all = (0..self.num_labels()).collect();
                &all
            }
        };
        let m = idx.len();
        let r = Matrix::from_fn(m, m, |i, j| self.similarity[(idx[i], idx[j])]);
        let deg = r.row_sums();
        Matrix::from_fn(m, m, |i, j| if i == j { deg[i] - r[(i, j)] } else { -r[(i, j)] })
    }
}

/// Per-label average Hausdorff distances between sample sets (features are rows).
pub fn label_affinity(features: &Matrix, labels: &LabelMatrix) -> Result<LabelAffinity> {
    if features.rows() != labels.n() {
        return Err(Error::shape("label_affinity", (labels.n(), features.cols()), features.shape()));
    }
    let c = labels.num_labels();
    let members = label_members(labels);
    if let Some(a) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyLabel(a));
    }
    let sets: Vec<Matrix> = members.iter().map(|m| features.select_rows(m)).collect();
    let mut h = Matrix::zeros(c, c);
    for a in 0..c {
        for b in (a + 1)..c {
            let d = avg_hausdorff(&sets[a], &sets[b])?;
            h[(a, b)] = d;
            h[(b, a)] = d;
        }
    }
    LabelAffinity::from_hausdorff(h)
}

/// Indices of the samples carrying each label.
pub fn label_members(labels: &LabelMatrix) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); labels.num_labels()];
    for i in 0..labels.n() {
        for a in labels.labels_of(i) {
            members[a].push(i);
        }
    }
    members
}

/// Mean pooling of per-sample codes into per-label prototypes, restricted to
/// the labels that actually occur.
#[derive(Clone, Debug)]
pub struct PrototypePooling {
    /// Labels with at least one member, ascending.
    pub present: Vec<usize>,
    members: Vec<Vec<usize>>,
    num_samples: usize,
}

impl PrototypePooling {
    pub fn new(labels: &LabelMatrix) -> Self {
        let all = label_members(labels);
        let (present, members): (Vec<usize>, Vec<Vec<usize>>) =
            all.into_iter().enumerate().filter(|(_, m)| !m.is_empty()).unzip();
        PrototypePooling {
            present,
            members,
            num_samples: labels.n(),
        }
    }

    /// `codes` is `k × n`; returns `k × |present|`.
    pub fn pool(&self, codes: &Matrix) -> Result<Matrix> {
        if codes.cols() != self.num_samples {
            return Err(Error::shape("PrototypePooling::pool", (codes.rows(), self.num_samples), codes.shape()));
        }
        let k = codes.rows();
        let mut out = Matrix::zeros(k, self.present.len());
        for (p, m) in self.members.iter().enumerate() {
            let inv = 1.0 / m.len() as f64;
            for r in 0..k {
                out[(r, p)] = m.iter().map(|&i| codes[(r, i)]).sum::<f64>() * inv;
            }
        }
        Ok(out)
    }

    /// Pulls a prototype gradient (`k × |present|`) back to the per-sample codes.
    pub fn unpool(&self, grad: &Matrix) -> Result<Matrix> {
        if grad.cols() != self.present.len() {
            return Err(Error::shape("PrototypePooling::unpool", (grad.rows(), self.present.len()), grad.shape()));
        }
        let k = grad.rows();
        let mut out = Matrix::zeros(k, self.num_samples);
        for (p, m) in self.members.iter().enumerate() {
            let inv = 1.0 / m.len() as f64;
            for &i in m {
                for r in 0..k {
                    out[(r, i)] += grad[(r, p)] * inv;
                }
            }
        }
        Ok(out)
    }
}

/// Column `a` is the mean code of the samples carrying label `a` (`codes` is `k × n`).
pub fn label_prototypes(codes: &Matrix, labels: &LabelMatrix) -> Result<Matrix> {
    let pooling = PrototypePooling::new(labels);
    if pooling.present.len() != labels.num_labels() {
        let missing = (0..labels.num_labels()).find(|a| !pooling.present.contains(a)).unwrap_or(0);
        return Err(Error::EmptyLabel(missing));
    }
    pooling.pool(codes)
}

/// `J1 = tr(C·L·Cᵀ)` and `∂J1/∂C = 2·C·L` for a symmetric combined Laplacian `L`.
pub fn j1_with_laplacian(prototypes: &Matrix, laplacian: &Matrix) -> Result<(f64, Matrix)> {
    let c = prototypes.cols();
    if laplacian.shape() != (c, c) {
        return Err(Error::shape("j1", (c, c), laplacian.shape()));
    }
    let cl = prototypes.matmul(laplacian)?;
    let value: f64 = cl.as_slice().iter().zip(prototypes.as_slice()).map(|(a, b)| a * b).sum();
    Ok((value, cl.scale(2.0)))
}

/// Trace form of J1 over all labels.
pub fn j1_loss_and_grad(prototypes: &Matrix, rx: &LabelAffinity, ry: &LabelAffinity) -> Result<(f64, Matrix)> {
    if rx.num_labels() != ry.num_labels() || prototypes.cols() != rx.num_labels() {
        return Err(Error::shape(
            "j1_loss_and_grad",
            (prototypes.rows(), rx.num_labels()),
            prototypes.shape(),
        ));
    }
    let l = rx.laplacian(None).add(&ry.laplacian(None))?;
    j1_with_laplacian(prototypes, &l)
}

/// Pairwise-sum form `½ Σ_{a,b} ‖C_a − C_b‖² (Rx_ab + Ry_ab)`.
pub fn j1_pairwise(prototypes: &Matrix, rx: &LabelAffinity, ry: &LabelAffinity) -> Result<f64> {
    let c = prototypes.cols();
    if rx.num_labels() != c || ry.num_labels() != c {
        return Err(Error::shape("j1_pairwise", (prototypes.rows(), rx.num_labels()), prototypes.shape()));
    }
    let mut total = 0.0;
    for a in 0..c {
        for b in 0..c {
            let d: f64 = (0..prototypes.rows())
                .map(|r| (prototypes[(r, a)] - prototypes[(r, b)]).powi(2))
                .sum();
            total += d * (rx.similarity[(a, b)] + ry.similarity[(a, b)]);
        }
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffkernel::finite_diff_grad;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_labels(n: usize, c: usize, seed: u64) -> LabelMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut l = vec![i % c];
                if rng.gen_bool(0.4) {
                    l.push(rng.gen_range(0..c));
                }
                l.sort();
                l.dedup();
                l
            })
            .collect();
        LabelMatrix::from_lists(c, &lists).unwrap()
    }

    #[test]
    fn pair_similarity_cases() {
        let l = LabelMatrix::from_lists(4, &[vec![1, 2], vec![2, 3], vec![0]]).unwrap();
        let s = pair_similarity(&l).unwrap();
        assert_eq!(s[(0, 1)], 1.0);
        assert_eq!(s[(0, 2)], 0.0);
        assert_eq!(s[(2, 2)], 1.0);
    }

    #[test]
    fn pair_similarity_matches_double_loop() {
        let l = random_labels(6, 3, 4);
        let s = pair_similarity(&l).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let shared = (0..3).any(|a| l.get(i, a) && l.get(j, a));
                assert_eq!(s[(i, j)], shared as u8 as f64);
            }
        }
    }

    #[test]
    fn pair_similarity_rejects_unlabeled() {
        let l = LabelMatrix::from_lists(2, &[vec![0], vec![]]).unwrap();
        assert!(matches!(pair_similarity(&l), Err(Error::UnlabeledSample(1))));
    }

    #[test]
    fn hausdorff_cases() {
        let a = random(4, 3, 1);
        assert_eq!(avg_hausdorff(&a, &a).unwrap(), 0.0);

        let u = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!((avg_hausdorff(&u, &v).unwrap() - 5.0).abs() < 1e-15);

        let a = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!((avg_hausdorff(&a, &b).unwrap() - 1.0).abs() < 1e-15);

        assert!(avg_hausdorff(&Matrix::zeros(0, 2), &u).is_err());
    }

    #[test]
    fn hausdorff_symmetric() {
        let a = random(5, 3, 2);
        let b = random(3, 3, 3);
        assert_eq!(avg_hausdorff(&a, &b).unwrap(), avg_hausdorff(&b, &a).unwrap());
        assert!(avg_hausdorff(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn identical_label_sets_give_unit_similarity() {
        // Every sample carries every label.
        let l = LabelMatrix::from_lists(3, &vec![vec![0, 1, 2]; 4]).unwrap();
        let aff = label_affinity(&random(4, 2, 5), &l).unwrap();
        assert!(aff.hausdorff.as_slice().iter().all(|&h| h == 0.0));
        assert!(aff.similarity.as_slice().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn two_label_substitution() {
        let mut h = Matrix::zeros(2, 2);
        h[(0, 1)] = 0.7;
        h[(1, 0)] = 0.7;
        let aff = LabelAffinity::from_hausdorff(h).unwrap();
        assert!((aff.sigma - 0.7).abs() < 1e-15);
        assert!((aff.similarity[(0, 1)] - (-1.0f64 / 0.7).exp()).abs() < 1e-15);
    }

    #[test]
    fn label_affinity_matches_recomputation() {
        let l = random_labels(9, 3, 6);
        let f = random(9, 4, 7);
        let aff = label_affinity(&f, &l).unwrap();
        let members = |a: usize| (0..9).filter(|&i| l.get(i, a)).collect::<Vec<_>>();
        let mut hsum = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let (ma, mb) = (members(a), members(b));
                let mut tot = 0.0;
                for &i in &ma {
                    tot += mb.iter().map(|&j| euclid(f.row(i), f.row(j))).fold(f64::INFINITY, f64::min);
                }
                for &j in &mb {
                    tot += ma.iter().map(|&i| euclid(f.row(i), f.row(j))).fold(f64::INFINITY, f64::min);
                }
                let h = tot / (ma.len() + mb.len()) as f64;
                assert!((aff.hausdorff[(a, b)] - h).abs() < 1e-12);
                hsum += h;
            }
        }
        let sigma = hsum / 6.0;
        for a in 0..3 {
            for b in 0..3 {
                let want = (-aff.hausdorff[(a, b)] / (sigma * sigma)).exp();
                assert!((aff.similarity[(a, b)] - want).abs() < 1e-12);
            }
        }
        assert!(aff.similarity.as_slice().iter().all(|&r| r > 0.0 && r <= 1.0));
        for a in 0..3 {
            assert_eq!(aff.similarity[(a, a)], 1.0);
        }
    }

    #[test]
    fn empty_label_rejected() {
        let l = LabelMatrix::from_lists(3, &[vec![0], vec![1]]).unwrap();
        assert!(matches!(label_affinity(&random(2, 2, 1), &l), Err(Error::EmptyLabel(2))));
        assert!(matches!(label_prototypes(&random(2, 2, 1), &l), Err(Error::EmptyLabel(2))));
    }

    #[test]
    fn degenerate_sigma_is_floored() {
        let aff = LabelAffinity::from_hausdorff(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(aff.sigma, SIGMA_FLOOR);
        assert!(aff.similarity.is_finite());
    }

    #[test]
    fn prototypes_are_group_means() {
        let l = random_labels(8, 3, 8);
        let codes = random(4, 8, 9);
        let p = label_prototypes(&codes, &l).unwrap();
        for a in 0..3 {
            let m: Vec<usize> = (0..8).filter(|&i| l.get(i, a)).collect();
            for r in 0..4 {
                let mean = m.iter().map(|&i| codes[(r, i)]).sum::<f64>() / m.len() as f64;
                assert!((p[(r, a)] - mean).abs() < 1e-14);
            }
        }
        // one sample per label
        let single = LabelMatrix::from_lists(2, &[vec![1], vec![0]]).unwrap();
        let c2 = random(3, 2, 10);
        let p2 = label_prototypes(&c2, &single).unwrap();
        assert_eq!(p2.col(0), c2.col(1));
        assert_eq!(p2.col(1), c2.col(0));
    }

    fn random_affinity(c: usize, seed: u64) -> LabelAffinity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Matrix::zeros(c, c);
        for a in 0..c {
            for b in (a + 1)..c {
                let v = rng.gen_range(0.1..3.0);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        LabelAffinity::from_hausdorff(h).unwrap()
    }

    #[test]
    fn j1_constant_prototypes_vanish() {
        let rx = random_affinity(4, 1);
        let ry = random_affinity(4, 2);
        let c = Matrix::from_fn(3, 4, |r, _| r as f64 + 0.5);
        let (v, g) = j1_loss_and_grad(&c, &rx, &ry).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn j1_two_labels() {
        let rx = random_affinity(2, 3);
        let ry = random_affinity(2, 4);
        let c = random(3, 2, 5);
        let d: f64 = (0..3).map(|r| (c[(r, 0)] - c[(r, 1)]).powi(2)).sum();
        let r = rx.similarity[(0, 1)] + ry.similarity[(0, 1)];
        let (v, _) = j1_loss_and_grad(&c, &rx, &ry).unwrap();
        assert!((v - r * d).abs() < 1e-12);
    }

    #[test]
    fn j1_trace_equals_pairwise_and_gradient_checks() {
        for seed in 0..10 {
            let c = 2 + seed as usize % 5;
            let rx = random_affinity(c, 100 + seed);
            let ry = random_affinity(c, 200 + seed);
            let protos = random(3, c, 300 + seed);
            let (v, g) = j1_loss_and_grad(&protos, &rx, &ry).unwrap();
            let p = j1_pairwise(&protos, &rx, &ry).unwrap();
            assert!((v - p).abs() < 1e-10);
            assert!(v >= 0.0);
            let num = finite_diff_grad(|m| j1_pairwise(m, &rx, &ry).unwrap(), &protos, 1e-5).unwrap();
            assert!(crate::diffkernel::relative_error(g.as_slice(), num.as_slice()) < 1e-6);
        }
    }

    #[test]
    fn unpool_is_adjoint_of_pool() {
        let l = random_labels(7, 4, 11);
        let pooling = PrototypePooling::new(&l);
        let codes = random(2, 7, 12);
        let g = random(2, pooling.present.len(), 13);
        let lhs: f64 = pooling.pool(&codes).unwrap().hadamard(&g).unwrap().sum();
        let rhs: f64 = codes.hadamard(&pooling.unpool(&g).unwrap()).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn subset_laplacian_matches_restricted_pairwise() {
        let rx = random_affinity(5, 21);
        let ry = random_affinity(5, 22);
        let subset = [0, 2, 3];
        let l = rx.laplacian(Some(&subset)).add(&ry.laplacian(Some(&subset))).unwrap();
        let protos = random(2, 3, 23);
        let (v, _) = j1_with_laplacian(&protos, &l).unwrap();
        let mut want = 0.0;
        for (i, &a) in subset.iter().enumerate() {
            for (j, &b) in subset.iter().enumerate() {
                let d: f64 = (0..2).map(|r| (protos[(r, i)] - protos[(r, j)]).powi(2)).sum();
                want += 0.5 * d * (rx.similarity[(a, b)] + ry.similarity[(a, b)]);
            }
        }
        assert!((v - want).abs() < 1e-12);
    }
}
