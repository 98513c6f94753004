//! Query encoding, Hamming ranking and retrieval metrics.
//!
//! Relevance: a base item is relevant to a query when they share at least one label.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelMatrix, Modality};
use crate::diffkernel::Matrix;
use crate::error::{Error, Result};
use crate::hashlearn::HashCodes;
use crate::icae::{encode_single, IcaeParams};
use crate::meta::{side_predict, HashSideParams, Variant};

/// Meta features of single-modality inputs (`raw_dim × n`): the commonality
/// code sees only this modality, the other block of its input zeroed.
pub fn query_meta(
    modality: Modality,
    raw: &Matrix,
    icae: &IcaeParams,
    side: &HashSideParams,
    variant: Variant,
) -> Result<Matrix> {
    let (cstar, p) = encode_single(icae, modality, raw)?;
    side_predict(side.side(modality), raw, &cstar, &p, variant.terms(modality))
}

/// Hash codes `sign(M)` for single-modality inputs.
pub fn encode_query(
    modality: Modality,
    raw: &Matrix,
    icae: &IcaeParams,
    side: &HashSideParams,
    variant: Variant,
) -> Result<HashCodes> {
    if icae.code_bits() != side.code_bits() {
        return Err(Error::invalid("autoencoder and hash side disagree on the code length"));
    }
    query_meta(modality, raw, icae, side, variant).map(|m| HashCodes::from_sign(&m))
}

pub fn hamming(b1: &[i8], b2: &[i8]) -> Result<usize> {
    if b1.len() != b2.len() {
        return Err(Error::shape("hamming", (b1.len(), 1), (b2.len(), 1)));
    }
    Ok(hamming_unchecked(b1, b2))
}

#[inline]
fn hamming_unchecked(b1: &[i8], b2: &[i8]) -> usize {
    b1.iter().zip(b2).filter(|(a, b)| a != b).count()
}

/// Base indices by ascending Hamming distance to `query`, ties by ascending index.
pub fn rank(query: &[i8], base: &HashCodes) -> Vec<usize> {
    let k = base.bits();
    // counting sort keeps index order within each distance
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for j in 0..base.len() {
        buckets[hamming_unchecked(query, base.code(j))].push(j);
    }
    buckets.into_iter().flatten().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// AP per query, `None` for queries without any relevant base item.
    pub average_precision: Vec<Option<f64>>,
    pub excluded: usize,
}

fn check_sets(query: &HashCodes, query_labels: &LabelMatrix, base: &HashCodes, base_labels: &LabelMatrix) -> Result<()> {
    if query.is_empty() || base.is_empty() {
        return Err(Error::invalid("retrieval needs non-empty query and base sets"));
    }
    if query.bits() != base.bits() {
        return Err(Error::shape("retrieval codes", (base.bits(), query.len()), (query.bits(), query.len())));
    }
    if query_labels.n() != query.len() || base_labels.n() != base.len() {
        return Err(Error::invalid("one label row per code is required"));
    }
    if query_labels.num_labels() != base_labels.num_labels() {
        return Err(Error::invalid("query and base label spaces differ"));
    }
    Ok(())
}

/// Mean average precision over the Hamming ranking of the whole base set
/// (or its first `top_r` items). AP averages precision at each relevant
/// position; queries with no relevant base item are excluded and counted.
pub fn mean_average_precision(
    query: &HashCodes,
    query_labels: &LabelMatrix,
    base: &HashCodes,
    base_labels: &LabelMatrix,
    top_r: Option<usize>,
) -> Result<MapResult> {
    check_sets(query, query_labels, base, base_labels)?;
    let cutoff = top_r.unwrap_or(base.len()).min(base.len());
    let average_precision: Vec<Option<f64>> = (0..query.len())
        .map(|q| {
            if !(0..base.len()).any(|j| query_labels.shares_label(q, base_labels, j)) {
                return None;
            }
            let order = rank(query.code(q), base);
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (pos, &j) in order[..cutoff].iter().enumerate() {
                if query_labels.shares_label(q, base_labels, j) {
                    hits += 1;
                    sum += hits as f64 / (pos + 1) as f64;
                }
            }
            Some(if hits == 0 { 0.0 } else { sum / hits as f64 })
        })
        .collect();
    let valid: Vec<f64> = average_precision.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidQueries);
    }
    Ok(MapResult {
        map: valid.iter().sum::<f64>() / valid.len() as f64,
        excluded: average_precision.len() - valid.len(),
        average_precision,
    })
}

/// Mean fraction of relevant items among the first `k` of each ranking, over
/// queries with at least one relevant item. `k` is capped at the base size.
pub fn precision_at(
    query: &HashCodes,
    query_labels: &LabelMatrix,
    base: &HashCodes,
    base_labels: &LabelMatrix,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_sets(query, query_labels, base, base_labels)?;
    if ks.contains(&0) {
        return Err(Error::invalid("precision@0 is undefined"));
    }
    let mut sums = vec![0.0; ks.len()];
    let mut valid = 0usize;
    for q in 0..query.len() {
        let relevant: Vec<bool> = rank(query.code(q), base)
            .into_iter()
            .map(|j| query_labels.shares_label(q, base_labels, j))
            .collect();
        if !relevant.iter().any(|&r| r) {
            continue;
        }
        valid += 1;
        for (s, &k) in sums.iter_mut().zip(ks) {
            let k = k.min(relevant.len());
            *s += relevant[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
        }
    }
    if valid == 0 {
        return Err(Error::NoValidQueries);
    }
    Ok(ks.iter().zip(sums).map(|(&k, s)| (k, s / valid as f64)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    /// MAP over the queries carrying each label; `None` when no query carries it.
    pub per_label_map: Vec<Option<f64>>,
    /// Labels by descending base count (ties by index); the first `head_count` are head labels.
    pub label_order: Vec<usize>,
    pub head_count: usize,
    pub head_map: Option<f64>,
    pub tail_map: Option<f64>,
}

/// Labels by descending count, ties by ascending index.
pub fn labels_by_count(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Splits per-query APs by label, then averages head and tail labels.
pub fn per_label_breakdown(
    average_precision: &[Option<f64>],
    query_labels: &LabelMatrix,
    label_order: &[usize],
    head_count: usize,
) -> Result<LabelBreakdown> {
    let c = query_labels.num_labels();
    if average_precision.len() != query_labels.n() {
        return Err(Error::invalid("one AP entry per query is required"));
    }
    let mut sorted = label_order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..c).collect::<Vec<_>>() {
        return Err(Error::invalid("label order must be a permutation of the labels"));
    }
    if head_count > c {
        return Err(Error::invalid(format!("head count {head_count} exceeds {c} labels")));
    }
    let per_label_map: Vec<Option<f64>> = (0..c)
        .map(|a| {
            mean(
                average_precision
                    .iter()
                    .enumerate()
                    .filter(|(q, _)| query_labels.get(*q, a))
                    .filter_map(|(_, ap)| *ap),
            )
        })
        .collect();
    let head_map = mean(label_order[..head_count].iter().filter_map(|&a| per_label_map[a]));
    let tail_map = mean(label_order[head_count..].iter().filter_map(|&a| per_label_map[a]));
    Ok(LabelBreakdown {
        per_label_map,
        label_order: label_order.to_vec(),
        head_count,
        head_map,
        tail_map,
    })
}

/// Default number of head labels: the larger half.
pub fn default_head_count(num_labels: usize) -> usize {
    num_labels.div_ceil(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "I2T")]
    ImageToText,
    #[serde(rename = "T2I")]
    TextToImage,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ImageToText, Direction::TextToImage];

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::ImageToText => "I2T",
            Direction::TextToImage => "T2I",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s.to_ascii_lowercase().as_str() {
            "i2t" | "i->t" | "image-to-text" => Some(Direction::ImageToText),
            "t2i" | "t->i" | "text-to-image" => Some(Direction::TextToImage),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub direction: Direction,
    pub map: f64,
    pub top_r: Option<usize>,
    pub precision_at: Vec<(usize, f64)>,
    pub per_label_map: Vec<Option<f64>>,
    pub label_order: Vec<usize>,
    pub head_tail_split_index: usize,
    pub head_map: Option<f64>,
    pub tail_map: Option<f64>,
    pub num_queries: usize,
    pub excluded_queries: usize,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub top_r: Option<usize>,
    pub precision_ks: Vec<usize>,
    /// Defaults to [`default_head_count`].
    pub head_count: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            top_r: None,
            precision_ks: vec![10, 100, 500],
            head_count: None,
        }
    }
}

/// MAP, precision@k and the head/tail breakdown for one direction. Labels
/// are ordered by their base-set counts.
pub fn evaluate_codes(
    variant: &str,
    direction: Direction,
    query: &HashCodes,
    query_labels: &LabelMatrix,
    base: &HashCodes,
    base_labels: &LabelMatrix,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let start = Instant::now();
    let map = mean_average_precision(query, query_labels, base, base_labels, options.top_r)?;
    let precision = precision_at(query, query_labels, base, base_labels, &options.precision_ks)?;
    let order = labels_by_count(&base_labels.counts());
    let head_count = options.head_count.unwrap_or_else(|| default_head_count(base_labels.num_labels()));
    let breakdown = per_label_breakdown(&map.average_precision, query_labels, &order, head_count)?;
    Ok(EvalReport {
        variant: variant.to_string(),
        direction,
        map: map.map,
        top_r: options.top_r,
        precision_at: precision,
        per_label_map: breakdown.per_label_map,
        label_order: breakdown.label_order,
        head_tail_split_index: head_count,
        head_map: breakdown.head_map,
        tail_map: breakdown.tail_map,
        num_queries: query.len(),
        excluded_queries: map.excluded,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn codes(bits: usize, rows: &[&[i8]]) -> HashCodes {
        HashCodes::from_signs(bits, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn random_codes(bits: usize, n: usize, rng: &mut ChaCha8Rng) -> HashCodes {
        HashCodes::from_signs(bits, (0..bits * n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect()).unwrap()
    }

    fn random_labels(n: usize, c: usize, rng: &mut ChaCha8Rng) -> LabelMatrix {
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut l = vec![rng.gen_range(0..c)];
                if rng.gen_bool(0.3) {
                    l.push(rng.gen_range(0..c));
                }
                l
            })
            .collect();
        LabelMatrix::from_lists(c, &lists).unwrap()
    }

    #[test]
    fn hamming_cases() {
        let a = [1, -1, 1, 1];
        let neg: Vec<i8> = a.iter().map(|v| -v).collect();
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &neg).unwrap(), 4);
        assert!(hamming(&a, &[1]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = random_codes(13, 2, &mut rng);
            let (x, y) = (c.code(0), c.code(1));
            let mut loop_count = 0;
            for i in 0..13 {
                if x[i] != y[i] {
                    loop_count += 1;
                }
            }
            let dot: i32 = x.iter().zip(y).map(|(&a, &b)| a as i32 * b as i32).sum();
            assert_eq!(hamming(x, y).unwrap(), loop_count);
            assert_eq!(2 * loop_count as i32, 13 - dot);
        }
    }

    #[test]
    fn ranking_ties_break_by_index() {
        let base = codes(2, &[&[-1, -1], &[1, 1], &[1, -1], &[1, 1]]);
        assert_eq!(rank(&[1, 1], &base), vec![1, 3, 2, 0]);
    }

    #[test]
    fn all_relevant_gives_map_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_codes(4, 3, &mut rng);
        let b = random_codes(4, 6, &mut rng);
        let ql = LabelMatrix::from_lists(1, &vec![vec![0]; 3]).unwrap();
        let bl = LabelMatrix::from_lists(1, &vec![vec![0]; 6]).unwrap();
        assert_eq!(mean_average_precision(&q, &ql, &b, &bl, None).unwrap().map, 1.0);
    }

    #[test]
    fn hand_computed_ap() {
        // Distances 0, 1, 2 put the base items in order; relevance (1, 0, 1).
        let q = codes(2, &[&[1, 1]]);
        let b = codes(2, &[&[1, 1], &[1, -1], &[-1, -1]]);
        let ql = LabelMatrix::from_lists(2, &[vec![0]]).unwrap();
        let bl = LabelMatrix::from_lists(2, &[vec![0], vec![1], vec![0, 1]]).unwrap();
        let r = mean_average_precision(&q, &ql, &b, &bl, None).unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-15);
        let top1 = mean_average_precision(&q, &ql, &b, &bl, Some(1)).unwrap();
        assert_eq!(top1.map, 1.0);
    }

    #[test]
    fn queries_without_relevant_items_are_excluded() {
        let q = codes(1, &[&[1], &[1]]);
        let b = codes(1, &[&[1]]);
        let ql = LabelMatrix::from_lists(2, &[vec![0], vec![1]]).unwrap();
        let bl = LabelMatrix::from_lists(2, &[vec![0]]).unwrap();
        let r = mean_average_precision(&q, &ql, &b, &bl, None).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.average_precision, vec![Some(1.0), None]);
        let only_bad = LabelMatrix::from_lists(2, &[vec![1], vec![1]]).unwrap();
        assert!(matches!(mean_average_precision(&q, &only_bad, &b, &bl, None), Err(Error::NoValidQueries)));
    }

    fn oracle_map(q: &HashCodes, ql: &LabelMatrix, b: &HashCodes, bl: &LabelMatrix) -> Option<f64> {
        let mut aps = Vec::new();
        for i in 0..q.len() {
            let dist = |j: usize| (0..q.bits()).filter(|&r| q.code(i)[r] != b.code(j)[r]).count();
            let rel = |j: usize| (0..ql.num_labels()).any(|a| ql.get(i, a) && bl.get(j, a));
            let total = (0..b.len()).filter(|&j| rel(j)).count();
            if total == 0 {
                continue;
            }
            let mut ap = 0.0;
            for j in (0..b.len()).filter(|&j| rel(j)) {
                // position of j = items strictly closer, or equally close with a smaller index
                let ahead: Vec<usize> = (0..b.len()).filter(|&t| dist(t) < dist(j) || (dist(t) == dist(j) && t < j)).collect();
                let rel_ahead = ahead.iter().filter(|&&t| rel(t)).count();
                ap += (rel_ahead + 1) as f64 / (ahead.len() + 1) as f64;
            }
            aps.push(ap / total as f64);
        }
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    #[test]
    fn matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let bits = rng.gen_range(1..8);
            let (nq, nb, c) = (rng.gen_range(1..=10), rng.gen_range(1..=30), rng.gen_range(1..6));
            let (q, b) = (random_codes(bits, nq, &mut rng), random_codes(bits, nb, &mut rng));
            let (ql, bl) = (random_labels(nq, c, &mut rng), random_labels(nb, c, &mut rng));
            match (oracle_map(&q, &ql, &b, &bl), mean_average_precision(&q, &ql, &b, &bl, None)) {
                (Some(want), Ok(got)) => assert!((want - got.map).abs() < 1e-12),
                (None, Err(Error::NoValidQueries)) => {}
                other => panic!("disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn precision_cases() {
        let q = codes(2, &[&[1, 1]]);
        let b = codes(2, &[&[1, 1], &[1, -1], &[-1, -1]]);
        let ql = LabelMatrix::from_lists(2, &[vec![0]]).unwrap();
        let bl = LabelMatrix::from_lists(2, &[vec![0], vec![1], vec![0, 1]]).unwrap();
        let p = precision_at(&q, &ql, &b, &bl, &[1, 2, 10]).unwrap();
        assert_eq!(p, vec![(1, 1.0), (2, 0.5), (10, 2.0 / 3.0)]);
        assert!(precision_at(&q, &ql, &b, &bl, &[0]).is_err());
    }

    #[test]
    fn breakdown_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_codes(4, 5, &mut rng);
        let b = random_codes(4, 9, &mut rng);
        let ql = LabelMatrix::from_lists(1, &vec![vec![0]; 5]).unwrap();
        let bl = LabelMatrix::from_lists(1, &vec![vec![0]; 9]).unwrap();
        let r = mean_average_precision(&q, &ql, &b, &bl, None).unwrap();
        let bd = per_label_breakdown(&r.average_precision, &ql, &[0], 1).unwrap();
        assert_eq!(bd.per_label_map[0], Some(r.map));
        assert_eq!(bd.tail_map, None);

        let ql = LabelMatrix::from_lists(3, &[vec![0], vec![0, 2], vec![2]]).unwrap();
        let aps = [Some(0.5), Some(1.0), None];
        let bd = per_label_breakdown(&aps, &ql, &[2, 0, 1], 1).unwrap();
        assert_eq!(bd.per_label_map, vec![Some(0.75), None, Some(1.0)]);
        assert_eq!(bd.head_map, Some(1.0));
        assert_eq!(bd.tail_map, Some(0.75));
        assert!(per_label_breakdown(&aps, &ql, &[0, 0, 1], 1).is_err());
        assert!(per_label_breakdown(&aps, &ql, &[0, 1, 2], 4).is_err());
    }

    #[test]
    fn label_order_is_by_descending_count() {
        assert_eq!(labels_by_count(&[3, 10, 3, 7]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn direction_names() {
        for d in Direction::BOTH {
            assert_eq!(Direction::parse(d.tag()), Some(d));
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(serde_json::from_str::<Direction>(&json).unwrap(), d);
        }
        assert_eq!(Direction::ImageToText.query_modality(), Modality::Image);
    }
}
