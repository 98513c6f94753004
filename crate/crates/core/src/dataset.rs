//! In-memory two-modality dataset: features stored samples-as-rows, a binary
//! label matrix, and the base/query split.

use serde::{Deserialize, Serialize};

use crate::datagen::LongTailSpec;
use crate::diffkernel::Matrix;
use crate::error::{Error, Result};

/// Dense binary `n × c` label matrix with per-row bitsets for fast overlap tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    n: usize,
    c: usize,
    words: usize,
    bits: Vec<u64>,
}

impl LabelMatrix {
    pub fn new(n: usize, c: usize) -> Self {
        let words = c.div_ceil(64).max(1);
        LabelMatrix {
            n,
            c,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn from_lists(c: usize, lists: &[Vec<usize>]) -> Result<Self> {
        let mut m = LabelMatrix::new(lists.len(), c);
        for (i, labels) in lists.iter().enumerate() {
            for &a in labels {
                if a >= c {
                    return Err(Error::invalid(format!("sample {i}: label {a} out of range (c = {c})")));
                }
                m.set(i, a, true);
            }
        }
        Ok(m)
    }

    /// Rows of 0/1 bytes, `n × c` row-major.
    pub fn from_bytes(n: usize, c: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != n * c {
            return Err(Error::shape("LabelMatrix::from_bytes", (n, c), (bytes.len(), 1)));
        }
        let mut m = LabelMatrix::new(n, c);
        for (idx, &b) in bytes.iter().enumerate() {
            match b {
                0 => {}
                1 => m.set(idx / c, idx % c, true),
                other => return Err(Error::invalid(format!("label cell {idx} holds {other}, expected 0 or 1"))),
            }
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n * self.c);
        for i in 0..self.n {
            for a in 0..self.c {
                out.push(self.get(i, a) as u8);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_labels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn get(&self, i: usize, a: usize) -> bool {
        self.bits[i * self.words + a / 64] >> (a % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, a: usize, on: bool) {
        let w = &mut self.bits[i * self.words + a / 64];
        if on {
            *w |= 1 << (a % 64);
        } else {
            *w &= !(1 << (a % 64));
        }
    }

    #[inline]
    fn row_bits(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    pub fn labels_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.c).filter(move |&a| self.get(i, a))
    }

    pub fn label_count(&self, i: usize) -> usize {
        self.row_bits(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True when row `i` of `self` and row `j` of `other` share at least one label.
    #[inline]
    pub fn shares_label(&self, i: usize, other: &LabelMatrix, j: usize) -> bool {
        self.row_bits(i)
            .iter()
            .zip(other.row_bits(j))
            .any(|(a, b)| a & b != 0)
    }

    /// Samples per label.
    pub fn counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.c];
        for i in 0..self.n {
            for a in self.labels_of(i) {
                out[a] += 1;
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let mut out = LabelMatrix::new(idx.len(), self.c);
        for (r, &i) in idx.iter().enumerate() {
            out.bits[r * self.words..(r + 1) * self.words].copy_from_slice(self.row_bits(i));
        }
        out
    }

    /// Errors with the first sample that carries no label.
    pub fn ensure_every_row_labelled(&self) -> Result<()> {
        match (0..self.n).find(|&i| self.label_count(i) == 0) {
            Some(i) => Err(Error::UnlabeledSample(i)),
            None => Ok(()),
        }
    }
}

/// Fixed random mixing maps used to plant latent structure into raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingMaps {
    /// `raw_dim_x × shared_dim`
    pub shared_x: Matrix,
    /// `raw_dim_x × private_dim`
    pub private_x: Matrix,
    pub shared_y: Matrix,
    pub private_y: Matrix,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetMeta {
    /// Generator settings, when the data was synthesized.
    pub spec: Option<LongTailSpec>,
    /// Target per-label counts from the Zipf schedule.
    pub zipf_counts: Option<Vec<usize>>,
    pub mixing: Option<MixingMaps>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × raw_dim_x`, one sample per row.
    pub features_x: Matrix,
    /// `n × raw_dim_y`, one sample per row.
    pub features_y: Matrix,
    pub labels: LabelMatrix,
    pub base: Vec<usize>,
    pub query: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Validates shapes and labels; the split starts as "everything is base".
    pub fn new(features_x: Matrix, features_y: Matrix, labels: LabelMatrix) -> Result<Self> {
        let n = labels.n();
        if features_x.rows() != n {
            return Err(Error::shape("Dataset features_x", (n, features_x.cols()), features_x.shape()));
        }
        if features_y.rows() != n {
            return Err(Error::shape("Dataset features_y", (n, features_y.cols()), features_y.shape()));
        }
        features_x.ensure_finite("features_x")?;
        features_y.ensure_finite("features_y")?;
        labels.ensure_every_row_labelled()?;
        Ok(Dataset {
            features_x,
            features_y,
            labels,
            base: (0..n).collect(),
            query: Vec::new(),
            meta: DatasetMeta::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.n()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.num_labels()
    }

    pub fn raw_dim_x(&self) -> usize {
        self.features_x.cols()
    }

    pub fn raw_dim_y(&self) -> usize {
        self.features_y.cols()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        self.labels.counts()
    }

    pub fn raw(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Image => &self.features_x,
            Modality::Text => &self.features_y,
        }
    }

    /// Checks that base and query are disjoint and together cover every index once.
    pub fn validate_split(&self) -> Result<()> {
        let n = self.n();
        let mut seen = vec![false; n];
        for &i in self.base.iter().chain(&self.query) {
            if i >= n {
                return Err(Error::invalid(format!("split index {i} out of range (n = {n})")));
            }
            if seen[i] {
                return Err(Error::invalid(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("sample {i} is in neither base nor query")));
        }
        Ok(())
    }

    /// Rows `idx` of one modality, transposed to `raw_dim × |idx|` (samples as columns).
    pub fn columns(&self, modality: Modality, idx: &[usize]) -> Matrix {
        self.raw(modality).select_rows(idx).transpose()
    }
}

/// `x` is the image side, `y` the text side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s {
            "image" | "x" | "img" => Some(Modality::Image),
            "text" | "y" | "txt" => Some(Modality::Text),
            _ => None,
        }
    }
}
