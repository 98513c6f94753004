//! Two-phase training, evaluation and ablation runs.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::hashlearn::{train_hash, CommonInput, HashCodes, HashConfig, HashHyper, HashTrace};
use crate::icae::{hidden_width, train_ae_with, AeConfig, AeHyper, AeTrace, IcaeParams, LabelAffinities};
use crate::meta::{HashSideParams, Variant};
use crate::retrieval::{encode_query, evaluate_codes, Direction, EvalOptions, EvalReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub code_bits: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub lr_feat: f64,
    pub lr_ae: f64,
    pub max_epochs: usize,
    /// Overrides `max_epochs` for the autoencoder phase.
    pub ae_epochs: Option<usize>,
    /// Overrides `max_epochs` for the hashing phase.
    pub hash_epochs: Option<usize>,
    pub modality_dropout: f64,
    pub common_input: CommonInput,
    pub projector: ProjectorKind,
    pub seed: u64,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            code_bits: 16,
            alpha: 0.05,
            beta: 0.05,
            gamma: 1.0,
            eta: 1.0,
            batch_size: 128,
            lr_feat: 10f64.powf(-1.5),
            lr_ae: 0.01,
            max_epochs: 500,
            ae_epochs: None,
            hash_epochs: None,
            modality_dropout: 0.5,
            common_input: CommonInput::Single,
            projector: ProjectorKind::Linear,
            seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.code_bits == 0 {
            return Err(Error::invalid("code length k must be at least 1"));
        }
        if !(self.lr_feat > 0.0 && self.lr_ae > 0.0) || !self.lr_feat.is_finite() || !self.lr_ae.is_finite() {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.modality_dropout) {
            return Err(Error::invalid("modality dropout must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Settings outside the ranges where training is known to be stable.
    pub fn stability_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v, lo, hi) in [
            ("alpha", self.alpha, 1e-4, 1e-1),
            ("beta", self.beta, 1e-4, 1e-1),
            ("gamma", self.gamma, 1e-3, 2.0),
            ("eta", self.eta, 1e-3, 2.0),
        ] {
            if v < lo || v > hi {
                out.push(format!("{name} = {v} is outside the stable range [{lo}, {hi}]"));
            }
        }
        out
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            batch_size: self.batch_size,
            lr: self.lr_ae,
            max_epochs: self.ae_epochs.unwrap_or(self.max_epochs),
            modality_dropout: self.modality_dropout,
            seed: sub_seed(self.seed, 2),
        }
    }

    pub fn hash_config(&self, variant: Variant) -> HashConfig {
        HashConfig {
            hyper: HashHyper {
                gamma: self.gamma,
                eta: self.eta,
                lr: self.lr_feat,
                batch_size: self.batch_size,
                max_epochs: self.hash_epochs.unwrap_or(self.max_epochs),
            },
            variant,
            common_input: self.common_input,
            seed: sub_seed(self.seed, 4),
        }
    }

    pub fn projector_hidden(&self) -> Option<usize> {
        match self.projector {
            ProjectorKind::Linear => None,
            ProjectorKind::Mlp => Some(hidden_width(self.code_bits)),
        }
    }

    pub fn init_icae(&self, dataset: &Dataset) -> Result<IcaeParams> {
        IcaeParams::new(
            dataset.raw_dim_x(),
            dataset.raw_dim_y(),
            self.code_bits,
            AeHyper { alpha: self.alpha, beta: self.beta },
            sub_seed(self.seed, 1),
        )
    }

    /// The same initial hash side for every variant of one seed.
    pub fn init_side(&self, dataset: &Dataset) -> Result<HashSideParams> {
        HashSideParams::new(
            dataset.raw_dim_x(),
            dataset.raw_dim_y(),
            self.code_bits,
            self.projector_hidden(),
            sub_seed(self.seed, 3),
        )
    }
}

/// Independent seed for one stage of a run.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A trained model: frozen autoencoder plus hash side, and the base codes `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub icae: IcaeParams,
    pub side: HashSideParams,
    pub variant: Variant,
    pub base_codes: HashCodes,
}

impl Model {
    pub fn encode(&self, modality: Modality, raw_columns: &crate::Matrix) -> Result<HashCodes> {
        encode_query(modality, raw_columns, &self.icae, &self.side, self.variant)
    }

    /// Codes for dataset rows `idx` of one modality.
    pub fn encode_rows(&self, dataset: &Dataset, modality: Modality, idx: &[usize]) -> Result<HashCodes> {
        self.encode(modality, &dataset.columns(modality, idx))
    }
}

pub fn train_phase1(dataset: &Dataset, config: &RunConfig, on_epoch: impl FnMut(usize, f64)) -> Result<(IcaeParams, AeTrace)> {
    config.validate()?;
    let mut params = config.init_icae(dataset)?;
    let affinities = LabelAffinities::from_base(dataset)?;
    let trace = train_ae_with(dataset, &mut params, &config.ae_config(), &affinities, on_epoch)?;
    params.standardize_codes(
        &dataset.columns(Modality::Image, &dataset.base),
        &dataset.columns(Modality::Text, &dataset.base),
    )?;
    Ok((params, trace))
}

pub fn train_phase2(dataset: &Dataset, icae: &IcaeParams, config: &RunConfig, variant: Variant) -> Result<(Model, HashTrace)> {
    config.validate()?;
    let side = config.init_side(dataset)?;
    let (side, base_codes, trace) = train_hash(dataset, icae, side, &config.hash_config(variant))?;
    Ok((
        Model {
            icae: icae.clone(),
            side,
            variant,
            base_codes,
        },
        trace,
    ))
}

/// Both retrieval directions: query-split codes of one modality against
/// base-split codes of the other.
pub fn evaluate(dataset: &Dataset, model: &Model, options: &EvalOptions) -> Result<Vec<EvalReport>> {
    if dataset.query.is_empty() {
        return Err(Error::invalid("evaluation needs a non-empty query split"));
    }
    let query_labels = dataset.labels.select_rows(&dataset.query);
    let base_labels = dataset.labels.select_rows(&dataset.base);
    Direction::BOTH
        .iter()
        .map(|&dir| {
            let qm = dir.query_modality();
            let q = model.encode_rows(dataset, qm, &dataset.query)?;
            let b = model.encode_rows(dataset, qm.other(), &dataset.base)?;
            evaluate_codes(model.variant.tag(), dir, &q, &query_labels, &b, &base_labels, options)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub reports: Vec<EvalReport>,
    pub loss2: Vec<f64>,
}

impl VariantRun {
    /// Mean MAP of the two directions.
    pub fn mean_map(&self) -> f64 {
        self.reports.iter().map(|r| r.map).sum::<f64>() / self.reports.len() as f64
    }

    pub fn mean_head_map(&self) -> Option<f64> {
        mean_opt(self.reports.iter().map(|r| r.head_map))
    }

    pub fn mean_tail_map(&self) -> Option<f64> {
        mean_opt(self.reports.iter().map(|r| r.tail_map))
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub loss1: Vec<f64>,
    pub runs: Vec<VariantRun>,
}

impl AblationRun {
    pub fn get(&self, variant: Variant) -> Option<&VariantRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }
}

/// One shared autoencoder, then a hash side per variant from the same initialization.
pub fn ablate(dataset: &Dataset, config: &RunConfig, variants: &[Variant]) -> Result<AblationRun> {
    let (icae, ae_trace) = train_phase1(dataset, config, |_, _| {})?;
    let runs = variants
        .iter()
        .map(|&v| {
            let (model, trace) = train_phase2(dataset, &icae, config, v)?;
            Ok(VariantRun {
                variant: v,
                reports: evaluate(dataset, &model, &config.eval)?,
                loss2: trace.loss2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRun {
        seed: config.seed,
        loss1: ae_trace.loss1,
        runs,
    })
}
