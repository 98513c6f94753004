//! Dynamic meta features
//!
//! ```text
//! M = F + E1 ⊙ C* + E2 ⊙ P,   E1 = tanh(FC1(F)),   E2 = tanh(FC2(F))
//! ```
//!
//! `F` is the direct feature of one modality (a trainable projection of the
//! raw input to `k` dims), `C*` and `P` come from the frozen autoencoder.
//! Everything is `k × n`, one sample per column.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::diffkernel::{Activation, Matrix, Mlp, MlpGrads, Tape};
use crate::error::{Error, Result};

/// Which terms of the fusion are kept. The ablations drop terms, never retrain differently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// No commonality term.
    #[serde(rename = "w/oC")]
    WoC,
    /// No individuality term.
    #[serde(rename = "w/oI")]
    WoI,
    /// Neither term: `M = F`.
    #[serde(rename = "w/oIC")]
    WoIC,
    /// Image side uses `M = F`.
    #[serde(rename = "w/oMetaI")]
    WoMetaI,
    /// Text side uses `M = F`.
    #[serde(rename = "w/oMetaT")]
    WoMetaT,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WoC,
        Variant::WoI,
        Variant::WoIC,
        Variant::WoMetaI,
        Variant::WoMetaT,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoC => "w/oC",
            Variant::WoI => "w/oI",
            Variant::WoIC => "w/oIC",
            Variant::WoMetaI => "w/oMetaI",
            Variant::WoMetaT => "w/oMetaT",
        }
    }

    /// File-name friendly tag.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoC => "wo_c",
            Variant::WoI => "wo_i",
            Variant::WoIC => "wo_ic",
            Variant::WoMetaI => "wo_meta_i",
            Variant::WoMetaT => "wo_meta_t",
        }
    }

    pub fn terms(self, modality: Modality) -> Terms {
        match (self, modality) {
            (Variant::Full, _) => Terms::BOTH,
            (Variant::WoC, _) => Terms { common: false, individual: true },
            (Variant::WoI, _) => Terms { common: true, individual: false },
            (Variant::WoIC, _) => Terms::NONE,
            (Variant::WoMetaI, Modality::Image) | (Variant::WoMetaT, Modality::Text) => Terms::NONE,
            (Variant::WoMetaI, Modality::Text) | (Variant::WoMetaT, Modality::Image) => Terms::BOTH,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s) || v.slug() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub common: bool,
    pub individual: bool,
}

impl Terms {
    pub const BOTH: Terms = Terms { common: true, individual: true };
    pub const NONE: Terms = Terms { common: false, individual: false };
}

/// Projector and the two selectors of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SideNets {
    pub projector: Mlp,
    pub selector1: Mlp,
    pub selector2: Mlp,
}

#[derive(Clone, Debug)]
pub struct SideGrads {
    pub projector: MlpGrads,
    pub selector1: MlpGrads,
    pub selector2: MlpGrads,
}

impl SideGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.projector.to_flat();
        v.extend(self.selector1.to_flat());
        v.extend(self.selector2.to_flat());
        v
    }

    pub fn scale(&mut self, s: f64) {
        self.projector.scale(s);
        self.selector1.scale(s);
        self.selector2.scale(s);
    }
}

/// `projector_hidden = None` gives a single linear projection.
fn projector(raw_dim: usize, code_bits: usize, hidden: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    match hidden {
        Some(h) => Mlp::build(&[raw_dim, h, code_bits], Activation::Tanh, Activation::Identity, rng),
        None => Mlp::build(&[raw_dim, code_bits], Activation::Identity, Activation::Identity, rng),
    }
}

/// Selectors start at zero, so a fresh hash side emits `M = F` and the
/// commonality and individuality terms are grown by training.
fn selector(code_bits: usize, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    let mut mlp = Mlp::build(&[code_bits, code_bits], Activation::Tanh, Activation::Tanh, rng)?;
    for layer in &mut mlp.layers {
        layer.weight = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    Ok(mlp)
}

impl SideNets {
    pub fn new(raw_dim: usize, code_bits: usize, projector_hidden: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        if raw_dim == 0 || code_bits == 0 {
            return Err(Error::invalid("hash side dimensions must be positive"));
        }
        Ok(SideNets {
            projector: projector(raw_dim, code_bits, projector_hidden, rng)?,
            selector1: selector(code_bits, rng)?,
            selector2: selector(code_bits, rng)?,
        })
    }

    pub fn code_bits(&self) -> usize {
        self.projector.out_dim()
    }

    pub fn raw_dim(&self) -> usize {
        self.projector.in_dim()
    }

    pub fn networks(&self) -> [(&'static str, &Mlp); 3] {
        [
            ("projector", &self.projector),
            ("selector1", &self.selector1),
            ("selector2", &self.selector2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|(_, m)| m.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.networks().iter().flat_map(|(_, m)| m.to_flat()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("SideNets::set_flat", (self.param_count(), 1), (flat.len(), 1)));
        }
        let a = self.projector.param_count();
        let b = a + self.selector1.param_count();
        self.projector.set_flat(&flat[..a])?;
        self.selector1.set_flat(&flat[a..b])?;
        self.selector2.set_flat(&flat[b..])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.code_bits();
        for (name, sel) in [("selector1", &self.selector1), ("selector2", &self.selector2)] {
            if sel.in_dim() != k || sel.out_dim() != k {
                return Err(Error::invalid(format!("{name} must map k = {k} to k")));
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, g: &SideGrads, lr: f64) -> Result<()> {
        self.projector.sgd_step(&g.projector, lr)?;
        self.selector1.sgd_step(&g.selector1, lr)?;
        self.selector2.sgd_step(&g.selector2, lr)
    }
}

/// The hash-side parameters of both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct HashSideParams {
    pub x: SideNets,
    pub y: SideNets,
}

impl HashSideParams {
    pub fn new(raw_dim_x: usize, raw_dim_y: usize, code_bits: usize, projector_hidden: Option<usize>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(HashSideParams {
            x: SideNets::new(raw_dim_x, code_bits, projector_hidden, &mut rng)?,
            y: SideNets::new(raw_dim_y, code_bits, projector_hidden, &mut rng)?,
        })
    }

    pub fn side(&self, modality: Modality) -> &SideNets {
        match modality {
            Modality::Image => &self.x,
            Modality::Text => &self.y,
        }
    }

    pub fn side_mut(&mut self, modality: Modality) -> &mut SideNets {
        match modality {
            Modality::Image => &mut self.x,
            Modality::Text => &mut self.y,
        }
    }

    pub fn code_bits(&self) -> usize {
        self.x.code_bits()
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        self.y.validate()?;
        if self.x.code_bits() != self.y.code_bits() {
            return Err(Error::invalid("both modalities must use the same code length"));
        }
        Ok(())
    }
}

/// `F = projector(raw)`; `raw` is `raw_dim × n`.
pub fn direct_features(projector: &Mlp, raw: &Matrix) -> Result<Matrix> {
    projector.predict(raw)
}

/// The two selection factors, entries in (−1, 1).
pub fn selectors(side: &SideNets, f: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((side.selector1.predict(f)?, side.selector2.predict(f)?))
}

/// `F + E1 ⊙ C* + E2 ⊙ P`.
pub fn meta_features(f: &Matrix, cstar: &Matrix, p: &Matrix, e1: &Matrix, e2: &Matrix) -> Result<Matrix> {
    let mut m = f.clone();
    m.add_scaled(&e1.hadamard(cstar)?, 1.0)?;
    m.add_scaled(&e2.hadamard(p)?, 1.0)?;
    Ok(m)
}

/// Forward caches for [`side_backward`].
#[derive(Clone, Debug)]
pub struct SideCache {
    projector: Tape,
    selector1: Option<Tape>,
    selector2: Option<Tape>,
    cstar: Matrix,
    p: Matrix,
}

/// Meta features of one modality under `terms`; dropped terms skip their selector.
pub fn side_forward(side: &SideNets, raw: &Matrix, cstar: &Matrix, p: &Matrix, terms: Terms) -> Result<(Matrix, SideCache)> {
    let (f, tape_f) = side.projector.forward(raw)?;
    if cstar.shape() != f.shape() || p.shape() != f.shape() {
        return Err(Error::shape("meta codes", f.shape(), cstar.shape()));
    }
    let mut m = f.clone();
    let selector1 = if terms.common {
        let (e1, tape) = side.selector1.forward(&f)?;
        m.add_scaled(&e1.hadamard(cstar)?, 1.0)?;
        Some(tape)
    } else {
        None
    };
    let selector2 = if terms.individual {
        let (e2, tape) = side.selector2.forward(&f)?;
        m.add_scaled(&e2.hadamard(p)?, 1.0)?;
        Some(tape)
    } else {
        None
    };
    Ok((
        m,
        SideCache {
            projector: tape_f,
            selector1,
            selector2,
            cstar: cstar.clone(),
            p: p.clone(),
        },
    ))
}

/// Parameter gradients given `∂L/∂M`.
pub fn side_backward(side: &SideNets, cache: &SideCache, upstream: &Matrix) -> Result<SideGrads> {
    let mut df = upstream.clone();
    let mut gate = |sel: &Mlp, tape: &Option<Tape>, code: &Matrix| -> Result<MlpGrads> {
        match tape {
            Some(t) => {
                let (g, dinput) = sel.backward(t, &upstream.hadamard(code)?)?;
                df.add_scaled(&dinput, 1.0)?;
                Ok(g)
            }
            None => Ok(MlpGrads::zeros_like(sel)),
        }
    };
    let selector1 = gate(&side.selector1, &cache.selector1, &cache.cstar)?;
    let selector2 = gate(&side.selector2, &cache.selector2, &cache.p)?;
    let (projector, _) = side.projector.backward(&cache.projector, &df)?;
    Ok(SideGrads {
        projector,
        selector1,
        selector2,
    })
}

/// Meta features without caches.
pub fn side_predict(side: &SideNets, raw: &Matrix, cstar: &Matrix, p: &Matrix, terms: Terms) -> Result<Matrix> {
    side_forward(side, raw, cstar, p, terms).map(|(m, _)| m)
}
