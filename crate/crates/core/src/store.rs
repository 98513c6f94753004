//! On-disk formats.
//!
//! Every artifact is a directory holding `manifest.json` plus raw arrays.
//! Reals are little-endian f64, row-major; labels are one byte per cell
//! (0/1); hash codes are packed bits (−1 ↦ 0), one byte-padded code per
//! sample, least significant bit first. Each array's size and CRC-32 are
//! recorded in the manifest and checked on load. JSON reals are written in
//! shortest round-trip form, so manifests are exact too.
//!
//! Dataset layout: `features_x.bin`, `features_y.bin`, `labels.bin`, and the
//! generator's mixing maps when present (`mixing_*.bin`).
//!
//! Checkpoint layout: one `<network>.<layer>.weight.bin` / `.bias.bin` pair
//! per dense layer, and for the hash phase `base_codes.bin`.
//!
//! Report CSV columns: [`CSV_HEADER`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::LongTailSpec;
use crate::dataset::{Dataset, DatasetMeta, LabelMatrix, MixingMaps, Modality};
use crate::diffkernel::{Activation, DenseLayer, Matrix, Mlp};
use crate::error::{Error, Result};
use crate::hashlearn::{HashCodes, HashTrace};
use crate::icae::{AeHyper, AeTrace, IcaeParams};
use crate::meta::{HashSideParams, SideNets, Variant};
use crate::pipeline::{Model, RunConfig};
use crate::retrieval::EvalReport;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

/// One binary array referenced from a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub bytes: u64,
    pub crc32: u32,
}

fn write_bytes(dir: &Path, file: &str, rows: usize, cols: usize, bytes: &[u8]) -> Result<ArrayEntry> {
    let path = dir.join(file);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&path, e))?;
    f.sync_all().map_err(|e| Error::io(&path, e))?;
    Ok(ArrayEntry {
        file: file.to_string(),
        rows,
        cols,
        bytes: bytes.len() as u64,
        crc32: crc32fast::hash(bytes),
    })
}

fn read_bytes(dir: &Path, entry: &ArrayEntry, expected_len: u64) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    if entry.bytes != expected_len {
        return Err(Error::Malformed {
            path,
            reason: format!(
                "manifest declares {} bytes for a {}x{} array, expected {expected_len}",
                entry.bytes, entry.rows, entry.cols
            ),
        });
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != expected_len {
        return Err(Error::Truncated {
            path,
            expected: expected_len,
            found: bytes.len() as u64,
        });
    }
    let found = crc32fast::hash(&bytes);
    if found != entry.crc32 {
        return Err(Error::ChecksumMismatch {
            path,
            expected: entry.crc32,
            found,
        });
    }
    Ok(bytes)
}

fn write_matrix(dir: &Path, file: &str, m: &Matrix) -> Result<ArrayEntry> {
    let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(dir, file, m.rows(), m.cols(), &bytes)
}

fn read_matrix(dir: &Path, entry: &ArrayEntry) -> Result<Matrix> {
    let bytes = read_bytes(dir, entry, (entry.rows * entry.cols * 8) as u64)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Matrix::from_vec(entry.rows, entry.cols, data)
}

fn write_codes(dir: &Path, file: &str, codes: &HashCodes) -> Result<ArrayEntry> {
    write_bytes(dir, file, codes.len(), codes.bits(), &codes.pack())
}

fn read_codes(dir: &Path, entry: &ArrayEntry) -> Result<HashCodes> {
    let bytes = read_bytes(dir, entry, (entry.rows * entry.cols.div_ceil(8)) as u64)?;
    HashCodes::unpack(entry.cols, entry.rows, &bytes).map_err(|e| Error::Malformed {
        path: dir.join(&entry.file),
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Reads `manifest.json` after checking its `format_version` and `kind`.
fn read_manifest<T: DeserializeOwned>(dir: &Path, kind: &str) -> Result<T> {
    let path = dir.join(MANIFEST);
    let value: serde_json::Value = read_json(&path)?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Malformed {
        path: path.clone(),
        reason: "missing format_version".into(),
    })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            path,
            expected: FORMAT_VERSION,
            found: version.min(u32::MAX as u64) as u32,
        });
    }
    let found = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Malformed {
            path,
            reason: format!("expected a {kind} manifest, found kind {found:?}"),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::json(&path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MixingEntries {
    shared_x: ArrayEntry,
    private_x: ArrayEntry,
    shared_y: ArrayEntry,
    private_y: ArrayEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    kind: String,
    n: usize,
    c: usize,
    raw_dim_x: usize,
    raw_dim_y: usize,
    label_counts: Vec<usize>,
    spec: Option<LongTailSpec>,
    zipf_counts: Option<Vec<usize>>,
    base: Vec<usize>,
    query: Vec<usize>,
    features_x: ArrayEntry,
    features_y: ArrayEntry,
    labels: ArrayEntry,
    mixing: Option<MixingEntries>,
}

pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    dataset.validate_split()?;
    let mixing = match &dataset.meta.mixing {
        Some(m) => Some(MixingEntries {
            shared_x: write_matrix(dir, "mixing_shared_x.bin", &m.shared_x)?,
            private_x: write_matrix(dir, "mixing_private_x.bin", &m.private_x)?,
            shared_y: write_matrix(dir, "mixing_shared_y.bin", &m.shared_y)?,
            private_y: write_matrix(dir, "mixing_private_y.bin", &m.private_y)?,
        }),
        None => None,
    };
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
        n: dataset.n(),
        c: dataset.num_labels(),
        raw_dim_x: dataset.raw_dim_x(),
        raw_dim_y: dataset.raw_dim_y(),
        label_counts: dataset.label_counts(),
        spec: dataset.meta.spec.clone(),
        zipf_counts: dataset.meta.zipf_counts.clone(),
        base: dataset.base.clone(),
        query: dataset.query.clone(),
        features_x: write_matrix(dir, "features_x.bin", &dataset.features_x)?,
        features_y: write_matrix(dir, "features_y.bin", &dataset.features_y)?,
        labels: write_bytes(dir, "labels.bin", dataset.n(), dataset.num_labels(), &dataset.labels.to_bytes())?,
        mixing,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let m: DatasetManifest = read_manifest(dir, "dataset")?;
    let path = dir.join(MANIFEST);
    let malformed = |reason: String| Error::Malformed {
        path: path.clone(),
        reason,
    };
    for (name, e, rows, cols) in [
        ("features_x", &m.features_x, m.n, m.raw_dim_x),
        ("features_y", &m.features_y, m.n, m.raw_dim_y),
        ("labels", &m.labels, m.n, m.c),
    ] {
        if (e.rows, e.cols) != (rows, cols) {
            return Err(malformed(format!("{name} is {}x{}, expected {rows}x{cols}", e.rows, e.cols)));
        }
    }
    let fx = read_matrix(dir, &m.features_x)?;
    let fy = read_matrix(dir, &m.features_y)?;
    let label_bytes = read_bytes(dir, &m.labels, (m.n * m.c) as u64)?;
    let labels = LabelMatrix::from_bytes(m.n, m.c, &label_bytes)?;
    let mut ds = Dataset::new(fx, fy, labels)?;
    if ds.label_counts() != m.label_counts {
        return Err(malformed("label_counts disagree with labels.bin".into()));
    }
    ds.base = m.base;
    ds.query = m.query;
    ds.validate_split().map_err(|e| malformed(e.to_string()))?;
    let mixing = match &m.mixing {
        Some(e) => Some(MixingMaps {
            shared_x: read_matrix(dir, &e.shared_x)?,
            private_x: read_matrix(dir, &e.private_x)?,
            shared_y: read_matrix(dir, &e.shared_y)?,
            private_y: read_matrix(dir, &e.private_y)?,
        }),
        None => None,
    };
    ds.meta = DatasetMeta {
        spec: m.spec,
        zipf_counts: m.zipf_counts,
        mixing,
    };
    Ok(ds)
}

/// CRC-32 of every array in a dataset directory, keyed by file name.
pub fn dataset_checksums(dir: impl AsRef<Path>) -> Result<Vec<(String, u32)>> {
    let m: DatasetManifest = read_manifest(dir.as_ref(), "dataset")?;
    let mut out = vec![
        (m.features_x.file, m.features_x.crc32),
        (m.features_y.file, m.features_y.crc32),
        (m.labels.file, m.labels.crc32),
    ];
    if let Some(e) = m.mixing {
        for a in [e.shared_x, e.private_x, e.shared_y, e.private_y] {
            out.push((a.file, a.crc32));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ae,
    Hash,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Ae => "ae",
            Phase::Hash => "hash",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashState {
    pub side: HashSideParams,
    pub variant: Variant,
    pub base_codes: HashCodes,
    pub trace: HashTrace,
}

/// Trained state after phase 1 (`hash` is `None`) or phase 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub icae: IcaeParams,
    pub ae_trace: AeTrace,
    pub hash: Option<HashState>,
}

impl Checkpoint {
    pub fn phase(&self) -> Phase {
        if self.hash.is_some() {
            Phase::Hash
        } else {
            Phase::Ae
        }
    }

    pub fn model(&self) -> Result<Model> {
        let h = self.hash.as_ref().ok_or(Error::PhaseMismatch {
            expected: "hash",
            found: "ae".into(),
        })?;
        Ok(Model {
            icae: self.icae.clone(),
            side: h.side.clone(),
            variant: h.variant,
            base_codes: h.base_codes.clone(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerEntry {
    activation: Activation,
    weight: ArrayEntry,
    bias: ArrayEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HashEntry {
    variant: Variant,
    epochs: usize,
    loss2: Vec<f64>,
    networks: Vec<NetworkEntry>,
    base_codes: ArrayEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    kind: String,
    phase: Phase,
    seed: u64,
    code_bits: usize,
    config: RunConfig,
    ae_hyper: AeHyper,
    ae_epochs: usize,
    ae_trace: AeTrace,
    networks: Vec<NetworkEntry>,
    hash: Option<HashEntry>,
}

fn write_network(dir: &Path, name: &str, mlp: &Mlp) -> Result<NetworkEntry> {
    let layers = mlp
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(LayerEntry {
                activation: l.activation,
                weight: write_matrix(dir, &format!("{name}.{i}.weight.bin"), &l.weight)?,
                bias: write_matrix(dir, &format!("{name}.{i}.bias.bin"), &Matrix::column(&l.bias))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NetworkEntry {
        name: name.to_string(),
        layers,
    })
}

fn read_network(dir: &Path, entries: &[NetworkEntry], name: &str) -> Result<Mlp> {
    let entry = entries.iter().find(|e| e.name == name).ok_or_else(|| Error::Malformed {
        path: dir.join(MANIFEST),
        reason: format!("network {name} missing"),
    })?;
    let layers = entry
        .layers
        .iter()
        .map(|l| {
            let weight = read_matrix(dir, &l.weight)?;
            let bias = read_matrix(dir, &l.bias)?;
            if bias.shape() != (weight.rows(), 1) {
                return Err(Error::Malformed {
                    path: dir.join(&l.bias.file),
                    reason: format!("bias is {:?}, expected ({}, 1)", bias.shape(), weight.rows()),
                });
            }
            Ok(DenseLayer {
                weight,
                bias: bias.into_vec(),
                activation: l.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers).map_err(|e| Error::Malformed {
        path: dir.join(MANIFEST),
        reason: format!("network {name}: {e}"),
    })
}

const SIDE_NETS: [(&str, Modality); 2] = [("x", Modality::Image), ("y", Modality::Text)];

pub fn save_checkpoint(dir: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let networks = ck
        .icae
        .networks()
        .iter()
        .map(|(name, m)| write_network(dir, name, m))
        .collect::<Result<Vec<_>>>()?;
    let hash = match &ck.hash {
        Some(h) => {
            let mut nets = Vec::new();
            for (tag, modality) in SIDE_NETS {
                for (name, m) in h.side.side(modality).networks() {
                    nets.push(write_network(dir, &format!("{name}_{tag}"), m)?);
                }
            }
            Some(HashEntry {
                variant: h.variant,
                epochs: h.trace.loss2.len(),
                loss2: h.trace.loss2.clone(),
                networks: nets,
                base_codes: write_codes(dir, "base_codes.bin", &h.base_codes)?,
            })
        }
        None => None,
    };
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        kind: "checkpoint".into(),
        phase: ck.phase(),
        seed: ck.config.seed,
        code_bits: ck.icae.code_bits(),
        config: ck.config.clone(),
        ae_hyper: ck.icae.hyper,
        ae_epochs: ck.ae_trace.loss1.len(),
        ae_trace: ck.ae_trace.clone(),
        networks,
        hash,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let m: CheckpointManifest = read_manifest(dir, "checkpoint")?;
    let net = |name: &str| read_network(dir, &m.networks, name);
    let icae = IcaeParams {
        enc_ind_x: net("enc_ind_x")?,
        enc_ind_y: net("enc_ind_y")?,
        enc_common: net("enc_common")?,
        dec_x: net("dec_x")?,
        dec_y: net("dec_y")?,
        hyper: m.ae_hyper,
    };
    let malformed = |reason: String| Error::Malformed {
        path: dir.join(MANIFEST),
        reason,
    };
    icae.validate().map_err(|e| malformed(e.to_string()))?;
    let hash = match (&m.hash, m.phase) {
        (Some(h), Phase::Hash) => {
            let side_nets = |tag: &str| -> Result<SideNets> {
                Ok(SideNets {
                    projector: read_network(dir, &h.networks, &format!("projector_{tag}"))?,
                    selector1: read_network(dir, &h.networks, &format!("selector1_{tag}"))?,
                    selector2: read_network(dir, &h.networks, &format!("selector2_{tag}"))?,
                })
            };
            let side = HashSideParams {
                x: side_nets("x")?,
                y: side_nets("y")?,
            };
            side.validate().map_err(|e| malformed(e.to_string()))?;
            Some(HashState {
                side,
                variant: h.variant,
                base_codes: read_codes(dir, &h.base_codes)?,
                trace: HashTrace { loss2: h.loss2.clone() },
            })
        }
        (None, Phase::Ae) => None,
        _ => return Err(malformed("phase field disagrees with the stored networks".into())),
    };
    Ok(Checkpoint {
        config: m.config,
        icae,
        ae_trace: m.ae_trace,
        hash,
    })
}

/// Loads a checkpoint and insists on its phase.
pub fn load_checkpoint_phase(dir: impl AsRef<Path>, expected: Phase) -> Result<Checkpoint> {
    let ck = load_checkpoint(dir)?;
    if ck.phase() != expected {
        return Err(Error::PhaseMismatch {
            expected: expected.name(),
            found: ck.phase().name().into(),
        });
    }
    Ok(ck)
}

/// Codes of one modality for a list of dataset rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSet {
    pub modality: Modality,
    pub split: String,
    pub variant: Variant,
    pub indices: Vec<usize>,
    pub codes: HashCodes,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CodesManifest {
    format_version: u32,
    kind: String,
    modality: Modality,
    split: String,
    variant: Variant,
    bits: usize,
    indices: Vec<usize>,
    codes: ArrayEntry,
}

/// Writes `<modality>_<split>.bin` into `dir`, listed in `<modality>_<split>.json`.
pub fn save_codes(dir: impl AsRef<Path>, set: &CodeSet) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    if set.indices.len() != set.codes.len() {
        return Err(Error::invalid("one index per code is required"));
    }
    let stem = format!("{}_{}", set.modality.name(), set.split);
    let manifest = CodesManifest {
        format_version: FORMAT_VERSION,
        kind: "codes".into(),
        modality: set.modality,
        split: set.split.clone(),
        variant: set.variant,
        bits: set.codes.bits(),
        indices: set.indices.clone(),
        codes: write_codes(dir, &format!("{stem}.bin"), &set.codes)?,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_codes(dir: impl AsRef<Path>, modality: Modality, split: &str) -> Result<CodeSet> {
    let dir = dir.as_ref();
    let path = dir.join(format!("{}_{split}.json", modality.name()));
    let value: serde_json::Value = read_json(&path)?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            path,
            expected: FORMAT_VERSION,
            found: version.min(u32::MAX as u64) as u32,
        });
    }
    let m: CodesManifest = serde_json::from_value(value).map_err(|e| Error::json(&path, e))?;
    if m.codes.cols != m.bits || m.codes.rows != m.indices.len() {
        return Err(Error::Malformed {
            path,
            reason: "code array shape disagrees with the manifest".into(),
        });
    }
    Ok(CodeSet {
        modality: m.modality,
        split: m.split,
        variant: m.variant,
        indices: m.indices,
        codes: read_codes(dir, &m.codes)?,
    })
}

/// Fixed CSV columns, one row per report. MAP and the other reals use six
/// decimals; missing values are empty.
pub const CSV_HEADER: &str = "variant,direction,map,p@10,p@100,p@500,head_map,tail_map,head_count,num_queries,excluded_queries,runtime_secs";

pub const CSV_PRECISION_KS: [usize; 3] = [10, 100, 500];

fn fmt6(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn csv_row(r: &EvalReport) -> String {
    let p = |k: usize| r.precision_at.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v);
    let [p10, p100, p500] = CSV_PRECISION_KS.map(p);
    [
        r.variant.clone(),
        r.direction.tag().to_string(),
        fmt6(Some(r.map)),
        fmt6(p10),
        fmt6(p100),
        fmt6(p500),
        fmt6(r.head_map),
        fmt6(r.tail_map),
        r.head_tail_split_index.to_string(),
        r.num_queries.to_string(),
        r.excluded_queries.to_string(),
        fmt6(Some(r.runtime_secs)),
    ]
    .join(",")
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report(reports: &[EvalReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    create_parent(path)?;
    match format {
        ReportFormat::Json => write_json(path, &reports),
        ReportFormat::Csv => fs::write(path, reports_csv(reports)).map_err(|e| Error::io(path, e)),
    }
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    read_json(path.as_ref())
}

/// Writes any serializable value as pretty JSON.
/// Writes pretty JSON, creating the parent directory when needed.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    create_parent(path.as_ref())?;
    write_json(path.as_ref(), value)
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    read_json(path.as_ref())
}
