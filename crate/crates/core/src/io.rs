//! On-disk formats.
//!
//! Datasets and models are a TOML sidecar (`<stem>.toml`) next to a raw
//! payload (`<stem>.bin`) of little-endian `f64`. Dataset payloads are
//! sample-major: input field then output field, each row-major. Tabular
//! outputs are comma-separated with one header row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::{FieldKind, GridField, GridSpec};
use crate::simulator::{DatasetMeta, LabeledDataset};
use crate::tensor_net::{LayerSpec, Network, TrainConfig};
use crate::uq::{DensityCurve, MomentArrays, RankMethod, RankTestResult};
use crate::{Error, Result};

/// `stem` plus `.toml`; dots already in the stem are kept.
pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".toml")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".bin")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.to_string() }
}

fn encode_f64(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn decode_f64(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(format_err(path, "payload length is not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.display().to_string(), source }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    fs::write(path, text).map_err(file_err(path))?;
    Ok(())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    toml::from_str(&text).map_err(|e| format_err(path, e))
}

/// SHA-256 of a file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).map_err(file_err(path))?)))
}

pub fn save_dataset(stem: &Path, data: &LabeledDataset) -> Result<()> {
    let mut meta = data.meta.clone();
    meta.count = data.len();
    meta.byte_order = "little".into();
    let payload = encode_f64(
        data.inputs
            .iter()
            .zip(&data.outputs)
            .flat_map(|(x, y)| x.values().iter().chain(y.values()).copied()),
    );
    let bin = payload_path(stem);
    fs::write(&bin, payload).map_err(file_err(&bin))?;
    write_toml(&sidecar_path(stem), &meta)
}

pub fn load_dataset(stem: &Path) -> Result<LabeledDataset> {
    let meta_path = sidecar_path(stem);
    let meta: DatasetMeta = read_toml(&meta_path)?;
    if meta.byte_order != "little" {
        return Err(format_err(&meta_path, format!("unsupported byte order {:?}", meta.byte_order)));
    }
    let grid = GridSpec::new(meta.nx)?;
    let bin = payload_path(stem);
    let values = decode_f64(&bin, &fs::read(&bin).map_err(file_err(&bin))?)?;
    let per = grid.len();
    if values.len() != meta.count * 2 * per {
        return Err(format_err(&bin, format!("expected {} values, found {}", meta.count * 2 * per, values.len())));
    }
    let mut inputs = Vec::with_capacity(meta.count);
    let mut outputs = Vec::with_capacity(meta.count);
    for chunk in values.chunks_exact(2 * per) {
        inputs.push(GridField::new(grid, chunk[..per].to_vec(), FieldKind::LogModulus)?);
        outputs.push(GridField::new(grid, chunk[per..].to_vec(), FieldKind::Solution)?);
    }
    LabeledDataset::new(inputs, outputs, meta)
}

/// Structured header of a persisted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub output_scale: f64,
    pub param_count: usize,
    pub byte_order: String,
    pub fingerprint: String,
    pub provenance: ModelProvenance,
    pub layers: Vec<LayerSpec>,
}

/// How a persisted model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub init_seed: u64,
    /// Fingerprint of the training dataset payload.
    pub train_data: String,
    /// Fingerprint of the experiment configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub train: TrainConfig,
}

pub fn save_model(stem: &Path, net: &Network, provenance: &ModelProvenance) -> Result<ModelHeader> {
    let header = ModelHeader {
        input_shape: net.input_shape().to_vec(),
        output_shape: net.output_shape().to_vec(),
        output_scale: net.output_scale(),
        param_count: net.params().len(),
        byte_order: "little".into(),
        fingerprint: net.fingerprint(),
        provenance: provenance.clone(),
        layers: net.layers().to_vec(),
    };
    let bin = payload_path(stem);
    fs::write(&bin, encode_f64(net.params().iter().copied())).map_err(file_err(&bin))?;
    write_toml(&sidecar_path(stem), &header)?;
    Ok(header)
}

pub fn load_model(stem: &Path) -> Result<(Network, ModelHeader)> {
    let head_path = sidecar_path(stem);
    let header: ModelHeader = read_toml(&head_path)?;
    if header.byte_order != "little" {
        return Err(format_err(&head_path, format!("unsupported byte order {:?}", header.byte_order)));
    }
    let bin = payload_path(stem);
    let params = decode_f64(&bin, &fs::read(&bin).map_err(file_err(&bin))?)?;
    if params.len() != header.param_count {
        return Err(format_err(&bin, format!("expected {} parameters, found {}", header.param_count, params.len())));
    }
    let net = Network::from_parts(header.input_shape.clone(), header.layers.clone(), Some(params), header.output_scale)?;
    if net.fingerprint() != header.fingerprint {
        return Err(format_err(&bin, "parameter fingerprint does not match header"));
    }
    if net.output_shape() != header.output_shape.as_slice() {
        return Err(format_err(&head_path, "output shape does not match layers"));
    }
    Ok((net, header))
}

/// Comma-separated table builder with one header row.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<S: ToString>(&mut self, row: &[S]) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row.iter().map(|s| s.to_string()).collect());
    }

    pub fn push_numeric(&mut self, row: &[f64]) {
        let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
        self.push(&cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(file_err(path))?;
        Ok(())
    }
}

/// Shortest round-trip representation.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Curves evaluated on the same grid, one density column per curve.
pub fn density_table(names: &[&str], curves: &[&DensityCurve]) -> Result<Table> {
    let grid = &curves.first().ok_or(Error::EmptyInput)?.grid;
    if curves.iter().any(|c| &c.grid != grid) {
        return Err(Error::InvalidParameter("density curves must share a grid".into()));
    }
    let mut header = vec!["x".to_string()];
    header.extend(names.iter().map(|n| format!("density_{n}")));
    let mut t = Table::new(&header);
    for i in 0..grid.len() {
        let mut row = vec![grid[i]];
        row.extend(curves.iter().map(|c| c.density[i]));
        t.push_numeric(&row);
    }
    Ok(t)
}

pub fn moments_table(m: &MomentArrays) -> Table {
    let mut t = Table::new(&["index", "m1", "m2"]);
    for (i, (a, b)) in m.m1.iter().zip(&m.m2).enumerate() {
        t.push_numeric(&[i as f64, *a, *b]);
    }
    t
}

pub fn rank_test_table(rows: &[(f64, &RankTestResult)]) -> Table {
    let mut t = Table::new(&["eps", "u_statistic", "p_value", "n1", "n2", "exact"]);
    for (eps, r) in rows {
        let exact = if r.method == RankMethod::Exact { 1.0 } else { 0.0 };
        t.push_numeric(&[*eps, r.u_statistic, r.p_value, r.n1 as f64, r.n2 as f64, exact]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::KernelParams;
    use crate::simulator::{generate_dataset, SolverConfig};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("train");
        let data = generate_dataset(3, GridSpec::new(5).unwrap(), &KernelParams::default(), &SolverConfig::default(), 4).unwrap();
        save_dataset(&stem, &data).unwrap();
        let back = load_dataset(&stem).unwrap();
        assert_eq!(back, data);
        assert_eq!(fs::metadata(payload_path(&stem)).unwrap().len(), 3 * 2 * 25 * 8);
    }

    #[test]
    fn dotted_stems_keep_their_suffix() {
        let stem = Path::new("out/attack_fgnm_ori_eps0.1");
        assert_eq!(payload_path(stem), Path::new("out/attack_fgnm_ori_eps0.1.bin"));
        assert_eq!(sidecar_path(stem), Path::new("out/attack_fgnm_ori_eps0.1.toml"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("d");
        let data = generate_dataset(2, GridSpec::new(4).unwrap(), &KernelParams::default(), &SolverConfig::default(), 4).unwrap();
        save_dataset(&stem, &data).unwrap();
        let bytes = fs::read(payload_path(&stem)).unwrap();
        fs::write(payload_path(&stem), &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_dataset(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let mut net = Network::surrogate(4, 2, &[6], 8).unwrap();
        net.set_output_scale(0.25).unwrap();
        let prov = ModelProvenance { init_seed: 8, train_data: "abc".into(), config: None, train: TrainConfig::default() };
        save_model(&stem, &net, &prov).unwrap();
        let (back, header) = load_model(&stem).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.fingerprint, net.fingerprint());
        assert_eq!(header.provenance, prov);
    }

    #[test]
    fn table_rendering() {
        let mut t = Table::new(&["a", "b"]);
        t.push_numeric(&[1.0, 0.1]);
        assert_eq!(t.render(), "a,b\n1.0,0.1\n");
    }
}
