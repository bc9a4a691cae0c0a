//! Checkpoint directories: `manifest.txt` plus one little-endian `f32`
//! row-major file per parameter array.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::training::model::Model;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "socdiff-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    /// Metric snapshot, e.g. `val_recall@10`.
    pub metrics: BTreeMap<String, f64>,
    pub model: Model,
}

fn manifest(ck: &Checkpoint) -> String {
    let mut s = format!(
        "format = {FORMAT}\nversion = {CHECKPOINT_VERSION}\nepoch = {}\n",
        ck.epoch
    );
    let _ = writeln!(
        s,
        "n_users = {}\nm_items = {}",
        ck.model.n_users(),
        ck.model.m_items()
    );
    for (k, v) in &ck.metrics {
        let _ = writeln!(s, "metric.{k} = {v}");
    }
    for (k, v) in ck.config.entries() {
        let _ = writeln!(s, "config.{k} = {v}");
    }
    for (name, p) in ck.model.named_params() {
        let _ = writeln!(s, "param.{name} = {}x{}", p.rows(), p.cols());
    }
    s
}

pub fn save_checkpoint(ck: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, p) in ck.model.named_params() {
        let bytes: Vec<u8> = p.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        let path = dir.join(format!("{name}.f32"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    // manifest last: a directory without one is not a checkpoint
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest(ck)).map_err(|e| Error::io(&path, e))
}

fn corrupt(m: String) -> Error {
    Error::CorruptCheckpoint(m)
}

fn parse_shape(s: &str) -> Option<(usize, usize)> {
    let (r, c) = s.split_once('x')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

/// Loads a checkpoint. Any inconsistency fails the whole load.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut head = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    let mut config_text = String::new();
    let mut shapes = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(" = ")
            .or_else(|| line.split_once('=').map(|(k, v)| (k.trim(), v.trim())))
            .ok_or_else(|| corrupt(format!("manifest line `{line}`")))?;
        if let Some(key) = k.strip_prefix("config.") {
            let _ = writeln!(config_text, "{key} = {v}");
        } else if let Some(key) = k.strip_prefix("metric.") {
            let x = v.parse().map_err(|_| corrupt(format!("metric `{line}`")))?;
            metrics.insert(key.to_owned(), x);
        } else if let Some(name) = k.strip_prefix("param.") {
            let shape = parse_shape(v).ok_or_else(|| corrupt(format!("shape `{line}`")))?;
            shapes.push((name.to_owned(), shape));
        } else {
            head.insert(k.to_owned(), v.to_owned());
        }
    }
    if head.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(corrupt(format!(
            "{} is not a checkpoint manifest",
            mpath.display()
        )));
    }
    let version: u32 = head
        .get("version")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let field = |k: &str| -> Result<usize> {
        head.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(format!("missing or bad `{k}`")))
    };
    let (epoch, n_users, m_items) = (field("epoch")?, field("n_users")?, field("m_items")?);
    let config = RunConfig::parse(&config_text)?;

    let mut model = Model::init(&config.train, n_users, m_items);
    let names = model.param_names();
    let expected: Vec<(String, (usize, usize))> = names
        .iter()
        .cloned()
        .zip(model.params().iter().map(|p| p.shape()))
        .collect();
    if expected != shapes {
        return Err(Error::Incompatible(format!(
            "manifest lists parameters {:?}, configuration implies {:?}",
            shapes, expected
        )));
    }
    let mut values = Vec::with_capacity(shapes.len());
    for (name, (r, c)) in &shapes {
        let path = dir.join(format!("{name}.f32"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != r * c * 4 {
            return Err(corrupt(format!(
                "{}: {} bytes, expected {} for {r}x{c}",
                path.display(),
                bytes.len(),
                r * c * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        values.push(Matrix::from_vec(*r, *c, data)?);
    }
    model.set_params(values)?;
    Ok(Checkpoint {
        config,
        epoch,
        metrics,
        model,
    })
}
