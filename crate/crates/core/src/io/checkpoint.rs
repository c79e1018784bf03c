//! Checkpoint directories: a text manifest plus one little-endian f32 blob.
//!
//! ```text
//! viptr-checkpoint 1
//! config {"channels":[...],...}
//! alphabet ["0","1",...]
//! blob weights.bin <bytes> sha256 <hex>
//! param <name> <weight|buffer> f32 <d0>x<d1>... <offset> <bytes>
//! ```
//!
//! Parameters are listed in lexicographic name order and stored
//! contiguously in that order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::backbone::{Model, VariantConfig};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "weights.bin";
const MAGIC: &str = "viptr-checkpoint 1";

/// A loaded model with the alphabet it was trained for.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub alphabet: Alphabet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes `store` (values and running statistics) and the model config to
/// the directory `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, model: &Model, store: &ParamStore<f32>, alphabet: &Alphabet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = String::new();
    for id in store.sorted_ids() {
        let p = store.get(id);
        let offset = blob.len();
        for v in p.value().data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let shape: Vec<String> = p.value().shape().iter().map(usize::to_string).collect();
        let kind = match p.kind {
            ParamKind::Weight => "weight",
            ParamKind::Buffer => "buffer",
        };
        writeln!(
            entries,
            "param {} {kind} f32 {} {offset} {}",
            p.name,
            shape.join("x"),
            blob.len() - offset
        )
        .expect("string write");
    }
    let mut manifest = String::new();
    writeln!(manifest, "{MAGIC}").expect("string write");
    writeln!(manifest, "config {}", serde_json::to_string(&model.cfg)?).expect("string write");
    writeln!(manifest, "alphabet {}", serde_json::to_string(alphabet.symbols())?).expect("string write");
    writeln!(manifest, "blob {BLOB} {} sha256 {}", blob.len(), hex(&Sha256::digest(&blob))).expect("string write");
    manifest.push_str(&entries);
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

struct Manifest {
    cfg: VariantConfig,
    alphabet: Alphabet,
    blob_len: usize,
    sha256: String,
    entries: Vec<ManifestEntry>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing manifest header"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| corrupt(format!("manifest ends before '{key}'")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| corrupt(format!("expected '{key}' line, got '{line}'")))
    };
    let cfg: VariantConfig = serde_json::from_str(&field("config")?)
        .map_err(|e| corrupt(format!("embedded config: {e}")))?;
    let symbols: Vec<String> = serde_json::from_str(&field("alphabet")?)
        .map_err(|e| corrupt(format!("embedded alphabet: {e}")))?;
    let alphabet = Alphabet::new(symbols)?;
    let blob = field("blob")?;
    let parts: Vec<&str> = blob.split(' ').collect();
    let (blob_len, sha256) = match parts[..] {
        [BLOB, len, "sha256", sum] => (
            len.parse().map_err(|_| corrupt(format!("bad blob length '{len}'")))?,
            sum.to_string(),
        ),
        _ => return Err(corrupt(format!("bad blob line '{blob}'"))),
    };
    let mut entries = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let bad = || corrupt(format!("bad parameter line '{line}'"));
        let parts: Vec<&str> = line.split(' ').collect();
        let ["param", name, kind, "f32", shape, offset, len] = parts[..] else {
            return Err(bad());
        };
        let kind = match kind {
            "weight" => ParamKind::Weight,
            "buffer" => ParamKind::Buffer,
            _ => return Err(bad()),
        };
        let shape = shape
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        entries.push(ManifestEntry {
            name: name.to_string(),
            kind,
            shape,
            offset: offset.parse().map_err(|_| bad())?,
            len: len.parse().map_err(|_| bad())?,
        });
    }
    Ok(Manifest { cfg, alphabet, blob_len, sha256, entries })
}

/// Reads the manifest entries of a checkpoint without loading weights.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(parse_manifest(&text)?.entries)
}

/// Loads a checkpoint, rebuilding the model from its embedded config and
/// validating every parameter's name, shape and byte range.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = parse_manifest(&text)?;
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut store = ParamStore::<f32>::new();
    let model = Model::build(&m.cfg, &mut store, 0)?;
    if m.entries.len() != store.len() {
        return Err(corrupt(format!(
            "manifest lists {} parameters, config defines {}",
            m.entries.len(),
            store.len()
        )));
    }
    let mut expected_offset = 0;
    for e in &m.entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| corrupt(format!("unknown parameter {}", e.name)))?;
        let p = store.get(id);
        if p.value().shape() != &e.shape[..] || p.kind != e.kind {
            return Err(corrupt(format!(
                "parameter {}: manifest shape {:?}, config expects {:?}",
                e.name,
                e.shape,
                p.value().shape()
            )));
        }
        if e.offset != expected_offset || e.len != 4 * p.numel() {
            return Err(corrupt(format!("parameter {}: byte range does not follow its predecessor", e.name)));
        }
        if e.offset + e.len > blob.len() {
            return Err(corrupt(format!(
                "parameter {}: blob has {} bytes, needs {}",
                e.name,
                blob.len(),
                e.offset + e.len
            )));
        }
        expected_offset += e.len;
    }
    if blob.len() != m.blob_len || expected_offset != blob.len() {
        return Err(corrupt(format!("blob has {} bytes, manifest says {}", blob.len(), m.blob_len)));
    }
    if hex(&Sha256::digest(&blob)) != m.sha256 {
        return Err(corrupt("weights checksum mismatch"));
    }
    for e in &m.entries {
        let values = blob[e.offset..e.offset + e.len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let id = store.id(&e.name).expect("validated above");
        store.set_value(id, Tensor::new(&e.shape, values)?)?;
    }
    Ok(Checkpoint { model, store, alphabet: m.alphabet })
}
