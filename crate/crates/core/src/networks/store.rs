//! On-disk model layout: `model.json` (graph and parameter manifest), one
//! PTNS file per parameter and per running-statistics pair, and a
//! `checksums.sha256` listing every payload file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{io, Element, Parameter, ParameterStore, RunningStats, Tensor};

pub const SPEC_FILE: &str = "model.json";
pub const CHECKSUM_FILE: &str = "checksums.sha256";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    file: String,
    populated: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    spec: ModelSpec,
    params: Vec<ParamEntry>,
    stats: Vec<StatsEntry>,
}

fn file_name(prefix: &str, index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{prefix}/{index:04}_{clean}.ptns")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn save_model<T: Element>(model: &Model<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["params", "stats"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
    }
    let mut sums = Vec::new();
    let mut emit = |rel: &str, bytes: &[u8]| -> Result<()> {
        write_file(&dir.join(rel), bytes)?;
        sums.push(format!("{}  {rel}", sha256_hex(bytes)));
        Ok(())
    };

    let store = model.params();
    let mut params = Vec::with_capacity(store.len());
    for (i, p) in store.params().iter().enumerate() {
        let file = file_name("params", i, &p.name);
        emit(&file, &io::encode(&p.value))?;
        params.push(ParamEntry {
            name: p.name.clone(),
            file,
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
        });
    }
    let mut stats = Vec::new();
    for (i, (name, s)) in store.all_stats().iter().enumerate() {
        let file = file_name("stats", i, name);
        let c = s.channels();
        let data = s.mean.iter().chain(&s.var).copied().collect();
        emit(&file, &io::encode(&Tensor::<f64>::new(vec![2, c], data)?))?;
        stats.push(StatsEntry {
            name: name.clone(),
            file,
            populated: s.populated,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        dtype: format!("{:?}", T::DTYPE).to_lowercase(),
        spec: model.spec().clone(),
        params,
        stats,
    };
    emit(SPEC_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    sums.push(String::new());
    write_file(&dir.join(CHECKSUM_FILE), sums.join("\n").as_bytes())
}

fn verified(dir: &Path, sums: &[(String, String)], rel: &str) -> Result<Vec<u8>> {
    let path = dir.join(rel);
    let bytes = read_file(&path)?;
    let expected = sums
        .iter()
        .find(|(_, f)| f == rel)
        .map(|(h, _)| h.clone())
        .ok_or_else(|| Error::Format(format!("{rel} is not listed in {CHECKSUM_FILE}")))?;
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(Error::Checksum { path, expected, found });
    }
    Ok(bytes)
}

/// Loads a saved model, converting stored values to `T` if needed.
pub fn load_model<T: Element>(dir: impl AsRef<Path>) -> Result<Model<T>> {
    let dir = dir.as_ref();
    let listing = String::from_utf8(read_file(&dir.join(CHECKSUM_FILE))?)
        .map_err(|_| Error::Format(format!("{CHECKSUM_FILE} is not UTF-8")))?;
    let sums: Vec<(String, String)> = listing
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once("  ")
                .map(|(h, f)| (h.to_string(), f.to_string()))
                .ok_or_else(|| Error::Format(format!("malformed checksum line {l:?}")))
        })
        .collect::<Result<_>>()?;

    let manifest: Manifest = serde_json::from_slice(&verified(dir, &sums, SPEC_FILE)?)?;
    if !matches!(manifest.dtype.as_str(), "f32" | "f64") {
        return Err(Error::Format(format!("unknown dtype {:?}", manifest.dtype)));
    }

    let mut store = ParameterStore::<T>::new();
    for entry in &manifest.params {
        let value: Tensor<T> = io::decode(&verified(dir, &sums, &entry.file)?)?.into_tensor();
        if value.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?}, manifest says {:?}",
                entry.name,
                value.shape(),
                entry.shape
            )));
        }
        store.add(Parameter::new(entry.name.clone(), value, entry.trainable));
    }
    for entry in &manifest.stats {
        let t: Tensor<f64> = io::decode(&verified(dir, &sums, &entry.file)?)?.into_tensor();
        if t.rank() != 2 || t.shape()[0] != 2 {
            return Err(Error::Format(format!("running stats {} must be 2 x C", entry.name)));
        }
        let c = t.shape()[1];
        let (mean, var) = t.data().split_at(c);
        store.add_stats(
            entry.name.clone(),
            RunningStats {
                mean: mean.to_vec(),
                var: var.to_vec(),
                populated: entry.populated,
            },
        );
    }
    Model::new(manifest.spec, store)
}
