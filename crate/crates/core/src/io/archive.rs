//! Model archive: `<name>.json` metadata plus `<name>.bin`, a flat blob of
//! little-endian `f64` holding every basis matrix column-major.
//!
//! `subspaces` lists `[rows, cols, byte_offset]` per subspace in
//! class-major order (class 0 patches 0..K, then class 1, ...).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::subspace::{ClassSubspaces, RankRule, SubjectPatchSubspace, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    feature_config: FeatureConfig,
    rank_rule: RankRule,
    classes: Vec<String>,
    patches: usize,
    blob_bytes: u64,
    subspaces: Vec<[u64; 3]>,
}

/// `(json, bin)` paths for an archive name. A trailing `.json` or `.bin`
/// on `path` is ignored.
pub fn archive_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, bin_path) = archive_paths(path);
    let mut subspaces = Vec::with_capacity(model.num_classes() * model.num_patches());
    let mut offset = 0u64;
    for class in model.classes() {
        for s in &class.subspaces {
            subspaces.push([s.dim() as u64, s.rank() as u64, offset]);
            offset += (s.basis().len() * 8) as u64;
        }
    }
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        feature_config: model.config().clone(),
        rank_rule: model.rank_rule(),
        classes: model.labels().into_iter().map(String::from).collect(),
        patches: model.num_patches(),
        blob_bytes: offset,
        subspaces,
    };

    let file = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for class in model.classes() {
        for s in &class.subspaces {
            for v in s.basis() {
                w.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&bin_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))?;

    let json = serde_json::to_vec(&meta).map_err(|e| Error::CorruptModel(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let (json_path, bin_path) = archive_paths(path);
    let text = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;

    // Version first, so a newer schema reports a version error rather than a
    // decode error.
    let raw: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| Error::CorruptModel(format!("metadata: {e}")))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptModel("missing format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    let meta: Metadata =
        serde_json::from_value(raw).map_err(|e| Error::CorruptModel(format!("metadata: {e}")))?;

    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if blob.len() as u64 != meta.blob_bytes {
        return Err(Error::CorruptModel(format!(
            "blob is {} bytes, metadata says {}",
            blob.len(),
            meta.blob_bytes
        )));
    }
    let k = meta.patches;
    if meta.subspaces.len() != meta.classes.len() * k {
        return Err(Error::CorruptModel(format!(
            "{} subspace entries for {} classes x {k} patches",
            meta.subspaces.len(),
            meta.classes.len()
        )));
    }

    let mut spans: Vec<(u64, u64)> = Vec::with_capacity(meta.subspaces.len());
    let mut subspaces = Vec::with_capacity(meta.subspaces.len());
    for (i, &[rows, cols, offset]) in meta.subspaces.iter().enumerate() {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::CorruptModel(format!("subspace {i}: shape overflows")))?;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= meta.blob_bytes && offset % 8 == 0)
            .ok_or_else(|| {
                Error::CorruptModel(format!(
                    "subspace {i}: bytes {offset}+{len} outside blob of {}",
                    meta.blob_bytes
                ))
            })?;
        spans.push((offset, end));
        let basis = blob[offset as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        subspaces.push(SubjectPatchSubspace::from_basis(
            rows as usize,
            cols as usize,
            basis,
        )?);
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::CorruptModel("overlapping subspace offsets".into()));
    }

    let mut it = subspaces.into_iter();
    let classes = meta
        .classes
        .into_iter()
        .map(|label| ClassSubspaces {
            label,
            subspaces: it.by_ref().take(k).collect(),
        })
        .collect();
    TrainedModel::from_parts(meta.feature_config, meta.rank_rule, classes)
        .map_err(|e| Error::CorruptModel(e.to_string()))
}
