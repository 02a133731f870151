//! JSON-Lines shards with sidecar manifests.
//!
//! One document per line; a `<shard>.manifest.json` sidecar records counts,
//! token totals, the tokenizer, and the fingerprint of the pipeline config
//! that produced the shard. Reading verifies the manifest against content.

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Content inventory of one shard file. `path` is the shard file name
/// relative to the manifest so shard directories relocate cleanly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shard_id: String,
    pub path: String,
    pub record_count: u64,
    pub token_total: u64,
    pub tokenizer_id: String,
    pub lang_histogram: BTreeMap<LanguageTag, u64>,
    pub stage_fingerprint: String,
}

impl ShardManifest {
    fn from_docs(
        shard_id: &str,
        path: &str,
        docs: &[Document],
        tokenizer_id: &str,
        stage_fingerprint: &str,
    ) -> Self {
        let mut lang_histogram = BTreeMap::new();
        let mut token_total = 0u64;
        for d in docs {
            token_total += d.token_count;
            *lang_histogram.entry(d.lang).or_insert(0) += d.token_count;
        }
        Self {
            shard_id: shard_id.to_string(),
            path: path.to_string(),
            record_count: docs.len() as u64,
            token_total,
            tokenizer_id: tokenizer_id.to_string(),
            lang_histogram,
            stage_fingerprint: stage_fingerprint.to_string(),
        }
    }
}

pub fn manifest_path(shard: &Path) -> PathBuf {
    let mut name = shard
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    shard.with_file_name(name)
}

/// Write documents as JSON-Lines plus a sidecar manifest. All documents
/// must share one tokenizer id; it is recorded in the manifest.
pub fn write_shard(
    docs: &[Document],
    path: &Path,
    tokenizer_id: &str,
    stage_fingerprint: &str,
) -> Result<ShardManifest> {
    for d in docs {
        if d.tokenizer_id != tokenizer_id {
            return Err(Error::MixedTokenizers {
                expected: tokenizer_id.to_string(),
                found: d.tokenizer_id.clone(),
            });
        }
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let shard_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = ShardManifest::from_docs(&shard_id, &file_name, docs, tokenizer_id, stage_fingerprint);
    let mf = File::create(manifest_path(path))?;
    let mut mw = BufWriter::new(mf);
    serde_json::to_writer_pretty(&mut mw, &manifest)?;
    mw.write_all(b"\n")?;
    mw.flush()?;
    Ok(manifest)
}

/// Read a shard and its manifest, verifying that a manifest recomputed from
/// the records reproduces the stored one.
pub fn read_shard(path: &Path) -> Result<(Vec<Document>, ShardManifest)> {
    let stored: ShardManifest = {
        let f = File::open(manifest_path(path))?;
        serde_json::from_reader(BufReader::new(f))?
    };

    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
                path: display.clone(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })?;
        doc.tokenizer_id = stored.tokenizer_id.clone();
        docs.push(doc);
    }

    let recomputed = ShardManifest::from_docs(
        &stored.shard_id,
        &stored.path,
        &docs,
        &stored.tokenizer_id,
        &stored.stage_fingerprint,
    );
    if recomputed != stored {
        return Err(Error::ManifestMismatch {
            path: display,
            detail: format!(
                "stored {{records: {}, tokens: {}}} vs recomputed {{records: {}, tokens: {}}}",
                stored.record_count, stored.token_total, recomputed.record_count, recomputed.token_total
            ),
        });
    }
    Ok((docs, stored))
}
