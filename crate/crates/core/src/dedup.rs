//! Near-duplicate removal: MinHash signatures with LSH banding for
//! document-level dedup, exact-match dedup of sub-document units, and
//! SimHash fingerprints for the SFT chain.
//!
//! Signature computation is parallel; candidate resolution and survivor
//! selection are a deterministic sequential pass over stable keys, so the
//! survivor set does not depend on processing order.

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::tokenize::TokenizerRegistry;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_64_with_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashParams {
    /// Signature length.
    pub perms: u32,
    /// Word-shingle width.
    pub shingle_size: u32,
    pub seed: u64,
}

impl Default for MinHashParams {
    fn default() -> Self {
        Self {
            perms: 128,
            shingle_size: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub perms: u32,
    pub shingle_size: u32,
    pub seed: u64,
    pub values: Vec<u64>,
}

/// Lowercased word shingles hashed to u64. Texts shorter than the shingle
/// width contribute the whole text as a single shingle.
pub fn shingle_set(text: &str, shingle_size: u32, seed: u64) -> HashSet<u64> {
    let lower = text.to_lowercase();
    let toks: Vec<&str> = lower.split_whitespace().collect();
    let width = shingle_size as usize;
    let mut set = HashSet::new();
    if toks.len() < width.max(1) {
        set.insert(xxh3_64_with_seed(lower.trim().as_bytes(), seed));
        return set;
    }
    for window in toks.windows(width) {
        let joined = window.join(" ");
        set.insert(xxh3_64_with_seed(joined.as_bytes(), seed));
    }
    set
}

/// MinHash signature: per permutation, the minimum of a seeded 64-bit hash
/// over the shingle set.
pub fn minhash(text: &str, params: &MinHashParams) -> Result<MinHashSignature> {
    if params.perms == 0 {
        return Err(Error::InvalidParams("perms must be > 0".into()));
    }
    let shingles = shingle_set(text, params.shingle_size, params.seed);
    let values = (0..params.perms as u64)
        .map(|perm| {
            shingles
                .iter()
                .map(|&s| xxh3_64_with_seed(&s.to_le_bytes(), params.seed ^ perm))
                .min()
                .unwrap_or(u64::MAX)
        })
        .collect();
    Ok(MinHashSignature {
        perms: params.perms,
        shingle_size: params.shingle_size,
        seed: params.seed,
        values,
    })
}

/// Fraction of agreeing positions: an unbiased estimator of the Jaccard
/// similarity of the underlying shingle sets.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.perms != b.perms || a.seed != b.seed || a.shingle_size != b.shingle_size {
        return Err(Error::IncompatibleSignatures(format!(
            "perms {}/{}, seed {}/{}, shingle {}/{}",
            a.perms, b.perms, a.seed, b.seed, a.shingle_size, b.shingle_size
        )));
    }
    let agree = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(agree as f64 / a.perms as f64)
}

/// Stable identity of a record: shard path, then line number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocKey {
    pub shard: String,
    pub line: u64,
}

#[derive(Debug, Clone)]
pub struct DedupEntry {
    pub key: DocKey,
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy)]
pub struct DedupConfig {
    pub threshold: f64,
    pub bands: u32,
    pub rows: u32,
    pub minhash: MinHashParams,
}

impl Default for DedupConfig {
    fn default() -> Self {
        // 16 bands x 8 rows puts the LSH s-curve midpoint near 0.71.
        Self {
            threshold: 0.8,
            bands: 16,
            rows: 8,
            minhash: MinHashParams::default(),
        }
    }
}

impl DedupConfig {
    fn validate(&self) -> Result<()> {
        if self.bands * self.rows != self.minhash.perms {
            return Err(Error::InvalidParams(format!(
                "bands ({}) x rows ({}) must equal perms ({})",
                self.bands, self.rows, self.minhash.perms
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// One resolved duplicate family, reported as JSON-Lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub survivor_id: String,
    pub removed_ids: Vec<String>,
    /// Minimum estimated Jaccard among the pair merges that formed the cluster.
    pub est_jaccard: f64,
}

#[derive(Debug)]
pub struct DedupOutcome {
    /// Indices into the input slice, in stable-key order.
    pub survivors: Vec<usize>,
    pub clusters: Vec<DuplicateCluster>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index wins so the earliest key stays the root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// MinHash/LSH near-duplicate removal. Within each LSH candidate cluster,
/// pairs at or above the estimated-Jaccard threshold merge; the earliest
/// document by stable key survives. Idempotent, independent of input order.
pub fn dedup_corpus(entries: &[DedupEntry], config: &DedupConfig) -> Result<DedupOutcome> {
    config.validate()?;

    // Stable processing order regardless of how shards were fed in.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].key.cmp(&entries[b].key));

    let signatures: Vec<MinHashSignature> = order
        .par_iter()
        .map(|&i| minhash(&entries[i].text, &config.minhash))
        .collect::<Result<_>>()?;

    // LSH banding: band hash -> positions (in stable order) sharing it.
    let rows = config.rows as usize;
    let mut buckets: HashMap<(u32, u64), Vec<usize>> = HashMap::new();
    for (pos, sig) in signatures.iter().enumerate() {
        for band in 0..config.bands {
            let start = band as usize * rows;
            let slice = &sig.values[start..start + rows];
            let mut bytes = Vec::with_capacity(rows * 8);
            for v in slice {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let h = xxh3_64_with_seed(&bytes, u64::from(band));
            buckets.entry((band, h)).or_default().push(pos);
        }
    }

    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for positions in buckets.values() {
        if positions.len() < 2 {
            continue;
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let (a, b) = (positions[i].min(positions[j]), positions[i].max(positions[j]));
                candidates.insert((a, b));
            }
        }
    }

    let mut uf = UnionFind::new(entries.len());
    let mut edge_est: HashMap<usize, f64> = HashMap::new();
    for (a, b) in candidates {
        let est = estimate_jaccard(&signatures[a], &signatures[b])?;
        if est >= config.threshold {
            uf.union(a, b);
            let root = uf.find(a);
            let slot = edge_est.entry(root).or_insert(est);
            if est < *slot {
                *slot = est;
            }
        }
    }

    // Roots may have shifted as clusters merged; fold the recorded minima.
    let mut cluster_min: BTreeMap<usize, f64> = BTreeMap::new();
    for (pos, est) in edge_est {
        let root = uf.find(pos);
        let slot = cluster_min.entry(root).or_insert(est);
        if est < *slot {
            *slot = est;
        }
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for pos in 0..entries.len() {
        members.entry(uf.find(pos)).or_default().push(pos);
    }

    let mut survivors = Vec::new();
    let mut clusters = Vec::new();
    for (root, positions) in members {
        survivors.push(order[positions[0]]);
        if positions.len() > 1 {
            clusters.push(DuplicateCluster {
                survivor_id: entries[order[positions[0]]].id.clone(),
                removed_ids: positions[1..]
                    .iter()
                    .map(|&p| entries[order[p]].id.clone())
                    .collect(),
                est_jaccard: cluster_min.get(&root).copied().unwrap_or(1.0),
            });
        }
    }
    Ok(DedupOutcome {
        survivors,
        clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubdocUnit {
    Paragraph,
    Line,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct SubdocStats {
    pub removed_units: u64,
    pub dropped_docs: u64,
}

fn normalize_unit(unit: &str) -> String {
    let nfc: String = unit.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn split_units(text: &str, unit: SubdocUnit) -> Vec<String> {
    match unit {
        SubdocUnit::Line => text.lines().map(str::to_string).collect(),
        SubdocUnit::Paragraph => {
            let mut paras = Vec::new();
            let mut cur = String::new();
            for line in text.lines() {
                if line.trim().is_empty() {
                    if !cur.is_empty() {
                        paras.push(std::mem::take(&mut cur));
                    }
                } else {
                    if !cur.is_empty() {
                        cur.push('\n');
                    }
                    cur.push_str(line);
                }
            }
            if !cur.is_empty() {
                paras.push(cur);
            }
            paras
        }
    }
}

/// Exact-match dedup of normalized sub-document units across the whole
/// corpus: a unit seen earlier (in stable order) is removed from later
/// documents. Documents emptied by removal are dropped; untouched documents
/// pass through byte-identical.
pub fn subdoc_exact_dedup(
    docs: Vec<Document>,
    unit: SubdocUnit,
    registry: &TokenizerRegistry,
) -> Result<(Vec<Document>, SubdocStats)> {
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stats = SubdocStats::default();
    let mut out = Vec::with_capacity(docs.len());
    for mut doc in docs {
        let units = split_units(&doc.text, unit);
        let mut kept: Vec<&String> = Vec::with_capacity(units.len());
        let mut removed_here = 0u64;
        for u in &units {
            let norm = normalize_unit(u);
            if norm.is_empty() {
                // Structural blanks (empty lines) are kept, never deduped.
                kept.push(u);
                continue;
            }
            let h = xxh3_64_with_seed(norm.as_bytes(), 0x5EED);
            if seen.insert(h) {
                kept.push(u);
            } else {
                removed_here += 1;
            }
        }
        stats.removed_units += removed_here;
        if removed_here == 0 {
            out.push(doc);
            continue;
        }
        if kept.iter().all(|u| normalize_unit(u).is_empty()) {
            stats.dropped_docs += 1;
            continue;
        }
        let sep = match unit {
            SubdocUnit::Paragraph => "\n\n",
            SubdocUnit::Line => "\n",
        };
        let rebuilt = kept
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(sep);
        doc.set_text(rebuilt, registry)?;
        doc.record_stage("subdoc_dedup");
        out.push(doc);
    }
    Ok((out, stats))
}

pub const SIMHASH_FEATURE_SCHEME: &str = "word-unigram-xxh3";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimHashFingerprint {
    pub bits: u64,
    pub feature_scheme: String,
}

/// 64-bit SimHash over frequency-weighted word features; Hamming distance
/// tracks dissimilarity.
pub fn simhash(text: &str) -> Result<SimHashFingerprint> {
    let lower = text.to_lowercase();
    let toks: Vec<&str> = lower.split_whitespace().collect();
    if toks.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut weights: HashMap<&str, i64> = HashMap::new();
    for t in &toks {
        *weights.entry(t).or_insert(0) += 1;
    }
    let mut acc = [0i64; 64];
    for (tok, w) in weights {
        let h = xxh3_64_with_seed(tok.as_bytes(), 0x51A5);
        for (bit, slot) in acc.iter_mut().enumerate() {
            if h >> bit & 1 == 1 {
                *slot += w;
            } else {
                *slot -= w;
            }
        }
    }
    let mut bits = 0u64;
    for (bit, &v) in acc.iter().enumerate() {
        if v >= 0 {
            bits |= 1 << bit;
        }
    }
    Ok(SimHashFingerprint {
        bits,
        feature_scheme: SIMHASH_FEATURE_SCHEME.to_string(),
    })
}

pub fn hamming(a: &SimHashFingerprint, b: &SimHashFingerprint) -> u32 {
    (a.bits ^ b.bits).count_ones()
}
