//! Dataset persistence: a JSON manifest listing pair records plus a binary
//! array file (`arrays.bin`, little-endian f64) holding winner, loser and
//! mask data per pair. Offsets are in f64 units. Writing is deterministic:
//! identical (corpus, config, seed) produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{Condition, Sample, Shape};
use crate::error::{Error, Result};

use super::pipeline::CurationConfig;
use super::{PreferencePair, Provenance};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARRAYS_FILE: &str = "arrays.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairRecord {
    pub source_id: String,
    pub gap: f64,
    pub provenance: Provenance,
    pub condition: Condition,
    pub shape: Shape,
    pub winner_offset: u64,
    pub loser_offset: u64,
    pub mask_offset: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub initial: usize,
    pub after_colorfulness: usize,
    pub constructed: usize,
    pub after_gap: usize,
    pub selected: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationManifest {
    pub version: u32,
    pub config: CurationConfig,
    pub scorer_name: String,
    /// Resolved gap threshold actually applied.
    pub tau_used: f64,
    pub stage_counts: StageCounts,
    pub warnings: Vec<String>,
    pub pairs: Vec<PairRecord>,
    /// SHA-256 over the array bytes and pair records.
    pub content_hash: String,
}

fn hash_content(array_bytes: &[u8], pairs: &[PairRecord]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(array_bytes);
    hasher.update(serde_json::to_vec(pairs)?);
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_manifest(
    dir: &Path,
    config: &CurationConfig,
    scorer_name: &str,
    tau_used: f64,
    stage_counts: StageCounts,
    warnings: Vec<String>,
    pairs: &[PreferencePair],
) -> Result<CurationManifest> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(pairs.len());
    let mut values: Vec<f64> = Vec::new();
    for pair in pairs {
        let winner_offset = values.len() as u64;
        values.extend_from_slice(&pair.winner.data);
        let loser_offset = values.len() as u64;
        values.extend_from_slice(&pair.loser.data);
        let mask_offset = values.len() as u64;
        values.extend_from_slice(&pair.mask.data);
        records.push(PairRecord {
            source_id: pair.source_id.clone(),
            gap: pair.gap,
            provenance: pair.provenance,
            condition: pair.condition.clone(),
            shape: pair.winner.shape,
            winner_offset,
            loser_offset,
            mask_offset,
        });
    }
    let mut array_bytes = vec![0u8; values.len() * 8];
    LittleEndian::write_f64_into(&values, &mut array_bytes);
    let content_hash = hash_content(&array_bytes, &records)?;

    let manifest = CurationManifest {
        version: 1,
        config: config.clone(),
        scorer_name: scorer_name.to_string(),
        tau_used,
        stage_counts,
        warnings,
        pairs: records,
        content_hash,
    };
    fs::File::create(dir.join(ARRAYS_FILE))?.write_all(&array_bytes)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::File::create(dir.join(MANIFEST_FILE))?.write_all(json.as_bytes())?;
    Ok(manifest)
}

/// Loads and validates a dataset: shapes consistent, content hash intact,
/// and every pair satisfying the strict winner-dominance rule gap > tau.
pub fn load_manifest(dir: &Path) -> Result<(CurationManifest, Vec<PreferencePair>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path)?;
    let manifest: CurationManifest = serde_json::from_str(&json)?;
    let array_bytes = fs::read(dir.join(ARRAYS_FILE))?;
    if array_bytes.len() % 8 != 0 {
        return Err(Error::CorruptFile {
            path: dir.join(ARRAYS_FILE).display().to_string(),
            reason: "array file length not a multiple of 8".into(),
        });
    }
    let mut values = vec![0.0f64; array_bytes.len() / 8];
    LittleEndian::read_f64_into(&array_bytes, &mut values);

    let expect_hash = hash_content(&array_bytes, &manifest.pairs)?;
    if expect_hash != manifest.content_hash {
        return Err(Error::CorruptFile {
            path: manifest_path.display().to_string(),
            reason: "content hash mismatch".into(),
        });
    }

    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for rec in &manifest.pairs {
        let d = rec.shape.len();
        let slice = |off: u64| -> Result<Vec<f64>> {
            let start = off as usize;
            values
                .get(start..start + d)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::CorruptFile {
                    path: manifest_path.display().to_string(),
                    reason: format!("offset {off} out of bounds for {}", rec.source_id),
                })
        };
        let pair = PreferencePair {
            winner: Sample::new(slice(rec.winner_offset)?, rec.shape)?,
            loser: Sample::new(slice(rec.loser_offset)?, rec.shape)?,
            condition: rec.condition.clone(),
            gap: rec.gap,
            mask: Sample::new(slice(rec.mask_offset)?, rec.shape)?,
            provenance: rec.provenance,
            source_id: rec.source_id.clone(),
        };
        if !(pair.gap > manifest.tau_used) {
            return Err(Error::CorruptFile {
                path: manifest_path.display().to_string(),
                reason: format!(
                    "pair {} violates winner dominance: gap {} <= tau {}",
                    rec.source_id, pair.gap, manifest.tau_used
                ),
            });
        }
        pairs.push(pair);
    }
    Ok((manifest, pairs))
}

