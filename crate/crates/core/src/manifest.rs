//! Line-delimited sample index shared by ingest, training and evaluation.
//!
//! The first line is a JSON header; every following line is one sample
//! record with fields in the fixed order `source_id, split, paths, lat,
//! lon, id`. Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chipio;
use crate::error::{Error, Result};
use crate::raster::{latlon_to_planes, Conditioning, Modality, ModalityKind, RasterChip, Sample, Split};

pub const FORMAT: &str = "sareo-manifest";
pub const VERSION: u32 = 1;

/// Per-channel linear map from `[lo, hi]` (after clipping) onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalization {
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
}

impl ChannelNormalization {
    pub fn identity_unit(channels: usize) -> Self {
        ChannelNormalization {
            lo: vec![0.0; channels],
            hi: vec![1.0; channels],
        }
    }

    pub fn apply(&self, v: f32, channel: usize) -> f32 {
        let (lo, hi) = (self.lo[channel], self.hi[channel]);
        if hi <= lo {
            return 0.0;
        }
        let t = (v.clamp(lo, hi) - lo) / (hi - lo);
        (2.0 * t - 1.0).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub dataset: String,
    pub seed: u64,
    pub split_ratio: f64,
    pub sar_modality: ModalityKind,
    pub sar_normalization: Option<ChannelNormalization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPath {
    pub modality: ModalityKind,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_id: String,
    pub split: Split,
    pub paths: Vec<ModalityPath>,
    pub lat: f64,
    pub lon: f64,
    pub id: String,
}

impl ManifestRecord {
    pub fn path_for(&self, kind: ModalityKind) -> Option<&str> {
        self.paths.iter().find(|p| p.modality == kind).map(|p| p.path.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub samples: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(dataset: impl Into<String>, seed: u64, split_ratio: f64, sar_modality: ModalityKind) -> Self {
        Manifest {
            header: ManifestHeader {
                format: FORMAT.into(),
                version: VERSION,
                dataset: dataset.into(),
                seed,
                split_ratio,
                sar_modality,
                sar_normalization: None,
            },
            samples: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.samples.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Checks that no parent scene contributes to both splits.
    pub fn validate(&self) -> Result<()> {
        if self.header.format != FORMAT || self.header.version != VERSION {
            return Err(Error::format("manifest", "unknown format or version"));
        }
        let train: BTreeSet<&str> = self.split(Split::Train).map(|r| r.source_id.as_str()).collect();
        if let Some(r) = self.split(Split::Test).find(|r| train.contains(r.source_id.as_str())) {
            return Err(Error::Validation(format!(
                "scene {} appears in both train and test",
                r.source_id
            )));
        }
        let mut ids = BTreeSet::new();
        for r in &self.samples {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.samples {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::format("manifest", "empty file"))?,
        )
        .map_err(|e| Error::format("manifest header", e.to_string()))?;
        let samples = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format("manifest record", format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        let m = Manifest { header, samples };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        chipio::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
    }

    /// Loads pixel data for one record. Lat/lon planes are synthesized from
    /// the record; every other modality must have a chip file.
    pub fn load_sample(&self, root: &Path, record: &ManifestRecord, conditioning: &Conditioning) -> Result<Sample> {
        let read = |kind: ModalityKind| -> Result<RasterChip> {
            let rel = record.path_for(kind).ok_or_else(|| {
                Error::Modality(format!("sample {} has no {} chip", record.id, kind))
            })?;
            chipio::read_chip(&resolve(root, rel))
        };
        let sar = read(self.header.sar_modality)?;
        let eo = read(ModalityKind::EoRgb)?;
        let mut conditions = Vec::with_capacity(conditioning.kinds().len());
        for &kind in conditioning.kinds() {
            let chip = match kind {
                ModalityKind::LatlonPlanes => latlon_to_planes(record.lat, record.lon, sar.height(), sar.width())?,
                _ => read(kind)?,
            };
            conditions.push((Modality::from(kind), chip));
        }
        Sample::new(&record.id, sar, eo, conditions, &record.source_id, record.split)
    }
}

pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

/// Directory that manifest-relative paths are resolved against.
pub fn root_of(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Assigns whole parent scenes to train/test with a seeded shuffle.
///
/// `round(ratio * n)` scenes (sorted, then shuffled) go to train; the rest to test.
pub fn split_by_source<'a>(source_ids: impl IntoIterator<Item = &'a str>, ratio: f64, seed: u64) -> BTreeMap<String, Split> {
    let mut ids: Vec<&str> = source_ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ratio * ids.len() as f64).round() as usize).min(ids.len());
    ids.iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), if i < n_train { Split::Train } else { Split::Test }))
        .collect()
}
