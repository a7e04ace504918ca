use std::collections::BTreeSet;
use std::path::Path;

use super::{parse_manifest, read_feature_file, FeatureFile, FrameFeatureSequence, Split, TrackletRecord};
use crate::error::{Error, Result};

/// Records and feature sequences, aligned by `tracklet_index`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<TrackletRecord>,
    pub features: Vec<FrameFeatureSequence>,
    pub flipped_features: Option<Vec<FrameFeatureSequence>>,
    pub feature_dim: usize,
    pub seq_len: usize,
}

impl Dataset {
    pub fn new(mut records: Vec<TrackletRecord>, features: FeatureFile, flipped: Option<FeatureFile>) -> Result<Self> {
        let n = features.sequences.len();
        records.sort_by_key(|r| r.tracklet_index);
        for pair in records.windows(2) {
            if pair[0].tracklet_index == pair[1].tracklet_index {
                return Err(Error::DuplicateIndex(pair[0].tracklet_index));
            }
        }
        if let Some(r) = records.iter().find(|r| r.tracklet_index >= n) {
            return Err(Error::ShapeMismatch(format!(
                "manifest references tracklet {} but the feature file holds {n}",
                r.tracklet_index
            )));
        }
        if let Some(flip) = &flipped {
            if (flip.sequences.len(), flip.seq_len, flip.feature_dim) != (n, features.seq_len, features.feature_dim) {
                return Err(Error::ShapeMismatch(format!(
                    "flipped features are {}x{}x{}, expected {n}x{}x{}",
                    flip.sequences.len(),
                    flip.seq_len,
                    flip.feature_dim,
                    features.seq_len,
                    features.feature_dim
                )));
            }
        }

        let dataset = Self {
            feature_dim: features.feature_dim,
            seq_len: features.seq_len,
            records,
            features: features.sequences,
            flipped_features: flipped.map(|f| f.sequences),
        };
        for pid in dataset.queries_without_gallery() {
            log::warn!("query identity {pid} has no gallery tracklet");
        }
        Ok(dataset)
    }

    pub fn load(features: impl AsRef<Path>, manifest: impl AsRef<Path>, flipped: Option<&Path>) -> Result<Self> {
        let features = read_feature_file(features)?;
        let records = parse_manifest(manifest)?;
        let flipped = flipped.map(read_feature_file).transpose()?;
        Self::new(records, features, flipped)
    }

    pub fn sequence(&self, tracklet_index: usize) -> &FrameFeatureSequence {
        &self.features[tracklet_index]
    }

    /// Flipped counterpart, only when the record says one exists.
    pub fn flipped(&self, record: &TrackletRecord) -> Option<&FrameFeatureSequence> {
        if !record.has_flip {
            return None;
        }
        self.flipped_features.as_ref().map(|f| &f[record.tracklet_index])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrackletRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn queries_without_gallery(&self) -> Vec<u32> {
        let gallery: BTreeSet<u32> = self.split(Split::Gallery).map(|r| r.person_id).collect();
        let queries: BTreeSet<u32> = self.split(Split::Query).map(|r| r.person_id).collect();
        queries.difference(&gallery).copied().collect()
    }
}
