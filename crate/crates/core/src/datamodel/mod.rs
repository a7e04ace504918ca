//! Domain types and ingestion: binary feature files, CSV manifests and
//! metadata discretization.

mod dataset;
mod features;
mod manifest;
mod metadata;

pub use dataset::Dataset;
pub use features::{
    read_feature_file, read_feature_file_from, write_feature_file, write_feature_file_to, FeatureFile, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use manifest::{parse_manifest, parse_manifest_from, write_manifest, MANIFEST_HEADER};
pub use metadata::{discretize_metadata, BinConfig, BinRange, MetadataBins};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// T×C matrix of per-frame embeddings for one tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    pub frames: Array2<f64>,
    pub tracklet_index: usize,
}

impl FrameFeatureSequence {
    pub fn new(frames: Array2<f64>, tracklet_index: usize) -> Result<Self> {
        let (t, c) = frames.dim();
        if t == 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "sequence must have T >= 1 and C >= 1, got {t}x{c}"
            )));
        }
        for ((frame, channel), v) in frames.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    tracklet: tracklet_index,
                    frame,
                    channel,
                });
            }
        }
        Ok(Self { frames, tracklet_index })
    }

    pub fn seq_len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Aerial,
    Ground,
}

impl Domain {
    pub fn parse(token: &str) -> Result<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "aerial" => Ok(Domain::Aerial),
            "ground" => Ok(Domain::Ground),
            _ => Err(Error::UnknownDomain(token.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Aerial => "aerial",
            Domain::Ground => "ground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn parse(token: &str) -> Result<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            _ => Err(Error::UnknownSplit(token.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

/// One manifest row: identity, camera, domain, split and raw telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletRecord {
    pub tracklet_index: usize,
    pub person_id: u32,
    pub camera_id: u32,
    pub domain: Domain,
    pub split: Split,
    pub altitude_m: f64,
    pub distance_m: f64,
    pub angle_deg: f64,
    pub has_flip: bool,
}
