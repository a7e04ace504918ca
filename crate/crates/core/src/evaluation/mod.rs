//! Protocol-aware scoring of ranked galleries.

mod metrics;
mod report;

pub use metrics::{average_precision, cmc, first_match, overall_map, QueryRanking, CMC_RANKS};
pub use report::{
    ablation_run, evaluate, AblationCell, AblationRow, AblationTable, EvalFingerprint, EvalReport, ProtocolResult,
};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, Domain, Split, TrackletRecord};
use crate::error::{Error, Result};
use crate::pooling::{embed_tracklet, AttentionPoolParams, NeckParams, PoolingMode};
use crate::retrieval::EmbeddingSet;
use crate::training::PoolingHead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    A2A,
    A2G,
    G2A,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::A2G, Protocol::G2A, Protocol::A2A];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::A2A => "A2A",
            Protocol::A2G => "A2G",
            Protocol::G2A => "G2A",
        }
    }

    pub fn query_domain(self) -> Domain {
        match self {
            Protocol::A2A | Protocol::A2G => Domain::Aerial,
            Protocol::G2A => Domain::Ground,
        }
    }

    pub fn gallery_domain(self) -> Domain {
        match self {
            Protocol::A2A | Protocol::G2A => Domain::Aerial,
            Protocol::A2G => Domain::Ground,
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Retrieval embeddings for the query and gallery tracklets of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletEmbeddings {
    pub pooling: PoolingMode,
    pub dim: usize,
    pub vectors: BTreeMap<usize, Array1<f64>>,
}

impl TrackletEmbeddings {
    pub fn get(&self, tracklet_index: usize) -> Option<&Array1<f64>> {
        self.vectors.get(&tracklet_index)
    }

    /// Round every entry to single precision.
    pub fn to_f32_precision(&self) -> Self {
        let mut out = self.clone();
        for v in out.vectors.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
        out
    }
}

/// Pools, normalizes and (when available) flip-averages every query and
/// gallery tracklet.
pub fn embed_dataset_with(
    dataset: &Dataset,
    mode: PoolingMode,
    attention: &AttentionPoolParams,
    neck: &NeckParams,
) -> Result<TrackletEmbeddings> {
    let records: Vec<&TrackletRecord> = dataset.records.iter().filter(|r| r.split != Split::Train).collect();
    let vectors = records
        .par_iter()
        .map(|r| {
            let seq = dataset.sequence(r.tracklet_index);
            embed_tracklet(seq, dataset.flipped(r), mode, attention, neck).map(|v| (r.tracklet_index, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackletEmbeddings {
        pooling: mode,
        dim: dataset.feature_dim,
        vectors: vectors.into_iter().collect(),
    })
}

pub fn embed_dataset(dataset: &Dataset, head: &PoolingHead) -> Result<TrackletEmbeddings> {
    embed_dataset_with(dataset, head.mode, &head.attention, &head.neck)
}

/// Query and gallery sides of one protocol.
#[derive(Debug, Clone)]
pub struct ProtocolSets {
    pub protocol: Protocol,
    pub queries: EmbeddingSet,
    pub gallery: EmbeddingSet,
    pub query_records: Vec<TrackletRecord>,
    pub gallery_records: Vec<TrackletRecord>,
}

fn stack(records: &[TrackletRecord], embeddings: &TrackletEmbeddings) -> Result<EmbeddingSet> {
    let mut m = Array2::zeros((records.len(), embeddings.dim));
    for (i, r) in records.iter().enumerate() {
        let v = embeddings
            .get(r.tracklet_index)
            .ok_or_else(|| Error::ShapeMismatch(format!("tracklet {} has no embedding", r.tracklet_index)))?;
        if v.len() != embeddings.dim {
            return Err(Error::DimMismatch {
                expected: embeddings.dim,
                got: v.len(),
            });
        }
        m.row_mut(i).assign(v);
    }
    EmbeddingSet::new(m, records.iter().map(|r| r.tracklet_index).collect())
}

pub fn build_protocol_sets(
    dataset: &Dataset,
    embeddings: &TrackletEmbeddings,
    protocol: Protocol,
) -> Result<ProtocolSets> {
    let pick = |split: Split, domain: Domain| -> Vec<TrackletRecord> {
        dataset
            .records
            .iter()
            .filter(|r| r.split == split && r.domain == domain)
            .cloned()
            .collect()
    };
    let query_records = pick(Split::Query, protocol.query_domain());
    let gallery_records = pick(Split::Gallery, protocol.gallery_domain());
    if query_records.is_empty() || gallery_records.is_empty() {
        return Err(Error::EmptyProtocol(protocol.name().to_string()));
    }
    Ok(ProtocolSets {
        protocol,
        queries: stack(&query_records, embeddings)?,
        gallery: stack(&gallery_records, embeddings)?,
        query_records,
        gallery_records,
    })
}
