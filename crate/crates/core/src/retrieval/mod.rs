//! Query–gallery distances and k-reciprocal re-ranking.

mod dmfile;
mod rerank;

pub use dmfile::{
    read_distance_matrix, read_distance_matrix_from, write_distance_matrix, write_distance_matrix_to, DISTANCE_MAGIC,
};
pub use rerank::{k_reciprocal_rerank, Neighborhood, RerankParams};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ℓ2-normalized embeddings (one per row) and the tracklet each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub embeddings: Array2<f64>,
    pub tracklets: Vec<usize>,
}

impl EmbeddingSet {
    pub const NORM_TOLERANCE: f64 = 1e-6;

    pub fn new(embeddings: Array2<f64>, tracklets: Vec<usize>) -> Result<Self> {
        if embeddings.nrows() != tracklets.len() {
            return Err(Error::DimMismatch {
                expected: embeddings.nrows(),
                got: tracklets.len(),
            });
        }
        for (i, row) in embeddings.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !((norm - 1.0).abs() <= Self::NORM_TOLERANCE) {
                return Err(Error::ShapeMismatch(format!(
                    "embedding {i} has norm {norm}, expected unit norm"
                )));
            }
        }
        Ok(Self { embeddings, tracklets })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceStage {
    RawCosine,
    Reranked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    /// Q × G
    pub values: Array2<f64>,
    pub stage: DistanceStage,
    pub params: Option<RerankParams>,
}

/// `1 − cos` between every pair of rows, clamped to `[0, 2]`.
pub(crate) fn cosine_distances(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let q = a.row(i);
            b.axis_iter(Axis(0))
                .map(|g| (1.0 - q.dot(&g)).clamp(0.0, 2.0))
                .collect()
        })
        .collect();
    Array2::from_shape_vec((a.nrows(), b.nrows()), rows.concat()).expect("rows have b.nrows() entries")
}

pub fn cosine_distance_matrix(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<DistanceMatrix> {
    if queries.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            expected: queries.dim(),
            got: gallery.dim(),
        });
    }
    Ok(DistanceMatrix {
        values: cosine_distances(&queries.embeddings, &gallery.embeddings),
        stage: DistanceStage::RawCosine,
        params: None,
    })
}

/// Gallery indices per query, ascending by distance, ties by index.
pub fn rank_lists(d: &DistanceMatrix) -> Vec<Vec<usize>> {
    d.values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            order
        })
        .collect()
}
