use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, cmc, overall_map, QueryRanking, CMC_RANKS};
use super::{build_protocol_sets, Protocol, TrackletEmbeddings};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::pooling::PoolingMode;
use crate::retrieval::{cosine_distance_matrix, k_reciprocal_rerank, rank_lists, RerankParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    #[serde(rename = "name")]
    pub protocol: Protocol,
    /// Scored queries; queries without a valid match are counted in `excluded`.
    pub num_queries: usize,
    pub excluded: usize,
    pub gallery_size: usize,
    pub map: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub ap: Vec<f64>,
}

impl ProtocolResult {
    fn empty(protocol: Protocol) -> Self {
        Self {
            protocol,
            num_queries: 0,
            excluded: 0,
            gallery_size: 0,
            map: 0.0,
            r1: 0.0,
            r5: 0.0,
            r10: 0.0,
            ap: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFingerprint {
    pub pooling: PoolingMode,
    pub rerank: Option<RerankParams>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocols: Vec<ProtocolResult>,
    pub overall_map: f64,
    pub config: EvalFingerprint,
    /// Resolved run configuration and input hashes, filled in by callers.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub run: serde_json::Value,
}

impl EvalReport {
    pub fn protocol(&self, p: Protocol) -> Option<&ProtocolResult> {
        self.protocols.iter().find(|r| r.protocol == p)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned plain-text table, two decimals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "protocol", "queries", "excluded", "gallery", "R1", "R5", "R10", "mAP"
        );
        for r in &self.protocols {
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>8} {:>7} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                r.protocol.name(),
                r.num_queries,
                r.excluded,
                r.gallery_size,
                r.r1,
                r.r5,
                r.r10,
                r.map
            );
        }
        let total: usize = self.protocols.iter().map(|r| r.num_queries).sum();
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7.2}",
            "overall", total, "", "", "", "", "", self.overall_map
        );
        out
    }
}

fn evaluate_protocol(
    dataset: &Dataset,
    embeddings: &TrackletEmbeddings,
    protocol: Protocol,
    rerank: Option<&RerankParams>,
) -> Result<ProtocolResult> {
    let sets = match build_protocol_sets(dataset, embeddings, protocol) {
        Ok(s) => s,
        Err(Error::EmptyProtocol(_)) => return Ok(ProtocolResult::empty(protocol)),
        Err(e) => return Err(e),
    };
    let distances = match rerank {
        Some(p) => k_reciprocal_rerank(&sets.queries, &sets.gallery, p)?,
        None => cosine_distance_matrix(&sets.queries, &sets.gallery)?,
    };
    let rankings: Vec<QueryRanking> = rank_lists(&distances)
        .into_iter()
        .zip(&sets.query_records)
        .map(|(order, q)| {
            let gallery: Vec<_> = order.iter().map(|&j| &sets.gallery_records[j]).collect();
            QueryRanking {
                query_id: q.person_id,
                ranked_ids: gallery.iter().map(|g| g.person_id).collect(),
                valid: gallery
                    .iter()
                    .map(|g| !(g.person_id == q.person_id && g.camera_id == q.camera_id))
                    .collect(),
            }
        })
        .collect();
    let aps: Vec<Option<f64>> = rankings
        .par_iter()
        .map(|q| match average_precision(&q.ranked_ids, q.query_id, &q.valid) {
            Ok(ap) => Ok(Some(ap)),
            Err(Error::NoRelevant) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let excluded = aps.iter().filter(|a| a.is_none()).count();
    if excluded > 0 {
        log::warn!("{protocol}: {excluded} queries have no valid match and are excluded");
    }
    let ap: Vec<f64> = aps.into_iter().flatten().collect();
    if ap.is_empty() {
        let mut r = ProtocolResult::empty(protocol);
        r.excluded = excluded;
        r.gallery_size = sets.gallery.len();
        return Ok(r);
    }
    let ranks = cmc(&rankings, &CMC_RANKS)?;
    Ok(ProtocolResult {
        protocol,
        num_queries: ap.len(),
        excluded,
        gallery_size: sets.gallery.len(),
        map: 100.0 * ap.iter().sum::<f64>() / ap.len() as f64,
        r1: ranks[0],
        r5: ranks[1],
        r10: ranks[2],
        ap,
    })
}

/// Scores every protocol, raw or re-ranked within each protocol, and
/// aggregates by query count.
pub fn evaluate(
    dataset: &Dataset,
    embeddings: &TrackletEmbeddings,
    rerank: Option<&RerankParams>,
) -> Result<EvalReport> {
    let protocols = Protocol::ALL
        .iter()
        .map(|&p| evaluate_protocol(dataset, embeddings, p, rerank))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        overall_map: overall_map(&protocols)?,
        protocols,
        config: EvalFingerprint {
            pooling: embeddings.pooling,
            rerank: rerank.copied(),
            seed: None,
        },
        run: serde_json::Value::Null,
    })
}

#[derive(Debug, Clone)]
pub struct AblationCell<'a> {
    pub label: String,
    pub embeddings: &'a TrackletEmbeddings,
    pub rerank: Option<RerankParams>,
}

impl<'a> AblationCell<'a> {
    /// Every combination of embedding set and re-ranking setting, in order.
    pub fn grid(embeddings: &[&'a TrackletEmbeddings], reranks: &[Option<RerankParams>]) -> Vec<Self> {
        let mut cells = Vec::new();
        for e in embeddings {
            for r in reranks {
                let rr = match r {
                    Some(p) => format!("rerank({},{},{})", p.k1, p.k2, p.lambda),
                    None => "no-rerank".to_string(),
                };
                cells.push(AblationCell {
                    label: format!("{}+{rr}", e.pooling.as_str()),
                    embeddings: e,
                    rerank: *r,
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: EvalReport,
    /// Overall mAP minus the first row's.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "config", "A2G", "G2A", "A2A", "overall", "delta"
        );
        for row in &self.rows {
            let m = |p| row.report.protocol(p).map_or(0.0, |r| r.map);
            let _ = writeln!(
                out,
                "{:<width$} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7}",
                row.label,
                m(Protocol::A2G),
                m(Protocol::G2A),
                m(Protocol::A2A),
                row.report.overall_map,
                format!("{:+.2}", row.delta)
            );
        }
        out
    }
}

pub fn ablation_run(dataset: &Dataset, cells: &[AblationCell<'_>]) -> Result<AblationTable> {
    let mut rows: Vec<AblationRow> = Vec::with_capacity(cells.len());
    for cell in cells {
        let report = evaluate(dataset, cell.embeddings, cell.rerank.as_ref())?;
        let delta = rows
            .first()
            .map_or(0.0, |first| report.overall_map - first.report.overall_map);
        rows.push(AblationRow {
            label: cell.label.clone(),
            report,
            delta,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(map: f64, n: usize) -> ProtocolResult {
        ProtocolResult {
            num_queries: n,
            map,
            ..ProtocolResult::empty(Protocol::A2A)
        }
    }

    #[test]
    fn overall_cases() {
        let table5 = [result(46.69, 7), result(41.23, 7), result(22.98, 7)];
        let m = overall_map(&table5).unwrap();
        assert!((m - 36.9667).abs() < 1e-4);
        assert_eq!(m, (46.69 + 41.23 + 22.98) / 3.0);
        let weighted = [result(10.0, 2), result(20.0, 1), result(30.0, 1)];
        assert_eq!(overall_map(&weighted).unwrap(), 17.5);
        let constant = [result(12.34, 3), result(12.34, 100), result(12.34, 7)];
        assert_eq!(overall_map(&constant).unwrap(), 12.34);
        assert!(matches!(overall_map(&[result(1.0, 0)]), Err(Error::AllEmpty)));
        // Empty protocols do not pull the mean.
        assert_eq!(overall_map(&[result(40.0, 5), result(0.0, 0)]).unwrap(), 40.0);
    }
}
