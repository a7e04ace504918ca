use serde::{Deserialize, Serialize};

use super::report::ProtocolResult;
use crate::error::{Error, Result};

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

/// One query's ranked gallery and its junk mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query_id: u32,
    /// Gallery person ids in rank order.
    pub ranked_ids: Vec<u32>,
    /// `false` marks junk entries dropped before scoring.
    pub valid: Vec<bool>,
}

impl QueryRanking {
    fn masked(&self) -> impl Iterator<Item = bool> + '_ {
        self.ranked_ids
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(move |(&id, _)| id == self.query_id)
    }
}

/// `(1/R) Σ_k hits(≤k)/k` over hit positions `k` of the masked list.
pub fn average_precision(ranked_ids: &[u32], query_id: u32, valid: &[bool]) -> Result<f64> {
    if ranked_ids.len() != valid.len() {
        return Err(Error::DimMismatch {
            expected: ranked_ids.len(),
            got: valid.len(),
        });
    }
    let mut hits = 0usize;
    let mut position = 0usize;
    let mut sum = 0.0;
    for (&id, _) in ranked_ids.iter().zip(valid).filter(|(_, &v)| v) {
        position += 1;
        if id == query_id {
            hits += 1;
            sum += hits as f64 / position as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// 1-based position of the first valid match in the masked list.
pub fn first_match(query: &QueryRanking) -> Option<usize> {
    query.masked().position(|hit| hit).map(|p| p + 1)
}

/// Percentage of queries whose first valid match is within each `k`.
/// Queries without a valid match are left out of the denominator.
pub fn cmc(queries: &[QueryRanking], ks: &[usize]) -> Result<Vec<f64>> {
    let firsts: Vec<usize> = queries.iter().filter_map(first_match).collect();
    if firsts.is_empty() {
        return Err(Error::NoRelevant);
    }
    let n = firsts.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| 100.0 * firsts.iter().filter(|&&f| f <= k).count() as f64 / n)
        .collect())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Query-count-weighted mean of the protocol mAPs. Empty protocols are
/// skipped.
pub fn overall_map(results: &[ProtocolResult]) -> Result<f64> {
    let mut terms: Vec<(f64, usize)> = results
        .iter()
        .filter(|r| r.num_queries > 0)
        .map(|r| (r.map, r.num_queries))
        .collect();
    if terms.is_empty() {
        return Err(Error::AllEmpty);
    }
    // Reduced counts keep the equal-count case an exact arithmetic mean;
    // the fixed order makes the result independent of protocol order.
    let g = terms.iter().fold(0, |g, t| gcd(g, t.1));
    terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut num, mut den) = (0.0, 0.0);
    for &(m, n) in &terms {
        let w = (n / g) as f64;
        num += w * m;
        den += w;
    }
    let lo = terms.first().unwrap().0;
    let hi = terms.last().unwrap().0;
    Ok((num / den).clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_cases() {
        let ap = average_precision(&[7, 1, 7, 2], 7, &[true; 4]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[7, 7, 1], 7, &[true; 3]).unwrap(), 1.0);
        assert_eq!(average_precision(&[1, 2, 3, 7, 4], 7, &[true; 5]).unwrap(), 0.25);
        assert!(matches!(
            average_precision(&[1, 2], 7, &[true; 2]),
            Err(Error::NoRelevant)
        ));
    }

    #[test]
    fn junk_is_skipped() {
        // The junk match at rank 1 neither counts as a hit nor as a position.
        let ap = average_precision(&[7, 1, 7], 7, &[false, true, true]).unwrap();
        assert_eq!(ap, 0.5);
        assert!(matches!(average_precision(&[7], 7, &[false]), Err(Error::NoRelevant)));
    }

    #[test]
    fn cmc_hand_count() {
        let mk = |pos: usize| {
            let mut ids = vec![0u32; 12];
            ids[pos - 1] = 9;
            QueryRanking {
                query_id: 9,
                valid: vec![true; ids.len()],
                ranked_ids: ids,
            }
        };
        assert_eq!(cmc(&[mk(2), mk(7)], &CMC_RANKS).unwrap(), vec![0.0, 50.0, 100.0]);
        assert_eq!(cmc(&[mk(1), mk(1)], &CMC_RANKS).unwrap(), vec![100.0; 3]);
    }
}
