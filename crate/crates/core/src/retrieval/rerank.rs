//! k-reciprocal re-ranking.
//!
//! Over the combined set of queries and gallery:
//! 1. `R(p, k)`: members of the k nearest neighbours of `p` (excluding `p`)
//!    that also hold `p` among their own k nearest neighbours.
//! 2. Expansion: each `q ∈ R(p, k1)` contributes `R(q, ⌈k1/2⌉)` when at
//!    least two thirds of it already lies in `R(p, k1)`.
//! 3. `V_p[x] = exp(−d(p, x))` on the expanded set plus `p` itself,
//!    ℓ1-normalized.
//! 4. Local query expansion: average `V` over `p` and its `k2 − 1` nearest
//!    neighbours.
//! 5. Jaccard distance between expanded encodings, blended with the
//!    original distance: `λ·d + (1 − λ)·d_J`.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cosine_distances, DistanceMatrix, DistanceStage, EmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Neighbours drawn from queries and gallery alike.
    #[default]
    Combined,
    /// Neighbours drawn from the gallery only.
    GalleryOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
    #[serde(default)]
    pub neighborhood: Neighborhood,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 28,
            k2: 6,
            lambda: 0.28,
            neighborhood: Neighborhood::Combined,
        }
    }
}

impl RerankParams {
    pub fn new(k1: usize, k2: usize, lambda: f64) -> Self {
        Self {
            k1,
            k2,
            lambda,
            neighborhood: Neighborhood::Combined,
        }
    }

    pub fn validate(&self, candidates: usize) -> Result<()> {
        if self.k2 == 0 || self.k1 < self.k2 {
            return Err(Error::DegenerateK {
                k1: self.k1,
                k2: self.k2,
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if candidates <= self.k1 {
            return Err(Error::TooFewElements {
                k1: self.k1,
                n: candidates,
            });
        }
        Ok(())
    }
}

/// Sparse non-negative vector with sorted indices.
struct Sparse {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Sparse {
    fn get(&self, i: usize) -> f64 {
        self.idx.binary_search(&i).map_or(0.0, |p| self.val[p])
    }
}

struct Neighbours {
    /// Candidates of each point ordered by distance, the point itself excluded.
    order: Vec<Vec<usize>>,
    /// `rank[x][p]`: position of `p` in `order[x]`, `usize::MAX` if absent.
    rank: Vec<Vec<usize>>,
}

impl Neighbours {
    fn build(dist: &Array2<f64>, allowed: impl Fn(usize) -> bool + Sync) -> Self {
        let n = dist.nrows();
        let order: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|p| {
                let row = dist.row(p);
                let mut o: Vec<usize> = (0..n).filter(|&x| x != p && allowed(x)).collect();
                o.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                o
            })
            .collect();
        let rank = order
            .par_iter()
            .map(|o| {
                let mut r = vec![usize::MAX; n];
                for (pos, &x) in o.iter().enumerate() {
                    r[x] = pos;
                }
                r
            })
            .collect();
        Self { order, rank }
    }

    fn knn(&self, p: usize, k: usize) -> &[usize] {
        &self.order[p][..k.min(self.order[p].len())]
    }

    /// Sorted k-reciprocal set of `p`.
    fn reciprocal(&self, p: usize, k: usize) -> Vec<usize> {
        let mut r: Vec<usize> = self
            .knn(p, k)
            .iter()
            .copied()
            .filter(|&x| self.rank[x][p] < k)
            .collect();
        r.sort_unstable();
        r
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn encode(p: usize, nb: &Neighbours, dist: &Array2<f64>, k1: usize) -> Sparse {
    let base = nb.reciprocal(p, k1);
    let half = k1.div_ceil(2);
    let mut support = base.clone();
    for &q in &base {
        let cand = nb.reciprocal(q, half);
        if 3 * sorted_intersection_len(&cand, &base) >= 2 * cand.len() {
            support.extend_from_slice(&cand);
        }
    }
    support.push(p);
    support.sort_unstable();
    support.dedup();
    let weights: Vec<f64> = support.iter().map(|&x| (-dist[[p, x]]).exp()).collect();
    let total: f64 = weights.iter().sum();
    Sparse {
        idx: support,
        val: weights.into_iter().map(|w| w / total).collect(),
    }
}

fn expand(p: usize, nb: &Neighbours, encodings: &[Sparse], k2: usize) -> Sparse {
    let members: Vec<usize> = std::iter::once(p).chain(nb.knn(p, k2 - 1).iter().copied()).collect();
    let mut idx: Vec<usize> = members.iter().flat_map(|&m| encodings[m].idx.iter().copied()).collect();
    idx.sort_unstable();
    idx.dedup();
    let count = members.len() as f64;
    let val = idx
        .iter()
        .map(|&x| members.iter().map(|&m| encodings[m].get(x)).sum::<f64>() / count)
        .collect();
    Sparse { idx, val }
}

pub fn k_reciprocal_rerank(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    params: &RerankParams,
) -> Result<DistanceMatrix> {
    if queries.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            expected: queries.dim(),
            got: gallery.dim(),
        });
    }
    let (nq, ng) = (queries.len(), gallery.len());
    let candidates = match params.neighborhood {
        Neighborhood::Combined => nq + ng,
        Neighborhood::GalleryOnly => ng,
    };
    params.validate(candidates)?;

    let all = concatenate(Axis(0), &[queries.embeddings.view(), gallery.embeddings.view()]).expect("same column count");
    let dist = cosine_distances(&all, &all);
    let nb = match params.neighborhood {
        Neighborhood::Combined => Neighbours::build(&dist, |_| true),
        Neighborhood::GalleryOnly => Neighbours::build(&dist, |x| x >= nq),
    };

    let encodings: Vec<Sparse> = (0..nq + ng)
        .into_par_iter()
        .map(|p| encode(p, &nb, &dist, params.k1))
        .collect();
    let expanded: Vec<Sparse> = (0..nq + ng)
        .into_par_iter()
        .map(|p| expand(p, &nb, &encodings, params.k2))
        .collect();

    // Inverted index over the gallery's expanded encodings.
    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nq + ng];
    for (j, enc) in expanded[nq..].iter().enumerate() {
        for (&x, &v) in enc.idx.iter().zip(&enc.val) {
            postings[x].push((j, v));
        }
    }
    let mass: Vec<f64> = expanded.iter().map(|e| e.val.iter().sum()).collect();

    let lambda = params.lambda;
    let rows: Vec<Vec<f64>> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let mut shared = vec![0.0; ng];
            for (&x, &v) in expanded[i].idx.iter().zip(&expanded[i].val) {
                for &(j, w) in &postings[x] {
                    shared[j] += v.min(w);
                }
            }
            (0..ng)
                .map(|j| {
                    let union = mass[i] + mass[nq + j] - shared[j];
                    let jaccard = (1.0 - shared[j] / union).clamp(0.0, 1.0);
                    lambda * dist[[i, nq + j]] + (1.0 - lambda) * jaccard
                })
                .collect()
        })
        .collect();

    Ok(DistanceMatrix {
        values: Array2::from_shape_vec((nq, ng), rows.concat()).expect("rows have ng entries"),
        stage: DistanceStage::Reranked,
        params: Some(*params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::cosine_distance_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, c: usize) -> EmbeddingSet {
        let mut m = Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0f64..1.0));
        for mut row in m.axis_iter_mut(Axis(0)) {
            let norm: f64 = row.dot(&row).sqrt();
            row /= norm;
        }
        EmbeddingSet::new(m, (0..n).collect()).unwrap()
    }

    #[test]
    fn lambda_one_is_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, g) = (random_set(&mut rng, 5, 6), random_set(&mut rng, 12, 6));
        let raw = cosine_distance_matrix(&q, &g).unwrap();
        let rr = k_reciprocal_rerank(&q, &g, &RerankParams::new(6, 3, 1.0)).unwrap();
        assert_eq!(rr.values, raw.values);
        assert_eq!(rr.stage, DistanceStage::Reranked);
    }

    #[test]
    fn duplicate_point_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_set(&mut rng, 10, 5);
        let q = EmbeddingSet::new(g.embeddings.slice(ndarray::s![3..4, ..]).to_owned(), vec![0]).unwrap();
        let rr = k_reciprocal_rerank(&q, &g, &RerankParams::new(4, 1, 0.28)).unwrap();
        assert!(rr.values[[0, 3]].abs() < 1e-12, "{}", rr.values[[0, 3]]);
    }

    #[test]
    fn parameter_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, g) = (random_set(&mut rng, 2, 4), random_set(&mut rng, 4, 4));
        assert!(matches!(
            k_reciprocal_rerank(&q, &g, &RerankParams::new(6, 2, 0.3)),
            Err(Error::TooFewElements { k1: 6, n: 6 })
        ));
        assert!(matches!(
            k_reciprocal_rerank(&q, &g, &RerankParams::new(2, 3, 0.3)),
            Err(Error::DegenerateK { .. })
        ));
    }

    #[test]
    fn lambda_zero_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, g) = (random_set(&mut rng, 6, 4), random_set(&mut rng, 15, 4));
        let rr = k_reciprocal_rerank(&q, &g, &RerankParams::new(5, 2, 0.0)).unwrap();
        assert!(rr.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
