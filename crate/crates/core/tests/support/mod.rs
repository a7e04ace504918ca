//! Reference implementations written straight from the definitions, with no
//! shared code beyond the public types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_unit_rows<R: Rng>(rng: &mut R, n: usize, c: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, c), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// k nearest neighbours of `p` among `candidates`, `p` excluded.
fn knn(d: &Array2<f64>, p: usize, k: usize, candidates: &[usize]) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&x| x != p)
        .map(|&x| (d[[p, x]], x))
        .collect();
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, x)| x).collect()
}

fn reciprocal(d: &Array2<f64>, p: usize, k: usize, candidates: &[usize]) -> BTreeSet<usize> {
    knn(d, p, k, candidates)
        .into_iter()
        .filter(|&x| knn(d, x, k, candidates).contains(&p))
        .collect()
}

/// k-reciprocal re-ranking, dense and unoptimized.
pub fn brute_force_rerank(
    q: &Array2<f64>,
    g: &Array2<f64>,
    k1: usize,
    k2: usize,
    lambda: f64,
    gallery_only: bool,
) -> Array2<f64> {
    let (nq, ng) = (q.nrows(), g.nrows());
    let n = nq + ng;
    let all = concatenate(Axis(0), &[q.view(), g.view()]).unwrap();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            d[[i, j]] = (1.0 - all.row(i).dot(&all.row(j))).clamp(0.0, 2.0);
        }
    }
    let candidates: Vec<usize> = if gallery_only {
        (nq..n).collect()
    } else {
        (0..n).collect()
    };

    let half = k1.div_ceil(2);
    let mut v = Array2::<f64>::zeros((n, n));
    for p in 0..n {
        let r = reciprocal(&d, p, k1, &candidates);
        let mut star = r.clone();
        for &x in &r {
            let rx = reciprocal(&d, x, half, &candidates);
            let overlap = rx.intersection(&r).count();
            if 3 * overlap >= 2 * rx.len() {
                star.extend(rx);
            }
        }
        star.insert(p);
        for &x in &star {
            v[[p, x]] = (-d[[p, x]]).exp();
        }
        let total = v.row(p).sum();
        v.row_mut(p).mapv_inplace(|e| e / total);
    }

    let mut vbar = Array2::<f64>::zeros((n, n));
    for p in 0..n {
        let mut members = vec![p];
        members.extend(knn(&d, p, k2 - 1, &candidates));
        let mut acc = Array1::<f64>::zeros(n);
        for &m in &members {
            acc += &v.row(m);
        }
        vbar.row_mut(p).assign(&(acc / members.len() as f64));
    }

    let mut out = Array2::zeros((nq, ng));
    for i in 0..nq {
        for j in 0..ng {
            let (a, b) = (vbar.row(i), vbar.row(nq + j));
            let mins: f64 = a.iter().zip(b.iter()).map(|(x, y)| x.min(*y)).sum();
            let maxs: f64 = a.iter().zip(b.iter()).map(|(x, y)| x.max(*y)).sum();
            out[[i, j]] = lambda * d[[i, nq + j]] + (1.0 - lambda) * (1.0 - mins / maxs);
        }
    }
    out
}

/// Average precision from raw distances: sort, drop junk, sum precision at
/// each hit.
pub fn brute_force_ap(distances: &[f64], gallery_ids: &[u32], junk: &[bool], query_id: u32) -> Option<f64> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap().then(a.cmp(&b)));
    let kept: Vec<u32> = order
        .into_iter()
        .filter(|&j| !junk[j])
        .map(|j| gallery_ids[j])
        .collect();
    let relevant = kept.iter().filter(|&&id| id == query_id).count();
    if relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    let mut hits = 0;
    for (pos, &id) in kept.iter().enumerate() {
        if id == query_id {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant as f64)
}
