//! P×K identity sampler: each batch holds P distinct identities with K
//! tracklets each.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PkSampler {
    /// label → member indices, in a fixed order.
    by_label: BTreeMap<usize, Vec<usize>>,
    p: usize,
    k: usize,
    rng: ChaCha8Rng,
}

impl PkSampler {
    /// `labels[i]` is the identity of item `i`.
    pub fn new(labels: &[usize], p: usize, k: usize, seed: u64) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::Config(format!("P and K must be positive, got P={p}, K={k}")));
        }
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        if by_label.len() < p {
            return Err(Error::TooFewIdentities {
                needed: p,
                found: by_label.len(),
            });
        }
        Ok(Self {
            by_label,
            p,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    /// Batches for the next epoch.
    ///
    /// Each identity's members are shuffled and cut into chunks of K
    /// (identities with fewer than K members draw K with replacement). Then
    /// P identities that still hold chunks are drawn at random and give up
    /// one chunk each, until fewer than P identities remain.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut chunks: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
        for (&label, members) in &self.by_label {
            let list = if members.len() < self.k {
                vec![(0..self.k)
                    .map(|_| members[self.rng.random_range(0..members.len())])
                    .collect()]
            } else {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut self.rng);
                shuffled.chunks_exact(self.k).map(<[usize]>::to_vec).collect()
            };
            chunks.insert(label, list);
        }

        let mut batches = Vec::new();
        loop {
            let mut available: Vec<usize> = chunks.iter().filter(|(_, c)| !c.is_empty()).map(|(&l, _)| l).collect();
            if available.len() < self.p {
                break;
            }
            available.shuffle(&mut self.rng);
            let mut batch = Vec::with_capacity(self.batch_size());
            for label in &available[..self.p] {
                batch.extend(chunks.get_mut(label).unwrap().pop().unwrap());
            }
            batches.push(batch);
        }
        batches
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        let labels: Vec<usize> = (0..12).flat_map(|id| [id; 4]).collect();
        let mut s = PkSampler::new(&labels, 12, 4, 0).unwrap();
        let batches = s.next_epoch();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 48);
        let mut counts = [0usize; 12];
        for &i in &batches[0] {
            counts[labels[i]] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4));
        let mut sorted = batches[0].clone();
        sorted.sort();
        assert_eq!(sorted, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn replacement_for_small_identity() {
        let labels = [0, 1, 1, 1, 1];
        let mut s = PkSampler::new(&labels, 2, 4, 3).unwrap();
        let batch = &s.next_epoch()[0];
        assert_eq!(batch.iter().filter(|&&i| i == 0).count(), 4);
    }

    #[test]
    fn deterministic_by_seed() {
        let labels: Vec<usize> = (0..30).map(|i| i % 7).collect();
        let run = |seed| {
            let mut s = PkSampler::new(&labels, 3, 2, seed).unwrap();
            (0..5).map(|_| s.next_epoch()).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn too_few_identities() {
        assert!(matches!(
            PkSampler::new(&[0, 0, 1], 3, 2, 0),
            Err(Error::TooFewIdentities { needed: 3, found: 2 })
        ));
    }
}
