//! Minimum-JSD retrieval through the Hellinger embedding.
//!
//! Distributions are mapped to `z = sqrt(q)` on the unit sphere and grouped
//! into inverted lists around k-means centroids. A query probes the lists of
//! the nearest centroids, keeps the `rerank_width` closest embeddings by
//! Euclidean distance and returns the exact-JSD minimum among them. Because
//! the answer is a minimum over a subset evaluated with the exact divergence,
//! it can never undercut the true minimum. When `rerank_width` covers the
//! whole index the query degrades to an exhaustive scan and is exact.
//!
//! Memory is `O(n·K)`: the index stores each distribution, its embedding and
//! one list slot, and no pairwise matrix.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{jsd_unchecked, ClassDistribution};
use crate::error::{Error, Result};
use crate::SampleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Number of embedding-space neighbours reranked by exact JSD.
    pub rerank_width: usize,
    /// Inverted lists; 0 picks `round(sqrt(n))`.
    pub num_lists: usize,
    /// Minimum number of lists probed per query.
    pub probes: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            rerank_width: 64,
            num_lists: 0,
            probes: 8,
            kmeans_iters: 12,
            seed: 0x5eed,
        }
    }
}

/// Exact minimum JSD over `(id, probs)` pairs; ties go to the lowest id.
///
/// Returns `(None, +inf)` for an empty iterator.
pub fn min_jsd_exhaustive<'a>(
    q: &[f64],
    items: impl IntoIterator<Item = (SampleId, &'a [f64])>,
) -> (Option<SampleId>, f64) {
    let mut best: (Option<SampleId>, f64) = (None, f64::INFINITY);
    for (id, p) in items {
        let d = jsd_unchecked(q, p);
        if d < best.1 || (d == best.1 && best.0.is_none_or(|b| id < b)) {
            best = (Some(id), d);
        }
    }
    best
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(z: &[f64], centroids: &[f64], k: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(k).enumerate() {
        let d = sq_dist(z, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Inverted-file index over Hellinger embeddings with exact-JSD reranking.
#[derive(Debug, Clone)]
pub struct DivergenceIndex {
    k: usize,
    config: IndexConfig,
    ids: Vec<SampleId>,
    probs: Vec<f64>,
    embeddings: Vec<f64>,
    positions: HashMap<SampleId, u32>,
    centroids: Vec<f64>,
    lists: Vec<Vec<u32>>,
}

impl DivergenceIndex {
    pub fn build(
        distributions: &BTreeMap<SampleId, ClassDistribution>,
        config: &IndexConfig,
    ) -> Result<Self> {
        let k = distributions
            .values()
            .next()
            .ok_or(Error::EmptyPool)?
            .num_classes();
        if config.rerank_width == 0 {
            return Err(Error::InvalidConfig("rerank_width must be at least 1".into()));
        }
        let n = distributions.len();
        let mut ids = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n * k);
        for (&id, d) in distributions {
            if d.num_classes() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: d.num_classes(),
                });
            }
            ids.push(id);
            probs.extend_from_slice(d.probs());
        }
        let embeddings: Vec<f64> = probs.iter().map(|v| v.sqrt()).collect();
        let positions = ids.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();

        let num_lists = match config.num_lists {
            0 => ((n as f64).sqrt().round() as usize).max(1),
            l => l.min(n),
        };
        let centroids = kmeans(&embeddings, k, num_lists, config.kmeans_iters, config.seed);
        let mut lists = vec![Vec::new(); num_lists];
        for (i, z) in embeddings.chunks_exact(k).enumerate() {
            lists[nearest_centroid(z, &centroids, k)].push(i as u32);
        }

        Ok(Self {
            k,
            config: config.clone(),
            ids,
            probs,
            embeddings,
            positions,
            centroids,
            lists,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn set_rerank_width(&mut self, width: usize) {
        self.config.rerank_width = width.max(1);
    }

    /// Adds one distribution to the list of its nearest existing centroid.
    pub fn insert(&mut self, id: SampleId, q: &ClassDistribution) -> Result<()> {
        if q.num_classes() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: q.num_classes(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let pos = self.ids.len() as u32;
        self.ids.push(id);
        self.probs.extend_from_slice(q.probs());
        let z: Vec<f64> = q.probs().iter().map(|v| v.sqrt()).collect();
        let list = nearest_centroid(&z, &self.centroids, self.k);
        self.embeddings.extend_from_slice(&z);
        self.lists[list].push(pos);
        self.positions.insert(id, pos);
        Ok(())
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    fn exhaustive(&self, q: &[f64]) -> (SampleId, f64) {
        let (id, d) = min_jsd_exhaustive(q, (0..self.len()).map(|i| (self.ids[i], self.row(i))));
        (id.expect("index is non-empty"), d)
    }

    /// Nearest neighbour by JSD, subject to the rerank-width approximation.
    pub fn min_jsd(&self, q: &ClassDistribution) -> Result<(SampleId, f64)> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.num_classes() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: q.num_classes(),
            });
        }
        Ok(self.min_jsd_unchecked(q.probs()))
    }

    /// Exact nearest neighbour by JSD regardless of the configured width.
    pub fn min_jsd_exact(&self, q: &ClassDistribution) -> Result<(SampleId, f64)> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.num_classes() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: q.num_classes(),
            });
        }
        Ok(self.exhaustive(q.probs()))
    }

    pub(crate) fn min_jsd_unchecked(&self, q: &[f64]) -> (SampleId, f64) {
        let width = self.config.rerank_width;
        if width >= self.len() {
            return self.exhaustive(q);
        }
        let z: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();

        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.k)
            .map(|c| sq_dist(&z, c))
            .enumerate()
            .map(|(i, d)| (d, i))
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut shortlist: Vec<(f64, SampleId, u32)> = Vec::new();
        for (probed, &(_, list)) in order.iter().enumerate() {
            if probed >= self.config.probes && shortlist.len() >= width {
                break;
            }
            for &pos in &self.lists[list] {
                let p = pos as usize;
                let e = &self.embeddings[p * self.k..(p + 1) * self.k];
                shortlist.push((sq_dist(&z, e), self.ids[p], pos));
            }
        }
        let cmp = |a: &(f64, SampleId, u32), b: &(f64, SampleId, u32)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if shortlist.len() > width {
            shortlist.select_nth_unstable_by(width - 1, cmp);
            shortlist.truncate(width);
        }
        let (id, d) = min_jsd_exhaustive(
            q,
            shortlist.iter().map(|&(_, id, pos)| (id, self.row(pos as usize))),
        );
        (id.expect("shortlist is non-empty"), d)
    }

    /// Approximate heap footprint of the index in bytes.
    pub fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        let lists: usize = self
            .lists
            .iter()
            .map(|l| l.capacity() * size_of::<u32>() + size_of::<Vec<u32>>())
            .sum();
        self.ids.capacity() * size_of::<SampleId>()
            + (self.probs.capacity() + self.embeddings.capacity() + self.centroids.capacity())
                * size_of::<f64>()
            + self.positions.capacity() * (size_of::<SampleId>() + size_of::<u32>() + 1)
            + lists
    }

    /// Digest of the indexed content (ids and distributions, in id order).
    pub fn content_digest(&self) -> String {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&i| self.ids[i]);
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for i in order {
            h.update(self.ids[i].0.to_le_bytes());
            for v in self.row(i) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Digest of the search structure (centroids and list membership).
    pub fn structure_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.centroids {
            h.update(v.to_le_bytes());
        }
        for list in &self.lists {
            h.update((list.len() as u64).to_le_bytes());
            for &pos in list {
                h.update(self.ids[pos as usize].0.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes a snapshot keyed by [`content_digest`](Self::content_digest).
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let snap = Snapshot {
            content_digest: self.content_digest(),
            k: self.k,
            config: self.config.clone(),
            ids: self.ids.clone(),
            probs: self.probs.clone(),
            centroids: self.centroids.clone(),
            lists: self.lists.clone(),
        };
        crate::io::write_atomic(path, &serde_json::to_vec(&snap)?)
    }

    /// Loads a snapshot, refusing it unless its digest equals `expected`.
    pub fn load_snapshot(path: &Path, expected_digest: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let snap: Snapshot = serde_json::from_slice(&bytes)?;
        if snap.content_digest != expected_digest {
            return Err(Error::StaleSnapshot {
                expected: expected_digest.to_string(),
                found: snap.content_digest,
            });
        }
        let n = snap.ids.len();
        let listed: usize = snap.lists.iter().map(Vec::len).sum();
        if snap.k < 2
            || snap.probs.len() != n * snap.k
            || snap.centroids.len() != snap.lists.len() * snap.k
            || listed != n
            || snap.lists.iter().flatten().any(|&p| p as usize >= n)
        {
            return Err(Error::InvalidConfig("malformed index snapshot".into()));
        }
        let positions: HashMap<SampleId, u32> = snap
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32))
            .collect();
        let index = Self {
            k: snap.k,
            config: snap.config,
            embeddings: snap.probs.iter().map(|v| v.sqrt()).collect(),
            ids: snap.ids,
            probs: snap.probs,
            positions,
            centroids: snap.centroids,
            lists: snap.lists,
        };
        if index.content_digest() != expected_digest {
            return Err(Error::StaleSnapshot {
                expected: expected_digest.to_string(),
                found: index.content_digest(),
            });
        }
        Ok(index)
    }
}

/// Content digest of a distribution map, comparable with
/// [`DivergenceIndex::content_digest`].
pub fn content_digest(distributions: &BTreeMap<SampleId, ClassDistribution>) -> String {
    let mut h = Sha256::new();
    let k = distributions.values().next().map_or(0, |d| d.num_classes());
    h.update((k as u64).to_le_bytes());
    for (id, d) in distributions {
        h.update(id.0.to_le_bytes());
        for v in d.probs() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    content_digest: String,
    k: usize,
    config: IndexConfig,
    ids: Vec<SampleId>,
    probs: Vec<f64>,
    centroids: Vec<f64>,
    lists: Vec<Vec<u32>>,
}

/// Lloyd's k-means with seeded random initial centroids; empty clusters keep
/// their previous centroid.
fn kmeans(points: &[f64], k: usize, clusters: usize, iters: usize, seed: u64) -> Vec<f64> {
    let n = points.len() / k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init: Vec<usize> = sample(&mut rng, n, clusters).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<f64> = init
        .iter()
        .flat_map(|&i| points[i * k..(i + 1) * k].iter().copied())
        .collect();

    let mut sums = vec![0.0; clusters * k];
    let mut counts = vec![0usize; clusters];
    for _ in 0..iters {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for z in points.chunks_exact(k) {
            let c = nearest_centroid(z, &centroids, k);
            counts[c] += 1;
            for (s, v) in sums[c * k..(c + 1) * k].iter_mut().zip(z) {
                *s += v;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..k {
                    centroids[c * k + j] = sums[c * k + j] * inv;
                }
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn single_element_pool() {
        let mut m = BTreeMap::new();
        m.insert(SampleId(4), dist(&[0.2, 0.8]));
        let index = DivergenceIndex::build(&m, &IndexConfig::default()).unwrap();
        let (id, _) = index.min_jsd(&dist(&[1.0, 0.0])).unwrap();
        assert_eq!(id, SampleId(4));
    }

    #[test]
    fn empty_pool_rejected() {
        let m = BTreeMap::new();
        assert!(matches!(
            DivergenceIndex::build(&m, &IndexConfig::default()),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn insert_then_query() {
        let mut m = BTreeMap::new();
        m.insert(SampleId(0), dist(&[1.0, 0.0]));
        let mut index = DivergenceIndex::build(&m, &IndexConfig::default()).unwrap();
        index.insert(SampleId(1), &dist(&[0.0, 1.0])).unwrap();
        assert_eq!(index.min_jsd(&dist(&[0.0, 1.0])).unwrap(), (SampleId(1), 0.0));
        assert_eq!(index.min_jsd(&dist(&[1.0, 0.0])).unwrap(), (SampleId(0), 0.0));
        assert_eq!(jsd_unchecked(&[0.0, 1.0], &[1.0, 0.0]), 1.0);
        assert!(matches!(
            index.insert(SampleId(1), &dist(&[0.5, 0.5])),
            Err(Error::DuplicateId(SampleId(1)))
        ));
    }

    #[test]
    fn exhaustive_tie_break_is_lowest_id() {
        let items = [(SampleId(9), &[0.5, 0.5][..]), (SampleId(2), &[0.5, 0.5][..])];
        assert_eq!(min_jsd_exhaustive(&[0.5, 0.5], items), (Some(SampleId(2)), 0.0));
    }
}
