//! Hierarchical navigable small-world graph over cosine distance.
//!
//! Graph payload after the shared rows, little-endian:
//!
//! ```text
//! m u32 | m0 u32 | ef_construction u32 | ef_search u32 | seed u64
//! entry u32 (u32::MAX when empty) | max_level u32
//! count × (level u8 | (level + 1) × (n u32 | n × neighbor u32))
//! ```

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_query, cosine_f32, sort_hits, Hit, Rows, SearchIndex};
use crate::embeddings::{Cursor, EmbeddingStore};
use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Neighbors kept per node above layer 0; layer 0 keeps `2 · m_links`.
    pub m_links: usize,
    pub ef_construction: usize,
    /// Default beam width for [`SearchIndex::search`].
    pub ef_search: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m_links: 16,
            ef_construction: 200,
            ef_search: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    pub(crate) rows: Rows,
    m: usize,
    m0: usize,
    ef_construction: usize,
    pub ef_search: usize,
    seed: u64,
    entry: u32,
    max_level: usize,
    /// `links[node][layer]`, for layers `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
}

/// Distance with a total order and an id tie-break, so heaps are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f32,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    /// True if newly inserted.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

impl HnswIndex {
    fn empty(rows: Rows, params: HnswParams, seed: u64) -> Self {
        let n = rows.len();
        Self {
            rows,
            m: params.m_links,
            m0: 2 * params.m_links,
            ef_construction: params.ef_construction,
            ef_search: params.ef_search,
            seed,
            entry: NONE,
            max_level: 0,
            links: Vec::with_capacity(n),
        }
    }

    pub fn params(&self) -> HnswParams {
        HnswParams {
            m_links: self.m,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
        }
    }

    pub fn entry_point(&self) -> Option<usize> {
        (self.entry != NONE).then_some(self.entry as usize)
    }

    pub fn level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        &self.links[node][layer]
    }

    /// Neighbor cap at `layer`.
    pub fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.m0
        } else {
            self.m
        }
    }

    #[inline]
    fn dist(&self, a: &[f32], b: u32) -> f32 {
        let row = self.rows.row(b as usize);
        let mut s = 0f32;
        for (x, y) in a.iter().zip(row) {
            s += x * y;
        }
        1.0 - s
    }

    #[inline]
    fn dist_nodes(&self, a: u32, b: u32) -> f32 {
        self.dist(self.rows.row(a as usize), b)
    }

    /// Beam search on one layer. The beam keeps expanding until it holds `ef`
    /// entries, so `ef ≥ count` visits every node reachable from `eps`.
    fn search_layer(&self, q: &[f32], eps: &[u32], ef: usize, layer: usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.rows.len());
        let mut candidates = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in eps {
            visited.insert(e);
            let c = Cand { dist: self.dist(q, e), id: e };
            candidates.push(Reverse(c));
            best.push(c);
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if best.len() >= ef && c.dist > best.peek().expect("non-empty").dist {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let nc = Cand { dist: self.dist(q, n), id: n };
                if best.len() < ef || nc < *best.peek().expect("non-empty") {
                    candidates.push(Reverse(nc));
                    best.push(nc);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Neighbor selection heuristic: walk candidates nearest first and keep
    /// one only if it is strictly closer to the base than to every neighbor
    /// kept so far (so exact duplicates of a kept neighbor are skipped).
    /// Free slots are then filled with the skipped candidates, nearest first.
    fn select(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        if sorted.len() <= m {
            return sorted.iter().map(|c| c.id).collect();
        }
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for c in sorted {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|k| self.dist_nodes(c.id, k.id) > c.dist) {
                kept.push(*c);
            } else {
                pruned.push(*c);
            }
        }
        kept.extend(pruned.into_iter().take(m - kept.len()));
        kept.into_iter().map(|c| c.id).collect()
    }

    fn greedy(&self, q: &[f32], mut ep: Cand, layer: usize) -> Cand {
        loop {
            let mut improved = false;
            for &n in &self.links[ep.id as usize][layer] {
                let c = Cand { dist: self.dist(q, n), id: n };
                if c < ep {
                    ep = c;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        if self.entry == NONE {
            self.entry = node;
            self.max_level = level;
            return;
        }
        let q = self.rows.row(node as usize).to_vec();
        let mut ep = Cand {
            dist: self.dist(&q, self.entry),
            id: self.entry,
        };
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut eps = vec![ep.id];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &eps, self.ef_construction, layer);
            let chosen = self.select(&found, self.m);
            for &n in &chosen {
                self.connect(n, node, layer);
            }
            self.links[node as usize][layer] = chosen;
            eps = found.iter().map(|c| c.id).collect();
        }
        if level > self.max_level {
            self.entry = node;
            self.max_level = level;
        }
    }

    /// Adds `to` to the list of `from`, pruning with the heuristic on overflow.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.cap(layer);
        let list = &self.links[from as usize][layer];
        if list.len() < cap {
            self.links[from as usize][layer].push(to);
            return;
        }
        let mut cands: Vec<Cand> = list
            .iter()
            .chain(std::iter::once(&to))
            .map(|&n| Cand {
                dist: self.dist_nodes(from, n),
                id: n,
            })
            .collect();
        cands.sort();
        self.links[from as usize][layer] = self.select(&cands, cap);
    }

    /// Nodes not reachable from the entry point on layer 0 get an in-edge from
    /// their nearest reachable node that still has room, or from the nearest
    /// reachable node outright when every list is full.
    fn repair(&mut self) {
        let n = self.rows.len();
        if n == 0 {
            return;
        }
        loop {
            let mut seen = Visited::new(n);
            let mut reached = vec![false; n];
            let mut stack = vec![self.entry];
            seen.insert(self.entry);
            while let Some(u) = stack.pop() {
                reached[u as usize] = true;
                for &v in &self.links[u as usize][0] {
                    if seen.insert(v) {
                        stack.push(v);
                    }
                }
            }
            let Some(orphan) = (0..n).find(|&i| !reached[i]) else {
                return;
            };
            let orphan = orphan as u32;
            let nearest = |room: bool| {
                (0..n as u32)
                    .filter(|&r| reached[r as usize] && (!room || self.links[r as usize][0].len() < self.m0))
                    .map(|r| Cand {
                        dist: self.dist_nodes(orphan, r),
                        id: r,
                    })
                    .min()
            };
            let host = nearest(true).or_else(|| {
                log::debug!("hnsw: layer 0 full, node {orphan} linked over capacity");
                nearest(false)
            });
            let host = host.expect("the entry point is always reached");
            self.links[host.id as usize][0].push(orphan);
        }
    }

    /// Approximate top `k` with beam width `ef` (raised to `k` if smaller).
    /// Returned scores are exact cosines.
    pub fn search_ef(&self, query: &[f32], k: usize, ef: usize) -> Result<Vec<Hit>> {
        check_query(query, self.rows.dim, k)?;
        if self.entry == NONE {
            return Ok(Vec::new());
        }
        let q = crate::embeddings::l2_normalize(query)?;
        let mut ep = Cand {
            dist: self.dist(&q, self.entry),
            id: self.entry,
        };
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        // The global entry point rides along as a second seed: the repair pass
        // only guarantees layer-0 reachability from it, and with it in the
        // beam `ef >= len` is exhaustive.
        let seeds: &[u32] = if ep.id == self.entry { &[ep.id] } else { &[ep.id, self.entry] };
        let found = self.search_layer(&q, seeds, ef.max(k), 0);
        let scored = found
            .into_iter()
            .map(|c| (c.id as usize, cosine_f32(query, self.rows.row(c.id as usize))))
            .collect();
        Ok(sort_hits(&self.rows.ids, scored, k))
    }

    pub(crate) fn write_graph<W: Write>(&self, w: &mut W) -> Result<()> {
        for v in [self.m, self.m0, self.ef_construction, self.ef_search] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.entry.to_le_bytes())?;
        w.write_all(&(self.max_level as u32).to_le_bytes())?;
        for node in &self.links {
            w.write_all(&[(node.len() - 1) as u8])?;
            for layer in node {
                w.write_all(&(layer.len() as u32).to_le_bytes())?;
                for n in layer {
                    w.write_all(&n.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn read_graph(rows: Rows, c: &mut Cursor<'_>) -> Result<Self> {
        let m = c.u32("m")? as usize;
        let m0 = c.u32("m0")? as usize;
        let ef_construction = c.u32("ef_construction")? as usize;
        let ef_search = c.u32("ef_search")? as usize;
        let seed = u64::from_le_bytes(c.take(8, "seed")?.try_into().unwrap());
        let entry = c.u32("entry")?;
        let max_level = c.u32("max_level")? as usize;
        let n = rows.len();
        if (entry == NONE) != (n == 0) || (entry != NONE && entry as usize >= n) {
            return Err(Error::InvalidArgument("bad hnsw entry point".into()));
        }
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let level = c.u8("level")? as usize;
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let k = c.u32("neighbor count")? as usize;
                let mut list = Vec::with_capacity(k.min(1024));
                for _ in 0..k {
                    let v = c.u32("neighbor")?;
                    if v as usize >= n {
                        return Err(Error::InvalidArgument(format!("neighbor {v} out of range")));
                    }
                    list.push(v);
                }
                node.push(list);
            }
            links.push(node);
        }
        Ok(Self {
            rows,
            m,
            m0,
            ef_construction,
            ef_search,
            seed,
            entry,
            max_level,
            links,
        })
    }
}

impl SearchIndex for HnswIndex {
    fn dim(&self) -> usize {
        self.rows.dim
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn doc_ids(&self) -> &[String] {
        &self.rows.ids
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        self.search_ef(query, k, self.ef_search)
    }
}

/// Builds from `(id, vector)` rows in order. Levels come from a geometric
/// distribution with ratio `1/m_links` drawn from a ChaCha8 stream seeded by
/// `seed`.
pub fn build_hnsw_from_rows<'a>(
    dim: usize,
    rows: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    params: HnswParams,
    seed: u64,
) -> Result<HnswIndex> {
    if params.m_links < 1 || params.ef_construction < 1 || params.ef_search < 1 {
        return Err(Error::InvalidArgument("hnsw parameters must be >= 1".into()));
    }
    let rows = Rows::from_iter(dim, rows)?;
    let n = rows.len();
    let mut index = HnswIndex::empty(rows, params, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ml = 1.0 / (params.m_links.max(2) as f64).ln();
    for node in 0..n {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let level = ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL);
        index.insert(node as u32, level);
    }
    index.repair();
    Ok(index)
}

pub fn build_hnsw(store: &EmbeddingStore, params: HnswParams, seed: u64) -> Result<HnswIndex> {
    build_hnsw_from_rows(store.dim(), store.iter(), params, seed)
}

pub fn search_hnsw(index: &HnswIndex, query: &[f32], k: usize, ef_search: usize) -> Result<Vec<Hit>> {
    index.search_ef(query, k, ef_search)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::StoreKind;
    use crate::retrieval::{build_flat, index_bytes, AnyIndex};
    use rand_distr::StandardNormal;

    fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = EmbeddingStore::new(StoreKind::Text, dim, false);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            s.push(format!("d{i:05}"), &v).unwrap();
        }
        s
    }

    fn reachable(idx: &HnswIndex) -> usize {
        let mut seen = vec![false; idx.len()];
        let mut stack = vec![idx.entry_point().unwrap()];
        seen[stack[0]] = true;
        let mut count = 0;
        while let Some(u) = stack.pop() {
            count += 1;
            for &v in idx.neighbors(u, 0) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v as usize);
                }
            }
        }
        count
    }

    #[test]
    fn single_vector() {
        let s = random_store(1, 4, 0);
        let idx = build_hnsw(&s, HnswParams::default(), 1).unwrap();
        let hits = idx.search(s.row(0), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d00000");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_bytes_and_structure() {
        let s = random_store(500, 8, 3);
        let p = HnswParams {
            m_links: 4,
            ef_construction: 32,
            ef_search: 16,
        };
        let a = build_hnsw(&s, p, 11).unwrap();
        let b = build_hnsw(&s, p, 11).unwrap();
        assert_eq!(index_bytes(&AnyIndex::Hnsw(a.clone())), index_bytes(&AnyIndex::Hnsw(b)));
        assert_eq!(reachable(&a), 500);
        for node in 0..a.len() {
            for layer in 0..=a.level(node) {
                assert!(a.neighbors(node, layer).len() <= a.cap(layer));
            }
        }
    }

    #[test]
    fn exhaustive_beam_equals_flat() {
        let s = random_store(300, 6, 5);
        let p = HnswParams {
            m_links: 3,
            ef_construction: 20,
            ef_search: 10,
        };
        let h = build_hnsw(&s, p, 2).unwrap();
        let f = build_flat(&s).unwrap();
        let queries = random_store(20, 6, 99);
        for (_, q) in queries.iter() {
            assert_eq!(search_hnsw(&h, q, 10, 300).unwrap(), f.search(q, 10).unwrap());
        }
        assert_eq!(h.search(s.row(0), 1000).unwrap().len(), 300);
    }
}
