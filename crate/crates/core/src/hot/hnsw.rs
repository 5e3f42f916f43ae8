//! Hierarchical navigable small-world graph over cosine distance.
//!
//! Vectors are expected to be unit-norm, so distance is `1 - dot`. Deleted
//! slots are tombstoned rather than unlinked: they stay navigable but never
//! appear in results. The owner rebuilds the graph once tombstones pile up.
//!
//! Level assignment draws from a seeded ChaCha stream, so the same insertion
//! sequence always produces the same graph.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::dot;

pub type Slot = u32;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x7e4d_0c5e_ed00_0001,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Scored {
    dist: f32,
    slot: Slot,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.slot.cmp(&other.slot))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    dim: usize,
    params: HnswParams,
    vectors: Vec<f32>,
    /// links[slot][layer] for layers 0..=level(slot).
    links: Vec<Vec<Vec<Slot>>>,
    tombstoned: Vec<bool>,
    tombstones: usize,
    entry: Option<Slot>,
    max_level: usize,
    level_mult: f64,
    rng: ChaCha8Rng,
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        assert!(params.m >= 2, "HNSW M must be at least 2");
        Self {
            dim,
            params,
            vectors: Vec::new(),
            links: Vec::new(),
            tombstoned: Vec::new(),
            tombstones: 0,
            entry: None,
            max_level: 0,
            level_mult: 1.0 / (params.m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Total slots, live and tombstoned.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn live_len(&self) -> usize {
        self.len() - self.tombstones
    }

    pub fn tombstone_count(&self) -> usize {
        self.tombstones
    }

    pub fn entry_point(&self) -> Option<Slot> {
        self.entry
    }

    pub fn is_live(&self, slot: Slot) -> bool {
        !self.tombstoned[slot as usize]
    }

    pub fn vector(&self, slot: Slot) -> &[f32] {
        let i = slot as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    pub fn level(&self, slot: Slot) -> usize {
        self.links[slot as usize].len() - 1
    }

    pub fn neighbors(&self, slot: Slot, layer: usize) -> &[Slot] {
        self.links[slot as usize]
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn dist_to(&self, query: &[f32], slot: Slot) -> f32 {
        1.0 - dot(query, self.vector(slot))
    }

    fn dist_between(&self, a: Slot, b: Slot) -> f32 {
        1.0 - dot(self.vector(a), self.vector(b))
    }

    fn random_level(&mut self) -> usize {
        let u: f64 = 1.0 - self.rng.random::<f64>();
        ((-u.ln() * self.level_mult).floor() as usize).min(MAX_LEVEL)
    }

    /// Insert a vector; returns its slot.
    pub fn insert(&mut self, vector: &[f32]) -> Slot {
        assert_eq!(vector.len(), self.dim, "vector dimension mismatch");
        let slot = self.links.len() as Slot;
        let level = self.random_level();
        self.vectors.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);
        self.tombstoned.push(false);

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            self.max_level = level;
            return slot;
        };

        let mut ep = Scored {
            dist: self.dist_to(vector, entry),
            slot: entry,
        };
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(vector, ep, layer);
        }

        let mut visited = vec![false; self.len()];
        let mut entry_points = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            visited.iter_mut().for_each(|v| *v = false);
            let found =
                self.search_layer(vector, &entry_points, self.params.ef_construction, layer, &mut visited);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[slot as usize][layer] = chosen.iter().map(|s| s.slot).collect();
            for n in chosen {
                self.link_back(n.slot, slot, layer);
            }
            entry_points = found;
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
        slot
    }

    fn link_back(&mut self, node: Slot, new: Slot, layer: usize) {
        let cap = self.max_degree(layer);
        let list = &mut self.links[node as usize][layer];
        list.push(new);
        if list.len() <= cap {
            return;
        }
        let mut cands: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&s| Scored {
                dist: self.dist_between(node, s),
                slot: s,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[node as usize][layer] = kept.into_iter().map(|s| s.slot).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept, then top up with the closest
    /// pruned candidates. `cands` must be sorted by ascending distance.
    fn select_neighbors(&self, cands: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in cands {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|k| self.dist_between(c.slot, k.slot) > c.dist) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy_closest(&self, query: &[f32], mut best: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in self.neighbors(best.slot, layer) {
                let d = self.dist_to(query, n);
                if d < best.dist {
                    best = Scored { dist: d, slot: n };
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nearest (tombstoned
    /// included), sorted ascending by distance.
    fn search_layer(
        &self,
        query: &[f32],
        entry_points: &[Scored],
        ef: usize,
        layer: usize,
        visited: &mut [bool],
    ) -> Vec<Scored> {
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();
        for &ep in entry_points {
            if !visited[ep.slot as usize] {
                visited[ep.slot as usize] = true;
                candidates.push(Reverse(ep));
                results.push(ep);
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            let worst = results.peek().map(|s| s.dist).unwrap_or(f32::INFINITY);
            if c.dist > worst && results.len() >= ef {
                break;
            }
            for &n in self.neighbors(c.slot, layer) {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let d = self.dist_to(query, n);
                let worst = results.peek().map(|s| s.dist).unwrap_or(f32::INFINITY);
                if results.len() < ef || d < worst {
                    let s = Scored { dist: d, slot: n };
                    candidates.push(Reverse(s));
                    results.push(s);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    fn search_once(&self, query: &[f32], ef: usize) -> Vec<Scored> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut ep = Scored {
            dist: self.dist_to(query, entry),
            slot: entry,
        };
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(query, ep, layer);
        }
        let mut visited = vec![false; self.len()];
        self.search_layer(query, &[ep], ef, 0, &mut visited)
    }

    /// Approximate nearest live slots as `(slot, cosine similarity)`, best first.
    /// Returns at least `min(k, live_len)` results (and up to `max(ef, k)`).
    pub fn search(&self, query: &[f32], k: usize) -> Vec<(Slot, f32)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let want = k.min(self.live_len());
        if want == 0 {
            return Vec::new();
        }
        let mut ef = self.params.ef_search.max(k);
        loop {
            let live: Vec<(Slot, f32)> = self
                .search_once(query, ef)
                .into_iter()
                .filter(|s| self.is_live(s.slot))
                .map(|s| (s.slot, 1.0 - s.dist))
                .collect();
            if live.len() >= want {
                return live;
            }
            if ef >= self.len() {
                return self.exhaustive(query);
            }
            ef = (ef * 2).min(self.len());
        }
    }

    /// Every live slot, best first. Used when tombstones starve the beam.
    pub fn exhaustive(&self, query: &[f32]) -> Vec<(Slot, f32)> {
        let mut all: Vec<Scored> = (0..self.len() as Slot)
            .filter(|&s| self.is_live(s))
            .map(|s| Scored {
                dist: self.dist_to(query, s),
                slot: s,
            })
            .collect();
        all.sort();
        all.into_iter().map(|s| (s.slot, 1.0 - s.dist)).collect()
    }

    /// Returns false if the slot was already tombstoned.
    pub fn tombstone(&mut self, slot: Slot) -> bool {
        let t = &mut self.tombstoned[slot as usize];
        if *t {
            return false;
        }
        *t = true;
        self.tombstones += 1;
        true
    }

    /// Live slots reachable from the entry point over layer-0 edges.
    pub fn reachable_live_from_entry(&self) -> usize {
        let Some(entry) = self.entry else { return 0 };
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([entry]);
        seen[entry as usize] = true;
        let mut live = 0;
        while let Some(s) = queue.pop_front() {
            if self.is_live(s) {
                live += 1;
            }
            for &n in self.neighbors(s, 0) {
                if !seen[n as usize] {
                    seen[n as usize] = true;
                    queue.push_back(n);
                }
            }
        }
        live
    }
}
