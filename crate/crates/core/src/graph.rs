//! Graph snapshots and the random-graph stream generator.
//!
//! Edges are addressed by a canonical index over the strict lower triangle:
//! the pair `(i, j)` with `i < j` lives at `j * (j - 1) / 2 + i`. The index
//! does not depend on the node count, so `(0, 1), (0, 2), (1, 2), (0, 3), ...`
//! keep their position when the graph grows. Nodes are 0-based.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, invalid, Error, Result};

/// Number of unordered pairs over `n_nodes` nodes.
#[inline]
pub const fn edge_count(n_nodes: usize) -> usize {
    n_nodes * n_nodes.saturating_sub(1) / 2
}

/// Canonical index of the unordered pair `{i, j}`. Panics on `i == j`.
#[inline]
pub fn edge_index(i: usize, j: usize) -> usize {
    assert_ne!(i, j, "self-loops have no edge index");
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    hi * (hi - 1) / 2 + lo
}

/// Inverse of [`edge_index`]: returns `(i, j)` with `i < j`.
pub fn edge_endpoints(index: usize) -> (usize, usize) {
    // hi is the largest integer with hi * (hi - 1) / 2 <= index
    let mut hi = ((1.0 + (1.0 + 8.0 * index as f64).sqrt()) / 2.0) as usize;
    while hi * (hi - 1) / 2 > index {
        hi -= 1;
    }
    while (hi + 1) * hi / 2 <= index {
        hi += 1;
    }
    (index - hi * (hi - 1) / 2, hi)
}

/// Symmetric binary adjacency of one time step, stored as a bitset over the
/// strict lower triangle.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GraphSnapshot {
    n_nodes: usize,
    bits: Vec<u64>,
}

impl GraphSnapshot {
    pub fn empty(n_nodes: usize) -> Self {
        let words = edge_count(n_nodes).div_ceil(64);
        Self {
            n_nodes,
            bits: vec![0; words],
        }
    }

    /// Complete graph on `n_nodes` nodes.
    pub fn complete(n_nodes: usize) -> Self {
        let mut g = Self::empty(n_nodes);
        for e in 0..edge_count(n_nodes) {
            g.set_index(e, true);
        }
        g
    }

    /// Builds a snapshot from a list of pairs. Pairs may be given in either
    /// orientation; duplicates collapse.
    pub fn from_edges<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(n_nodes);
        for (i, j) in edges {
            g.insert(i, j)?;
        }
        Ok(g)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn insert(&mut self, i: usize, j: usize) -> Result<()> {
        self.check_pair(i, j)?;
        self.set_index(edge_index(i, j), true);
        Ok(())
    }

    /// Membership query. Out-of-range nodes and self-loops are never present.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && i < self.n_nodes && j < self.n_nodes && self.contains_index(edge_index(i, j))
    }

    #[inline]
    pub fn contains_index(&self, e: usize) -> bool {
        (self.bits[e >> 6] >> (e & 63)) & 1 == 1
    }

    #[inline]
    pub(crate) fn set_index(&mut self, e: usize, on: bool) {
        let mask = 1u64 << (e & 63);
        if on {
            self.bits[e >> 6] |= mask;
        } else {
            self.bits[e >> 6] &= !mask;
        }
    }

    pub(crate) fn clear(&mut self) {
        self.bits.iter_mut().for_each(|w| *w = 0);
    }

    /// Number of present edges.
    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Present edges as `(i, j)` with `i < j`, in canonical index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_indices().map(edge_endpoints)
    }

    /// Canonical indices of the present edges, ascending.
    pub fn edge_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + b)
            })
        })
    }

    /// Applies the node relabeling `perm` (`old -> perm[old]`).
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(invalid("perm", "length differs from node count"));
        }
        Self::from_edges(self.n_nodes, self.edges().map(|(i, j)| (perm[i], perm[j])))
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        for x in [i, j] {
            if x >= self.n_nodes {
                return Err(Error::NodeOutOfRange {
                    index: x,
                    n_nodes: self.n_nodes,
                });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        Ok(())
    }
}

impl fmt::Debug for GraphSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GraphSnapshot")
            .field("n_nodes", &self.n_nodes)
            .field("edges", &self.edges().collect::<Vec<_>>())
            .finish()
    }
}

/// How the post-change edge set was declared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActiveSet {
    /// Clique over a node subset.
    Community(Vec<usize>),
    /// Arbitrary pairs, e.g. a false community that is not a clique.
    Edges(Vec<(usize, usize)>),
}

/// Generative description of a snapshot stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    n_nodes: usize,
    p0: f64,
    p1: f64,
    changepoint: Option<u64>,
    active: ActiveSet,
    active_mask: GraphSnapshot,
}

impl ScenarioSpec {
    /// Validates and builds a scenario. `changepoint = None` means no change
    /// ever happens. Edges in the active set fire with `p1` for `t > changepoint`.
    pub fn new(
        n_nodes: usize,
        p0: f64,
        p1: f64,
        changepoint: Option<u64>,
        active: ActiveSet,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(invalid("n_nodes", "must be positive"));
        }
        check_unit("p0", p0)?;
        check_unit("p1", p1)?;
        if p1 < p0 {
            return Err(invalid("p1", format!("{p1} is below p0 = {p0}")));
        }
        let active_mask = match &active {
            ActiveSet::Community(nodes) => {
                let mut sorted = nodes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != nodes.len() {
                    return Err(invalid("community", "repeated node"));
                }
                if let Some(&bad) = sorted.iter().find(|&&v| v >= n_nodes) {
                    return Err(invalid(
                        "community",
                        format!("node {bad} out of range for {n_nodes} nodes"),
                    ));
                }
                let mut g = GraphSnapshot::empty(n_nodes);
                for (a, &i) in sorted.iter().enumerate() {
                    for &j in &sorted[a + 1..] {
                        g.insert(i, j).expect("validated");
                    }
                }
                g
            }
            ActiveSet::Edges(pairs) => GraphSnapshot::from_edges(n_nodes, pairs.iter().copied())
                .map_err(|e| invalid("active_edges", e.to_string()))?,
        };
        Ok(Self {
            n_nodes,
            p0,
            p1,
            changepoint,
            active,
            active_mask,
        })
    }

    /// Pure null stream: no change ever.
    pub fn null(n_nodes: usize, p0: f64) -> Result<Self> {
        Self::new(n_nodes, p0, p0, None, ActiveSet::Edges(Vec::new()))
    }

    /// Clique community `nodes` that switches on after `changepoint`.
    pub fn community(
        n_nodes: usize,
        p0: f64,
        p1: f64,
        changepoint: Option<u64>,
        nodes: Vec<usize>,
    ) -> Result<Self> {
        Self::new(n_nodes, p0, p1, changepoint, ActiveSet::Community(nodes))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn p0(&self) -> f64 {
        self.p0
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn changepoint(&self) -> Option<u64> {
        self.changepoint
    }
    pub fn active(&self) -> &ActiveSet {
        &self.active
    }
    /// Post-change edges as a snapshot-shaped mask.
    pub fn active_edges(&self) -> &GraphSnapshot {
        &self.active_mask
    }

    /// True when the active set is a clique over some node subset.
    pub fn is_community(&self) -> bool {
        matches!(self.active, ActiveSet::Community(_))
    }

    /// Same scenario with a different changepoint.
    pub fn with_changepoint(&self, changepoint: Option<u64>) -> Self {
        Self {
            changepoint,
            ..self.clone()
        }
    }

    /// Same scenario with nodes relabeled `old -> perm[old]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let active = match &self.active {
            ActiveSet::Community(nodes) => {
                ActiveSet::Community(nodes.iter().map(|&v| perm[v]).collect())
            }
            ActiveSet::Edges(pairs) => {
                ActiveSet::Edges(pairs.iter().map(|&(i, j)| (perm[i], perm[j])).collect())
            }
        };
        Self::new(self.n_nodes, self.p0, self.p1, self.changepoint, active)
    }

    #[inline]
    fn changed_at(&self, t: u64) -> bool {
        self.changepoint.is_some_and(|k| t > k)
    }
}

/// A uniform draw in [0, 1) with 53 bits of precision.
#[inline]
fn to_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Counter-based randomness: the draw for `(seed, t, key)` is the `key`-th
/// 64-bit word of ChaCha8 stream `t` under `seed`.
pub fn edge_uniform(seed: u64, t: u64, key: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    rng.set_word_pos(2 * key as u128);
    to_unit(rng.next_u64())
}

/// Samples snapshot `t` (1-based). Edge `(i, j)` is present with probability
/// `p1` if `t > changepoint` and the pair is active, else `p0`. The result is
/// a pure function of `(spec, t, seed)`.
pub fn sample_snapshot(spec: &ScenarioSpec, t: u64, seed: u64) -> GraphSnapshot {
    let mut out = GraphSnapshot::empty(spec.n_nodes);
    Sampler::new(seed).fill(spec, t, &mut out);
    out
}

/// Like [`sample_snapshot`] but with the draw for pair `(i, j)` taken from
/// counter position `key(i, j)` instead of the pair's canonical index.
pub fn sample_snapshot_keyed<F>(spec: &ScenarioSpec, t: u64, seed: u64, key: F) -> GraphSnapshot
where
    F: Fn(usize, usize) -> u64,
{
    let changed = spec.changed_at(t);
    let mut out = GraphSnapshot::empty(spec.n_nodes);
    for e in 0..edge_count(spec.n_nodes) {
        let (i, j) = edge_endpoints(e);
        let p = if changed && spec.active_mask.contains_index(e) {
            spec.p1
        } else {
            spec.p0
        };
        if edge_uniform(seed, t, key(i, j)) < p {
            out.set_index(e, true);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Sampler {
    base: ChaCha8Rng,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn fill(&self, spec: &ScenarioSpec, t: u64, out: &mut GraphSnapshot) {
        let mut rng = self.base.clone();
        rng.set_stream(t);
        rng.set_word_pos(0);
        out.clear();
        let changed = spec.changed_at(t);
        for e in 0..edge_count(spec.n_nodes) {
            let p = if changed && spec.active_mask.contains_index(e) {
                spec.p1
            } else {
                spec.p0
            };
            if to_unit(rng.next_u64()) < p {
                out.set_index(e, true);
            }
        }
    }
}

/// Sequential reader over a scenario. The n-th call to [`StreamHandle::next_snapshot`]
/// returns `sample_snapshot(spec, n, seed)`.
#[derive(Debug, Clone)]
pub struct StreamHandle {
    scenario: ScenarioSpec,
    seed: u64,
    position: u64,
    sampler: Sampler,
}

impl StreamHandle {
    pub fn new(scenario: ScenarioSpec, seed: u64) -> Self {
        Self {
            scenario,
            seed,
            position: 0,
            sampler: Sampler::new(seed),
        }
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    /// Index of the last snapshot handed out (0 before the first call).
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_snapshot(&mut self) -> GraphSnapshot {
        let mut out = GraphSnapshot::empty(self.scenario.n_nodes);
        self.next_into(&mut out);
        out
    }

    /// Writes the next snapshot into `out`, reusing its storage.
    pub fn next_into(&mut self, out: &mut GraphSnapshot) {
        self.position += 1;
        if out.n_nodes != self.scenario.n_nodes {
            *out = GraphSnapshot::empty(self.scenario.n_nodes);
        }
        self.sampler.fill(&self.scenario, self.position, out);
    }
}

impl Iterator for StreamHandle {
    type Item = GraphSnapshot;

    fn next(&mut self) -> Option<GraphSnapshot> {
        Some(self.next_snapshot())
    }
}

/// Scenario file contents: a scenario plus its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n_nodes: usize,
    pub p0: f64,
    pub p1: f64,
    #[serde(default)]
    pub changepoint: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub community: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn to_spec(&self) -> Result<ScenarioSpec> {
        let active = match (&self.community, &self.active_edges) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "community",
                    "give either `community` or `active_edges`, not both",
                ))
            }
            (Some(c), None) => ActiveSet::Community(c.clone()),
            (None, Some(e)) => ActiveSet::Edges(e.clone()),
            (None, None) => ActiveSet::Edges(Vec::new()),
        };
        ScenarioSpec::new(self.n_nodes, self.p0, self.p1, self.changepoint, active)
    }

    pub fn from_spec(spec: &ScenarioSpec, seed: u64) -> Self {
        let (community, active_edges) = match spec.active() {
            ActiveSet::Community(c) => (Some(c.clone()), None),
            ActiveSet::Edges(e) => (None, Some(e.clone())),
        };
        Self {
            n_nodes: spec.n_nodes(),
            p0: spec.p0(),
            p1: spec.p1(),
            changepoint: spec.changepoint(),
            community,
            active_edges,
            seed,
        }
    }
}

/// One line of a JSON Lines stream file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub t: u64,
    pub edges: Vec<(usize, usize)>,
}

impl StreamRecord {
    pub fn from_snapshot(t: u64, g: &GraphSnapshot) -> Self {
        Self {
            t,
            edges: g.edges().collect(),
        }
    }

    pub fn to_snapshot(&self, n_nodes: usize) -> Result<GraphSnapshot> {
        for &(i, j) in &self.edges {
            if i >= j {
                return Err(invalid("edges", format!("pair ({i}, {j}) must have i < j")));
            }
        }
        GraphSnapshot::from_edges(n_nodes, self.edges.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_index_roundtrip() {
        for e in 0..5000 {
            let (i, j) = edge_endpoints(e);
            assert!(i < j);
            assert_eq!(edge_index(i, j), e);
            assert_eq!(edge_index(j, i), e);
        }
        assert_eq!(edge_endpoints(0), (0, 1));
        assert_eq!(edge_endpoints(1), (0, 2));
        assert_eq!(edge_endpoints(2), (1, 2));
    }

    #[test]
    fn snapshot_membership() {
        let g = GraphSnapshot::from_edges(5, [(3, 1), (0, 4), (1, 3)]).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.contains(1, 3) && g.contains(3, 1));
        assert!(!g.contains(2, 2));
        assert!(!g.contains(0, 9));
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 3), (0, 4)]);
        assert!(GraphSnapshot::from_edges(5, [(2, 2)]).is_err());
        assert!(GraphSnapshot::from_edges(5, [(2, 5)]).is_err());
    }

    #[test]
    fn degenerate_probabilities() {
        let empty = ScenarioSpec::null(7, 0.0).unwrap();
        let full = ScenarioSpec::null(7, 1.0).unwrap();
        for t in 1..50 {
            assert!(sample_snapshot(&empty, t, 3).is_empty());
            assert_eq!(sample_snapshot(&full, t, 3), GraphSnapshot::complete(7));
        }
    }

    #[test]
    fn scenario_validation() {
        assert!(ScenarioSpec::null(4, -0.1).is_err());
        assert!(ScenarioSpec::null(4, f64::NAN).is_err());
        assert!(ScenarioSpec::community(4, 0.3, 0.2, Some(1), vec![0, 1]).is_err());
        assert!(ScenarioSpec::community(4, 0.3, 0.8, Some(1), vec![0, 4]).is_err());
        assert!(ScenarioSpec::community(4, 0.3, 0.8, Some(1), vec![0, 0]).is_err());
        assert!(ScenarioSpec::new(4, 0.3, 0.8, None, ActiveSet::Edges(vec![(1, 1)])).is_err());
        let s = ScenarioSpec::community(6, 0.3, 0.8, Some(5), vec![2, 0, 4]).unwrap();
        let active: Vec<_> = s.active_edges().edges().collect();
        assert_eq!(active, vec![(0, 2), (0, 4), (2, 4)]);
    }

    #[test]
    fn keyed_sampling_matches_sequential() {
        let spec = ScenarioSpec::community(9, 0.4, 0.7, Some(3), vec![1, 5, 6]).unwrap();
        for t in 1..8 {
            let a = sample_snapshot(&spec, t, 99);
            let b = sample_snapshot_keyed(&spec, t, 99, |i, j| edge_index(i, j) as u64);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stream_matches_pure_sampler() {
        let spec = ScenarioSpec::null(6, 0.5).unwrap();
        let mut h = StreamHandle::new(spec.clone(), 17);
        for t in 1..=20 {
            assert_eq!(h.next_snapshot(), sample_snapshot(&spec, t, 17));
            assert_eq!(h.position(), t);
        }
    }

    #[test]
    fn scenario_file_both_sets_rejected() {
        let f = ScenarioFile {
            n_nodes: 4,
            p0: 0.1,
            p1: 0.5,
            changepoint: None,
            community: Some(vec![0, 1]),
            active_edges: Some(vec![(0, 1)]),
            seed: 0,
        };
        assert!(f.to_spec().is_err());
    }

    #[test]
    fn stream_record_rejects_unordered_pairs() {
        let r = StreamRecord {
            t: 1,
            edges: vec![(2, 1)],
        };
        assert!(r.to_snapshot(3).is_err());
    }
}
