//! Machinery shared by the windowed detectors.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::graph::edge_index;
use crate::stats::{clamp_p1, EdgeCountWindow, LlrParams, SoftThreshold};

/// Added to every pruning bound to absorb rounding in the prefix sums.
pub(crate) const BOUND_SLACK: f64 = 1e-7;

/// Admissible changepoints `[lo, hi]` at time `t`, if any.
#[inline]
pub(crate) fn k_range(t: u64, m0: usize, m1: Option<usize>) -> Option<(u64, u64)> {
    let hi = t.checked_sub(m0 as u64)?;
    let lo = m1.map_or(0, |m| t.saturating_sub(m as u64));
    (lo <= hi).then_some((lo, hi))
}

/// Soft-thresholded edge statistic `h(U)` tabulated by `(tau, count)`.
///
/// Entries are produced by exactly the same arithmetic as a direct evaluation,
/// so tabulated and direct statistics agree bit for bit.
#[derive(Debug)]
pub(crate) struct HTable {
    params: LlrParams,
    h: SoftThreshold,
    max_tau: u64,
    vals: Vec<f64>,
}

/// Widest table built for an unbounded window; longer spans are computed directly.
const UNBOUNDED_TABLE_TAU: u64 = 512;

impl HTable {
    pub(crate) fn new(params: LlrParams, h: SoftThreshold, m1: Option<usize>) -> Self {
        let max_tau = m1.map_or(UNBOUNDED_TABLE_TAU, |m| m as u64);
        let mut vals = Vec::with_capacity(((max_tau + 1) * (max_tau + 2) / 2) as usize);
        for tau in 0..=max_tau {
            for c in 0..=tau {
                vals.push(h.apply(params.llr(c, tau)));
            }
        }
        Self {
            params,
            h,
            max_tau,
            vals,
        }
    }

    #[inline]
    pub(crate) fn get(&self, count: u32, tau: u64) -> f64 {
        if tau <= self.max_tau {
            self.vals[(tau * (tau + 1) / 2) as usize + count as usize]
        } else {
            self.h.apply(self.params.llr(count as u64, tau))
        }
    }
}

/// Edge statistics under either a known p1 or a plug-in estimate shared by
/// all edges at a given `k`.
#[derive(Debug, Clone)]
pub(crate) enum EdgeModel {
    Known { table: Arc<HTable> },
    /// Plug-in p1 estimated over the full edge set.
    Unknown { p0: f64, h: SoftThreshold },
}

impl EdgeModel {
    pub(crate) fn new(p0: f64, p1: Option<f64>, h: SoftThreshold, m1: Option<usize>) -> Self {
        match p1 {
            Some(p1) => EdgeModel::Known {
                table: Arc::new(HTable::new(LlrParams::from_pair(p0, p1), h, m1)),
            },
            None => EdgeModel::Unknown { p0, h },
        }
    }

    /// Fills `out[e] = h(U_e)` for changepoint `k`.
    pub(crate) fn fill_soft(&self, win: &EdgeCountWindow, k: u64, out: &mut [f64]) {
        let t = win.t();
        let tau = t - k;
        let (now, then) = (win.row(t), win.row(k));
        match self {
            EdgeModel::Known { table } => {
                for ((o, &a), &b) in out.iter_mut().zip(now).zip(then) {
                    *o = table.get(a - b, tau);
                }
            }
            EdgeModel::Unknown { p0, h } => match plug_in(win, *p0, k) {
                None => out.iter_mut().for_each(|o| *o = 0.0),
                Some(params) => {
                    for ((o, &a), &b) in out.iter_mut().zip(now).zip(then) {
                        *o = h.apply(params.llr((a - b) as u64, tau));
                    }
                }
            },
        }
    }

    /// Sum of `h(U_e)` over every edge, in canonical edge order.
    pub(crate) fn soft_sum(&self, win: &EdgeCountWindow, k: u64) -> f64 {
        let t = win.t();
        let tau = t - k;
        let (now, then) = (win.row(t), win.row(k));
        match self {
            EdgeModel::Known { table } => now
                .iter()
                .zip(then)
                .map(|(&a, &b)| table.get(a - b, tau))
                .sum(),
            EdgeModel::Unknown { p0, h } => match plug_in(win, *p0, k) {
                None => 0.0,
                Some(params) => now
                    .iter()
                    .zip(then)
                    .map(|(&a, &b)| h.apply(params.llr((a - b) as u64, tau)))
                    .sum(),
            },
        }
    }

    pub(crate) fn table(&self) -> Option<&HTable> {
        match self {
            EdgeModel::Known { table } => Some(table),
            EdgeModel::Unknown { .. } => None,
        }
    }
}

/// LLR constants for the whole-graph plug-in estimate at `k`; `None` when
/// the clamped estimate equals p0 (every edge statistic is then zero).
fn plug_in(win: &EdgeCountWindow, p0: f64, k: u64) -> Option<LlrParams> {
    let tau = win.t() - k;
    if tau == 0 {
        return None;
    }
    let ones = win.total(win.t()) - win.total(k);
    let p_hat = clamp_p1(ones as f64 / (win.n_edges() as u64 * tau) as f64, p0);
    (p_hat > p0).then(|| LlrParams::from_pair(p0, p_hat))
}

/// Per-edge maximum of `U_e(k)` over the admissible window, maintained with
/// a monotone deque over the prefix log-likelihoods `L_e(k)`.
#[derive(Debug, Clone)]
pub(crate) struct EdgeMaxTracker {
    params: LlrParams,
    m0: usize,
    m1: Option<usize>,
    deques: Vec<VecDeque<(u64, f64)>>,
}

impl EdgeMaxTracker {
    pub(crate) fn new(params: LlrParams, n_edges: usize, m0: usize, m1: Option<usize>) -> Self {
        let mut deques = vec![VecDeque::new(); n_edges];
        if m0 == 0 {
            // k = 0 becomes admissible at t = 0 with L(0) = 0
            deques.iter_mut().for_each(|d| d.push_back((0, 0.0)));
        }
        Self {
            params,
            m0,
            m1,
            deques,
        }
    }

    /// Call after the window has absorbed a snapshot.
    pub(crate) fn update(&mut self, win: &EdgeCountWindow) {
        let t = win.t();
        if let Some(k) = t.checked_sub(self.m0 as u64) {
            let row = win.row(k);
            for (d, &c) in self.deques.iter_mut().zip(row) {
                let l = self.params.llr(c as u64, k);
                while d.back().is_some_and(|&(_, v)| v >= l) {
                    d.pop_back();
                }
                d.push_back((k, l));
            }
        }
        if let Some(m1) = self.m1 {
            let lo = t.saturating_sub(m1 as u64);
            for d in &mut self.deques {
                while d.front().is_some_and(|&(k, _)| k < lo) {
                    d.pop_front();
                }
            }
        }
    }

    /// `(count, tau)` at each edge's maximizing changepoint, or `None` when
    /// no changepoint is admissible yet.
    #[inline]
    pub(crate) fn argmax<'a>(
        &'a self,
        win: &'a EdgeCountWindow,
    ) -> impl Iterator<Item = Option<(u32, u64)>> + 'a {
        let t = win.t();
        let now = win.row(t);
        self.deques.iter().enumerate().map(move |(e, d)| {
            d.front()
                .map(|&(k, _)| (now[e] - win.row(k)[e], t - k))
        })
    }

    /// Per-edge maxima of the raw edge statistic.
    pub(crate) fn maxima<'a>(&'a self, win: &'a EdgeCountWindow) -> impl Iterator<Item = f64> + 'a {
        self.argmax(win).map(|a| match a {
            Some((c, tau)) => self.params.llr(c as u64, tau),
            None => f64::NEG_INFINITY,
        })
    }
}

/// All size-`s` node subsets in lexicographic order, with their pair edges.
#[derive(Debug)]
pub(crate) struct Subsets {
    pub(crate) size: usize,
    pub(crate) n_pairs: usize,
    nodes: Vec<usize>,
    edges: Vec<usize>,
}

impl Subsets {
    pub(crate) fn new(n_nodes: usize, size: usize) -> Self {
        let n_pairs = size * (size - 1) / 2;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            nodes.extend_from_slice(&comb);
            for b in 0..size {
                for a in 0..b {
                    edges.push(edge_index(comb[a], comb[b]));
                }
            }
            // advance to the next combination
            let mut i = size;
            loop {
                if i == 0 {
                    return Self {
                        size,
                        n_pairs,
                        nodes,
                        edges,
                    };
                }
                i -= 1;
                if comb[i] < n_nodes - size + i {
                    break;
                }
            }
            comb[i] += 1;
            for j in i + 1..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len() / self.size
    }

    pub(crate) fn nodes(&self, idx: usize) -> &[usize] {
        &self.nodes[idx * self.size..(idx + 1) * self.size]
    }

    #[cfg(test)]
    pub(crate) fn edges(&self, idx: usize) -> &[usize] {
        &self.edges[idx * self.n_pairs..(idx + 1) * self.n_pairs]
    }

    pub(crate) fn all_edges(&self) -> std::slice::ChunksExact<'_, usize> {
        self.edges.chunks_exact(self.n_pairs)
    }
}
