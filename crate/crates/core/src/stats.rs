//! Per-edge and per-subset likelihood statistics.
//!
//! Everything here is computed from cumulative edge counts held in an
//! [`EdgeCountWindow`]; snapshots are never re-scanned.

use crate::error::{check_open_unit, invalid, Error, Result};
use crate::graph::{edge_count, edge_index, GraphSnapshot};

/// Upper clamp of the plug-in p1 estimate is `1 - P1_CEILING_EPS`.
pub const P1_CEILING_EPS: f64 = 1e-6;

/// Log-likelihood-ratio constants for a pre/post edge probability pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrParams {
    p0: f64,
    p1: f64,
    /// log(p1 / p0)
    c0: f64,
    /// log((1 - p1) / (1 - p0))
    c1: f64,
}

impl LlrParams {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        check_open_unit("p0", p0)?;
        check_open_unit("p1", p1)?;
        if p1 <= p0 {
            return Err(invalid("p1", format!("{p1} must exceed p0 = {p0}")));
        }
        Ok(Self::from_pair(p0, p1))
    }

    /// Constants for a plug-in estimate `p1 >= p0`; equality gives the zero
    /// statistic.
    pub(crate) fn from_pair(p0: f64, p1: f64) -> Self {
        Self {
            p0,
            p1,
            c0: (p1 / p0).ln(),
            c1: ((1.0 - p1) / (1.0 - p0)).ln(),
        }
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Log-likelihood ratio of `ones` successes in `trials` Bernoulli draws,
    /// i.e. `(c0 - c1) * ones + trials * c1`.
    #[inline]
    pub fn llr(&self, ones: u64, trials: u64) -> f64 {
        debug_assert!(ones <= trials);
        ones as f64 * self.c0 + (trials - ones) as f64 * self.c1
    }
}

/// Ring buffer of cumulative per-edge counts `C_t(e) = sum_{m <= t} X_m(e)`.
///
/// With a span of `m1` the counts for every `k` in `[t - m1, t]` are retained,
/// so any windowed sum `C_t - C_k` costs one subtraction. A span of `None`
/// retains the whole history. Each row also carries the total over all edges.
#[derive(Debug, Clone)]
pub struct EdgeCountWindow {
    n_nodes: usize,
    n_edges: usize,
    span: Option<usize>,
    rows: Vec<u32>,
    totals: Vec<u64>,
    t: u64,
}

impl EdgeCountWindow {
    pub fn new(n_nodes: usize, span: Option<usize>) -> Self {
        let n_edges = edge_count(n_nodes);
        let slots = span.map_or(1, |m| m + 1);
        Self {
            n_nodes,
            n_edges,
            span,
            rows: vec![0; slots * n_edges],
            totals: vec![0; slots],
            t: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }
    pub fn span(&self) -> Option<usize> {
        self.span
    }
    /// Number of snapshots pushed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Oldest changepoint hypothesis still answerable.
    pub fn oldest(&self) -> u64 {
        match self.span {
            Some(m) => self.t.saturating_sub(m as u64),
            None => 0,
        }
    }

    #[inline]
    fn slot(&self, k: u64) -> usize {
        match self.span {
            Some(m) => (k % (m as u64 + 1)) as usize,
            None => k as usize,
        }
    }

    pub fn push(&mut self, g: &GraphSnapshot) -> Result<()> {
        if g.n_nodes() != self.n_nodes {
            return Err(Error::NodeCountMismatch {
                expected: self.n_nodes,
                got: g.n_nodes(),
            });
        }
        let prev = self.slot(self.t);
        let next_t = self.t + 1;
        if self.span.is_none() {
            self.rows.extend_from_within(prev * self.n_edges..(prev + 1) * self.n_edges);
            self.totals.push(self.totals[prev]);
        } else {
            let next = self.slot(next_t);
            self.rows
                .copy_within(prev * self.n_edges..(prev + 1) * self.n_edges, next * self.n_edges);
            self.totals[next] = self.totals[prev];
        }
        let next = self.slot(next_t);
        let row = &mut self.rows[next * self.n_edges..(next + 1) * self.n_edges];
        let mut added = 0u64;
        for e in g.edge_indices() {
            row[e] += 1;
            added += 1;
        }
        self.totals[next] += added;
        self.t = next_t;
        Ok(())
    }

    pub fn check_k(&self, k: u64) -> Result<()> {
        if k > self.t || k < self.oldest() {
            Err(Error::OutOfWindow {
                k,
                oldest: self.oldest(),
                t: self.t,
            })
        } else {
            Ok(())
        }
    }

    /// Cumulative counts `C_k` for every edge; `k` must be retained.
    #[inline]
    pub(crate) fn row(&self, k: u64) -> &[u32] {
        debug_assert!(self.check_k(k).is_ok());
        let s = self.slot(k);
        &self.rows[s * self.n_edges..(s + 1) * self.n_edges]
    }

    #[inline]
    pub(crate) fn total(&self, k: u64) -> u64 {
        self.totals[self.slot(k)]
    }

    /// `sum_{m = k+1}^{t} X_m(e)` for edge index `e`.
    pub fn windowed_count(&self, e: usize, k: u64) -> Result<u32> {
        self.check_k(k)?;
        Ok(self.row(self.t)[e] - self.row(k)[e])
    }

    /// Windowed count summed over every edge of the graph.
    pub fn windowed_total(&self, k: u64) -> Result<u64> {
        self.check_k(k)?;
        Ok(self.total(self.t) - self.total(k))
    }
}

fn validate_set(nodes: &[usize], n_nodes: usize) -> Result<()> {
    if nodes.len() < 2 {
        return Err(Error::SetTooSmall(nodes.len()));
    }
    for (a, &i) in nodes.iter().enumerate() {
        if i >= n_nodes {
            return Err(Error::NodeOutOfRange { index: i, n_nodes });
        }
        if nodes[..a].contains(&i) {
            return Err(invalid("nodes", format!("node {i} repeated")));
        }
    }
    Ok(())
}

/// Pair edge indices of `nodes`, outer loop over the later member so that a
/// sorted full node set yields canonical edge order.
pub(crate) fn pairs(nodes: &[usize]) -> impl Iterator<Item = usize> + '_ {
    nodes
        .iter()
        .enumerate()
        .flat_map(move |(b, &j)| nodes[..b].iter().map(move |&i| edge_index(i, j)))
}

/// Edge statistic `U_{k,t}` for the pair `(i, j)`.
pub fn u_stat(win: &EdgeCountWindow, params: &LlrParams, i: usize, j: usize, k: u64) -> Result<f64> {
    validate_set(&[i, j], win.n_nodes)?;
    let count = win.windowed_count(edge_index(i, j), k)?;
    Ok(params.llr(count as u64, win.t - k))
}

/// Community log-likelihood ratio: the sum of `U_{k,t}` over all pairs of `nodes`.
pub fn community_llr(
    win: &EdgeCountWindow,
    params: &LlrParams,
    nodes: &[usize],
    k: u64,
) -> Result<f64> {
    validate_set(nodes, win.n_nodes)?;
    win.check_k(k)?;
    let (now, then) = (win.row(win.t), win.row(k));
    let tau = win.t - k;
    Ok(pairs(nodes)
        .map(|e| params.llr((now[e] - then[e]) as u64, tau))
        .sum())
}

/// Maximum-likelihood estimate of p1 over a node set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleEstimate {
    /// Estimate clamped to `[p0, 1 - P1_CEILING_EPS]`.
    pub clamped: f64,
    /// Unclamped fraction of present pair-observations.
    pub raw: f64,
}

/// Clamps a raw p1 estimate to `[p0, 1 - P1_CEILING_EPS]`.
#[inline]
pub fn clamp_p1(raw: f64, p0: f64) -> f64 {
    raw.clamp(p0, 1.0 - P1_CEILING_EPS)
}

pub fn mle_p1(win: &EdgeCountWindow, p0: f64, nodes: &[usize], k: u64) -> Result<MleEstimate> {
    validate_set(nodes, win.n_nodes)?;
    win.check_k(k)?;
    if k == win.t {
        return Err(Error::EmptyWindow(k));
    }
    let (now, then) = (win.row(win.t), win.row(k));
    let ones: u64 = pairs(nodes).map(|e| (now[e] - then[e]) as u64).sum();
    let n = nodes.len() as f64;
    let raw = 2.0 * ones as f64 / (n * (n - 1.0) * (win.t - k) as f64);
    Ok(MleEstimate {
        clamped: clamp_p1(raw, p0),
        raw,
    })
}

/// Log-likelihood ratio with p1 replaced by its clamped estimate from the
/// same counts. Nonnegative; zero whenever the raw estimate is at most p0.
pub fn plug_in_llr(ones: u64, trials: u64, p0: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let p_hat = clamp_p1(ones as f64 / trials as f64, p0);
    if p_hat <= p0 {
        return 0.0;
    }
    LlrParams::from_pair(p0, p_hat).llr(ones, trials)
}

/// The mixture soft threshold `h(x) = log(1 - alpha + alpha e^x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftThreshold {
    alpha: f64,
    ln_alpha: f64,
    /// (1 - alpha) / alpha
    odds: f64,
}

impl SoftThreshold {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid("alpha", format!("{alpha} is not in (0, 1]")));
        }
        Ok(Self {
            alpha,
            ln_alpha: alpha.ln(),
            odds: (1.0 - alpha) / alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if self.alpha == 1.0 {
            x
        } else if x <= 0.0 {
            (self.alpha * x.exp_m1()).ln_1p()
        } else {
            x + self.ln_alpha + (self.odds * (-x).exp()).ln_1p()
        }
    }

    /// `h'(x) = alpha e^x / (1 - alpha + alpha e^x)`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + self.odds * (-x).exp())
        } else {
            let ex = x.exp();
            self.alpha * ex / (1.0 - self.alpha + self.alpha * ex)
        }
    }
}

pub fn soft_threshold_h(x: f64, alpha: f64) -> Result<f64> {
    Ok(SoftThreshold::new(alpha)?.apply(x))
}

/// Mixture statistic `M(S0)`: the soft-thresholded edge statistics summed over
/// all pairs of `nodes`.
pub fn mixture_stat(
    win: &EdgeCountWindow,
    params: &LlrParams,
    nodes: &[usize],
    k: u64,
    h: &SoftThreshold,
) -> Result<f64> {
    validate_set(nodes, win.n_nodes)?;
    win.check_k(k)?;
    let (now, then) = (win.row(win.t), win.row(k));
    let tau = win.t - k;
    Ok(pairs(nodes)
        .map(|e| h.apply(params.llr((now[e] - then[e]) as u64, tau)))
        .sum())
}
