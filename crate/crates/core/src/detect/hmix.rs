use super::kernel::{k_range, EdgeMaxTracker, EdgeModel, BOUND_SLACK};
use super::{Detector, DetectorConfig, StepReport};
use crate::error::Result;
use crate::graph::{edge_count, edge_index, GraphSnapshot};
use crate::stats::{EdgeCountWindow, LlrParams, SoftThreshold};

/// Sum of `soft[e]` over the pairs of `nodes` (sorted), in canonical edge order.
fn set_value(soft: &[f64], nodes: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (b, &j) in nodes.iter().enumerate() {
        for &i in &nodes[..b] {
            sum += soft[edge_index(i, j)];
        }
    }
    sum
}

/// Greedy backward elimination: start from every node and repeatedly drop the
/// node whose removal leaves the largest pair sum, until `size` nodes remain.
/// Ties drop the smallest node index. Each candidate removal is scored by a
/// full pair sum over the remaining set.
///
/// `soft` holds one value per edge in canonical order. Returns the pair sum
/// of the surviving set and the set itself, sorted.
pub fn greedy_elimination(soft: &[f64], n_nodes: usize, size: usize) -> (f64, Vec<usize>) {
    assert_eq!(soft.len(), edge_count(n_nodes));
    assert!(size >= 1 && size <= n_nodes);
    let mut set: Vec<usize> = (0..n_nodes).collect();
    let mut scratch = Vec::with_capacity(n_nodes);
    while set.len() > size {
        let mut best = f64::NEG_INFINITY;
        let mut drop = 0;
        for pos in 0..set.len() {
            scratch.clear();
            scratch.extend_from_slice(&set[..pos]);
            scratch.extend_from_slice(&set[pos + 1..]);
            let v = set_value(soft, &scratch);
            if v > best {
                best = v;
                drop = pos;
            }
        }
        set.remove(drop);
    }
    (set_value(soft, &set), set)
}

/// Hierarchical mixture: at each changepoint the community is chosen by
/// greedy elimination on the soft-thresholded edge statistics, and the
/// statistic is the best such pair sum over the window.
#[derive(Debug, Clone)]
pub struct HMixDetector {
    window: EdgeCountWindow,
    model: EdgeModel,
    s: usize,
    m0: usize,
    m1: Option<usize>,
    threshold: f64,
    tracker: Option<EdgeMaxTracker>,
}

impl HMixDetector {
    pub fn new(cfg: &DetectorConfig, n_nodes: usize) -> Result<Self> {
        cfg.validate_for(n_nodes)?;
        let h = SoftThreshold::new(cfg.alpha.expect("validated"))?;
        let window = EdgeCountWindow::new(n_nodes, cfg.m1);
        let tracker = cfg.p1.map(|p1| {
            EdgeMaxTracker::new(LlrParams::from_pair(cfg.p0, p1), window.n_edges(), cfg.m0, cfg.m1)
        });
        Ok(Self {
            model: EdgeModel::new(cfg.p0, cfg.p1, h, cfg.m1),
            window,
            s: cfg.s.expect("validated"),
            m0: cfg.m0,
            m1: cfg.m1,
            threshold: cfg.threshold,
            tracker,
        })
    }

    pub fn window(&self) -> &EdgeCountWindow {
        &self.window
    }

    /// `(k, value, set)` for every admissible changepoint, most recent first.
    pub fn per_changepoint(&self) -> Vec<(u64, f64, Vec<usize>)> {
        let t = self.window.t();
        let Some((lo, hi)) = k_range(t, self.m0, self.m1) else {
            return Vec::new();
        };
        let mut soft = vec![0.0; self.window.n_edges()];
        (lo..=hi)
            .rev()
            .map(|k| {
                self.model.fill_soft(&self.window, k, &mut soft);
                let (v, set) = greedy_elimination(&soft, self.window.n_nodes(), self.s);
                (k, v, set)
            })
            .collect()
    }
}

impl Detector for HMixDetector {
    fn n_nodes(&self) -> usize {
        self.window.n_nodes()
    }
    fn t(&self) -> u64 {
        self.window.t()
    }
    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn push(&mut self, g: &GraphSnapshot) -> Result<()> {
        self.window.push(g)?;
        if let Some(tr) = &mut self.tracker {
            tr.update(&self.window);
        }
        Ok(())
    }

    fn evaluate(&self) -> StepReport {
        let t = self.window.t();
        let mut best = f64::NEG_INFINITY;
        let mut arg: Option<(u64, Vec<usize>)> = None;
        if let Some((lo, hi)) = k_range(t, self.m0, self.m1) {
            let mut soft = vec![0.0; self.window.n_edges()];
            for k in (lo..=hi).rev() {
                self.model.fill_soft(&self.window, k, &mut soft);
                let (v, set) = greedy_elimination(&soft, self.window.n_nodes(), self.s);
                if v > best {
                    best = v;
                    arg = Some((k, set));
                }
            }
        }
        let (argmax_k, localized_set) = match arg {
            Some((k, set)) => (Some(k), Some(set)),
            None => (None, None),
        };
        StepReport {
            t,
            statistic: best,
            alarmed: best >= self.threshold,
            argmax_k,
            localized_set,
        }
    }

    fn upper_bound(&self) -> f64 {
        // any s-set sums s(s-1)/2 edges, each at most h at its own best k
        match (&self.tracker, self.model.table()) {
            (Some(tr), Some(table)) => {
                let mut vals = Vec::with_capacity(self.window.n_edges());
                for a in tr.argmax(&self.window) {
                    match a {
                        Some((c, tau)) => vals.push(table.get(c, tau)),
                        None => return f64::NEG_INFINITY,
                    }
                }
                let n_pairs = self.s * (self.s - 1) / 2;
                vals.select_nth_unstable_by(n_pairs - 1, |a, b| b.total_cmp(a));
                vals[..n_pairs].iter().sum::<f64>() + BOUND_SLACK
            }
            _ => f64::INFINITY,
        }
    }
}
