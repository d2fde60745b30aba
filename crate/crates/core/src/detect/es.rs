use std::sync::Arc;

use super::kernel::{k_range, EdgeMaxTracker, Subsets, BOUND_SLACK};
use super::{Detector, DetectorConfig, StepReport};
use crate::error::{Error, Result};
use crate::graph::GraphSnapshot;
use crate::stats::{plug_in_llr, EdgeCountWindow, LlrParams};

/// Exhaustive search over every size-`s` node subset and every admissible
/// changepoint.
///
/// With p1 known the community statistic at a fixed `k` depends on the subset
/// only through its windowed edge count, so the best subset is the one with
/// the most observed edges. The same holds for the plug-in statistic, which
/// is nondecreasing in that count.
#[derive(Debug, Clone)]
pub struct EsDetector {
    window: EdgeCountWindow,
    llr: Option<LlrParams>,
    p0: f64,
    m0: usize,
    m1: Option<usize>,
    threshold: f64,
    subsets: Arc<Subsets>,
    tracker: Option<EdgeMaxTracker>,
}

impl EsDetector {
    pub fn new(cfg: &DetectorConfig, n_nodes: usize) -> Result<Self> {
        cfg.validate_for(n_nodes)?;
        let s = cfg.s.expect("validated");
        let window = EdgeCountWindow::new(n_nodes, cfg.m1);
        let llr = cfg.p1.map(|p1| LlrParams::from_pair(cfg.p0, p1));
        let tracker = llr.map(|p| EdgeMaxTracker::new(p, window.n_edges(), cfg.m0, cfg.m1));
        Ok(Self {
            window,
            llr,
            p0: cfg.p0,
            m0: cfg.m0,
            m1: cfg.m1,
            threshold: cfg.threshold,
            subsets: Arc::new(Subsets::new(n_nodes, s)),
            tracker,
        })
    }

    pub fn window(&self) -> &EdgeCountWindow {
        &self.window
    }

    fn value(&self, ones: u64, trials: u64) -> f64 {
        match &self.llr {
            Some(p) => p.llr(ones, trials),
            None => plug_in_llr(ones, trials, self.p0),
        }
    }
}

impl Detector for EsDetector {
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
        let mut arg: Option<(u64, usize)> = None;
        if let Some((lo, hi)) = k_range(t, self.m0, self.m1) {
            let now = self.window.row(t);
            let pairs = self.subsets.n_pairs as u64;
            for k in (lo..=hi).rev() {
                let then = self.window.row(k);
                let mut top = 0u64;
                let mut top_idx = 0usize;
                for (idx, edges) in self.subsets.all_edges().enumerate() {
                    let ones: u64 = edges.iter().map(|&e| (now[e] - then[e]) as u64).sum();
                    if idx == 0 || ones > top {
                        top = ones;
                        top_idx = idx;
                    }
                }
                let v = self.value(top, (t - k) * pairs);
                // a clamped plug-in statistic is flat at zero; every subset ties
                if self.llr.is_none() && v == 0.0 {
                    top_idx = 0;
                }
                if v > best {
                    best = v;
                    arg = Some((k, top_idx));
                }
            }
        }
        StepReport {
            t,
            statistic: best,
            alarmed: best >= self.threshold,
            argmax_k: arg.map(|(k, _)| k),
            localized_set: arg.map(|(_, i)| self.subsets.nodes(i).to_vec()),
        }
    }

    fn upper_bound(&self) -> f64 {
        let Some(tr) = &self.tracker else {
            return f64::INFINITY;
        };
        let maxima: Vec<f64> = tr.maxima(&self.window).collect();
        let best = self
            .subsets
            .all_edges()
            .map(|edges| edges.iter().map(|&e| maxima[e]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        best + BOUND_SLACK
    }
}

/// Recursive form of exhaustive search for known p1 and an unbounded window:
/// `W_S <- max(W_S + sum_{(i,j) in S} U_{t,t+1}, 0)`.
///
/// Each subset keeps the integer counts of its current excursion, so the
/// statistic is evaluated with the same arithmetic as the windowed form.
#[derive(Debug, Clone)]
pub struct EsCusumDetector {
    n_nodes: usize,
    llr: LlrParams,
    threshold: f64,
    subsets: Arc<Subsets>,
    /// Per subset: (ones, trials, start k) of the current excursion.
    state: Vec<(u64, u64, u64)>,
    t: u64,
}

impl EsCusumDetector {
    pub fn new(cfg: &DetectorConfig, n_nodes: usize) -> Result<Self> {
        cfg.validate_for(n_nodes)?;
        let p1 = cfg.p1.ok_or(Error::NoRecursiveForm)?;
        let subsets = Subsets::new(n_nodes, cfg.s.expect("validated"));
        Ok(Self {
            n_nodes,
            llr: LlrParams::from_pair(cfg.p0, p1),
            threshold: cfg.threshold,
            state: vec![(0, 0, 0); subsets.len()],
            subsets: Arc::new(subsets),
            t: 0,
        })
    }

    /// Current excursion value of every subset, in lexicographic subset order.
    pub fn subset_values(&self) -> Vec<f64> {
        self.state
            .iter()
            .map(|&(ones, trials, _)| self.llr.llr(ones, trials))
            .collect()
    }
}

impl Detector for EsCusumDetector {
    fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    fn t(&self) -> u64 {
        self.t
    }
    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn push(&mut self, g: &GraphSnapshot) -> Result<()> {
        if g.n_nodes() != self.n_nodes {
            return Err(Error::NodeCountMismatch {
                expected: self.n_nodes,
                got: g.n_nodes(),
            });
        }
        self.t += 1;
        let pairs = self.subsets.n_pairs as u64;
        for (st, edges) in self.state.iter_mut().zip(self.subsets.all_edges()) {
            let ones = st.0 + edges.iter().filter(|&&e| g.contains_index(e)).count() as u64;
            let trials = st.1 + pairs;
            if self.llr.llr(ones, trials) > 0.0 {
                st.0 = ones;
                st.1 = trials;
            } else {
                *st = (0, 0, self.t);
            }
        }
        Ok(())
    }

    fn evaluate(&self) -> StepReport {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (idx, &(ones, trials, _)) in self.state.iter().enumerate() {
            let v = self.llr.llr(ones, trials);
            if v > best {
                best = v;
                arg = idx;
            }
        }
        StepReport {
            t: self.t,
            statistic: best,
            alarmed: best >= self.threshold,
            argmax_k: Some(self.state[arg].2),
            localized_set: Some(self.subsets.nodes(arg).to_vec()),
        }
    }

    fn upper_bound(&self) -> f64 {
        // exact and already O(1) per subset
        self.evaluate().statistic
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: usize) -> DetectorConfig {
        DetectorConfig::es(0.3, Some(0.8), s, 1e9)
    }

    #[test]
    fn single_subset_when_s_equals_n() {
        let mut d = EsDetector::new(&cfg(4), 4).unwrap();
        let g = GraphSnapshot::from_edges(4, [(0, 1), (2, 3), (1, 3)]).unwrap();
        d.push(&g).unwrap();
        d.push(&GraphSnapshot::complete(4)).unwrap();
        let r = d.evaluate();
        let p = LlrParams::new(0.3, 0.8).unwrap();
        let all = [0, 1, 2, 3];
        let expect = [0u64, 1, 2]
            .iter()
            .map(|&k| crate::stats::community_llr(d.window(), &p, &all, k).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.statistic, expect);
        assert_eq!(r.localized_set.as_deref(), Some(&all[..]));
    }

    #[test]
    fn quiet_stream_gives_zero() {
        let mut d = EsDetector::new(&cfg(3), 6).unwrap();
        for _ in 0..10 {
            let r = d.step(&GraphSnapshot::empty(6)).unwrap();
            assert_eq!(r.statistic, 0.0);
            assert_eq!(r.argmax_k, Some(r.t));
            assert_eq!(r.localized_set, Some(vec![0, 1, 2]));
        }
    }

    #[test]
    fn cusum_one_step_clique() {
        let c = cfg(3).with_window(0, None);
        let mut d = EsCusumDetector::new(&c, 6).unwrap();
        let g = GraphSnapshot::from_edges(6, [(1, 3), (1, 5), (3, 5)]).unwrap();
        let r = d.step(&g).unwrap();
        assert!((r.statistic - 2.9424).abs() < 1e-4);
        assert_eq!(r.localized_set, Some(vec![1, 3, 5]));
        assert_eq!(r.argmax_k, Some(0));
    }

    #[test]
    fn cusum_quiet_stays_zero() {
        let c = cfg(3).with_window(0, None);
        let mut d = EsCusumDetector::new(&c, 5).unwrap();
        for _ in 0..50 {
            assert_eq!(d.step(&GraphSnapshot::empty(5)).unwrap().statistic, 0.0);
        }
        assert!(d.subset_values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cusum_rejects_unknown_p1() {
        let c = DetectorConfig::es(0.3, None, 3, 1.0).with_window(1, None);
        assert_eq!(EsCusumDetector::new(&c, 5).unwrap_err(), Error::NoRecursiveForm);
    }

    #[test]
    fn s_out_of_range() {
        assert!(EsDetector::new(&cfg(7), 6).is_err());
        assert!(EsDetector::new(&cfg(1), 6).is_err());
    }
}
