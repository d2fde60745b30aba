//! Sequential stopping rules: exhaustive search, mixture and hierarchical
//! mixture.
//!
//! Every detector consumes one snapshot at a time and, on request, reports the
//! statistic maximized over the changepoint window `k in [t - m1, t - m0]`.
//! Ties resolve deterministically: the most recent `k` wins, then the
//! lexicographically smallest node set, then the smallest node index.

mod es;
mod hmix;
mod kernel;
mod mixture;

use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, invalid, Result};
use crate::graph::GraphSnapshot;

pub use es::{EsCusumDetector, EsDetector};
pub use hmix::{greedy_elimination, HMixDetector};
pub use mixture::MixtureDetector;

/// Default changepoint window `[t - 200, t]`.
pub const DEFAULT_M0: usize = 0;
pub const DEFAULT_M1: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(alias = "ES", alias = "exhaustive")]
    Es,
    #[serde(alias = "Mixture", alias = "mix")]
    Mixture,
    #[serde(alias = "HMix", alias = "h-mix", alias = "H-Mix")]
    Hmix,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Es => "es",
            Method::Mixture => "mixture",
            Method::Hmix => "hmix",
        })
    }
}

fn default_m1() -> Option<usize> {
    Some(DEFAULT_M1)
}

/// Detector parameters. `p1 = None` selects the plug-in estimate; `m1 = None`
/// is an unbounded window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub method: Method,
    pub p0: f64,
    #[serde(default)]
    pub p1: Option<f64>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub m0: usize,
    #[serde(default = "default_m1")]
    pub m1: Option<usize>,
    pub threshold: f64,
}

impl DetectorConfig {
    pub fn es(p0: f64, p1: Option<f64>, s: usize, threshold: f64) -> Self {
        Self {
            method: Method::Es,
            p0,
            p1,
            s: Some(s),
            alpha: None,
            m0: if p1.is_some() { DEFAULT_M0 } else { 1 },
            m1: Some(DEFAULT_M1),
            threshold,
        }
    }

    pub fn mixture(p0: f64, p1: Option<f64>, alpha: f64, threshold: f64) -> Self {
        Self {
            method: Method::Mixture,
            p0,
            p1,
            s: None,
            alpha: Some(alpha),
            m0: DEFAULT_M0,
            m1: Some(DEFAULT_M1),
            threshold,
        }
    }

    pub fn hmix(p0: f64, p1: Option<f64>, s: usize, alpha: f64, threshold: f64) -> Self {
        Self {
            method: Method::Hmix,
            p0,
            p1,
            s: Some(s),
            alpha: Some(alpha),
            m0: DEFAULT_M0,
            m1: Some(DEFAULT_M1),
            threshold,
        }
    }

    pub fn with_window(mut self, m0: usize, m1: Option<usize>) -> Self {
        self.m0 = m0;
        self.m1 = m1;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Checks every field invariant that does not depend on the graph size.
    pub fn validate(&self) -> Result<()> {
        check_open_unit("p0", self.p0)?;
        if let Some(p1) = self.p1 {
            check_open_unit("p1", p1)?;
            if p1 <= self.p0 {
                return Err(invalid("p1", format!("{p1} must exceed p0 = {}", self.p0)));
            }
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(invalid(
                "threshold",
                format!("{} is not a finite nonnegative number", self.threshold),
            ));
        }
        if let Some(m1) = self.m1 {
            if self.m0 > m1 {
                return Err(invalid("m0", format!("{} exceeds m1 = {m1}", self.m0)));
            }
        }
        match self.method {
            Method::Es | Method::Hmix => match self.s {
                None => return Err(invalid("s", format!("required by method {}", self.method))),
                Some(s) if s < 2 => return Err(invalid("s", format!("{s} is below 2"))),
                Some(_) => {}
            },
            Method::Mixture => {}
        }
        if matches!(self.method, Method::Mixture | Method::Hmix) {
            match self.alpha {
                None => {
                    return Err(invalid(
                        "alpha",
                        format!("required by method {}", self.method),
                    ))
                }
                Some(a) if !(a.is_finite() && a > 0.0 && a <= 1.0) => {
                    return Err(invalid("alpha", format!("{a} is not in (0, 1]")))
                }
                Some(_) => {}
            }
        }
        if self.method == Method::Es && self.p1.is_none() && self.m0 == 0 {
            return Err(invalid(
                "m0",
                "exhaustive search with unknown p1 needs m0 >= 1",
            ));
        }
        Ok(())
    }

    /// Full validation against a graph size.
    pub fn validate_for(&self, n_nodes: usize) -> Result<()> {
        self.validate()?;
        if n_nodes < 2 {
            return Err(invalid("n_nodes", "need at least 2 nodes"));
        }
        if let Some(s) = self.s {
            if self.method != Method::Mixture && s > n_nodes {
                return Err(invalid("s", format!("{s} exceeds the node count {n_nodes}")));
            }
        }
        Ok(())
    }

    /// True when the recursive exhaustive-search form applies.
    pub fn cusum_eligible(&self) -> bool {
        self.method == Method::Es && self.p1.is_some() && self.m0 == 0 && self.m1.is_none()
    }

    /// Builds the detector. Exhaustive search with known p1 over an unbounded
    /// window uses the recursive form; its statistics are identical.
    pub fn build(&self, n_nodes: usize) -> Result<AnyDetector> {
        self.validate_for(n_nodes)?;
        Ok(match self.method {
            Method::Es if self.cusum_eligible() => {
                AnyDetector::EsCusum(EsCusumDetector::new(self, n_nodes)?)
            }
            Method::Es => AnyDetector::Es(EsDetector::new(self, n_nodes)?),
            Method::Mixture => AnyDetector::Mixture(MixtureDetector::new(self, n_nodes)?),
            Method::Hmix => AnyDetector::Hmix(HMixDetector::new(self, n_nodes)?),
        })
    }
}

/// Outcome of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub t: u64,
    /// Statistic maximized over the window; `-inf` while no `k` is admissible.
    pub statistic: f64,
    pub alarmed: bool,
    pub argmax_k: Option<u64>,
    /// Best node set (exhaustive search and hierarchical mixture only).
    pub localized_set: Option<Vec<usize>>,
}

/// A sequential detector driven one snapshot at a time.
pub trait Detector {
    fn n_nodes(&self) -> usize;
    /// Number of snapshots consumed.
    fn t(&self) -> u64;
    fn threshold(&self) -> f64;
    fn push(&mut self, g: &GraphSnapshot) -> Result<()>;
    /// Full statistic at the current time.
    fn evaluate(&self) -> StepReport;

    /// A value never below the statistic [`Detector::evaluate`] would return
    /// now. Cheap; lets Monte Carlo loops skip evaluations that cannot alarm.
    fn upper_bound(&self) -> f64 {
        f64::INFINITY
    }

    fn step(&mut self, g: &GraphSnapshot) -> Result<StepReport> {
        self.push(g)?;
        Ok(self.evaluate())
    }
}

/// Any of the configured detectors.
#[derive(Debug, Clone)]
pub enum AnyDetector {
    Es(EsDetector),
    EsCusum(EsCusumDetector),
    Mixture(MixtureDetector),
    Hmix(HMixDetector),
}

macro_rules! delegate {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            AnyDetector::Es($d) => $e,
            AnyDetector::EsCusum($d) => $e,
            AnyDetector::Mixture($d) => $e,
            AnyDetector::Hmix($d) => $e,
        }
    };
}

impl Detector for AnyDetector {
    fn n_nodes(&self) -> usize {
        delegate!(self, d => d.n_nodes())
    }
    fn t(&self) -> u64 {
        delegate!(self, d => d.t())
    }
    fn threshold(&self) -> f64 {
        delegate!(self, d => d.threshold())
    }
    fn push(&mut self, g: &GraphSnapshot) -> Result<()> {
        delegate!(self, d => d.push(g))
    }
    fn evaluate(&self) -> StepReport {
        delegate!(self, d => d.evaluate())
    }
    fn upper_bound(&self) -> f64 {
        delegate!(self, d => d.upper_bound())
    }
}

/// Result of running a detector until it alarms.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Alarm time, or the last time observed when censored.
    pub stopping_time: u64,
    pub censored: bool,
    pub report: StepReport,
}

/// Feeds snapshots until the statistic reaches the threshold or `max_t`
/// snapshots have been consumed (or the source runs dry). Evaluations whose
/// upper bound is below the threshold are skipped; stopping times are the
/// same as evaluating every step.
pub fn run_until_alarm<D, I>(detector: &mut D, snapshots: I, max_t: u64) -> Result<RunOutcome>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = GraphSnapshot>,
{
    if max_t == 0 {
        return Err(invalid("max_t", "must be at least 1"));
    }
    let b = detector.threshold();
    for g in snapshots.into_iter() {
        detector.push(&g)?;
        let t = detector.t();
        if t < max_t && detector.upper_bound() < b {
            continue;
        }
        let report = detector.evaluate();
        if report.alarmed {
            return Ok(RunOutcome {
                stopping_time: t,
                censored: false,
                report,
            });
        }
        if t >= max_t {
            return Ok(RunOutcome {
                stopping_time: t,
                censored: true,
                report,
            });
        }
    }
    let report = detector.evaluate();
    Ok(RunOutcome {
        stopping_time: detector.t(),
        censored: true,
        report,
    })
}
