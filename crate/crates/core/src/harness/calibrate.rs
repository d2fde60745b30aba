//! Threshold calibration on common random numbers.
//!
//! Each trial keeps the running-maximum records of its statistic path. The
//! stopping time for any threshold `b` is the time of the first record at or
//! above `b`, so one set of paths yields the exact empirical run length at
//! every threshold below the level the paths have been extended to, and the
//! empirical run length is monotone in `b` by construction.

use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::{EstimateReport, CENSOR_FACTOR};
use crate::detect::{AnyDetector, Detector, DetectorConfig};
use crate::error::{invalid, Error, Result};
use crate::graph::{GraphSnapshot, ScenarioSpec, StreamHandle};

#[derive(Debug, Clone)]
struct TrialPath {
    detector: AnyDetector,
    stream: StreamHandle,
    buf: GraphSnapshot,
    /// `(t, statistic)` at every strict running maximum.
    records: Vec<(u64, f64)>,
    best: f64,
    /// The path has reached the censoring horizon.
    finished: bool,
}

impl TrialPath {
    fn extend(&mut self, level: f64, max_t: u64) -> Result<()> {
        while self.best < level && !self.finished {
            self.stream.next_into(&mut self.buf);
            self.detector.push(&self.buf)?;
            let t = self.detector.t();
            // a step whose bound is below the running maximum cannot set a record
            if self.detector.upper_bound() >= self.best {
                let s = self.detector.evaluate().statistic;
                if s > self.best {
                    self.best = s;
                    self.records.push((t, s));
                }
            }
            if t >= max_t {
                self.finished = true;
            }
        }
        Ok(())
    }

    /// Stopping time at threshold `b` and whether it is censored.
    fn stopping_time(&self, b: f64, max_t: u64) -> (u64, bool) {
        let i = self.records.partition_point(|&(_, v)| v < b);
        match self.records.get(i) {
            Some(&(t, _)) => (t, false),
            None => (max_t, true),
        }
    }
}

/// A growing set of null trial paths sharing one seed schedule.
#[derive(Debug, Clone)]
pub struct PathPool {
    scenario: ScenarioSpec,
    detector: DetectorConfig,
    max_t: u64,
    base_seed: u64,
    paths: Vec<TrialPath>,
    level: f64,
}

impl PathPool {
    pub fn new(
        scenario: ScenarioSpec,
        detector: DetectorConfig,
        max_t: u64,
        base_seed: u64,
    ) -> Result<Self> {
        if scenario.changepoint().is_some() {
            return Err(invalid("changepoint", "calibration needs a stream without change"));
        }
        if max_t == 0 {
            return Err(invalid("max_t", "must be at least 1"));
        }
        // the stored threshold plays no role here
        let detector = detector.with_threshold(0.0);
        detector.validate_for(scenario.n_nodes())?;
        Ok(Self {
            scenario,
            detector,
            max_t,
            base_seed,
            paths: Vec::new(),
            level: f64::NEG_INFINITY,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.paths.len()
    }

    /// Highest threshold at which every path's stopping time is known.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// Adds trials up to `n`, bringing them to the current level.
    pub fn grow(&mut self, n: usize) -> Result<()> {
        let n_nodes = self.scenario.n_nodes();
        let start = self.paths.len();
        let mut fresh = (start..n)
            .map(|i| {
                Ok(TrialPath {
                    detector: self.detector.build(n_nodes)?,
                    stream: StreamHandle::new(
                        self.scenario.clone(),
                        self.base_seed.wrapping_add(i as u64),
                    ),
                    buf: GraphSnapshot::empty(n_nodes),
                    records: Vec::new(),
                    best: f64::NEG_INFINITY,
                    finished: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (level, max_t) = (self.level, self.max_t);
        fresh
            .par_iter_mut()
            .try_for_each(|p| p.extend(level, max_t))?;
        self.paths.extend(fresh);
        Ok(())
    }

    /// Extends every path until its stopping time at `level` is known.
    pub fn extend_to(&mut self, level: f64) -> Result<()> {
        if level > self.level {
            let max_t = self.max_t;
            self.paths
                .par_iter_mut()
                .try_for_each(|p| p.extend(level, max_t))?;
            self.level = level;
        }
        Ok(())
    }

    fn mean_at(&self, b: f64) -> f64 {
        let sum: u64 = self
            .paths
            .iter()
            .map(|p| p.stopping_time(b, self.max_t).0)
            .sum();
        sum as f64 / self.paths.len() as f64
    }

    /// Run-length estimate at threshold `b`, extending the paths if needed.
    pub fn arl_at(&mut self, b: f64) -> Result<EstimateReport> {
        let started = Instant::now();
        self.extend_to(b)?;
        let mut censored = 0;
        let samples: Vec<f64> = self
            .paths
            .iter()
            .map(|p| {
                let (t, c) = p.stopping_time(b, self.max_t);
                censored += c as usize;
                t as f64
            })
            .collect();
        Ok(EstimateReport::from_samples(&samples, censored, 0, started))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Accepted relative distance of the achieved run length from the target.
    pub tol: f64,
    pub initial_trials: usize,
    pub max_trials: usize,
    pub base_seed: u64,
    /// Censoring horizon; defaults to 50 times the target.
    pub max_t: Option<u64>,
    /// Largest threshold tried.
    pub b_max: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol: 0.05,
            initial_trials: 500,
            max_trials: 2000,
            base_seed: 0,
            max_t: None,
            b_max: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub threshold: f64,
    pub target_arl: f64,
    /// Run length at `threshold` over the calibration paths.
    pub arl: EstimateReport,
}

/// Smallest `b` in `(lo, hi]` with empirical run length at least `target`,
/// given that it is below target at `lo` and reaches it at `hi`.
fn crossing(pool: &PathPool, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pool.mean_at(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Finds the threshold whose empirical run length matches `target_arl`.
///
/// Paths are raised through thresholds in steps of 1% (at least 0.01) until
/// the mean stopping time reaches the target, and the crossing is then
/// located exactly on those paths. Trials are added, doubling from
/// `initial_trials` up to `max_trials`, while the standard error exceeds
/// half the tolerance.
pub fn calibrate_threshold_mc(
    scenario: &ScenarioSpec,
    detector: &DetectorConfig,
    target_arl: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    if !(target_arl > 1.0 && target_arl.is_finite()) {
        return Err(invalid("target_arl", format!("{target_arl} must exceed 1")));
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(invalid("tol", format!("{} is not in (0, 1)", opts.tol)));
    }
    if opts.initial_trials == 0 || opts.max_trials < opts.initial_trials {
        return Err(invalid("max_trials", "need 1 <= initial_trials <= max_trials"));
    }
    let started = Instant::now();
    let max_t = opts
        .max_t
        .unwrap_or((target_arl.ceil() as u64).saturating_mul(CENSOR_FACTOR));
    let mut pool = PathPool::new(scenario.clone(), detector.clone(), max_t, opts.base_seed)?;
    pool.grow(opts.initial_trials)?;

    let (mut lo, mut hi) = (0.0, 0.0);
    pool.extend_to(hi)?;
    loop {
        while pool.mean_at(hi) < target_arl {
            lo = hi;
            hi += f64::max(0.01, 0.01 * hi);
            if hi > opts.b_max {
                return Err(Error::Bracket(format!(
                    "run length stays below {target_arl} for thresholds up to {}",
                    opts.b_max
                )));
            }
            pool.extend_to(hi)?;
        }
        if pool.mean_at(lo) >= target_arl {
            // added trials moved the crossing below the last bracket
            lo = 0.0;
        }
        let b = crossing(&pool, target_arl, lo, hi);
        let arl = pool.arl_at(b)?;
        debug!(
            "calibration: n = {}, b = {b:.4}, arl = {:.1} (se {:.1})",
            pool.n_trials(),
            arl.estimate,
            arl.std_error
        );
        let n = pool.n_trials();
        if arl.std_error <= 0.5 * opts.tol * target_arl || n >= opts.max_trials {
            if (arl.estimate / target_arl - 1.0).abs() > opts.tol {
                warn!(
                    "calibrated run length {:.1} misses target {target_arl} by more than {:.0}%",
                    arl.estimate,
                    100.0 * opts.tol
                );
            }
            let arl = EstimateReport {
                wall_time_secs: started.elapsed().as_secs_f64(),
                ..arl
            };
            return Ok(CalibrationReport {
                threshold: b,
                target_arl,
                arl,
            });
        }
        pool.grow((2 * n).min(opts.max_trials))?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{estimate_arl, ExperimentSpec};

    fn setup() -> (ScenarioSpec, DetectorConfig) {
        (
            ScenarioSpec::null(5, 0.3).unwrap(),
            DetectorConfig::mixture(0.3, Some(0.8), 0.2, 0.0),
        )
    }

    #[test]
    fn records_match_direct_runs() {
        let (sc, cfg) = setup();
        let mut pool = PathPool::new(sc.clone(), cfg.clone(), 5000, 11).unwrap();
        pool.grow(40).unwrap();
        for b in [2.0, 3.5, 4.25] {
            let via_pool = pool.arl_at(b).unwrap();
            let spec = ExperimentSpec::new(sc.clone(), cfg.clone().with_threshold(b), 40, 5000).with_seed(11);
            let direct = estimate_arl(&spec).unwrap();
            assert_eq!(via_pool.estimate, direct.estimate);
            assert_eq!(via_pool.n_censored, direct.n_censored);
        }
    }

    #[test]
    fn empirical_arl_is_monotone() {
        let (sc, cfg) = setup();
        let mut pool = PathPool::new(sc, cfg, 5000, 3).unwrap();
        pool.grow(30).unwrap();
        pool.extend_to(5.0).unwrap();
        let mut last = 0.0;
        for i in 0..=100 {
            let a = pool.mean_at(i as f64 * 0.05);
            assert!(a >= last);
            last = a;
        }
    }

    #[test]
    fn calibration_hits_small_target() {
        let (sc, cfg) = setup();
        let opts = CalibrationOptions {
            initial_trials: 200,
            max_trials: 400,
            ..Default::default()
        };
        let r = calibrate_threshold_mc(&sc, &cfg, 50.0, &opts).unwrap();
        assert!((r.arl.estimate / 50.0 - 1.0).abs() < 0.05, "{r:?}");
        let spec = ExperimentSpec::new(sc, cfg.clone().with_threshold(r.threshold), r.arl.n_trials, 2500);
        assert_eq!(estimate_arl(&spec).unwrap().estimate, r.arl.estimate);
    }
}
