//! Monte Carlo estimation of run lengths and detection delays, threshold
//! calibration, and the scripted comparison experiments.
//!
//! Trial `i` of an experiment always uses stream seed `base_seed + i`, and
//! results are aggregated in trial order, so estimates do not depend on the
//! number of worker threads.

mod calibrate;
mod settings;
mod tables;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::detect::{run_until_alarm, DetectorConfig, RunOutcome};
use crate::error::{invalid, Result};
use crate::graph::{ScenarioSpec, StreamHandle};

pub use calibrate::{
    calibrate_threshold_mc, CalibrationOptions, CalibrationReport, PathPool,
};
pub use settings::FrozenSettings;
pub use tables::{
    alpha_candidates, freeze_settings, method_config, reproduce_table, run_table, size_candidate,
    sweep_alpha, write_rows, AlphaCandidate, Reproducer, ResultRow, SizeCandidate, TableOptions,
    BASE_N, BASE_P0, BASE_P1, BOUND_REFERENCE, DELAY_REFERENCE, FALSE_COMMUNITY,
    FALSE_COMMUNITY_REFERENCE, TARGET_ARL, THRESHOLD_REFERENCE,
};

/// Censoring horizon as a multiple of the target run length.
pub const CENSOR_FACTOR: u64 = 50;

/// Censored fraction above which an estimate is flagged unreliable.
pub const UNRELIABLE_CENSORED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSpec,
    pub detector: DetectorConfig,
    pub n_trials: usize,
    /// Trials still running at this time are stopped and counted as censored.
    pub max_t: u64,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioSpec, detector: DetectorConfig, n_trials: usize, max_t: u64) -> Self {
        Self {
            scenario,
            detector,
            n_trials,
            max_t,
            base_seed: 0,
        }
    }

    pub fn with_seed(mut self, base_seed: u64) -> Self {
        self.base_seed = base_seed;
        self
    }

    pub fn trial_seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(invalid("n_trials", "must be at least 1"));
        }
        if self.max_t == 0 {
            return Err(invalid("max_t", "must be at least 1"));
        }
        self.detector.validate_for(self.scenario.n_nodes())
    }

    /// Runs trial `i` to its alarm or the censoring horizon.
    pub fn run_trial(&self, i: usize) -> Result<RunOutcome> {
        let mut det = self.detector.build(self.scenario.n_nodes())?;
        let stream = StreamHandle::new(self.scenario.clone(), self.trial_seed(i));
        run_until_alarm(&mut det, stream, self.max_t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    /// Sample standard deviation over `sqrt(n_trials)`.
    pub std_error: f64,
    pub n_trials: usize,
    /// Trials that hit the censoring horizon; they enter the mean at `max_t`.
    pub n_censored: usize,
    /// Trials excluded from a delay estimate because they alarmed before the change.
    pub n_false_alarms: usize,
    pub wall_time_secs: f64,
    pub unreliable: bool,
}

impl EstimateReport {
    pub(crate) fn from_samples(
        samples: &[f64],
        n_censored: usize,
        n_false_alarms: usize,
        started: Instant,
    ) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            estimate: mean,
            std_error: (var / n.max(1) as f64).sqrt(),
            n_trials: n,
            n_censored,
            n_false_alarms,
            wall_time_secs: started.elapsed().as_secs_f64(),
            unreliable: n == 0
                || n_censored as f64 > UNRELIABLE_CENSORED_FRACTION * n as f64,
        }
    }
}

fn run_all(spec: &ExperimentSpec) -> Result<Vec<RunOutcome>> {
    spec.validate()?;
    (0..spec.n_trials)
        .into_par_iter()
        .map(|i| spec.run_trial(i))
        .collect()
}

/// Mean stopping time under a stream that never changes.
pub fn estimate_arl(spec: &ExperimentSpec) -> Result<EstimateReport> {
    if spec.scenario.changepoint().is_some() {
        return Err(invalid("changepoint", "run-length estimates need a stream without change"));
    }
    let started = Instant::now();
    let runs = run_all(spec)?;
    let samples: Vec<f64> = runs.iter().map(|r| r.stopping_time as f64).collect();
    let censored = runs.iter().filter(|r| r.censored).count();
    Ok(EstimateReport::from_samples(&samples, censored, 0, started))
}

/// Mean of `T - kappa` over trials with `T > kappa`. With the default
/// changepoint `kappa = 0` every trial counts and the delay is `T` itself.
pub fn estimate_delay(spec: &ExperimentSpec) -> Result<EstimateReport> {
    let Some(kappa) = spec.scenario.changepoint() else {
        return Err(invalid("changepoint", "delay estimates need a finite changepoint"));
    };
    let started = Instant::now();
    let runs = run_all(spec)?;
    let mut samples = Vec::with_capacity(runs.len());
    let (mut censored, mut early) = (0, 0);
    for r in &runs {
        if r.stopping_time <= kappa && !r.censored {
            early += 1;
            continue;
        }
        censored += r.censored as usize;
        samples.push((r.stopping_time - kappa) as f64);
    }
    Ok(EstimateReport::from_samples(&samples, censored, early, started))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_stops_at_once() {
        let spec = ExperimentSpec::new(
            ScenarioSpec::null(6, 0.3).unwrap(),
            DetectorConfig::mixture(0.3, Some(0.8), 0.2, 0.0),
            50,
            100,
        );
        let r = estimate_arl(&spec).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.n_censored, 0);
    }

    #[test]
    fn saturated_change_is_found_immediately() {
        let spec = ExperimentSpec::new(
            ScenarioSpec::community(5, 0.2, 1.0, Some(0), (0..5).collect()).unwrap(),
            DetectorConfig::es(0.2, Some(0.9), 5, 1.0),
            40,
            100,
        );
        let r = estimate_delay(&spec).unwrap();
        assert_eq!(r.estimate, 1.0);
    }

    #[test]
    fn censoring_is_counted() {
        let spec = ExperimentSpec::new(
            ScenarioSpec::null(4, 0.1).unwrap(),
            DetectorConfig::mixture(0.1, Some(0.9), 0.2, 50.0),
            10,
            20,
        );
        let r = estimate_arl(&spec).unwrap();
        assert_eq!(r.n_censored, 10);
        assert_eq!(r.estimate, 20.0);
        assert!(r.unreliable);
    }

    #[test]
    fn changepoint_preconditions() {
        let null = ExperimentSpec::new(
            ScenarioSpec::null(4, 0.1).unwrap(),
            DetectorConfig::mixture(0.1, Some(0.9), 0.2, 5.0),
            10,
            20,
        );
        assert!(estimate_delay(&null).is_err());
        let changed = ExperimentSpec {
            scenario: null.scenario.with_changepoint(Some(0)),
            ..null
        };
        assert!(estimate_arl(&changed).is_err());
    }
}
