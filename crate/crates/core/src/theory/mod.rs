//! Analytic approximations to the average run length of the mixture
//! procedure with known p1: a lower bound summed over integer window
//! lengths and an upper bound integrated over continuous ones.

mod quadrature;
mod tilt;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, invalid, Error, Result};
use crate::stats::{LlrParams, SoftThreshold};

pub use quadrature::{integrate, integrate_scaled};
pub use tilt::{big_h, nu_approx, solve_theta, tilt, BigH, QuadSettings, TauProfile, Tilt};

fn default_m0() -> u64 {
    1
}
fn default_m1() -> u64 {
    200
}
fn default_quad_tol() -> f64 {
    1e-8
}
fn default_z_range() -> f64 {
    8.0
}

/// Inputs to the bounds. `n_effective` is the size parameter entering every
/// formula; it defaults to the node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryParams {
    pub p0: f64,
    pub p1: f64,
    pub alpha: f64,
    pub b: f64,
    pub n_nodes: usize,
    #[serde(default)]
    pub n_effective: Option<f64>,
    #[serde(default = "default_m0")]
    pub m0: u64,
    #[serde(default = "default_m1")]
    pub m1: u64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    #[serde(default = "default_z_range")]
    pub z_range: f64,
}

impl TheoryParams {
    pub fn new(p0: f64, p1: f64, alpha: f64, b: f64, n_nodes: usize) -> Self {
        Self {
            p0,
            p1,
            alpha,
            b,
            n_nodes,
            n_effective: None,
            m0: default_m0(),
            m1: default_m1(),
            quad_tol: default_quad_tol(),
            z_range: default_z_range(),
        }
    }

    pub fn with_b(&self, b: f64) -> Self {
        Self { b, ..self.clone() }
    }

    pub fn with_n_effective(mut self, n: f64) -> Self {
        self.n_effective = Some(n);
        self
    }

    pub fn with_window(mut self, m0: u64, m1: u64) -> Self {
        self.m0 = m0;
        self.m1 = m1;
        self
    }

    pub fn n_eff(&self) -> f64 {
        self.n_effective.unwrap_or(self.n_nodes as f64)
    }

    pub fn quad(&self) -> QuadSettings {
        QuadSettings {
            rel_tol: self.quad_tol,
            z_range: self.z_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_open_unit("p0", self.p0)?;
        check_open_unit("p1", self.p1)?;
        if self.p1 <= self.p0 {
            return Err(invalid("p1", format!("{} must exceed p0 = {}", self.p1, self.p0)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", format!("{} is not in (0, 1]", self.alpha)));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(invalid("b", format!("{} is not a positive number", self.b)));
        }
        if self.n_nodes < 2 {
            return Err(invalid("n_nodes", "need at least 2 nodes"));
        }
        if let Some(n) = self.n_effective {
            if !(n.is_finite() && n > 0.0) {
                return Err(invalid("n_effective", format!("{n} is not a positive number")));
            }
        }
        if self.m0 < 1 {
            return Err(invalid("m0", "must be at least 1"));
        }
        if self.m1 < self.m0 {
            return Err(invalid("m1", format!("{} is below m0 = {}", self.m1, self.m0)));
        }
        if !(self.quad_tol > 0.0 && self.quad_tol < 1e-2) {
            return Err(invalid("quad_tol", format!("{} is not in (0, 0.01)", self.quad_tol)));
        }
        if !(self.z_range.is_finite() && self.z_range > 0.0) {
            return Err(invalid("z_range", format!("{} is not a positive number", self.z_range)));
        }
        Ok(())
    }

    fn parts(&self) -> Result<(LlrParams, SoftThreshold)> {
        self.validate()?;
        Ok((LlrParams::new(self.p0, self.p1)?, SoftThreshold::new(self.alpha)?))
    }
}

/// Tilt quantities at one window length. `None` when `psi_dot = b/N` has
/// no admissible root there.
fn tilt_at(
    tau: f64,
    llr: &LlrParams,
    h: &SoftThreshold,
    params: &TheoryParams,
) -> Result<Option<(Tilt, BigH)>> {
    let profile = TauProfile::new(tau, llr)?;
    let n = params.n_eff();
    match solve_theta(&profile, h, params.b / n, params.quad()) {
        Ok(t) => Ok(Some((t, big_h(n, &t)))),
        Err(Error::NoRoot { .. } | Error::RootBracket(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One summand of the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerTerm {
    pub tau: u64,
    pub theta: f64,
    pub gamma: f64,
    pub log_h: f64,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBound {
    pub arl: f64,
    pub terms: Vec<LowerTerm>,
    /// Window lengths without a root; they contribute nothing.
    pub skipped: Vec<u64>,
}

/// `1 / sum_{tau=m0}^{m1} 2N nu^2(2N sqrt(gamma) / tau^2) / (tau^2 H(N, theta_tau))`.
pub fn arl_lower_bound(params: &TheoryParams) -> Result<LowerBound> {
    let (llr, h) = params.parts()?;
    let n = params.n_eff();
    let mut terms = Vec::new();
    let mut skipped = Vec::new();
    let mut logs = Vec::new();
    for tau in params.m0..=params.m1 {
        let Some((t, big)) = tilt_at(tau as f64, &llr, &h, params)? else {
            debug!("lower bound: no root at tau = {tau}, term dropped");
            skipped.push(tau);
            continue;
        };
        let tf = tau as f64;
        let nu = nu_approx(2.0 * n * t.gamma.sqrt() / (tf * tf))?;
        let log_term = (2.0 * n).ln() + 2.0 * nu.ln() - 2.0 * tf.ln() - big.log_value;
        logs.push(log_term);
        terms.push(LowerTerm {
            tau,
            theta: t.theta,
            gamma: t.gamma,
            log_h: big.log_value,
            term: log_term.exp(),
        });
    }
    if terms.is_empty() {
        return Err(Error::BoundUndefined(params.b));
    }
    Ok(LowerBound {
        arl: (-log_sum_exp(&logs)).exp(),
        terms,
        skipped,
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// The upper-bound integrand at one point of the `y` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperSample {
    pub y: f64,
    pub tau: f64,
    pub integrand: f64,
}

/// Log of `y nu^2(y sqrt(gamma)) / H(N, theta_y)` with `tau = 2N / y^2`;
/// `-inf` where there is no root.
fn upper_log_integrand(y: f64, llr: &LlrParams, h: &SoftThreshold, params: &TheoryParams) -> Result<f64> {
    let tau = 2.0 * params.n_eff() / (y * y);
    Ok(match tilt_at(tau, llr, h, params)? {
        None => f64::NEG_INFINITY,
        Some((t, big)) => y.ln() + 2.0 * nu_approx(y * t.gamma.sqrt())?.ln() - big.log_value,
    })
}

fn y_limits(params: &TheoryParams) -> (f64, f64) {
    let n2 = 2.0 * params.n_eff();
    ((n2 / params.m1 as f64).sqrt(), (n2 / params.m0 as f64).sqrt())
}

/// Integrand samples at `n_points` evenly spaced `y` across the integration range.
pub fn upper_bound_profile(params: &TheoryParams, n_points: usize) -> Result<Vec<UpperSample>> {
    let (llr, h) = params.parts()?;
    let (lo, hi) = y_limits(params);
    (0..n_points)
        .map(|i| {
            let y = if n_points == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n_points - 1) as f64
            };
            Ok(UpperSample {
                y,
                tau: 2.0 * params.n_eff() / (y * y),
                integrand: upper_log_integrand(y, &llr, &h, params)?.exp(),
            })
        })
        .collect()
}

/// `1 / int_{sqrt(2N/m1)}^{sqrt(2N/m0)} y nu^2(y sqrt(gamma(theta_y))) / H(N, theta_y) dy`.
pub fn arl_upper_bound(params: &TheoryParams) -> Result<f64> {
    let (llr, h) = params.parts()?;
    let (lo, hi) = y_limits(params);
    // rescale by the largest sampled integrand so tiny values stay representable
    let peak = upper_bound_profile(params, 65)?
        .iter()
        .map(|s| s.integrand.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Err(Error::BoundUndefined(params.b));
    }
    let mut failure = None;
    let [value] = integrate(
        |y| match upper_log_integrand(y, &llr, &h, params) {
            Ok(l) => [(l - peak).exp()],
            Err(e) => {
                failure.get_or_insert(e);
                [0.0]
            }
        },
        lo,
        hi,
        params.quad_tol,
        16,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    if !(value > 0.0) {
        return Err(Error::BoundUndefined(params.b));
    }
    Ok((-(peak + value.ln())).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Lower,
    Upper,
}

pub fn arl_bound(params: &TheoryParams, which: BoundKind) -> Result<f64> {
    match which {
        BoundKind::Lower => arl_lower_bound(params).map(|lb| lb.arl),
        BoundKind::Upper => arl_upper_bound(params),
    }
}

/// Threshold at which the chosen bound equals `target_arl` (within 0.01%),
/// by bisection on `b`. The `b` in `params` is ignored.
pub fn threshold_for_arl(params: &TheoryParams, target_arl: f64, which: BoundKind) -> Result<f64> {
    if !(target_arl > 1.0 && target_arl.is_finite()) {
        return Err(invalid("target_arl", format!("{target_arl} must exceed 1")));
    }
    let eval = |b: f64| match arl_bound(&params.with_b(b), which) {
        Err(Error::BoundUndefined(_)) => Ok(f64::INFINITY),
        other => other,
    };
    let (mut lo, mut hi) = (1.0, 2.0);
    let mut a_hi = eval(hi)?;
    while a_hi < target_arl {
        lo = hi;
        hi *= 1.5;
        if hi > 200.0 {
            return Err(Error::Bracket(format!(
                "bound stays below {target_arl} for b up to 200"
            )));
        }
        a_hi = eval(hi)?;
    }
    let mut a_lo = eval(lo)?;
    while a_lo >= target_arl {
        hi = lo;
        a_hi = a_lo;
        lo *= 0.5;
        if lo < 1e-3 {
            return Err(Error::Bracket(format!(
                "bound stays above {target_arl} for b down to 1e-3"
            )));
        }
        a_lo = eval(lo)?;
    }
    if !(a_lo < a_hi) {
        return Err(Error::Bracket(format!(
            "bound not increasing in b: {a_lo} at b = {lo}, {a_hi} at b = {hi}"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let a = eval(mid)?;
        if (a / target_arl - 1.0).abs() <= 1e-4 {
            return Ok(mid);
        }
        if a < target_arl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
