//! Exponentially tilted Gaussian expectations of the soft-thresholded
//! edge statistic over a window of length `tau`.

use std::f64::consts::PI;

use statrs::function::erf::erf;

use super::quadrature::integrate_scaled;
use crate::error::{invalid, Error, Result};
use crate::stats::{LlrParams, SoftThreshold};

/// Normal approximation of the windowed edge statistic: over a window of
/// length `tau` it is distributed as `drift + scale * Z` under the null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauProfile {
    pub tau: f64,
    pub drift: f64,
    pub scale: f64,
}

impl TauProfile {
    pub fn new(tau: f64, params: &LlrParams) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid("tau", format!("{tau} is not a positive number")));
        }
        let (p0, c0, c1) = (params.p0(), params.c0(), params.c1());
        let spread = c0 - c1;
        Ok(Self {
            tau,
            drift: tau * (p0 * spread + c1),
            scale: (tau * spread * spread * p0 * (1.0 - p0)).sqrt(),
        })
    }

    #[inline]
    pub fn g(&self, z: f64) -> f64 {
        self.drift + self.scale * z
    }

    /// `h(g(z))`.
    #[inline]
    pub fn h(&self, z: f64, h: &SoftThreshold) -> f64 {
        h.apply(self.g(z))
    }

    /// Derivative of `h(g(z))` in `z`.
    #[inline]
    pub fn h_dot(&self, z: f64, h: &SoftThreshold) -> f64 {
        self.scale * h.derivative(self.g(z))
    }
}

/// Accuracy settings shared by every Gaussian expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSettings {
    pub rel_tol: f64,
    /// Integrals run over `|z| <= z_range`.
    pub z_range: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            z_range: 8.0,
        }
    }
}

/// The cumulant generating function `psi(theta) = log E exp(theta h(g(Z)))`,
/// its first two derivatives, and `gamma(theta)`, all at one `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub theta: f64,
    pub psi: f64,
    pub psi_dot: f64,
    pub psi_ddot: f64,
    pub gamma: f64,
}

const SHIFT_GRID: usize = 256;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Evaluates [`Tilt`] with one adaptive quadrature pass. The integrand is
/// rescaled by its largest value on a coarse grid, and the moments are
/// centred at the statistic's value there, so neither overflow nor
/// cancellation depends on how strongly the measure is tilted.
pub fn tilt(theta: f64, profile: &TauProfile, h: &SoftThreshold, quad: QuadSettings) -> Result<Tilt> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(invalid("theta", format!("{theta} is not a nonnegative number")));
    }
    let r = quad.z_range;
    let log_weight = |z: f64| -0.5 * z * z + theta * profile.h(z, h);
    let (mut shift, mut centre) = (f64::NEG_INFINITY, 0.0);
    for i in 0..=SHIFT_GRID {
        let z = -r + 2.0 * r * i as f64 / SHIFT_GRID as f64;
        let lw = log_weight(z);
        if lw > shift {
            shift = lw;
            centre = profile.h(z, h);
        }
    }
    let [i0, i1, i2, i3] = integrate_scaled(
        |z| {
            let hv = profile.h(z, h);
            let w = (-0.5 * z * z + theta * hv - shift - LN_SQRT_2PI).exp();
            let d = hv - centre;
            let hd = profile.h_dot(z, h);
            [w, d * w, d * d * w, hd * hd * w]
        },
        -r,
        r,
        quad.rel_tol,
        4,
        |t| {
            let spread = (t[0].abs() * t[2].abs()).sqrt();
            [t[0].abs(), t[1].abs().max(spread), t[2].abs(), t[3].abs()]
        },
    )?;
    let m1 = i1 / i0;
    Ok(Tilt {
        theta,
        psi: if theta == 0.0 { 0.0 } else { shift + i0.ln() },
        psi_dot: centre + m1,
        psi_ddot: (i2 / i0 - m1 * m1).max(0.0),
        gamma: 0.5 * theta * theta * i3 / i0,
    })
}

/// Solves `psi_dot(theta) = target` for `theta > 0`: geometric bracket
/// expansion from `1e-6`, capped at `1e3`, then bisection.
pub fn solve_theta(
    profile: &TauProfile,
    h: &SoftThreshold,
    target: f64,
    quad: QuadSettings,
) -> Result<Tilt> {
    const START: f64 = 1e-6;
    const CAP: f64 = 1e3;
    let at_zero = tilt(0.0, profile, h, quad)?;
    if at_zero.psi_dot >= target {
        return Err(Error::NoRoot {
            target,
            mean: at_zero.psi_dot,
        });
    }
    let accept = 1e-9 * target.abs();
    let (mut lo, mut hi) = (0.0, START);
    let mut upper = loop {
        let t = tilt(hi, profile, h, quad)?;
        if t.psi_dot >= target {
            break t;
        }
        lo = hi;
        hi *= 2.0;
        if hi > CAP {
            return Err(Error::RootBracket(CAP));
        }
    };
    if (upper.psi_dot - target).abs() <= accept {
        return Ok(upper);
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(upper);
        }
        let t = tilt(mid, profile, h, quad)?;
        if (t.psi_dot - target).abs() <= accept {
            return Ok(t);
        }
        if t.psi_dot < target {
            lo = mid;
        } else {
            hi = mid;
            upper = t;
        }
    }
}

/// `H(N, theta)` in log space alongside its value (which may overflow).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigH {
    pub log_value: f64,
    pub value: f64,
}

/// `H = theta sqrt(2 pi psi_ddot) / (gamma^2 sqrt(N)) exp(N (theta psi_dot - psi))`.
pub fn big_h(n_effective: f64, t: &Tilt) -> BigH {
    let log_value = t.theta.ln() + 0.5 * (2.0 * PI * t.psi_ddot).ln()
        - 2.0 * t.gamma.ln()
        - 0.5 * n_effective.ln()
        + n_effective * (t.theta * t.psi_dot - t.psi);
    BigH {
        log_value,
        value: log_value.exp(),
    }
}

/// Rational approximation of the boundary-overshoot correction,
/// `nu(x) = (2/x)(Phi(x/2) - 1/2) / ((x/2) Phi(x/2) + phi(x/2))`.
pub fn nu_approx(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid("x", format!("{x} is not a nonnegative number")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let half = 0.5 * x;
    let e = erf(half / std::f64::consts::SQRT_2);
    // (2/x)(Phi - 1/2) = erf(x / (2 sqrt 2)) / x
    let num = e / x;
    let cdf = 0.5 * (1.0 + e);
    let pdf = (-0.5 * half * half - LN_SQRT_2PI).exp();
    Ok(num / (half * cdf + pdf))
}
