//! Globally adaptive Gauss-Kronrod (7/15) quadrature for vector-valued
//! integrands sharing one set of abscissae.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights for the abscissae `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 2000;

#[derive(Debug, Clone, Copy)]
struct Piece<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    err: [f64; K],
}

fn kronrod<const K: usize, F>(f: &mut F, a: f64, b: f64) -> Piece<K>
where
    F: FnMut(f64) -> [f64; K],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut k15 = [0.0; K];
    let mut g7 = [0.0; K];
    for c in 0..K {
        k15[c] = fc[c] * WGK[7];
        g7[c] = fc[c] * WG[3];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let lo = f(center - dx);
        let hi = f(center + dx);
        for c in 0..K {
            let s = lo[c] + hi[c];
            k15[c] += WGK[j] * s;
            if j % 2 == 1 {
                g7[c] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; K];
    let mut err = [0.0; K];
    for c in 0..K {
        value[c] = k15[c] * half;
        err[c] = ((k15[c] - g7[c]) * half).abs();
    }
    Piece { a, b, value, err }
}

/// Integrates every component of `f` over `[a, b]`, refining the worst
/// interval until each component's summed error estimate is within
/// `rel_tol` of its magnitude. `initial` sets how many equal pieces the
/// range starts with.
pub fn integrate<const K: usize, F>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    initial: usize,
) -> Result<[f64; K]>
where
    F: FnMut(f64) -> [f64; K],
{
    integrate_scaled(f, a, b, rel_tol, initial, |total| total.map(f64::abs))
}

/// As [`integrate`], with the magnitude each component's error is measured
/// against supplied by `scale` from the running totals. Useful when a
/// component may legitimately integrate to nearly zero.
pub fn integrate_scaled<const K: usize, F, S>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    initial: usize,
    scale: S,
) -> Result<[f64; K]>
where
    F: FnMut(f64) -> [f64; K],
    S: Fn(&[f64; K]) -> [f64; K],
{
    if a == b {
        return Ok([0.0; K]);
    }
    let n0 = initial.max(1);
    let width = (b - a) / n0 as f64;
    let mut pieces: Vec<Piece<K>> = (0..n0)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == n0 { b } else { lo + width };
            kronrod(&mut f, lo, hi)
        })
        .collect();
    loop {
        let mut total = [0.0; K];
        let mut total_err = [0.0; K];
        for p in &pieces {
            for c in 0..K {
                total[c] += p.value[c];
                total_err[c] += p.err[c];
            }
        }
        let scale = scale(&total).map(|v| v.max(f64::MIN_POSITIVE));
        let converged = (0..K).all(|c| total_err[c] <= rel_tol * scale[c]);
        if converged {
            return Ok(total);
        }
        let worst_rel = (0..K)
            .map(|c| total_err[c] / scale[c])
            .fold(0.0, f64::max);
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                tol: rel_tol,
                err: worst_rel,
            });
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = (0..K).map(|c| p.err[c] / scale[c]).fold(0.0, f64::max);
                (i, r)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid == p.a || mid == p.b {
            // interval cannot be split further in floating point
            return Err(Error::Quadrature {
                tol: rel_tol,
                err: worst_rel,
            });
        }
        pieces.push(kronrod(&mut f, p.a, mid));
        pieces.push(kronrod(&mut f, mid, p.b));
    }
}
