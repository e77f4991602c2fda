//! Contour quadrature on spectral bands.
//!
//! All rules use the cosine substitution `lambda = c + r cos(theta)` over a
//! band `[c - r, c + r]`, whose Jacobian `r sin(theta)` vanishes like a
//! square root at both edges and therefore absorbs the inverse-square-root
//! edge singularities of the spectral weight. Two node families:
//!
//! * `CosineMidpoint` — equispaced midpoints in `theta`. For integrands that
//!   are smooth over the whole closed band (after the substitution the
//!   integrand is a smooth periodic function) the midpoint rule converges
//!   spectrally. These rules also carry Fejér weights on the same nodes so
//!   that plain `d lambda` integrals (no edge Jacobian wanted) are exact for
//!   polynomials.
//! * `CosineGauss` — Gauss–Legendre nodes in `theta`, used on sub-intervals
//!   of a band (where the midpoint rule loses its periodic magic) such as
//!   the pieces created by splitting a band at the other background's edges.
//!
//! A contour integral over both sheets of a band reduces, for integrands
//! with the conjugation symmetry `f(lambda - i0) = conj f(lambda + i0)`, to
//! `oint f = 2i * sum_j w_j Im f(lambda_j + i0)`; `contour_integral`
//! evaluates that and spot-checks the symmetry on a few nodes.

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::background::Sheet;
use crate::error::{Error, Result};

/// Node family of a rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    /// Midpoint nodes in the substituted angle, full-band use.
    CosineMidpoint,
    /// Gauss–Legendre nodes in the substituted angle, sub-interval use.
    CosineGauss,
}

/// A quadrature rule on (a piece of) one spectral band.
///
/// `weight` are the contour weights (they include the Jacobian
/// `r sin(theta)`), so `sum w_j g(lambda_j)` approximates
/// `integral g(lambda) dlambda` for `g` smooth after the substitution —
/// including `g` with inverse-square-root singularities at the enclosing
/// band's edges. `plain_weight` are weights for ordinary `d lambda`
/// integration of smooth integrands on the same nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRule {
    /// Enclosing band (the cosine substitution refers to these endpoints).
    pub band: (f64, f64),
    /// Sub-interval actually covered (equals `band` for full-band rules).
    pub piece: (f64, f64),
    pub kind: RuleKind,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weight: Vec<f64>,
    pub plain_weight: Vec<f64>,
}

impl BandRule {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if hi - lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::EmptyBand { lower: lo, upper: hi });
    }
    Ok(())
}

/// Full-band midpoint rule with `n` nodes, ordered by ascending `lambda`.
pub fn band_rule(lo: f64, hi: f64, n: usize) -> Result<BandRule> {
    check_interval(lo, hi)?;
    if n == 0 {
        return Err(Error::Config("quadrature rule needs at least one node".into()));
    }
    let c = 0.5 * (lo + hi);
    let r = 0.5 * (hi - lo);
    let mut theta = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    let mut plain_weight = Vec::with_capacity(n);
    let step = std::f64::consts::PI / n as f64;
    for j in 0..n {
        // Descending theta so lambda comes out ascending.
        let t = (n as f64 - j as f64 - 0.5) * step;
        theta.push(t);
        lambda.push(c + r * t.cos());
        weight.push(step * r * t.sin());
        // Fejér weight on the same (Chebyshev) nodes, scaled to the band.
        let mut s = 0.0;
        for m in 1..=(n / 2) {
            s += (2.0 * m as f64 * t).cos() / (4.0 * (m * m) as f64 - 1.0);
        }
        plain_weight.push((2.0 / n as f64) * (1.0 - 2.0 * s) * r);
    }
    Ok(BandRule {
        band: (lo, hi),
        piece: (lo, hi),
        kind: RuleKind::CosineMidpoint,
        theta,
        lambda,
        weight,
        plain_weight,
    })
}

/// Gauss–Legendre rule in a *piece-local* cosine angle on a sub-interval
/// `[piece_lo, piece_hi]` of the band `[band_lo, band_hi]`, with `n` nodes.
///
/// The substitution `lambda = c_p + r_p cos(phi)` refers to the piece
/// itself, so its Jacobian vanishes like a square root at both piece
/// endpoints. That simultaneously absorbs inverse-square-root singularities
/// at true band edges and square-root kinks at interior cut points (both
/// only ever occur at piece endpoints after splitting), leaving an integrand
/// analytic in `phi` — Gauss–Legendre then converges spectrally.
pub fn subinterval_rule(
    band_lo: f64,
    band_hi: f64,
    piece_lo: f64,
    piece_hi: f64,
    n: usize,
) -> Result<BandRule> {
    check_interval(band_lo, band_hi)?;
    check_interval(piece_lo, piece_hi)?;
    if piece_lo < band_lo - 1e-12 * (band_hi - band_lo)
        || piece_hi > band_hi + 1e-12 * (band_hi - band_lo)
    {
        return Err(Error::RangeMismatch(format!(
            "piece [{piece_lo}, {piece_hi}] is not contained in band [{band_lo}, {band_hi}]"
        )));
    }
    if n == 0 {
        return Err(Error::Config("quadrature rule needs at least one node".into()));
    }
    let c = 0.5 * (piece_lo + piece_hi);
    let r = 0.5 * (piece_hi - piece_lo);
    let gl = GaussLegendre::new(n)
        .map_err(|e| Error::Config(format!("Gauss–Legendre rule of degree {n}: {e}")))?;
    let mut pairs: Vec<(f64, f64)> = gl
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| {
            // Map [-1, 1] to phi in [0, pi].
            let phi = 0.5 * std::f64::consts::PI * (x + 1.0);
            (phi, 0.5 * std::f64::consts::PI * w)
        })
        .collect();
    // Ascending lambda = descending phi.
    pairs.sort_by(|p, q| q.0.partial_cmp(&p.0).unwrap());
    let mut theta = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for (phi, wt) in pairs {
        theta.push(phi);
        lambda.push(c + r * phi.cos());
        weight.push(wt * r * phi.sin());
    }
    // The Jacobian is part of the substitution, so the same weights handle
    // plain d-lambda integration of smooth integrands.
    let plain_weight = weight.clone();
    Ok(BandRule {
        band: (band_lo, band_hi),
        piece: (piece_lo, piece_hi),
        kind: RuleKind::CosineGauss,
        theta,
        lambda,
        weight,
        plain_weight,
    })
}

/// Contour integral `oint f dlambda` over both sheets of this rule's piece,
/// for integrands with the symmetry `f(lambda, Lower) = conj f(lambda,
/// Upper)`: evaluates `2i sum w_j Im f(lambda_j, Upper)` and verifies the
/// symmetry at up to three nodes (first, middle, last).
pub fn contour_integral<F>(rule: &BandRule, mut f: F) -> Result<Complex64>
where
    F: FnMut(f64, Sheet) -> Result<Complex64>,
{
    let n = rule.len();
    let mut acc = 0.0_f64;
    let mut upper = Vec::with_capacity(n);
    for j in 0..n {
        let v = f(rule.lambda[j], Sheet::Upper)?;
        acc += rule.weight[j] * v.im;
        upper.push(v);
    }
    let mut checks = vec![0, n / 2, n.saturating_sub(1)];
    checks.dedup();
    for j in checks {
        let lower = f(rule.lambda[j], Sheet::Lower)?;
        let defect = (lower - upper[j].conj()).norm();
        let scale = upper[j].norm().max(1.0);
        if defect > 1e-8 * scale {
            return Err(Error::SymmetryViolation { lambda: rule.lambda[j], defect });
        }
    }
    Ok(Complex64::new(0.0, 2.0 * acc))
}

/// Plain integral `integral f(lambda) dlambda` over the rule's piece for an
/// integrand smooth up to the edges (no weight singularity).
pub fn integrate_plain<F>(rule: &BandRule, mut f: F) -> Result<Complex64>
where
    F: FnMut(f64) -> Result<Complex64>,
{
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..rule.len() {
        acc += rule.plain_weight[j] * f(rule.lambda[j])?;
    }
    Ok(acc)
}

/// Contour integral with node doubling until two consecutive refinements
/// agree within `tol` (absolute), starting from `start` nodes and giving up
/// at `cap`.
pub fn converged_contour<F>(
    band: (f64, f64),
    mut f: F,
    tol: f64,
    start: usize,
    cap: usize,
) -> Result<Complex64>
where
    F: FnMut(f64, Sheet) -> Result<Complex64>,
{
    let mut n = start.max(4);
    let rule = band_rule(band.0, band.1, n)?;
    let mut prev = contour_integral(&rule, &mut f)?;
    while n * 2 <= cap {
        n *= 2;
        let rule = band_rule(band.0, band.1, n)?;
        let next = contour_integral(&rule, &mut f)?;
        if (next - prev).norm() <= tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureBudgetExceeded { nodes: cap })
}
