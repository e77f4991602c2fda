//! Direct scattering for steplike operators: Jost solutions, Wronskians,
//! the scattering matrix, the two-background spectrum partition, discrete
//! spectrum with norming constants, virtual levels, scattering-data assembly
//! and validation, and the forward transformation kernel.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{
    floquet_row, multiplier, pole_factors, weight_rho, weight_rho_product, Sheet, Side,
    SpectralPoint,
};
use crate::error::{Error, Result};
use crate::operator::SteplikeOperator;
use crate::quadrature::{band_rule, subinterval_rule, BandRule};
use crate::report::ValidationReport;
use crate::RunConfig;

// ---------------------------------------------------------------------------
// Jost solutions
// ---------------------------------------------------------------------------

/// A Jost solution of the steplike operator on a site range: agrees exactly
/// with the principal Floquet solution of its side's background beyond the
/// perturbed region and is continued across it by the exact three-term
/// recursion.
#[derive(Clone, Debug)]
pub struct JostSolution {
    pub side: Side,
    pub point: SpectralPoint,
    pub lo: i64,
    pub values: Vec<Complex64>,
}

impl JostSolution {
    #[inline]
    pub fn value(&self, n: i64) -> Complex64 {
        self.values[(n - self.lo) as usize]
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.values.len() as i64 - 1
    }
}

/// First site at which the right Jost solution coincides with the right
/// background's Floquet solution (all equations at sites >= this use
/// unperturbed right coefficients).
fn plus_anchor(op: &SteplikeOperator) -> i64 {
    op.window.map(|w| w.1 + 1).unwrap_or(0).max(0)
}

/// Last site at which the left Jost solution coincides with the left
/// background's Floquet solution.
fn minus_anchor(op: &SteplikeOperator) -> i64 {
    op.window.map(|w| w.0 - 1).unwrap_or(-1).min(-1)
}

/// Jost solution of `side` at `pt` on the inclusive site range `[lo, hi]`.
///
/// The recursion from the anchor runs *into* the region where the solution
/// is non-decaying (toward the opposite infinity off the spectrum, neutral
/// on the spectrum), so it is numerically stable.
pub fn jost(
    op: &SteplikeOperator,
    pt: SpectralPoint,
    side: Side,
    lo: i64,
    hi: i64,
) -> Result<JostSolution> {
    if lo > hi {
        return Err(Error::RangeMismatch(format!("empty site range [{lo}, {hi}]")));
    }
    let z = pt.argument();
    match side {
        Side::Plus => {
            let anchor = plus_anchor(op);
            let top = hi.max(anchor + 1);
            let start = lo.min(anchor);
            let mut values = vec![Complex64::default(); (top - start + 1) as usize];
            let bg = floquet_row(&op.right, pt, anchor, top)?;
            for (i, v) in bg.into_iter().enumerate() {
                values[(anchor - start) as usize + i] = v;
            }
            for n in (start..anchor).rev() {
                let psi1 = values[(n + 1 - start) as usize];
                let psi2 = values[(n + 2 - start) as usize];
                let (a1, b1) = op.coefficient(n + 1);
                values[(n - start) as usize] = ((z - b1) * psi1 - a1 * psi2) / op.a(n);
            }
            let offset = (lo - start) as usize;
            let len = (hi - lo + 1) as usize;
            Ok(JostSolution {
                side,
                point: pt,
                lo,
                values: values[offset..offset + len].to_vec(),
            })
        }
        Side::Minus => {
            let anchor = minus_anchor(op);
            let bottom = lo.min(anchor - 1);
            let top = hi.max(anchor);
            let mut values = vec![Complex64::default(); (top - bottom + 1) as usize];
            let bg = floquet_row(&op.left, pt, bottom, anchor)?;
            for (i, v) in bg.into_iter().enumerate() {
                values[i] = v;
            }
            for n in anchor + 1..=top {
                let psi1 = values[(n - 1 - bottom) as usize];
                let psi2 = values[(n - 2 - bottom) as usize];
                let (a2, b1) = (op.a(n - 2), op.b(n - 1));
                values[(n - bottom) as usize] =
                    ((z - b1) * psi1 - a2 * psi2) / op.a(n - 1);
            }
            let offset = (lo - bottom) as usize;
            let len = (hi - lo + 1) as usize;
            Ok(JostSolution {
                side,
                point: pt,
                lo,
                values: values[offset..offset + len].to_vec(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Wronskians
// ---------------------------------------------------------------------------

/// The Jost Wronskian `W = W(psi_minus, psi_plus)` and its pole-regularized
/// companions, plus a site-independence diagnostic.
#[derive(Clone, Copy, Debug)]
pub struct WronskianValues {
    /// `W(psi_minus, psi_plus)` evaluated at site 0.
    pub w: Complex64,
    /// `delta_plus delta_minus W`: regular at principal-pole Dirichlet
    /// points, real on the real axis off the spectrum.
    pub w_tilde: Complex64,
    /// `delta_hat_plus delta_hat_minus W`: additionally bounded at
    /// edge-coincident Dirichlet points.
    pub w_hat: Complex64,
    /// Relative spread between evaluations at two different sites (an
    /// invariant-of-`n` diagnostic; should be at rounding level).
    pub spread: f64,
}

/// Wronskian of a solution pair at site `n`:
/// `a(n) (f(n) g(n+1) - f(n+1) g(n))`.
fn wronskian_at(op: &SteplikeOperator, f: &JostSolution, g: &JostSolution, n: i64) -> Complex64 {
    op.a(n) * (f.value(n) * g.value(n + 1) - f.value(n + 1) * g.value(n))
}

/// Jost Wronskian with regularized companions at a spectral point.
pub fn wronskian(op: &SteplikeOperator, pt: SpectralPoint) -> Result<WronskianValues> {
    let s1 = 0_i64;
    let s2 = plus_anchor(op).max(1);
    let lo = s1.min(s2);
    let hi = s1.max(s2) + 1;
    let minus = jost(op, pt, Side::Minus, lo, hi)?;
    let plus = jost(op, pt, Side::Plus, lo, hi)?;
    let w1 = wronskian_at(op, &minus, &plus, s1);
    let w2 = wronskian_at(op, &minus, &plus, s2);
    let spread = (w1 - w2).norm() / w1.norm().max(1.0);
    let fp = pole_factors(&op.right, pt);
    let fm = pole_factors(&op.left, pt);
    Ok(WronskianValues {
        w: w1,
        w_tilde: fp.delta * fm.delta * w1,
        w_hat: fp.delta_hat * fm.delta_hat * w1,
        spread,
    })
}

// ---------------------------------------------------------------------------
// Scattering matrix
// ---------------------------------------------------------------------------

/// Transmission and reflection coefficients of `side` at the boundary value
/// `lambda ± i0`, from Wronskians of lattice Jost values:
/// `T = W(conj psi, psi) / W(psi_other, psi)` and
/// `R = -W(psi_other, conj psi) / W(psi_other, psi)`.
pub(crate) fn scattering_at(
    op: &SteplikeOperator,
    lambda: f64,
    side: Side,
    sheet: Sheet,
) -> Result<(Complex64, Complex64)> {
    let pt = SpectralPoint::Boundary { lambda, sheet };
    let own = jost(op, pt, side, 0, 1)?;
    let other = jost(op, pt, side.opposite(), 0, 1)?;
    let a0 = op.a(0);
    let w_of = |f: (Complex64, Complex64), g: (Complex64, Complex64)| a0 * (f.0 * g.1 - f.1 * g.0);
    let o = (own.value(0), own.value(1));
    let oc = (o.0.conj(), o.1.conj());
    let x = (other.value(0), other.value(1));
    let den = w_of(x, o);
    let t_num = w_of(oc, o);
    if den.norm() < 1e-10 * t_num.norm() {
        return Err(Error::VirtualLevelNearby(lambda));
    }
    let t = t_num / den;
    let r = -w_of(x, oc) / den;
    Ok((t, r))
}

/// Scattering coefficients `(T, R)` of `side` on the upper sheet at
/// `lambda`, which must lie inside a band of that side's background with at
/// least `config.edge_offset * diameter` clearance from every band edge.
pub fn scattering_matrix(
    op: &SteplikeOperator,
    lambda: f64,
    side: Side,
    config: &RunConfig,
) -> Result<(Complex64, Complex64)> {
    let model = op.model(side);
    let clearance = config.edge_offset * model.bands.diameter();
    if model.bands.edge_distance(lambda) < clearance {
        return Err(Error::TooCloseToEdge(lambda));
    }
    if !model.bands.interior_contains(lambda, 0.0) {
        return Err(Error::OffSpectrum(lambda));
    }
    scattering_at(op, lambda, side, Sheet::Upper)
}

/// Analytic continuation of the transmission coefficient off the spectrum:
/// `T(z) = 1 / (rho(z) W(z))` with this side's background weight.
pub fn transmission_off(op: &SteplikeOperator, z: Complex64, side: Side) -> Result<Complex64> {
    let pt = SpectralPoint::complex(z);
    let rho = weight_rho(op.model(side), pt)?;
    let w = wronskian(op, pt)?.w;
    Ok(1.0 / (rho * w))
}

/// Limits of the two transmission coefficients at infinity, by two-point
/// Richardson extrapolation along the real axis (`T(z) = T(inf) + c/z +
/// O(1/z^2)`, so `2 T(2 z0) - T(z0)` cancels the `1/z` term).
pub fn t_infinity(op: &SteplikeOperator) -> Result<(Complex64, Complex64)> {
    let z0 = 1e6;
    let mut out = [Complex64::default(); 2];
    for (i, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        let t1 = transmission_off(op, Complex64::new(z0, 0.0), side)?;
        let t2 = transmission_off(op, Complex64::new(2.0 * z0, 0.0), side)?;
        out[i] = 2.0 * t2 - t1;
    }
    Ok((out[0], out[1]))
}

// ---------------------------------------------------------------------------
// Spectrum partition
// ---------------------------------------------------------------------------

/// A quadrature piece of one side's spectrum: the enclosing band and the
/// covered sub-interval (equal when the band has no interior cut points).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceSpan {
    pub band: (f64, f64),
    pub piece: (f64, f64),
}

/// Partition of the two background spectra into the overlap `sigma2` (where
/// both sides are oscillatory) and the one-sided parts `sigma1_±`, plus the
/// band pieces obtained by cutting each side's bands at the other side's
/// interior edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPartition {
    /// Endpoint tolerance used for all interval comparisons.
    pub tol: f64,
    /// `sigma_+ ∩ sigma_-`.
    pub sigma2: Vec<(f64, f64)>,
    /// Closure of `sigma_+ \ sigma2`.
    pub sigma1_plus: Vec<(f64, f64)>,
    /// Closure of `sigma_- \ sigma2`.
    pub sigma1_minus: Vec<(f64, f64)>,
    /// Bands of `sigma_+` split at interior edges of `sigma_-`.
    pub pieces_plus: Vec<PieceSpan>,
    /// Bands of `sigma_-` split at interior edges of `sigma_+`.
    pub pieces_minus: Vec<PieceSpan>,
    /// Maximal intervals of `sigma_+ ∪ sigma_-`.
    pub union_intervals: Vec<(f64, f64)>,
}

fn subtract_intervals(base: (f64, f64), cuts: &[(f64, f64)], tol: f64) -> Vec<(f64, f64)> {
    let mut pieces = vec![base];
    for &(clo, chi) in cuts {
        let mut next = Vec::new();
        for (lo, hi) in pieces {
            if chi <= lo + tol || clo >= hi - tol {
                next.push((lo, hi));
                continue;
            }
            if clo > lo + tol {
                next.push((lo, clo));
            }
            if chi < hi - tol {
                next.push((chi, hi));
            }
        }
        pieces = next;
    }
    pieces.retain(|&(lo, hi)| hi - lo > tol);
    pieces
}

fn point_in_intervals(x: f64, list: &[(f64, f64)], tol: f64) -> bool {
    list.iter().any(|&(lo, hi)| x >= lo - tol && x <= hi + tol)
}

/// Split one side's bands at the other side's edges and classify overlaps.
pub fn partition(op: &SteplikeOperator) -> SpectrumPartition {
    let bands_p = op.right.bands.bands();
    let bands_m = op.left.bands.bands();
    let diam = op.right.bands.diameter().max(op.left.bands.diameter());
    let tol = 1e-12 * diam;

    let mut sigma2 = Vec::new();
    for &(plo, phi) in &bands_p {
        for &(mlo, mhi) in &bands_m {
            let lo = plo.max(mlo);
            let hi = phi.min(mhi);
            if hi - lo > tol {
                sigma2.push((lo, hi));
            }
        }
    }
    sigma2.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    let one_sided = |bands: &[(f64, f64)]| -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &b in bands {
            out.extend(subtract_intervals(b, &sigma2, tol));
        }
        out
    };
    let sigma1_plus = one_sided(&bands_p);
    let sigma1_minus = one_sided(&bands_m);

    let split = |bands: &[(f64, f64)], other_edges: &[f64]| -> Vec<PieceSpan> {
        let mut out = Vec::new();
        for &(lo, hi) in bands {
            let mut cuts: Vec<f64> = other_edges
                .iter()
                .copied()
                .filter(|&e| e > lo + tol && e < hi - tol)
                .collect();
            cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut prev = lo;
            for c in cuts {
                out.push(PieceSpan { band: (lo, hi), piece: (prev, c) });
                prev = c;
            }
            out.push(PieceSpan { band: (lo, hi), piece: (prev, hi) });
        }
        out
    };
    let pieces_plus = split(&bands_p, &op.left.bands.edges);
    let pieces_minus = split(&bands_m, &op.right.bands.edges);

    // Union intervals.
    let mut all: Vec<(f64, f64)> = bands_p.iter().chain(bands_m.iter()).copied().collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut union_intervals: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in all {
        match union_intervals.last_mut() {
            Some(last) if lo <= last.1 + tol => last.1 = last.1.max(hi),
            _ => union_intervals.push((lo, hi)),
        }
    }

    SpectrumPartition {
        tol,
        sigma2,
        sigma1_plus,
        sigma1_minus,
        pieces_plus,
        pieces_minus,
        union_intervals,
    }
}

impl SpectrumPartition {
    /// True if `lambda` lies in the two-sided overlap region.
    pub fn in_sigma2(&self, lambda: f64) -> bool {
        point_in_intervals(lambda, &self.sigma2, self.tol)
    }

    /// Gaps of the union spectrum between `bound_lo` and `bound_hi`
    /// (including the two unbounded gaps clipped to those bounds).
    pub fn union_gaps(&self, bound_lo: f64, bound_hi: f64) -> Vec<(f64, f64)> {
        let mut gaps = Vec::new();
        let first = self.union_intervals.first().map(|i| i.0).unwrap_or(bound_hi);
        let last = self.union_intervals.last().map(|i| i.1).unwrap_or(bound_lo);
        if first > bound_lo {
            gaps.push((bound_lo, first));
        }
        for w in self.union_intervals.windows(2) {
            gaps.push((w[0].1, w[1].0));
        }
        if bound_hi > last {
            gaps.push((last, bound_hi));
        }
        gaps
    }

    /// True if `lambda` lies in the union of both spectra.
    pub fn in_union(&self, lambda: f64) -> bool {
        point_in_intervals(lambda, &self.union_intervals, 0.0)
    }
}

// ---------------------------------------------------------------------------
// Discrete spectrum
// ---------------------------------------------------------------------------

/// Eigenvalues in the gaps of the union spectrum together with norming
/// constants of both Jost families and consistency diagnostics. All vectors
/// run parallel to `eigenvalues`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Right norming constants `1 / sum_n psi_tilde_plus(n)^2` (regularized
    /// Jost solutions, so finite near Dirichlet poles).
    pub gamma_plus: Vec<f64>,
    /// Left norming constants.
    pub gamma_minus: Vec<f64>,
    /// Proportionality constant `psi_tilde_plus = c_plus psi_tilde_minus`.
    pub c_plus: Vec<f64>,
    /// Independent evaluation of the reciprocal constant.
    pub c_minus: Vec<f64>,
    /// `|(d W_tilde / dz)^2 gamma_plus gamma_minus - 1|` at the eigenvalue.
    pub derivative_dev: Vec<f64>,
}

/// Berezin-type enclosure of the whole spectrum from coefficient bounds,
/// padded by one unit on each side.
fn eigen_bounds(op: &SteplikeOperator) -> (f64, f64) {
    let mut a_max = 0.0_f64;
    let mut b_min = f64::INFINITY;
    let mut b_max = f64::NEG_INFINITY;
    for m in [&op.left, &op.right] {
        for &a in &m.coeffs.a {
            a_max = a_max.max(a);
        }
        for &b in &m.coeffs.b {
            b_min = b_min.min(b);
            b_max = b_max.max(b);
        }
    }
    if let Some((wlo, whi)) = op.window {
        for n in wlo..=whi {
            let (a, b) = op.coefficient(n);
            a_max = a_max.max(a);
            b_min = b_min.min(b);
            b_max = b_max.max(b);
        }
    }
    (b_min - 2.0 * a_max - 1.0, b_max + 2.0 * a_max + 1.0)
}

fn bisect_root<F>(mut f: F, mut lo: f64, mut hi: f64, flo: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let slo = flo > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == slo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Real regularized Wronskian on the real axis off the union spectrum.
fn w_tilde_real(op: &SteplikeOperator, x: f64) -> Result<f64> {
    Ok(wronskian(op, SpectralPoint::real(x))?.w_tilde.re)
}

const GAP_SCAN_POINTS: usize = 400;
const DIP_REL: f64 = 1e-10;
/// Relative distance (times the spectrum diameter) below which an
/// eigenvalue is rejected as colliding with a Dirichlet point or band edge.
pub const ROOT_COLLISION_TOL_REL: f64 = 1e-9;

fn scan_gap_roots(
    op: &SteplikeOperator,
    glo: f64,
    ghi: f64,
    points: usize,
    roots: &mut Vec<f64>,
) -> Result<()> {
    let step = (ghi - glo) / (points as f64 + 1.0);
    let xs: Vec<f64> = (1..=points).map(|i| glo + step * i as f64).collect();
    let mut vals = Vec::with_capacity(xs.len());
    for &x in &xs {
        vals.push(w_tilde_real(op, x)?);
    }
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..xs.len() - 1 {
        if vals[i] == 0.0 {
            roots.push(xs[i]);
        } else if (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
            roots.push(bisect_root(
                |x| w_tilde_real(op, x),
                xs[i],
                xs[i + 1],
                vals[i],
            )?);
        } else if i > 0
            && points == GAP_SCAN_POINTS
            && vals[i].abs() < DIP_REL * scale
            && vals[i].abs() < vals[i - 1].abs()
            && vals[i].abs() < vals[i + 1].abs()
        {
            // A dip toward zero without a sign change on the coarse grid:
            // refine locally (once) in case a close root pair straddles the
            // sample.
            scan_gap_roots(op, xs[i - 1], xs[i + 1], 40, roots)?;
        }
    }
    if let Some(&last) = vals.last() {
        if last == 0.0 {
            roots.push(*xs.last().unwrap());
        }
    }
    Ok(())
}

/// Norming data of one eigenvalue: `(gamma_plus, gamma_minus, c_plus,
/// c_minus, derivative_dev)`.
fn norming_data(op: &SteplikeOperator, lambda: f64) -> Result<(f64, f64, f64, f64, f64)> {
    let pt = SpectralPoint::real(lambda);
    let np = op.right.coeffs.period as i64;
    let nm = op.left.coeffs.period as i64;
    let sp = plus_anchor(op);
    let sm = minus_anchor(op);
    let lo = sm - nm + 1;
    let hi = sp + np - 1;
    let pv = jost(op, pt, Side::Plus, lo, hi)?;
    let mv = jost(op, pt, Side::Minus, lo, hi)?;
    let dp = pole_factors(&op.right, pt).delta;
    let dm = pole_factors(&op.left, pt).delta;
    let reg = |vals: &[Complex64], d: Complex64| -> Vec<f64> {
        vals.iter().map(|v| (d * v).re).collect()
    };
    let ptv = reg(&pv.values, dp);
    let mtv = reg(&mv.values, dm);
    let idx = |n: i64| (n - lo) as usize;

    let argmax = |vals: &[f64]| {
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if v.abs() > vals[best].abs() {
                best = i;
            }
        }
        best
    };
    let ip = argmax(&ptv);
    let cp = ptv[ip] / mtv[ip];
    let im = argmax(&mtv);
    let cm = mtv[im] / ptv[im];

    let scale = ptv[ip].abs();
    let defect = ptv
        .iter()
        .zip(&mtv)
        .map(|(p, m)| (p - cp * m).abs())
        .fold(0.0_f64, f64::max)
        / scale;
    if defect > 1e-6 {
        return Err(Error::Internal(format!(
            "Jost solutions not proportional at candidate eigenvalue {lambda}: defect {defect:.3e}"
        )));
    }

    let w = multiplier(&op.right, pt)?.re;
    let v = multiplier(&op.left, pt)?.re;
    let w2 = w * w;
    let vi2 = 1.0 / (v * v);
    let block = |vals: &[f64], from: i64, to: i64| -> f64 {
        (from..=to).map(|n| vals[idx(n)] * vals[idx(n)]).sum()
    };
    let b_right = block(&ptv, sp, sp + np - 1);
    let b_left = block(&mtv, sm - nm + 1, sm);
    let mid_p = if sm + 1 <= sp - 1 { block(&ptv, sm + 1, sp - 1) } else { 0.0 };
    let mid_m = if sm + 1 <= sp - 1 { block(&mtv, sm + 1, sp - 1) } else { 0.0 };
    let s_plus = mid_p + b_right / (1.0 - w2) + cp * cp * b_left / (1.0 - vi2);
    let s_minus = mid_m + b_left / (1.0 - vi2) + cm * cm * b_right / (1.0 - w2);
    let gp = 1.0 / s_plus;
    let gm = 1.0 / s_minus;

    let h = 1e-6 * lambda.abs().max(1.0);
    let dw = (w_tilde_real(op, lambda + h)? - w_tilde_real(op, lambda - h)?) / (2.0 * h);
    let dev = (dw * dw * gp * gm - 1.0).abs();
    Ok((gp, gm, cp, cm, dev))
}

/// Locate all eigenvalues (zeros of the regularized Wronskian in the gaps
/// of the union spectrum) and compute their norming data.
pub fn discrete_spectrum(op: &SteplikeOperator) -> Result<DiscreteSpectrum> {
    let part = partition(op);
    let diam = op.right.bands.diameter().max(op.left.bands.diameter());
    let (bound_lo, bound_hi) = eigen_bounds(op);
    let mut roots = Vec::new();
    for (glo, ghi) in part.union_gaps(bound_lo, bound_hi) {
        if ghi - glo <= 0.0 {
            continue;
        }
        scan_gap_roots(op, glo, ghi, GAP_SCAN_POINTS, &mut roots)?;
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10 * diam);

    let collision = ROOT_COLLISION_TOL_REL * diam;
    let mut out = DiscreteSpectrum::default();
    for lambda in roots {
        for m in [&op.left, &op.right] {
            for d in &m.dirichlet {
                if (lambda - d.mu).abs() < collision {
                    return Err(Error::RootAtDirichletPoint(lambda));
                }
            }
            for &e in &m.bands.edges {
                if (lambda - e).abs() < collision {
                    return Err(Error::TooCloseToEdge(lambda));
                }
            }
        }
        let (gp, gm, cp, cm, dev) = norming_data(op, lambda)?;
        out.eigenvalues.push(lambda);
        out.gamma_plus.push(gp);
        out.gamma_minus.push(gm);
        out.c_plus.push(cp);
        out.c_minus.push(cm);
        out.derivative_dev.push(dev);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Virtual levels
// ---------------------------------------------------------------------------

/// Absolute probe offsets used for boundary extrapolation at band edges.
pub const PROBE_OFFSETS: [f64; 3] = [1e-4, 1e-6, 1e-8];

/// Lagrange weights extrapolating samples at `s = sqrt(offset)` to `s = 0`.
fn sqrt_extrapolation_weights() -> [f64; 3] {
    let s: Vec<f64> = PROBE_OFFSETS.iter().map(|h| h.sqrt()).collect();
    let mut out = [0.0; 3];
    for j in 0..3 {
        let mut l = 1.0;
        for (k, &sk) in s.iter().enumerate() {
            if k != j {
                l *= (0.0 - sk) / (s[j] - sk);
            }
        }
        out[j] = l;
    }
    out
}

/// Probe of the bounded regularized Wronskian at one band edge along a fixed
/// offset ladder, with the square-root-extrapolated boundary value and the
/// virtual-level verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeProbe {
    pub edge: f64,
    /// +1.0 or -1.0: the probe direction chosen away from the owning band,
    /// preferring points off the union spectrum.
    pub direction: f64,
    /// `|W_hat|` at `edge + direction * offset` for each probe offset.
    pub samples: Vec<f64>,
    /// Extrapolated `|W_hat(edge)|` (linear behavior in sqrt(offset)).
    pub estimate: f64,
    pub is_virtual: bool,
}

/// Ratio of the extrapolated boundary value to the pooled sample median
/// below which an edge counts as a virtual level.
pub const VIRTUAL_LEVEL_REL: f64 = 1e-6;

/// Probe every band edge of both backgrounds for a vanishing Jost Wronskian
/// (virtual level / resonance).
pub fn virtual_levels(op: &SteplikeOperator) -> Result<Vec<EdgeProbe>> {
    let part = partition(op);
    let diam = op.right.bands.diameter().max(op.left.bands.diameter());
    let mut edges: Vec<f64> = op
        .left
        .bands
        .edges
        .iter()
        .chain(op.right.bands.edges.iter())
        .copied()
        .collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * diam);

    let weights = sqrt_extrapolation_weights();
    let mut probes = Vec::new();
    let mut pool = Vec::new();
    for e in edges {
        // Prefer the direction that leaves the union spectrum; otherwise
        // step away from the band this point is an edge of.
        let h0 = PROBE_OFFSETS[0];
        let direction = if !part.in_union(e + h0) {
            1.0
        } else if !part.in_union(e - h0) {
            -1.0
        } else {
            let own = [&op.left, &op.right]
                .iter()
                .find_map(|m| {
                    m.bands.bands().iter().find_map(|&(lo, hi)| {
                        if (e - lo).abs() < 1e-9 * diam {
                            Some(-1.0)
                        } else if (e - hi).abs() < 1e-9 * diam {
                            Some(1.0)
                        } else {
                            None
                        }
                    })
                })
                .unwrap_or(1.0);
            own
        };
        let mut samples = Vec::with_capacity(3);
        for h in PROBE_OFFSETS {
            let x = e + direction * h;
            let pt = if part.in_union(x) {
                SpectralPoint::upper(x)
            } else {
                SpectralPoint::real(x)
            };
            samples.push(wronskian(op, pt)?.w_hat.norm());
        }
        let estimate: f64 = weights.iter().zip(&samples).map(|(w, s)| w * s).sum();
        pool.extend(samples.iter().copied());
        probes.push(EdgeProbe {
            edge: e,
            direction,
            samples,
            estimate,
            is_virtual: false,
        });
    }
    pool.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = if pool.is_empty() { 0.0 } else { pool[pool.len() / 2] };
    for p in &mut probes {
        p.is_virtual = p.estimate.abs() < VIRTUAL_LEVEL_REL * median;
    }
    Ok(probes)
}

// ---------------------------------------------------------------------------
// Forward transformation kernel
// ---------------------------------------------------------------------------

/// Rows of the transformation kernel `K(n, m)` of one side, obtained from
/// the spectral projection of the Jost solution onto the background Floquet
/// family. For the right kernel a row has columns `m = n ..= m_hi`; for the
/// left kernel `m = m_lo ..= n` (entries outside vanish identically).
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub side: Side,
    pub n_lo: i64,
    pub n_hi: i64,
    pub m_lo: i64,
    pub m_hi: i64,
    rows: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn get(&self, n: i64, m: i64) -> f64 {
        let row = &self.rows[(n - self.n_lo) as usize];
        let j = match self.side {
            Side::Plus => m - n,
            Side::Minus => m - self.m_lo,
        };
        if j < 0 || j as usize >= row.len() {
            0.0
        } else {
            row[j as usize]
        }
    }
}

/// Compute kernel rows `K(n, .)` for `n` in `[n_lo, n_hi]` with `depth`
/// columns beyond the widest row, using `nodes` quadrature points per band:
/// `K(n, m) = (1/pi) int Im[psi(lambda, n) conj(psi_q(lambda, m))
/// rho(lambda)] dlambda` over this side's bands.
pub fn kernel_from_jost(
    op: &SteplikeOperator,
    side: Side,
    n_lo: i64,
    n_hi: i64,
    depth: i64,
    nodes: usize,
) -> Result<KernelTable> {
    if n_lo > n_hi || depth < 0 {
        return Err(Error::RangeMismatch(format!(
            "kernel range [{n_lo}, {n_hi}] with depth {depth}"
        )));
    }
    let model = op.model(side);
    let (m_lo, m_hi) = match side {
        Side::Plus => (n_lo, n_hi + depth),
        Side::Minus => (n_lo - depth, n_hi),
    };
    let mut rows: Vec<Vec<f64>> = (n_lo..=n_hi)
        .map(|n| {
            let len = match side {
                Side::Plus => m_hi - n + 1,
                Side::Minus => n - m_lo + 1,
            };
            vec![0.0; len as usize]
        })
        .collect();

    for (blo, bhi) in model.bands.bands() {
        let rule = band_rule(blo, bhi, nodes)?;
        for j in 0..rule.len() {
            let pt = SpectralPoint::upper(rule.lambda[j]);
            let psi = jost(op, pt, side, n_lo, n_hi)?;
            let bg = floquet_row(model, pt, m_lo, m_hi)?;
            let rho = weight_rho(model, pt)?;
            let w = rule.weight[j] / std::f64::consts::PI;
            for (i, row) in rows.iter_mut().enumerate() {
                let n = n_lo + i as i64;
                let contrib = psi.value(n) * rho;
                for (k, slot) in row.iter_mut().enumerate() {
                    let m = match side {
                        Side::Plus => n + k as i64,
                        Side::Minus => m_lo + k as i64,
                    };
                    *slot += w * (contrib * bg[(m - m_lo) as usize].conj()).im;
                }
            }
        }
    }
    Ok(KernelTable { side, n_lo, n_hi, m_lo, m_hi, rows })
}

/// Tail sum of the coefficient perturbation seen by one side's kernel:
/// for the right side `sum_{m > n} (b_q(m) - b(m))`, for the left side
/// `sum_{m < n} (b_q(m) - b(m))`, both finite.
pub fn perturbation_tail(op: &SteplikeOperator, side: Side, n: i64) -> f64 {
    let model = op.model(side);
    let mut total = 0.0;
    match side {
        Side::Plus => {
            let stop = plus_anchor(op);
            for m in n + 1..stop {
                total += model.coeffs.b(m) - op.b(m);
            }
        }
        Side::Minus => {
            let start = minus_anchor(op);
            for m in start + 1..n {
                total += model.coeffs.b(m) - op.b(m);
            }
        }
    }
    total
}

/// Relative defect of the kernel expansion `psi(z, n) = sum_m K(n, m)
/// psi_q(z, m)` at a real point far from the spectrum.
pub fn expansion_defect(
    op: &SteplikeOperator,
    table: &KernelTable,
    n: i64,
    z: f64,
) -> Result<f64> {
    let pt = SpectralPoint::real(z);
    let psi = jost(op, pt, table.side, n, n)?.value(n);
    let bg = floquet_row(op.model(table.side), pt, table.m_lo, table.m_hi)?;
    let mut sum = Complex64::new(0.0, 0.0);
    let (from, to) = match table.side {
        Side::Plus => (n, table.m_hi),
        Side::Minus => (table.m_lo, n),
    };
    for m in from..=to {
        sum += table.get(n, m) * bg[(m - table.m_lo) as usize];
    }
    Ok((psi - sum).norm() / psi.norm())
}

// ---------------------------------------------------------------------------
// Scattering data assembly
// ---------------------------------------------------------------------------

/// Sampled scattering coefficients on one quadrature piece of one side's
/// spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceGrid {
    pub side: Side,
    pub rule: BandRule,
    pub t: Vec<Complex64>,
    pub r: Vec<Complex64>,
    pub rho: Vec<Complex64>,
}

/// Transmitted-energy samples on a one-sided piece (used by the opposite
/// side's summation kernel).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubGrid {
    /// Side owning the interval (the grid feeds the opposite side's kernel).
    pub side: Side,
    pub rule: BandRule,
    pub t_abs2: Vec<f64>,
    pub rho_im: Vec<f64>,
}

/// All sampled grids of the scattering data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSet {
    pub plus: Vec<PieceGrid>,
    pub minus: Vec<PieceGrid>,
    pub sub_plus: Vec<SubGrid>,
    pub sub_minus: Vec<SubGrid>,
}

/// Complete scattering data of a steplike operator: discrete spectrum with
/// norming constants, virtual-level probes, the spectrum partition, and
/// sampled reflection/transmission grids on both spectra.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringData {
    pub eigenvalues: Vec<f64>,
    pub gamma_plus: Vec<f64>,
    pub gamma_minus: Vec<f64>,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub derivative_dev: Vec<f64>,
    pub virtual_levels: Vec<f64>,
    pub virtual_probes: Vec<EdgeProbe>,
    pub partition: SpectrumPartition,
    pub grids: GridSet,
}

fn grid_for_piece(
    op: &SteplikeOperator,
    side: Side,
    span: &PieceSpan,
    nodes: usize,
) -> Result<PieceGrid> {
    let rule = if span.piece == span.band {
        band_rule(span.band.0, span.band.1, nodes)?
    } else {
        subinterval_rule(span.band.0, span.band.1, span.piece.0, span.piece.1, nodes)?
    };
    let model = op.model(side);
    let mut t = Vec::with_capacity(rule.len());
    let mut r = Vec::with_capacity(rule.len());
    let mut rho = Vec::with_capacity(rule.len());
    for j in 0..rule.len() {
        let lambda = rule.lambda[j];
        let (tj, rj) = scattering_at(op, lambda, side, Sheet::Upper)?;
        t.push(tj);
        r.push(rj);
        rho.push(weight_rho(model, SpectralPoint::upper(lambda))?);
    }
    Ok(PieceGrid { side, rule, t, r, rho })
}

/// Compute the full scattering data of an operator.
pub fn assemble(op: &SteplikeOperator, config: &RunConfig) -> Result<ScatteringData> {
    let part = partition(op);
    let disc = discrete_spectrum(op)?;
    let probes = virtual_levels(op)?;

    let make_side = |side: Side, pieces: &[PieceSpan]| -> Result<Vec<PieceGrid>> {
        pieces
            .par_iter()
            .map(|span| grid_for_piece(op, side, span, config.quad_nodes))
            .collect()
    };
    let plus = make_side(Side::Plus, &part.pieces_plus)?;
    let minus = make_side(Side::Minus, &part.pieces_minus)?;

    let subs = |grids: &[PieceGrid]| -> Vec<SubGrid> {
        grids
            .iter()
            .filter(|g| {
                let mid = 0.5 * (g.rule.piece.0 + g.rule.piece.1);
                !part.in_sigma2(mid)
            })
            .map(|g| SubGrid {
                side: g.side,
                rule: g.rule.clone(),
                t_abs2: g.t.iter().map(|t| t.norm_sqr()).collect(),
                rho_im: g.rho.iter().map(|r| r.im).collect(),
            })
            .collect()
    };
    let sub_plus = subs(&plus);
    let sub_minus = subs(&minus);

    Ok(ScatteringData {
        eigenvalues: disc.eigenvalues,
        gamma_plus: disc.gamma_plus,
        gamma_minus: disc.gamma_minus,
        c_plus: disc.c_plus,
        c_minus: disc.c_minus,
        derivative_dev: disc.derivative_dev,
        virtual_levels: probes
            .iter()
            .filter(|p| p.is_virtual)
            .map(|p| p.edge)
            .collect(),
        virtual_probes: probes,
        partition: part,
        grids: GridSet { plus, minus, sub_plus, sub_minus },
    })
}

// ---------------------------------------------------------------------------
// Edge reflection limits
// ---------------------------------------------------------------------------

/// Extrapolated boundary value of one side's reflection coefficient at an
/// edge of that side's own spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLimit {
    pub edge: f64,
    pub side: Side,
    pub r_limit: Complex64,
    pub coincides_with_virtual: bool,
    /// True if a Dirichlet point of the side's background sits at this edge
    /// (there the limit stays unimodular but need not be -1).
    pub dirichlet_at_edge: bool,
}

/// Boundary values of each side's reflection coefficient at the edges of
/// its own spectrum, by probing into the band along the square-root offset
/// ladder. Away from virtual levels and edge-coincident Dirichlet points
/// the limit is -1; otherwise it stays unimodular but generally differs
/// from -1.
pub fn edge_reflection_limits(op: &SteplikeOperator) -> Result<Vec<EdgeLimit>> {
    let diam = op.right.bands.diameter().max(op.left.bands.diameter());
    let tol = 1e-9 * diam;
    let probes = virtual_levels(op)?;
    let weights = sqrt_extrapolation_weights();
    let mut out = Vec::new();
    for side in [Side::Plus, Side::Minus] {
        let model = op.model(side);
        for &e in &model.bands.edges {
            let Some(direction) = model.bands.bands().iter().find_map(|&(lo, hi)| {
                if (e - lo).abs() < tol {
                    Some(1.0)
                } else if (e - hi).abs() < tol {
                    Some(-1.0)
                } else {
                    None
                }
            }) else {
                continue;
            };
            let mut r_limit = Complex64::new(0.0, 0.0);
            for (w, h) in weights.iter().zip(PROBE_OFFSETS) {
                let (_, r) = scattering_at(op, e + direction * h, side, Sheet::Upper)?;
                r_limit += w * r;
            }
            out.push(EdgeLimit {
                edge: e,
                side,
                r_limit,
                coincides_with_virtual: probes
                    .iter()
                    .any(|p| p.is_virtual && (p.edge - e).abs() < tol),
                dirichlet_at_edge: model
                    .dirichlet
                    .iter()
                    .any(|d| (d.mu - e).abs() < tol),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn in_sigma2_grid(part: &SpectrumPartition, g: &PieceGrid) -> bool {
    part.in_sigma2(0.5 * (g.rule.piece.0 + g.rule.piece.1))
}

/// Run the full consistency suite against stored scattering data: the
/// algebraic identities of the scattering matrix on both spectra, reality
/// and conjugation symmetries, transmission limits, discrete-spectrum
/// identities, edge boundary values, and the kernel expansion.
pub fn validate(
    op: &SteplikeOperator,
    data: &ScatteringData,
    config: &RunConfig,
) -> Result<ValidationReport> {
    verify_layout(op, data, config)?;
    let part = &data.partition;
    let mut rep = ValidationReport::default();

    // Conjugation symmetry: lower-sheet evaluation must conjugate the
    // stored upper-sheet samples.
    let mut conj_defect = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        if let Some(g) = grids.first() {
            for j in [0, g.rule.len() / 2] {
                let (t, r) = scattering_at(op, g.rule.lambda[j], g.side, Sheet::Lower)?;
                conj_defect = conj_defect
                    .max((t - g.t[j].conj()).norm())
                    .max((r - g.r[j].conj()).norm());
            }
        }
    }
    rep.add("conjugation_symmetry", conj_defect, 1e-10);

    // One-sided bands: reflection is unimodular and phase-locked to the
    // transmission coefficient.
    let mut mod_defect = 0.0_f64;
    let mut phase_defect = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        for g in grids.iter().filter(|g| !in_sigma2_grid(part, g)) {
            for j in 0..g.rule.len() {
                mod_defect = mod_defect.max((g.r[j].norm() - 1.0).abs());
                phase_defect = phase_defect.max((g.r[j] - g.t[j] / g.t[j].conj()).norm());
            }
        }
    }
    rep.add("sigma1_reflection_modulus", mod_defect, 1e-8);
    rep.add("sigma1_reflection_phase", phase_defect, 1e-8);

    // Overlap bands: energy conservation with the spectral-weight ratio.
    let mut unit_defect = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        for g in grids.iter().filter(|g| in_sigma2_grid(part, g)) {
            let other = op.model(g.side.opposite());
            for j in 0..g.rule.len() {
                let rho_other = weight_rho(other, SpectralPoint::upper(g.rule.lambda[j]))?;
                let ratio = g.rho[j].im / rho_other.im;
                let defect = (g.r[j].norm_sqr() + ratio * g.t[j].norm_sqr() - 1.0).abs();
                unit_defect = unit_defect.max(defect);
            }
        }
    }
    rep.add("sigma2_unitarity", unit_defect, 1e-8);

    // Overlap bands: the two rows of the scattering matrix are orthogonal,
    // and the transmission-weight products of both sides agree.
    let mut cons_defect = 0.0_f64;
    let mut prod_defect = 0.0_f64;
    for g in data.grids.plus.iter().filter(|g| in_sigma2_grid(part, g)) {
        for j in 0..g.rule.len() {
            let lambda = g.rule.lambda[j];
            let (t_m, r_m) = scattering_at(op, lambda, Side::Minus, Sheet::Upper)?;
            let rho_m = weight_rho(&op.left, SpectralPoint::upper(lambda))?;
            cons_defect = cons_defect
                .max((g.r[j].conj() * g.t[j] + r_m * g.t[j].conj()).norm());
            let p_plus = g.t[j] * g.rho[j];
            prod_defect = prod_defect.max((p_plus - t_m * rho_m).norm() / p_plus.norm());
        }
    }
    rep.add("sigma2_row_orthogonality", cons_defect, 1e-8);
    rep.add("transmission_weight_product", prod_defect, 1e-8);

    // Transmission against the independent Wronskian route.
    let mut wt_defect = 0.0_f64;
    let mut spread = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        for g in grids {
            for j in (0..g.rule.len()).step_by((g.rule.len() / 4).max(1)) {
                let wv = wronskian(op, SpectralPoint::upper(g.rule.lambda[j]))?;
                let t_w = 1.0 / (g.rho[j] * wv.w);
                wt_defect = wt_defect.max((g.t[j] - t_w).norm() / g.t[j].norm());
                spread = spread.max(wv.spread);
            }
        }
    }
    rep.add("wronskian_transmission", wt_defect, 1e-8);

    // Reality of the regularized Wronskian between the bands.
    let (bound_lo, bound_hi) = eigen_bounds(op);
    let mut real_defect = 0.0_f64;
    for (glo, ghi) in part.union_gaps(bound_lo, bound_hi) {
        for i in 1..=7 {
            let x = glo + (ghi - glo) * i as f64 / 8.0;
            let wv = wronskian(op, SpectralPoint::real(x))?;
            real_defect = real_defect.max(wv.w_tilde.im.abs() / wv.w_tilde.norm().max(1e-300));
            spread = spread.max(wv.spread);
        }
    }
    rep.add("gap_wronskian_reality", real_defect, 1e-10);
    rep.add("wronskian_site_independence", spread, 1e-9);

    // Equal transmission limits at infinity.
    let (tp, tm) = t_infinity(op)?;
    rep.add("transmission_limit_match", (tp - tm).norm() / tp.norm(), 1e-6);

    // Discrete spectrum diagnostics carried in the data.
    let max_dev = data.derivative_dev.iter().copied().fold(0.0_f64, f64::max);
    rep.add("norming_derivative_identity", max_dev, 1e-6);
    let max_prod = data
        .c_plus
        .iter()
        .zip(&data.c_minus)
        .map(|(p, m)| (p * m - 1.0).abs())
        .fold(0.0_f64, f64::max);
    rep.add("coupling_reciprocal", max_prod, 1e-8);

    // Reflection boundary values at the band edges of each side's own
    // spectrum. The boundary behavior at a virtual level is not prescribed,
    // so those edges are skipped outright; at an edge-coincident Dirichlet
    // point only unimodularity is required.
    let mut edge_defect = 0.0_f64;
    for lim in edge_reflection_limits(op)? {
        if lim.coincides_with_virtual {
            continue;
        }
        let defect = if lim.dirichlet_at_edge {
            (lim.r_limit.norm() - 1.0).abs()
        } else {
            (lim.r_limit + 1.0).norm()
        };
        edge_defect = edge_defect.max(defect);
    }
    rep.add("edge_reflection_limit", edge_defect, 1e-3);

    // Kernel expansion at a far real point.
    let span = op.window.map(|(lo, hi)| hi - lo).unwrap_or(0);
    let depth = 12 + span + 2 * op.right.coeffs.period.max(op.left.coeffs.period) as i64;
    let mut exp_defect = 0.0_f64;
    for side in [Side::Plus, Side::Minus] {
        let table = kernel_from_jost(op, side, -2, 2, depth, config.quad_nodes)?;
        for n in [-2_i64, 0, 2] {
            exp_defect = exp_defect.max(expansion_defect(op, &table, n, 1e4)?);
        }
    }
    rep.add("kernel_expansion", exp_defect, 1e-5);

    // Sampled reflection varies slowly along each grid (guards against
    // aliasing on too-coarse rules).
    let mut jump = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        for g in grids {
            for j in 1..g.rule.len() {
                jump = jump.max((g.r[j] - g.r[j - 1]).norm());
            }
        }
    }
    rep.add("reflection_continuity", jump, 0.2);

    // The two independent routes to the spectral weight agree at interior
    // nodes. Nodes within 1e-3 band widths of an edge are excluded: the
    // Wronskian route subtracts two solutions that coalesce at the edge and
    // loses accuracy there by design (the product route does not).
    let mut route_defect = 0.0_f64;
    for grids in [&data.grids.plus, &data.grids.minus] {
        for g in grids {
            let model = op.model(g.side);
            for j in 0..g.rule.len() {
                let lam = g.rule.lambda[j];
                let interior = model.bands.bands().iter().any(|&(lo, hi)| {
                    let margin = 1e-3 * (hi - lo);
                    lam > lo + margin && lam < hi - margin
                });
                if !interior {
                    continue;
                }
                let pt = SpectralPoint::upper(lam);
                let a = weight_rho(model, pt)?;
                let b = weight_rho_product(model, pt)?;
                route_defect = route_defect.max((a - b).norm() / a.norm());
            }
        }
    }
    rep.add("weight_route_agreement", route_defect, 1e-10);

    // Stored one-sided energy grids are consistent with the piece grids.
    let mut sub_defect = 0.0_f64;
    for (subs, grids) in [
        (&data.grids.sub_plus, &data.grids.plus),
        (&data.grids.sub_minus, &data.grids.minus),
    ] {
        for s in subs.iter() {
            let Some(g) = grids
                .iter()
                .find(|g| g.rule.piece == s.rule.piece)
            else {
                return Err(Error::GridMismatch(
                    "one-sided grid has no matching piece grid".into(),
                ));
            };
            for j in 0..s.rule.len() {
                sub_defect = sub_defect
                    .max((s.t_abs2[j] - g.t[j].norm_sqr()).abs())
                    .max((s.rho_im[j] - g.rho[j].im).abs());
            }
        }
    }
    rep.add("sub_grid_consistency", sub_defect, 1e-12);

    Ok(rep)
}

/// Check that stored scattering data matches the operator and run
/// configuration it is about to be used with (same partition, same node
/// layout).
pub fn verify_layout(
    op: &SteplikeOperator,
    data: &ScatteringData,
    config: &RunConfig,
) -> Result<()> {
    let part = partition(op);
    let close = |x: f64, y: f64| (x - y).abs() <= 10.0 * part.tol;
    let same_list = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| close(x.0, y.0) && close(x.1, y.1))
    };
    if !same_list(&part.sigma2, &data.partition.sigma2)
        || !same_list(&part.sigma1_plus, &data.partition.sigma1_plus)
        || !same_list(&part.sigma1_minus, &data.partition.sigma1_minus)
    {
        return Err(Error::GridMismatch(
            "stored spectrum partition does not match the operator".into(),
        ));
    }
    for (grids, pieces) in [
        (&data.grids.plus, &part.pieces_plus),
        (&data.grids.minus, &part.pieces_minus),
    ] {
        if grids.len() != pieces.len() {
            return Err(Error::GridMismatch(format!(
                "stored data has {} pieces where the operator needs {}",
                grids.len(),
                pieces.len()
            )));
        }
        for (g, p) in grids.iter().zip(pieces.iter()) {
            if !close(g.rule.piece.0, p.piece.0) || !close(g.rule.piece.1, p.piece.1) {
                return Err(Error::GridMismatch(format!(
                    "stored piece [{}, {}] does not match [{}, {}]",
                    g.rule.piece.0, g.rule.piece.1, p.piece.0, p.piece.1
                )));
            }
            if g.rule.len() != config.quad_nodes {
                return Err(Error::GridMismatch(format!(
                    "stored grid has {} nodes, run configured for {}",
                    g.rule.len(),
                    config.quad_nodes
                )));
            }
        }
    }
    Ok(())
}
