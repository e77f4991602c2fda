//! Inverse scattering: summation kernels built from the scattering data, the
//! discrete transformation-operator equations, and coefficient reconstruction.
//!
//! For each half axis the scattering data determines a real summation kernel
//! `F(l, m)` with three parts: a reflection integral over the side's own
//! spectrum, a transmitted-energy integral over the pieces of the opposite
//! spectrum not shared with the own one, and a finite sum over the
//! eigenvalues weighted by the norming constants. The transformation kernel
//! `K(n, .)` that dresses the background Floquet solutions into the Jost
//! solutions then solves, row by row, the linear system
//!
//! ```text
//! G(n, m) + F(n, m) + sum_l G(n, l) F(l, m) = 0        (m beyond n)
//! ```
//!
//! in the normalized unknowns `G(n, m) = K(n, m) / K(n, n)`, with the
//! diagonal recovered from `K(n, n)^-2 = 1 + F(n, n) + sum_l G(n, l) F(l,
//! n)`. The kernel entries grow geometrically toward the far side of the
//! step whenever eigenvalues are present, so the rows are solved in
//! double-double arithmetic (see [`crate::dd`]); the kernel samples
//! themselves are accurate to relative f64 precision, which a perturbation
//! argument shows is what limits the final accuracy.
//!
//! The coefficients are read off the reconstructed kernel rows:
//!
//! ```text
//! right:  a(n) = a_q(n) K(n+1, n+1) / K(n, n)
//!         b(n) = b_q(n) + a_q(n) K(n, n+1)/K(n, n) - a_q(n-1) K(n-1, n)/K(n-1, n-1)
//! left:   a(n) = a_q(n) K(n, n) / K(n+1, n+1)
//!         b(n) = b_q(n) + a_q(n-1) K(n, n-1)/K(n, n) - a_q(n) K(n+1, n)/K(n+1, n+1)
//! ```
//!
//! Each half-axis problem is numerically trustworthy on its own half: the
//! kernel rows of the right problem grow geometrically with the distance the
//! row reaches past the step and the perturbed sites into the left half axis
//! (and mirrored for the left problem), and with them the cancellation
//! required from the diagonal radicand, so a fixed number of digits is lost
//! per site of overreach regardless of how the linear system is solved. The
//! reconstruction therefore extends each side only [`OVERLAP_MARGIN`] sites
//! past the junction-and-override zone into the opposite half, compares the
//! two on that overlap (`coincidence`), and splices them at the overlap
//! center into the combined coefficient sequences used for the round trip.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::background::{floquet_row, pole_factors, weight_rho, Sheet, Side, SpectralPoint};
use crate::dd::{lu_factor, one_norm, Dd};
use crate::direct::{scattering_at, ScatteringData};
use crate::error::{Error, Result};
use crate::operator::SteplikeOperator;
use crate::RunConfig;

/// Largest `|n|` for which a transformation-kernel row may be requested.
/// Beyond this the kernel entries overflow the dynamic range over which the
/// double-double elimination still returns meaningful digits.
pub const MAX_ROW_SITE: i64 = 60;

/// Number of sample pairs probed for the two-sheet reality check of the
/// reflection integral.
const REALITY_PROBES: usize = 5;

/// How many sites each half-axis reconstruction reaches past the
/// junction-and-override zone into the opposite half axis. The kernel rows
/// there grow by a fixed factor per site (about an order of magnitude for a
/// unit step), so each extra site costs slightly over one decimal digit of
/// the reconstructed coefficients; four sites keeps the overlap comparison
/// well inside the f64 accuracy of the tabulated kernel while still crossing
/// the entire perturbed zone.
pub const OVERLAP_MARGIN: i64 = 4;

// ---------------------------------------------------------------------------
// Summation kernel
// ---------------------------------------------------------------------------

/// One quadrature node of the reflection integral: `coef = w R rho / pi` and
/// the background Floquet row over the table sites.
struct ComplexTerm {
    coef: Complex64,
    vals: Vec<Complex64>,
}

/// One real contribution (transmitted-energy node or eigenvalue): the kernel
/// gains `coef * vals[l] * vals[m]`.
struct RealTerm {
    coef: f64,
    vals: Vec<f64>,
}

/// Real symmetric summation kernel `F(l, m)` of one side, tabulated on the
/// square `[lo, hi] x [lo, hi]`.
pub struct GlmKernel {
    pub side: Side,
    pub lo: i64,
    pub hi: i64,
    size: usize,
    f: Vec<f64>,
    /// Two-sheet consistency defect of the reflection integral: the stored
    /// upper-sheet samples against freshly computed lower-sheet ones, for a
    /// few sample index pairs. Zero for exact data.
    pub reality_defect: f64,
    /// Largest `|F(l, m) - F(m, l)|` over the table (rounding noise only;
    /// the three contributions are symmetric term by term).
    pub symmetry_defect: f64,
}

impl GlmKernel {
    /// Kernel entry `F(l, m)`; both sites must lie inside the tabulated
    /// square (panics otherwise — public entry points validate ranges).
    pub fn get(&self, l: i64, m: i64) -> f64 {
        let i = (l - self.lo) as usize;
        let j = (m - self.lo) as usize;
        self.f[i * self.size + j]
    }
}

/// Tabulate the summation kernel of `side` on `[lo, hi]^2` from assembled
/// scattering data.
///
/// The reflection integral runs over every piece grid of the side's own
/// spectrum, the transmitted-energy integral over the opposite side's grids
/// on its exclusive spectrum (where `|T|^2 Im rho` of the opposite side is
/// the spectral density seen from this side), and the eigenvalue sum uses
/// the regularized Floquet values with this side's norming constants.
pub fn glm_kernel(
    op: &SteplikeOperator,
    data: &ScatteringData,
    side: Side,
    lo: i64,
    hi: i64,
) -> Result<GlmKernel> {
    if lo > hi {
        return Err(Error::RangeMismatch(format!(
            "summation kernel range [{lo}, {hi}] is empty"
        )));
    }
    let model = op.model(side);
    let size = (hi - lo + 1) as usize;
    let own_grids = match side {
        Side::Plus => &data.grids.plus,
        Side::Minus => &data.grids.minus,
    };
    let sub_grids = match side {
        Side::Plus => &data.grids.sub_minus,
        Side::Minus => &data.grids.sub_plus,
    };
    let gammas = match side {
        Side::Plus => &data.gamma_plus,
        Side::Minus => &data.gamma_minus,
    };

    // Probe pairs for the reality check, spread over the table.
    let mid = (lo + hi) / 2;
    let pairs: [(i64, i64); REALITY_PROBES] =
        [(lo, lo), (hi, hi), (mid, mid), (lo, mid), (mid, hi)];
    let mut probe_acc = [Complex64::new(0.0, 0.0); REALITY_PROBES];

    let mut complex_terms = Vec::new();
    for grid in own_grids {
        debug_assert_eq!(grid.side, side);
        for j in 0..grid.rule.len() {
            let lambda = grid.rule.lambda[j];
            let weight = grid.rule.weight[j];
            let vals = floquet_row(model, SpectralPoint::upper(lambda), lo, hi)?;
            let upper_factor = grid.r[j] * grid.rho[j];

            // Lower-sheet recomputation feeding the reality defect. The
            // kernel itself uses only the upper samples plus conjugation
            // symmetry; this measures how well that symmetry actually holds
            // through the full evaluation stack.
            let (_, r_low) = scattering_at(op, lambda, side, Sheet::Lower)?;
            let rho_low = weight_rho(model, SpectralPoint::lower(lambda))?;
            let vals_low = floquet_row(model, SpectralPoint::lower(lambda), lo, hi)?;
            let lower_factor = r_low * rho_low;
            for (acc, &(l, m)) in probe_acc.iter_mut().zip(pairs.iter()) {
                let il = (l - lo) as usize;
                let im = (m - lo) as usize;
                let g_up = upper_factor * vals[il] * vals[im];
                let g_low = lower_factor * vals_low[il] * vals_low[im];
                *acc += weight * (g_up.conj() - g_low);
            }

            complex_terms.push(ComplexTerm { coef: upper_factor * (weight / PI), vals });
        }
    }

    let mut real_terms = Vec::new();
    for grid in sub_grids {
        debug_assert_eq!(grid.side, side.opposite());
        for j in 0..grid.rule.len() {
            let lambda = grid.rule.lambda[j];
            let row = floquet_row(model, SpectralPoint::upper(lambda), lo, hi)?;
            let vals: Vec<f64> = row.iter().map(|v| v.re).collect();
            // Density (1/2pi) |T|^2 Im rho of the opposite side: half the
            // reflection term's 1/pi, which collects both lips of its
            // contour while this part is a plain one-sided integral.
            let coef = grid.rule.weight[j] * grid.t_abs2[j] * grid.rho_im[j] / (2.0 * PI);
            real_terms.push(RealTerm { coef, vals });
        }
    }
    for (k, &lambda) in data.eigenvalues.iter().enumerate() {
        let pt = SpectralPoint::real(lambda);
        let delta = pole_factors(model, pt).delta;
        let row = floquet_row(model, pt, lo, hi)?;
        let vals: Vec<f64> = row.iter().map(|v| (delta * v).re).collect();
        real_terms.push(RealTerm { coef: gammas[k], vals });
    }

    let rows: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|li| {
            let mut row = vec![0.0; size];
            for term in &complex_terms {
                let c = term.coef * term.vals[li];
                for (slot, vm) in row.iter_mut().zip(&term.vals) {
                    *slot += (c * vm).im;
                }
            }
            for term in &real_terms {
                let c = term.coef * term.vals[li];
                for (slot, vm) in row.iter_mut().zip(&term.vals) {
                    *slot += c * vm;
                }
            }
            row
        })
        .collect();

    let mut f = Vec::with_capacity(size * size);
    for row in rows {
        f.extend_from_slice(&row);
    }
    let mut symmetry_defect: f64 = 0.0;
    for i in 0..size {
        for j in i + 1..size {
            symmetry_defect = symmetry_defect.max((f[i * size + j] - f[j * size + i]).abs());
        }
    }
    let reality_defect = probe_acc
        .iter()
        .map(|acc| acc.norm() / (2.0 * PI))
        .fold(0.0, f64::max);

    Ok(GlmKernel { side, lo, hi, size, f, reality_defect, symmetry_defect })
}

/// Weighted tail sums of one kernel row: `sum |F(n, m)|`, `sum (|m - n| + 1)
/// |F(n, m)|` and `sup |F(n, m)|`, all over the sites from `n` to `span`
/// steps toward the side's own infinity (clipped to the table). The
/// perturbation determines these to be summable and decreasing in `n` toward
/// the own infinity.
pub fn kernel_tail_sums(kernel: &GlmKernel, n: i64, span: i64) -> [f64; 3] {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3: f64 = 0.0;
    for j in 0..=span {
        let m = match kernel.side {
            Side::Plus => n + j,
            Side::Minus => n - j,
        };
        if m < kernel.lo || m > kernel.hi {
            break;
        }
        let v = kernel.get(n, m).abs();
        s1 += v;
        s2 += (j + 1) as f64 * v;
        s3 = s3.max(v);
    }
    [s1, s2, s3]
}

// ---------------------------------------------------------------------------
// Transformation-kernel rows
// ---------------------------------------------------------------------------

/// One reconstructed transformation-kernel row `K(n, .)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlmRow {
    pub n: i64,
    /// Diagonal value `K(n, n)` (positive).
    pub diag: f64,
    /// `K(n, n +/- j) / K(n, n)` for `j = 0..=window` (sign toward the
    /// side's own infinity); `ratios[0] == 1`.
    pub ratios: Vec<f64>,
    /// Largest row-relative residual of the solved linear system, measured
    /// in double-double arithmetic.
    pub residual: f64,
    /// One-norm condition number estimate of the system matrix.
    pub cond: f64,
}

/// Solve the transformation-operator equation for the row at site `n` with
/// `window` unknowns, in double-double arithmetic.
pub fn glm_row(kernel: &GlmKernel, n: i64, window: usize) -> Result<GlmRow> {
    if window == 0 {
        return Err(Error::RangeMismatch("row window must be positive".into()));
    }
    if n.abs() > MAX_ROW_SITE {
        return Err(Error::RangeMismatch(format!(
            "row site {n} outside the supported range [-{MAX_ROW_SITE}, {MAX_ROW_SITE}]"
        )));
    }
    let dir = match kernel.side {
        Side::Plus => 1,
        Side::Minus => -1,
    };
    let far = n + dir * window as i64;
    let (c_lo, c_hi) = (far.min(n), far.max(n));
    if c_lo < kernel.lo || c_hi > kernel.hi {
        return Err(Error::RangeMismatch(format!(
            "row at {n} with window {window} needs kernel sites [{c_lo}, {c_hi}], \
             table covers [{}, {}]",
            kernel.lo, kernel.hi
        )));
    }

    // Unknowns x_j = G(n, n + dir (j+1)); equation i enforces the relation
    // at m_i = n + dir (i+1).
    let site = |j: usize| n + dir * (j as i64 + 1);
    let a_dd: Vec<Vec<Dd>> = (0..window)
        .map(|i| {
            let m_i = site(i);
            (0..window)
                .map(|j| {
                    let mut v = Dd::from_f64(kernel.get(site(j), m_i));
                    if i == j {
                        v = v.add(Dd::ONE);
                    }
                    v
                })
                .collect()
        })
        .collect();
    let rhs: Vec<Dd> = (0..window)
        .map(|i| Dd::from_f64(-kernel.get(n, site(i))))
        .collect();

    let factors = match lu_factor(a_dd.clone()) {
        Some(f) => f,
        None => return Err(Error::SingularSystem { size: window }),
    };
    let x = factors.solve(&rhs);

    // Row-relative residual of the double-double solution.
    let mut residual: f64 = 0.0;
    for i in 0..window {
        let mut acc = rhs[i].neg();
        let mut scale = rhs[i].to_f64().abs();
        for j in 0..window {
            acc = acc.add(a_dd[i][j].mul(x[j]));
            scale += (a_dd[i][j].to_f64() * x[j].to_f64()).abs();
        }
        residual = residual.max(acc.to_f64().abs() / scale.max(f64::MIN_POSITIVE));
    }

    // One-norm condition estimate through the already-computed factors.
    let a_f64: Vec<Vec<f64>> = a_dd
        .iter()
        .map(|row| row.iter().map(|v| v.to_f64()).collect())
        .collect();
    let mut inv_norm: f64 = 0.0;
    let mut unit = vec![Dd::ZERO; window];
    for j in 0..window {
        unit[j] = Dd::ONE;
        let col = factors.solve(&unit);
        unit[j] = Dd::ZERO;
        inv_norm = inv_norm.max(col.iter().map(|v| v.to_f64().abs()).sum());
    }
    let cond = one_norm(&a_f64) * inv_norm;

    // Diagonal: K(n, n)^-2 = 1 + F(n, n) + sum_j x_j F(l_j, n).
    let mut s = Dd::ONE.add(Dd::from_f64(kernel.get(n, n)));
    for (j, xj) in x.iter().enumerate() {
        s = s.add(xj.mul(Dd::from_f64(kernel.get(site(j), n))));
    }
    let radicand = s.to_f64();
    if radicand <= 0.0 {
        return Err(Error::NegativeDiagonal { n, radicand });
    }
    let diag = 1.0 / radicand.sqrt();

    let mut ratios = Vec::with_capacity(window + 1);
    ratios.push(1.0);
    ratios.extend(x.iter().map(|v| v.to_f64()));

    Ok(GlmRow { n, diag, ratios, residual, cond })
}

// ---------------------------------------------------------------------------
// Coefficient reconstruction
// ---------------------------------------------------------------------------

/// Full inverse-scattering result over a report range: both half-axis
/// reconstructions on their trustworthy ranges, the combined spliced
/// coefficients, the kernel rows, and the global quality figures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reconstruction {
    pub n_lo: i64,
    pub n_hi: i64,
    /// First site of the right-kernel sequences: `a_plus`/`b_plus` cover
    /// `plus_lo..=n_hi`.
    pub plus_lo: i64,
    /// Last site of the left-kernel sequences: `a_minus`/`b_minus` cover
    /// `n_lo..=minus_hi`.
    pub minus_hi: i64,
    /// First site taken from the right-kernel sequences in the combined
    /// coefficients (the overlap center).
    pub switch: i64,
    /// Coefficients reconstructed through the right kernel on
    /// `plus_lo..=n_hi`.
    pub a_plus: Vec<f64>,
    pub b_plus: Vec<f64>,
    /// Coefficients reconstructed through the left kernel on
    /// `n_lo..=minus_hi`.
    pub a_minus: Vec<f64>,
    pub b_minus: Vec<f64>,
    /// Combined coefficients over the full report range: the left-kernel
    /// values below `switch`, the right-kernel values from it on.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Rows of the right kernel for `plus_lo - 1 ..= n_hi + 1` and of the
    /// left kernel for `n_lo - 1 ..= minus_hi + 1`.
    pub rows_plus: Vec<GlmRow>,
    pub rows_minus: Vec<GlmRow>,
    /// Largest row residual over both sides.
    pub residual_max: f64,
    /// Largest row condition estimate over both sides.
    pub cond_max: f64,
    /// Largest `|a_+ - a_-| + |b_+ - b_-|` over the overlap
    /// `plus_lo..=minus_hi`: both half-axis problems must reproduce the same
    /// operator there.
    pub coincidence: f64,
    /// Largest relative defect of the difference equation applied to the
    /// synthesized solutions `sum_m K(n, m) psi_q(z, m)` with the
    /// reconstructed coefficients, over both sides and several spectral
    /// points.
    pub synthesis_defect: f64,
    /// Largest deviation of the combined coefficients from the operator the
    /// data was computed from, over the report range.
    pub roundtrip_max: f64,
    /// Largest two-sheet reality defect over both summation kernels.
    pub kernel_reality: f64,
    /// Largest symmetry defect over both summation kernels.
    pub kernel_symmetry: f64,
}

/// Reconstruct the coefficients on `config.report_range` from scattering
/// data, through both half-axis transformation kernels.
pub fn reconstruct(
    op: &SteplikeOperator,
    data: &ScatteringData,
    config: &RunConfig,
) -> Result<Reconstruction> {
    let (n_lo, n_hi) = config.report_range;
    if n_lo > n_hi {
        return Err(Error::RangeMismatch(format!(
            "report range [{n_lo}, {n_hi}] is empty"
        )));
    }
    let window = config.glm_window;

    // The zone where the operator may deviate from either half-axis
    // background: the junction at the origin plus any override window. Each
    // side's sequences run from OVERLAP_MARGIN sites beyond the far end of
    // that zone out to its own end of the report range.
    let (mut zone_lo, mut zone_hi) = (0i64, 0i64);
    if let Some((w_lo, w_hi)) = op.window {
        zone_lo = zone_lo.min(w_lo);
        zone_hi = zone_hi.max(w_hi);
    }
    let plus_lo = (zone_lo - OVERLAP_MARGIN).clamp(n_lo, n_hi);
    let minus_hi = (zone_hi + OVERLAP_MARGIN).clamp(n_lo, n_hi);
    let switch = (plus_lo + minus_hi + 1).div_euclid(2);

    let side_rows = |side: Side| -> Result<(GlmKernel, Vec<GlmRow>)> {
        let (t_lo, t_hi) = match side {
            Side::Plus => (plus_lo - 1, n_hi + 1 + window as i64),
            Side::Minus => (n_lo - 1 - window as i64, minus_hi + 1),
        };
        let kernel = glm_kernel(op, data, side, t_lo, t_hi)?;
        let sites = match side {
            Side::Plus => plus_lo - 1..=n_hi + 1,
            Side::Minus => n_lo - 1..=minus_hi + 1,
        };
        let rows: Vec<GlmRow> = sites
            .into_par_iter()
            .map(|n| glm_row(&kernel, n, window))
            .collect::<Result<_>>()?;
        Ok((kernel, rows))
    };
    let (kernel_plus, rows_plus) = side_rows(Side::Plus)?;
    let (kernel_minus, rows_minus) = side_rows(Side::Minus)?;
    let idx_plus = |n: i64| (n - (plus_lo - 1)) as usize;
    let idx_minus = |n: i64| (n - (n_lo - 1)) as usize;

    // Right kernel: a over [plus_lo - 1, n_hi] (the extra left entry feeds
    // the difference-equation check), b over [plus_lo, n_hi].
    let model_plus = op.model(Side::Plus);
    let mut a_plus_ext = Vec::with_capacity((n_hi - plus_lo + 2) as usize);
    for n in plus_lo - 1..=n_hi {
        let d0 = rows_plus[idx_plus(n)].diag;
        let d1 = rows_plus[idx_plus(n + 1)].diag;
        a_plus_ext.push(model_plus.coeffs.a(n) * d1 / d0);
    }
    let mut b_plus = Vec::with_capacity((n_hi - plus_lo + 1) as usize);
    for n in plus_lo..=n_hi {
        let here = rows_plus[idx_plus(n)].ratios[1];
        let prev = rows_plus[idx_plus(n - 1)].ratios[1];
        b_plus.push(
            model_plus.coeffs.b(n) + model_plus.coeffs.a(n) * here
                - model_plus.coeffs.a(n - 1) * prev,
        );
    }

    // Left kernel: mirrored roles of the diagonal ratio and the first
    // off-diagonal ratios; a over [n_lo - 1, minus_hi], b over
    // [n_lo, minus_hi].
    let model_minus = op.model(Side::Minus);
    let mut a_minus_ext = Vec::with_capacity((minus_hi - n_lo + 2) as usize);
    for n in n_lo - 1..=minus_hi {
        let d0 = rows_minus[idx_minus(n)].diag;
        let d1 = rows_minus[idx_minus(n + 1)].diag;
        a_minus_ext.push(model_minus.coeffs.a(n) * d0 / d1);
    }
    let mut b_minus = Vec::with_capacity((minus_hi - n_lo + 1) as usize);
    for n in n_lo..=minus_hi {
        let here = rows_minus[idx_minus(n)].ratios[1];
        let next = rows_minus[idx_minus(n + 1)].ratios[1];
        b_minus.push(
            model_minus.coeffs.b(n) + model_minus.coeffs.a(n - 1) * here
                - model_minus.coeffs.a(n) * next,
        );
    }

    let a_plus = a_plus_ext[1..].to_vec();
    let a_minus = a_minus_ext[1..].to_vec();

    let mut coincidence: f64 = 0.0;
    for n in plus_lo..=minus_hi {
        let ip = (n - plus_lo) as usize;
        let im = (n - n_lo) as usize;
        coincidence = coincidence.max(
            (a_plus[ip] - a_minus[im]).abs() + (b_plus[ip] - b_minus[im]).abs(),
        );
    }

    let mut a = Vec::with_capacity((n_hi - n_lo + 1) as usize);
    let mut b = Vec::with_capacity((n_hi - n_lo + 1) as usize);
    let mut roundtrip_max: f64 = 0.0;
    for n in n_lo..=n_hi {
        let (an, bn) = if n < switch {
            ((a_minus[(n - n_lo) as usize]), b_minus[(n - n_lo) as usize])
        } else {
            ((a_plus[(n - plus_lo) as usize]), b_plus[(n - plus_lo) as usize])
        };
        roundtrip_max = roundtrip_max
            .max((an - op.a(n)).abs() + (bn - op.b(n)).abs());
        a.push(an);
        b.push(bn);
    }

    let mut residual_max: f64 = 0.0;
    let mut cond_max: f64 = 0.0;
    for row in rows_plus.iter().chain(rows_minus.iter()) {
        residual_max = residual_max.max(row.residual);
        cond_max = cond_max.max(row.cond);
    }

    let max_edge = op
        .left
        .bands
        .bands()
        .last()
        .map(|b| b.1)
        .unwrap_or(0.0)
        .max(op.right.bands.bands().last().map(|b| b.1).unwrap_or(0.0));
    let off_spectrum = max_edge + 0.77;
    // The difference-equation check runs over each side's spliced-in range
    // plus a short reach across the overlap center, so it exercises the
    // nontrivial zone without leaving the sites where the rows are accurate.
    let synth_plus = synthesis_residual(
        op,
        Side::Plus,
        &rows_plus,
        plus_lo,
        (switch - 2).max(plus_lo),
        n_hi,
        window,
        &a_plus_ext,
        &b_plus,
        off_spectrum,
    )?;
    let synth_minus = synthesis_residual(
        op,
        Side::Minus,
        &rows_minus,
        n_lo,
        n_lo,
        (switch + 1).min(minus_hi),
        window,
        &a_minus_ext,
        &b_minus,
        off_spectrum,
    )?;

    Ok(Reconstruction {
        n_lo,
        n_hi,
        plus_lo,
        minus_hi,
        switch,
        a_plus,
        b_plus,
        a_minus,
        b_minus,
        a,
        b,
        rows_plus,
        rows_minus,
        residual_max,
        cond_max,
        coincidence,
        synthesis_defect: synth_plus.max(synth_minus),
        roundtrip_max,
        kernel_reality: kernel_plus.reality_defect.max(kernel_minus.reality_defect),
        kernel_symmetry: kernel_plus.symmetry_defect.max(kernel_minus.symmetry_defect),
    })
}

/// Largest relative defect of `a(n-1) Psi(n-1) + b(n) Psi(n) + a(n) Psi(n+1)
/// = z Psi(n)` for the synthesized solutions `Psi(n) = sum_m K(n, m)
/// psi_q(z, m)`, over `check_lo..=check_hi`, at the side's band midpoints and
/// one real point above the spectrum. `rows` start at site `seq_lo - 1`,
/// `a_ext` at `seq_lo - 1`, `b` at `seq_lo`.
#[allow(clippy::too_many_arguments)]
fn synthesis_residual(
    op: &SteplikeOperator,
    side: Side,
    rows: &[GlmRow],
    seq_lo: i64,
    check_lo: i64,
    check_hi: i64,
    window: usize,
    a_ext: &[f64],
    b: &[f64],
    off_spectrum: f64,
) -> Result<f64> {
    let model = op.model(side);
    let dir: i64 = match side {
        Side::Plus => 1,
        Side::Minus => -1,
    };
    let (col_lo, col_hi) = match side {
        Side::Plus => (check_lo - 1, check_hi + 1 + window as i64),
        Side::Minus => (check_lo - 1 - window as i64, check_hi + 1),
    };
    let mut points: Vec<SpectralPoint> = model
        .bands
        .bands()
        .iter()
        .map(|&(lo, hi)| SpectralPoint::upper(0.5 * (lo + hi)))
        .collect();
    points.push(SpectralPoint::real(off_spectrum));

    let idx = |n: i64| (n - (seq_lo - 1)) as usize;
    let mut worst: f64 = 0.0;
    for pt in points {
        let z = pt.argument();
        let bg = floquet_row(model, pt, col_lo, col_hi)?;
        let psi = |n: i64| -> Complex64 {
            let row = &rows[idx(n)];
            let mut sum = Complex64::new(0.0, 0.0);
            for (j, ratio) in row.ratios.iter().enumerate() {
                let m = n + dir * j as i64;
                sum += ratio * bg[(m - col_lo) as usize];
            }
            row.diag * sum
        };
        for n in check_lo..=check_hi {
            let p_prev = psi(n - 1);
            let p_here = psi(n);
            let p_next = psi(n + 1);
            let a_prev = a_ext[idx(n - 1)];
            let a_here = a_ext[idx(n)];
            let b_here = b[(n - seq_lo) as usize];
            let r = a_prev * p_prev + b_here * p_here + a_here * p_next - z * p_here;
            let scale = z.norm().max(1.0)
                * p_prev.norm().max(p_here.norm()).max(p_next.norm());
            worst = worst.max(r.norm() / scale.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::PeriodicCoefficients;
    use crate::direct::{assemble, kernel_from_jost};
    use crate::operator::{OverrideEntry, SteplikeSpec};

    fn free() -> PeriodicCoefficients {
        PeriodicCoefficients::new(vec![0.5], vec![0.0])
    }

    fn shifted() -> PeriodicCoefficients {
        PeriodicCoefficients::new(vec![0.5], vec![1.0])
    }

    fn single_site() -> SteplikeOperator {
        SteplikeOperator::build(SteplikeSpec {
            left: free(),
            right: free(),
            overrides: vec![OverrideEntry { n: 0, a: 0.5, b: 1.0 }],
        })
        .unwrap()
    }

    fn pure_step() -> SteplikeOperator {
        SteplikeOperator::build(SteplikeSpec {
            left: shifted(),
            right: free(),
            overrides: vec![],
        })
        .unwrap()
    }

    fn config(nodes: usize, window: usize, range: (i64, i64)) -> RunConfig {
        RunConfig {
            quad_nodes: nodes,
            glm_window: window,
            report_range: range,
            ..RunConfig::default()
        }
    }

    /// For the single raised site the right kernel depends on l + m only and
    /// takes small integer values: 0 for l + m >= 0 and 2, 4, 10, 24, 58 for
    /// l + m = -1 .. -5 (reflection integral plus the eigenvalue at sqrt 2).
    #[test]
    fn summation_kernel_matches_hand_computed_values() {
        let op = single_site();
        let data = assemble(&op, &config(192, 8, (-2, 2))).unwrap();
        let kernel = glm_kernel(&op, &data, Side::Plus, -4, 3).unwrap();

        let cases = [
            ((0, 0), 0.0),
            ((0, 1), 0.0),
            ((1, 2), 0.0),
            ((-1, 0), 2.0),
            ((-1, -1), 4.0),
            ((-2, -1), 10.0),
            ((-2, -2), 24.0),
            ((-3, -2), 58.0),
        ];
        for ((l, m), want) in cases {
            let got = kernel.get(l, m);
            assert!(
                (got - want).abs() < 1e-7,
                "F({l}, {m}) = {got}, expected {want}"
            );
        }
        assert!(kernel.symmetry_defect < 1e-9, "{}", kernel.symmetry_defect);
        assert!(kernel.reality_defect < 1e-10, "{}", kernel.reality_defect);
    }

    /// The rows solved from the summation kernel must agree with the rows
    /// integrated directly from the Jost solutions.
    #[test]
    fn glm_rows_match_the_forward_kernel_rows() {
        let op = single_site();
        let data = assemble(&op, &config(192, 8, (-2, 2))).unwrap();
        let kernel = glm_kernel(&op, &data, Side::Plus, -4, 14).unwrap();
        let forward = kernel_from_jost(&op, Side::Plus, -4, 0, 14, 192).unwrap();

        for n in -3..=0 {
            let row = glm_row(&kernel, n, 10).unwrap();
            assert!(row.residual < 1e-25, "residual {}", row.residual);
            for (j, ratio) in row.ratios.iter().enumerate() {
                let got = row.diag * ratio;
                let want = forward.get(n, n + j as i64);
                assert!(
                    (got - want).abs() < 1e-7,
                    "K({n}, {}) = {got} vs forward {want}",
                    n + j as i64
                );
            }
        }

        // Frozen row values for the raised site.
        let row = glm_row(&kernel, -2, 10).unwrap();
        assert!((row.diag - 1.0).abs() < 1e-8);
        let want = [1.0, -2.0, 0.0, -2.0, 0.0, 0.0];
        for (j, w) in want.iter().enumerate() {
            assert!(
                (row.ratios[j] - w).abs() < 1e-7,
                "ratio[{j}] = {}",
                row.ratios[j]
            );
        }
    }

    /// Deep rows mix kernel entries across nine orders of magnitude (the
    /// eigenvalue term grows like (1 + sqrt 2)^{|l+m|}); the double-double
    /// elimination must still recover the alternating row pattern.
    #[test]
    fn deep_row_survives_the_growing_kernel_entries() {
        let op = single_site();
        let data = assemble(&op, &config(192, 8, (-2, 2))).unwrap();
        let kernel = glm_kernel(&op, &data, Side::Plus, -12, 28).unwrap();

        let row = glm_row(&kernel, -12, 40).unwrap();
        assert!((row.diag - 1.0).abs() < 1e-6, "diag {}", row.diag);
        assert!(row.cond > 1e8, "cond only {}", row.cond);
        for j in 1..=40usize {
            let want = if j <= 23 && j % 2 == 1 { -2.0 } else { 0.0 };
            assert!(
                (row.ratios[j] - want).abs() < 5e-6,
                "ratio[{j}] = {} (want {want}), cond {}",
                row.ratios[j],
                row.cond
            );
        }
    }

    #[test]
    fn single_site_reconstruction_roundtrip() {
        let op = single_site();
        let cfg = config(192, 30, (-6, 6));
        let data = assemble(&op, &cfg).unwrap();
        let rec = reconstruct(&op, &data, &cfg).unwrap();

        assert!(rec.roundtrip_max < 1e-8, "roundtrip {}", rec.roundtrip_max);
        assert!(rec.coincidence < 1e-8, "coincidence {}", rec.coincidence);
        assert!(rec.residual_max < 1e-20, "residual {}", rec.residual_max);
        assert!(rec.synthesis_defect < 1e-8, "synthesis {}", rec.synthesis_defect);
        assert!(rec.kernel_reality < 1e-10, "reality {}", rec.kernel_reality);

        // The raised site must come back: b(0) = 1, every other site free.
        let mid = (0 - rec.plus_lo) as usize;
        assert!((rec.b_plus[mid] - 1.0).abs() < 1e-9);
        assert!((rec.a_plus[mid] - 0.5).abs() < 1e-9);
        let mid = (0 - rec.n_lo) as usize;
        assert!((rec.b[mid] - 1.0).abs() < 1e-9);
        assert!((rec.a[mid] - 0.5).abs() < 1e-9);
    }

    /// Roundtrip across two genuinely different backgrounds: exercises the
    /// transmitted-energy term of the kernel (absent in the equal-background
    /// case), pinning its normalization.
    #[test]
    fn pure_step_reconstruction_roundtrip() {
        let op = pure_step();
        let cfg = config(192, 40, (-4, 4));
        let data = assemble(&op, &cfg).unwrap();
        let rec = reconstruct(&op, &data, &cfg).unwrap();

        assert!(rec.roundtrip_max < 1e-8, "roundtrip {}", rec.roundtrip_max);
        assert!(rec.coincidence < 5e-8, "coincidence {}", rec.coincidence);
        assert!(rec.synthesis_defect < 1e-8, "synthesis {}", rec.synthesis_defect);

        // The step itself must come back in the combined coefficients.
        let at = |n: i64| (n - rec.n_lo) as usize;
        assert!((rec.b[at(-1)] - 1.0).abs() < 1e-8);
        assert!((rec.b[at(0)]).abs() < 1e-8);
    }

    /// For the pure step the right Jost solution coincides with the right
    /// Floquet solution at every site n >= 0, so the right summation kernel
    /// vanishes identically on the quarter l, m >= 0: the reflection and
    /// transmitted-energy integrals must cancel there exactly.
    #[test]
    fn pure_step_kernel_vanishes_on_the_unperturbed_quarter() {
        let op = pure_step();
        let data = assemble(&op, &config(192, 8, (-2, 2))).unwrap();
        let kernel = glm_kernel(&op, &data, Side::Plus, 0, 6).unwrap();
        for l in 0..=6 {
            for m in 0..=6 {
                let v = kernel.get(l, m);
                assert!(v.abs() < 1e-9, "F({l}, {m}) = {v}");
            }
        }
    }

    #[test]
    fn kernel_tail_sums_decrease_toward_own_infinity() {
        let op = pure_step();
        let data = assemble(&op, &config(128, 8, (-2, 2))).unwrap();
        let kernel = glm_kernel(&op, &data, Side::Plus, -1, 40).unwrap();
        let near = kernel_tail_sums(&kernel, 0, 30);
        let far = kernel_tail_sums(&kernel, 10, 30);
        for i in 0..3 {
            assert!(
                far[i] <= near[i] + 1e-12,
                "tail sum {i}: near {} far {}",
                near[i],
                far[i]
            );
        }
    }

    /// Corrupted reflection data is no longer the scattering data of any
    /// operator in the class: the reconstruction must either reject it
    /// (non-positive diagonal radicand) or come back visibly wrong.
    #[test]
    fn corrupted_reflection_breaks_the_reconstruction() {
        let op = single_site();
        let cfg = config(128, 24, (-3, 3));
        let mut data = assemble(&op, &cfg).unwrap();
        for grid in &mut data.grids.plus {
            for r in &mut grid.r {
                *r *= 1.1;
            }
        }
        match reconstruct(&op, &data, &cfg) {
            Err(Error::NegativeDiagonal { .. }) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(rec) => assert!(
                rec.roundtrip_max > 1e-3,
                "corrupted data reconstructed cleanly: {}",
                rec.roundtrip_max
            ),
        }
    }
}
