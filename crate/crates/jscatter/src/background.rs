//! Periodic finite-gap background operators: band structure, Floquet
//! solutions on the two-sheeted spectral surface, Dirichlet points, spectral
//! weights, and the pole-regularized solution bundles.
//!
//! A background is a periodic Jacobi operator
//! `(H f)(n) = a(n-1) f(n-1) + b(n) f(n) + a(n) f(n+1)` with period-`N`
//! coefficients `a > 0`, `b` real. Its spectrum is a union of `N` closed
//! bands. The Floquet solutions `psi(z, n)` are normalized by `psi(z, 0) = 1`
//! and satisfy `psi(z, n + N) = w(z) psi(z, n)` with the Floquet multiplier
//! `w`. Each background sits on one side (left or right) of a steplike
//! operator; the side fixes which multiplier branch is "principal" (the one
//! decaying toward that side's infinity).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::quadrature::{band_rule, contour_integral};

/// Which half axis a background governs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Background of the left half axis (n < 0); principal branch grows like
    /// |w| > 1, i.e. decays toward -infinity.
    Minus,
    /// Background of the right half axis (n >= 0); principal branch has
    /// |w| < 1 and decays toward +infinity.
    Plus,
}

impl Side {
    /// +1 for the right side, -1 for the left; the sign in front of the
    /// reciprocal Wronskian in the spectral weight.
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// Sheet of the two-sheeted spectral surface over a band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sheet {
    /// Limit from the upper complex half plane, `lambda + i0`.
    Upper,
    /// Limit from the lower half plane, `lambda - i0`.
    Lower,
}

/// A point of the spectral surface: either a genuinely complex argument or a
/// boundary value `lambda ± i0` on the real axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpectralPoint {
    /// Evaluation at a complex number (off the spectrum, or real in a gap).
    Complex(Complex64),
    /// Boundary value on the real axis approached from one half plane.
    /// Meaningful for every real `lambda`; inside a band the sheet selects
    /// the branch, off the spectrum both sheets agree with the real value.
    Boundary { lambda: f64, sheet: Sheet },
}

impl SpectralPoint {
    pub fn complex(z: Complex64) -> Self {
        SpectralPoint::Complex(z)
    }

    pub fn real(x: f64) -> Self {
        SpectralPoint::Complex(Complex64::new(x, 0.0))
    }

    pub fn upper(lambda: f64) -> Self {
        SpectralPoint::Boundary { lambda, sheet: Sheet::Upper }
    }

    pub fn lower(lambda: f64) -> Self {
        SpectralPoint::Boundary { lambda, sheet: Sheet::Lower }
    }

    /// The complex argument fed to recursions (boundary points give the real
    /// value with a +0.0 imaginary part).
    pub fn argument(self) -> Complex64 {
        match self {
            SpectralPoint::Complex(z) => {
                if z.im == 0.0 {
                    Complex64::new(z.re, 0.0)
                } else {
                    z
                }
            }
            SpectralPoint::Boundary { lambda, .. } => Complex64::new(lambda, 0.0),
        }
    }
}

/// Period-`N` Jacobi coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCoefficients {
    pub period: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PeriodicCoefficients {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        let period = a.len();
        PeriodicCoefficients { period, a, b }
    }

    #[inline]
    pub fn a(&self, n: i64) -> f64 {
        self.a[n.rem_euclid(self.period as i64) as usize]
    }

    #[inline]
    pub fn b(&self, n: i64) -> f64 {
        self.b[n.rem_euclid(self.period as i64) as usize]
    }

    fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("period must be at least 1".into()));
        }
        if self.a.len() != self.period || self.b.len() != self.period {
            return Err(Error::Config(format!(
                "coefficient arrays must have length equal to the period {} (got a: {}, b: {})",
                self.period,
                self.a.len(),
                self.b.len()
            )));
        }
        for (j, &aj) in self.a.iter().enumerate() {
            if aj <= 0.0 || !aj.is_finite() {
                return Err(Error::NonPositiveCoefficient { index: j as i64, value: aj });
            }
        }
        for (j, &bj) in self.b.iter().enumerate() {
            if !bj.is_finite() {
                return Err(Error::Config(format!("b({j}) is not finite")));
            }
        }
        Ok(())
    }
}

/// Band edges of a periodic background, sorted ascending. With period `N`
/// there are `2N` edges bounding `N` bands; consecutive bands are separated
/// by open gaps (closed gaps are rejected at construction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub edges: Vec<f64>,
}

impl BandStructure {
    /// Closed bands `[E(2j), E(2j+1)]`.
    pub fn bands(&self) -> Vec<(f64, f64)> {
        self.edges.chunks(2).map(|c| (c[0], c[1])).collect()
    }

    /// Open gaps between consecutive bands.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        (1..self.edges.len() - 1)
            .step_by(2)
            .map(|j| (self.edges[j], self.edges[j + 1]))
            .collect()
    }

    /// Total spread of the spectrum, used to scale all relative tolerances.
    pub fn diameter(&self) -> f64 {
        self.edges[self.edges.len() - 1] - self.edges[0]
    }

    /// Number of open gaps.
    pub fn genus(&self) -> usize {
        self.edges.len() / 2 - 1
    }

    /// Distance from `lambda` to the nearest band edge.
    pub fn edge_distance(&self, lambda: f64) -> f64 {
        self.edges
            .iter()
            .map(|e| (lambda - e).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// True if `lambda` lies strictly inside some band, with at least
    /// `clearance` distance to both of its edges.
    pub fn interior_contains(&self, lambda: f64, clearance: f64) -> bool {
        self.bands()
            .iter()
            .any(|&(lo, hi)| lambda > lo + clearance && lambda < hi - clearance)
    }

    /// Index of the band whose closure contains `lambda`, if any.
    pub fn band_index(&self, lambda: f64) -> Option<usize> {
        self.bands()
            .iter()
            .position(|&(lo, hi)| lambda >= lo && lambda <= hi)
    }
}

/// How a Dirichlet point relates to the two Floquet branches of its side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirichletClass {
    /// The principal branch `psi` has a pole here.
    Pole,
    /// The conjugate branch has the pole; `psi` is regular.
    ConjugatePole,
    /// The point sits at a band edge; both branches carry a square-root
    /// singularity.
    Edge,
}

/// A Dirichlet eigenvalue (root of the monodromy entry `M12`), one per gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPoint {
    pub mu: f64,
    pub class: DirichletClass,
}

/// A fully analyzed periodic background bound to one side of a steplike
/// operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub side: Side,
    pub coeffs: PeriodicCoefficients,
    pub bands: BandStructure,
    pub dirichlet: Vec<DirichletPoint>,
}

/// Relative tolerance (times the spectrum diameter) below which a point
/// counts as sitting on a band edge.
pub const EDGE_TOL_REL: f64 = 1e-12;
/// Real-axis evaluations switch to double-double trace arithmetic within
/// this distance (times the diameter) of a band edge: the multiplier
/// discriminant `tr^2 - 4` shrinks linearly with the edge distance, so its
/// f64 evaluation has lost half of the significant digits by here.
const NEAR_EDGE_DD_REL: f64 = 1e-8;
/// Hard floor for real-axis evaluations (times the diameter): closer than
/// this the point is treated as the edge itself. The double-double trace
/// stays accurate well below any practical distance, so the floor only has
/// to catch exact-edge hits; contour rules park their extreme nodes at
/// distances shrinking like `width / nodes^4`, which keeps even narrow
/// pieces at several thousand nodes per piece above this floor.
const BOUNDARY_FLOOR_REL: f64 = 1e-17;
/// Relative tolerance for classifying a Dirichlet point as edge-coincident.
pub const DIRICHLET_EDGE_TOL_REL: f64 = 1e-9;
/// Relative gap width below which the background is rejected as degenerate.
const GAP_TOL_REL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Monodromy matrices
// ---------------------------------------------------------------------------

/// 2x2 complex matrix in row-major order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat2 {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
}

impl Mat2 {
    fn identity() -> Mat2 {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Mat2 { m11: one, m12: zero, m21: zero, m22: one }
    }

    fn mul(self, rhs: Mat2) -> Mat2 {
        Mat2 {
            m11: self.m11 * rhs.m11 + self.m12 * rhs.m21,
            m12: self.m11 * rhs.m12 + self.m12 * rhs.m22,
            m21: self.m21 * rhs.m11 + self.m22 * rhs.m21,
            m22: self.m21 * rhs.m12 + self.m22 * rhs.m22,
        }
    }
}

/// One-step transfer matrix at site `n`: maps `(f(n-1), f(n))` to
/// `(f(n), f(n+1))` for a solution of `H f = z f`.
fn transfer(coeffs: &PeriodicCoefficients, z: Complex64, n: i64) -> Mat2 {
    let an = coeffs.a(n);
    let am = coeffs.a(n - 1);
    let bn = coeffs.b(n);
    Mat2 {
        m11: Complex64::new(0.0, 0.0),
        m12: Complex64::new(1.0, 0.0),
        m21: Complex64::new(-am / an, 0.0),
        m22: (z - bn) / an,
    }
}

/// Monodromy matrix over one period: `T(N) ... T(1)`.
pub(crate) fn monodromy(coeffs: &PeriodicCoefficients, z: Complex64) -> Mat2 {
    let mut m = Mat2::identity();
    for n in 1..=coeffs.period as i64 {
        m = transfer(coeffs, z, n).mul(m);
    }
    m
}

/// Monodromy together with its derivative in `z` (product rule over the
/// transfer factors; only the `m22` entry of a factor depends on `z`).
fn monodromy_with_derivative(coeffs: &PeriodicCoefficients, z: Complex64) -> (Mat2, Mat2) {
    let zero = Complex64::new(0.0, 0.0);
    let mut m = Mat2::identity();
    let mut dm = Mat2 { m11: zero, m12: zero, m21: zero, m22: zero };
    for n in 1..=coeffs.period as i64 {
        let t = transfer(coeffs, z, n);
        let dt = Mat2 {
            m11: zero,
            m12: zero,
            m21: zero,
            m22: Complex64::new(1.0 / coeffs.a(n), 0.0),
        };
        dm = dt.mul(m) + t.mul(dm);
        m = t.mul(m);
    }
    (m, dm)
}

impl std::ops::Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2 {
            m11: self.m11 + o.m11,
            m12: self.m12 + o.m12,
            m21: self.m21 + o.m21,
            m22: self.m22 + o.m22,
        }
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

/// Band edges from the periodic (`sigma = +1`) and antiperiodic
/// (`sigma = -1`) boundary-value eigenproblems on one period.
fn boundary_eigenvalues(coeffs: &PeriodicCoefficients, sigma: f64) -> Vec<f64> {
    let n = coeffs.period;
    let m = match n {
        1 => DMatrix::from_element(1, 1, coeffs.b[0] + 2.0 * sigma * coeffs.a[0]),
        2 => {
            let off = coeffs.a[0] + sigma * coeffs.a[1];
            DMatrix::from_row_slice(2, 2, &[coeffs.b[0], off, off, coeffs.b[1]])
        }
        _ => {
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                m[(j, j)] = coeffs.b[j];
            }
            for j in 0..n - 1 {
                m[(j, j + 1)] = coeffs.a[j];
                m[(j + 1, j)] = coeffs.a[j];
            }
            m[(0, n - 1)] = sigma * coeffs.a[n - 1];
            m[(n - 1, 0)] = sigma * coeffs.a[n - 1];
            m
        }
    };
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Real value of the monodromy entry `M12` at a real argument.
fn m12_real(coeffs: &PeriodicCoefficients, x: f64) -> f64 {
    monodromy(coeffs, Complex64::new(x, 0.0)).m12.re
}

/// Locate the single root of `M12` inside the closed gap `[lo, hi]`:
/// scan a fixed grid for a sign change, bisect, then polish with Newton.
fn dirichlet_in_gap(coeffs: &PeriodicCoefficients, lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 64;
    let width = hi - lo;
    let val = |x: f64| m12_real(coeffs, x);
    let mut bracket = None;
    let mut best_x = lo;
    let mut best_v = f64::INFINITY;
    let mut prev_x = lo;
    let mut prev_v = val(lo);
    if prev_v.abs() < best_v {
        best_v = prev_v.abs();
        best_x = prev_x;
    }
    for j in 1..=SCAN {
        let x = lo + width * (j as f64 / SCAN as f64);
        let v = val(x);
        if v.abs() < best_v {
            best_v = v.abs();
            best_x = x;
        }
        if prev_v != 0.0 && v != 0.0 && prev_v.signum() != v.signum() {
            bracket = Some((prev_x, x));
            break;
        }
        if v == 0.0 {
            bracket = Some((x, x));
            break;
        }
        prev_x = x;
        prev_v = v;
    }
    let mut mu = match bracket {
        Some((xl, xr)) if xl == xr => xl,
        Some((mut xl, mut xr)) => {
            let mut vl = val(xl);
            for _ in 0..200 {
                let xm = 0.5 * (xl + xr);
                let vm = val(xm);
                if vm == 0.0 {
                    xl = xm;
                    xr = xm;
                    break;
                }
                if vl.signum() != vm.signum() {
                    xr = xm;
                } else {
                    xl = xm;
                    vl = vm;
                }
                if xr - xl < 1e-16 * (1.0 + xm.abs()) {
                    break;
                }
            }
            0.5 * (xl + xr)
        }
        // No sign change on the grid: the root hugs an endpoint.
        None => best_x,
    };
    // Newton polish (also recovers endpoint roots pushed just outside the
    // numerical gap), clamped to the closed gap.
    for _ in 0..4 {
        let (m, dm) = monodromy_with_derivative(coeffs, Complex64::new(mu, 0.0));
        let f = m.m12.re;
        let df = dm.m12.re;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        mu -= step;
        if !mu.is_finite() {
            mu = best_x;
            break;
        }
        if step.abs() < 1e-16 * (1.0 + mu.abs()) {
            break;
        }
    }
    mu.clamp(lo, hi)
}

/// Build a fully analyzed background model for one side: band edges from the
/// periodic/antiperiodic eigenproblems, Dirichlet points located and
/// classified, and the multiplier-branch conventions validated at every band
/// midpoint.
pub fn build_background(coeffs: PeriodicCoefficients, side: Side) -> Result<BackgroundModel> {
    coeffs.validate()?;
    let plus = boundary_eigenvalues(&coeffs, 1.0);
    let minus = boundary_eigenvalues(&coeffs, -1.0);
    let mut edges: Vec<f64> = plus.into_iter().chain(minus).collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n2 = edges.len();
    let diameter = edges[n2 - 1] - edges[0];
    if diameter <= 0.0 {
        return Err(Error::DegenerateGap { lower: edges[0], upper: edges[n2 - 1] });
    }
    // Gaps between consecutive bands must be open.
    for j in (1..n2 - 1).step_by(2) {
        if edges[j + 1] - edges[j] < GAP_TOL_REL * diameter {
            return Err(Error::DegenerateGap { lower: edges[j], upper: edges[j + 1] });
        }
    }
    let bands = BandStructure { edges };

    // One Dirichlet point per gap, classified by the triangular-limit
    // multipliers: at mu the monodromy has M12 = 0, its eigenvalues are
    // exactly M11 and M22, and the branch with multiplier M22 carries the
    // pole (its eigenvector starts with a zero component).
    let edge_tol = DIRICHLET_EDGE_TOL_REL * bands.diameter();
    let mut dirichlet = Vec::new();
    for &(glo, ghi) in bands.gaps().iter() {
        let mu = dirichlet_in_gap(&coeffs, glo, ghi);
        let class = if (mu - glo).abs() < edge_tol || (ghi - mu).abs() < edge_tol {
            DirichletClass::Edge
        } else {
            let m = monodromy(&coeffs, Complex64::new(mu, 0.0));
            let pole_is_principal = match side {
                Side::Plus => m.m22.norm() < m.m11.norm(),
                Side::Minus => m.m22.norm() > m.m11.norm(),
            };
            if pole_is_principal {
                DirichletClass::Pole
            } else {
                DirichletClass::ConjugatePole
            }
        };
        dirichlet.push(DirichletPoint { mu, class });
    }

    let model = BackgroundModel { side, coeffs, bands, dirichlet };

    // Validate the branch conventions once per band: at the band midpoint the
    // Wronskian and product routes to the spectral weight must agree and the
    // weight must have positive imaginary part on the upper sheet.
    for &(lo, hi) in model.bands.bands().iter() {
        let mid = SpectralPoint::upper(0.5 * (lo + hi));
        let r1 = weight_rho(&model, mid)?;
        let r2 = weight_rho_product(&model, mid)?;
        let scale = r1.norm().max(r2.norm()).max(1e-300);
        if (r1 - r2).norm() > 1e-8 * scale {
            return Err(Error::Internal(format!(
                "spectral-weight routes disagree at band midpoint {}: {} vs {}",
                0.5 * (lo + hi),
                r1,
                r2
            )));
        }
        if r1.im <= 0.0 {
            return Err(Error::Internal(format!(
                "spectral weight has non-positive imaginary part {} at band midpoint {}",
                r1.im,
                0.5 * (lo + hi)
            )));
        }
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Floquet evaluation
// ---------------------------------------------------------------------------

/// Which branch of the Floquet pair is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Branch {
    Principal,
    Conjugate,
}

struct Seed {
    /// Complex argument used in site recursions.
    z: Complex64,
    /// Floquet multiplier of the branch.
    w: Complex64,
    /// Value `psi(z, 1)` of the branch (normalized `psi(z, 0) = 1`).
    psi1: Complex64,
}

/// Value `psi(z, 1)` for the eigenvector of `m` with eigenvalue `w`, using
/// whichever of the two equivalent formulas has the larger denominator.
fn eigenvector_ratio(m: &Mat2, w: Complex64, at: f64) -> Result<Complex64> {
    let d1 = m.m12;
    let d2 = w - m.m22;
    let scale =
        1.0 + m.m11.norm() + m.m12.norm() + m.m21.norm() + m.m22.norm() + w.norm();
    if d1.norm().max(d2.norm()) < 1e-13 * scale {
        return Err(Error::AtDirichletPole(at));
    }
    if d1.norm() >= d2.norm() {
        Ok((w - m.m11) / d1)
    } else {
        Ok(m.m21 / d2)
    }
}

/// Both Floquet multipliers ordered as (large, small): `|w_large| >= 1`,
/// `w_small = 1 / w_large`, chosen without cancellation.
fn multiplier_pair(m: &Mat2) -> (Complex64, Complex64) {
    let delta = m.m11 + m.m22;
    let disc = (delta - 2.0) * (delta + 2.0);
    let mut s = disc.sqrt();
    if (delta.conj() * s).re < 0.0 {
        s = -s;
    }
    let w_large = 0.5 * (delta + s);
    (w_large, 1.0 / w_large)
}

/// Monodromy at a real argument, accumulated in double-double arithmetic.
/// All entries are real there, so only the four real components are carried.
fn monodromy_dd(coeffs: &PeriodicCoefficients, lambda: f64) -> [Dd; 4] {
    // m = [m11, m12, m21, m22], starting from the identity.
    let mut m = [Dd::ONE, Dd::ZERO, Dd::ZERO, Dd::ONE];
    for n in 1..=coeffs.period as i64 {
        let an = coeffs.a(n);
        // One-step transfer [[0, 1], [-a(n-1)/a(n), (lambda - b(n))/a(n)]].
        let t21 = Dd::from_f64(-coeffs.a(n - 1)).div(Dd::from_f64(an));
        let t22 = Dd::from_f64(lambda - coeffs.b(n))
            .div(Dd::from_f64(an));
        m = [
            m[2],
            m[3],
            t21.mul(m[0]).add(t22.mul(m[2])),
            t21.mul(m[1]).add(t22.mul(m[3])),
        ];
    }
    m
}

/// Multiplier pair and both eigenvector ratios at a real spectral point,
/// computed through a double-double trace. At edge distance `d` the
/// discriminant `tr^2 - 4` is proportional to `d`, so the plain f64 route
/// loses `log10(1/d)` digits to cancellation; the double-double trace keeps
/// the pair at full f64 accuracy down to a few ulp from the edge, on either
/// side of it. Inside a band the returned pair is (upper half plane,
/// conjugate); outside it is ordered (large, small).
fn real_pair_dd(
    coeffs: &PeriodicCoefficients,
    lambda: f64,
) -> Result<(Complex64, Complex64, Complex64, Complex64)> {
    let m = monodromy_dd(coeffs, lambda);
    let delta = m[0].add(m[3]);
    let disc = delta.mul(delta).sub(Dd::from_f64(4.0));
    let half_delta = delta.mul_f64(0.5).to_f64();
    let (w_a, w_b) = if disc.hi <= 0.0 {
        // Inside the band: unimodular conjugate pair.
        let root = disc.neg().sqrt().to_f64();
        let w = Complex64::new(half_delta, 0.5 * root);
        (w, w.conj())
    } else {
        // Outside: real pair, the root signed so the large multiplier is
        // formed without cancellation (the small one is the benign
        // difference of well-separated magnitudes).
        let root = 0.5 * disc.sqrt().to_f64() * half_delta.signum();
        (
            Complex64::new(half_delta + root, 0.0),
            Complex64::new(half_delta - root, 0.0),
        )
    };
    // Eigenvector ratios psi(1) = (w - m11)/m12 or m21/(w - m22), the same
    // dual formula as the f64 route, with the trace halves formed before
    // leaving double-double: w - m11 = (m22 - m11)/2 + (w - tr/2).
    let half_skew = m[3].sub(m[0]).mul_f64(0.5).to_f64();
    let m12 = m[1].to_f64();
    let m21 = m[2].to_f64();
    let scale = 1.0
        + m[0].to_f64().abs()
        + m12.abs()
        + m21.abs()
        + m[3].to_f64().abs()
        + w_a.norm();
    let ratio = |w: Complex64| -> Result<Complex64> {
        let dev = w - Complex64::new(half_delta, 0.0);
        let num = Complex64::new(half_skew, 0.0) + dev;
        let d2 = Complex64::new(-half_skew, 0.0) + dev;
        if m12.abs().max(d2.norm()) < 1e-13 * scale {
            return Err(Error::AtDirichletPole(lambda));
        }
        if m12.abs() >= d2.norm() {
            Ok(num / m12)
        } else {
            Ok(Complex64::new(m21, 0.0) / d2)
        }
    };
    let psi_a = ratio(w_a)?;
    let psi_b = ratio(w_b)?;
    Ok((w_a, psi_a, w_b, psi_b))
}

/// Resolve the principal/conjugate seeds at a spectral point.
///
/// Off the spectrum (and for genuinely complex arguments) the principal
/// branch is fixed by modulus: `|w| < 1` for the right side, `|w| > 1` for
/// the left. On a band (boundary points, both multipliers unimodular) it is
/// fixed by the sign of the spectral weight: the assignment making
/// `Im rho > 0` on the upper sheet is principal. Lower-sheet values are the
/// conjugates of upper-sheet ones.
fn seed_pair(model: &BackgroundModel, pt: SpectralPoint) -> Result<(Seed, Seed)> {
    let diam = model.bands.diameter();
    let edge_tol = EDGE_TOL_REL * diam;
    match pt {
        SpectralPoint::Complex(z0) => {
            let z = pt.argument();
            if z.im == 0.0 {
                if model.bands.edge_distance(z.re) < edge_tol {
                    return Err(Error::AtBandEdge(z.re));
                }
                if model.bands.interior_contains(z.re, edge_tol) {
                    return Err(Error::Config(format!(
                        "real argument {} lies inside a spectral band; evaluate a boundary point with an explicit sheet",
                        z0.re
                    )));
                }
            }
            let m = monodromy(&model.coeffs, z);
            let (w_large, w_small) = multiplier_pair(&m);
            let (w_p, w_c) = match model.side {
                Side::Plus => (w_small, w_large),
                Side::Minus => (w_large, w_small),
            };
            let at = z.re;
            let p = Seed { z, w: w_p, psi1: eigenvector_ratio(&m, w_p, at)? };
            let c = Seed { z, w: w_c, psi1: eigenvector_ratio(&m, w_c, at)? };
            Ok((p, c))
        }
        SpectralPoint::Boundary { lambda, sheet } => {
            let z = Complex64::new(lambda, 0.0);
            let d_edge = model.bands.edge_distance(lambda);
            if d_edge < BOUNDARY_FLOOR_REL * diam {
                return Err(Error::AtBandEdge(lambda));
            }
            if !model.bands.interior_contains(lambda, 0.0) {
                // Off the spectrum both sheets coincide with the real value.
                // Quadrature nodes of one side's rule can land a few ulp
                // outside the other side's bands, so the near-edge
                // double-double route applies here too.
                let (w_large, psi_large, w_small, psi_small) =
                    if d_edge < NEAR_EDGE_DD_REL * diam {
                        real_pair_dd(&model.coeffs, lambda)?
                    } else {
                        let m = monodromy(&model.coeffs, z);
                        let (w_large, w_small) = multiplier_pair(&m);
                        let psi_large = eigenvector_ratio(&m, w_large, lambda)?;
                        let psi_small = eigenvector_ratio(&m, w_small, lambda)?;
                        (w_large, psi_large, w_small, psi_small)
                    };
                let ((w_p, psi_p), (w_c, psi_c)) = match model.side {
                    Side::Plus => ((w_small, psi_small), (w_large, psi_large)),
                    Side::Minus => ((w_large, psi_large), (w_small, psi_small)),
                };
                let p = Seed { z, w: w_p, psi1: psi_p };
                let c = Seed { z, w: w_c, psi1: psi_c };
                return Ok((p, c));
            }
            // Inside a band: both candidates unimodular; pick the assignment
            // with positive-imaginary spectral weight on the upper sheet.
            // Close to an edge (where high-order quadrature nodes of the
            // edge-absorbing rules land) the trace cancellation exceeds f64,
            // so the pair is formed through a double-double trace instead.
            let (w_a, psi_a, w_b, psi_b) = if d_edge < NEAR_EDGE_DD_REL * diam {
                real_pair_dd(&model.coeffs, lambda)?
            } else {
                let m = monodromy(&model.coeffs, z);
                let (w_a, w_b) = multiplier_pair(&m);
                let psi_a = eigenvector_ratio(&m, w_a, lambda)?;
                let psi_b = eigenvector_ratio(&m, w_b, lambda)?;
                (w_a, psi_a, w_b, psi_b)
            };
            let a0 = model.coeffs.a(0);
            // W(conjugate, principal) with principal = a.
            let w_of_a = a0 * (psi_a - psi_b);
            let rho_a = model.side.sign() / w_of_a;
            let (mut p, mut c) = if rho_a.im > 0.0 {
                (
                    Seed { z, w: w_a, psi1: psi_a },
                    Seed { z, w: w_b, psi1: psi_b },
                )
            } else {
                (
                    Seed { z, w: w_b, psi1: psi_b },
                    Seed { z, w: w_a, psi1: psi_a },
                )
            };
            if sheet == Sheet::Lower {
                p = Seed { z, w: p.w.conj(), psi1: p.psi1.conj() };
                c = Seed { z, w: c.w.conj(), psi1: c.psi1.conj() };
            }
            Ok((p, c))
        }
    }
}

fn seed(model: &BackgroundModel, pt: SpectralPoint, branch: Branch) -> Result<Seed> {
    let (p, c) = seed_pair(model, pt)?;
    Ok(match branch {
        Branch::Principal => p,
        Branch::Conjugate => c,
    })
}

/// Values of a Floquet branch over one period, `r = 0 ..= N`, from the seed
/// by the three-term recursion.
fn period_block(coeffs: &PeriodicCoefficients, s: &Seed) -> Vec<Complex64> {
    let n = coeffs.period;
    let mut v = Vec::with_capacity(n + 1);
    v.push(Complex64::new(1.0, 0.0));
    v.push(s.psi1);
    for r in 2..=n {
        let r = r as i64;
        let next = ((s.z - coeffs.b(r - 1)) * v[(r - 1) as usize]
            - coeffs.a(r - 2) * v[(r - 2) as usize])
            / coeffs.a(r - 1);
        v.push(next);
    }
    v
}

fn row_from_seed(
    coeffs: &PeriodicCoefficients,
    s: &Seed,
    lo: i64,
    hi: i64,
) -> Vec<Complex64> {
    let n = coeffs.period as i64;
    let block = period_block(coeffs, s);
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    let k_lo = lo.div_euclid(n);
    let k_hi = hi.div_euclid(n);
    // Multiplier powers over the needed block range.
    let powers: Vec<Complex64> = (k_lo..=k_hi).map(|k| s.w.powi(k as i32)).collect();
    for m in lo..=hi {
        let k = m.div_euclid(n);
        let r = m.rem_euclid(n) as usize;
        out.push(powers[(k - k_lo) as usize] * block[r]);
    }
    out
}

/// Principal Floquet solution `psi(z, n)` of the background, normalized by
/// `psi(z, 0) = 1`; decays toward the model's own infinity off the spectrum.
pub fn floquet(model: &BackgroundModel, pt: SpectralPoint, n: i64) -> Result<Complex64> {
    Ok(floquet_row(model, pt, n, n)?[0])
}

/// Principal Floquet values on the inclusive site range `[lo, hi]`,
/// evaluated by one period block plus multiplier powers (stable for large
/// |n|; no long recursions in a decaying direction).
pub fn floquet_row(
    model: &BackgroundModel,
    pt: SpectralPoint,
    lo: i64,
    hi: i64,
) -> Result<Vec<Complex64>> {
    if lo > hi {
        return Err(Error::RangeMismatch(format!("empty site range [{lo}, {hi}]")));
    }
    let s = seed(model, pt, Branch::Principal)?;
    Ok(row_from_seed(&model.coeffs, &s, lo, hi))
}

/// Second (conjugate-branch) Floquet solution.
pub fn floquet_second(model: &BackgroundModel, pt: SpectralPoint, n: i64) -> Result<Complex64> {
    Ok(floquet_second_row(model, pt, n, n)?[0])
}

/// Conjugate-branch Floquet values on `[lo, hi]`.
pub fn floquet_second_row(
    model: &BackgroundModel,
    pt: SpectralPoint,
    lo: i64,
    hi: i64,
) -> Result<Vec<Complex64>> {
    if lo > hi {
        return Err(Error::RangeMismatch(format!("empty site range [{lo}, {hi}]")));
    }
    let s = seed(model, pt, Branch::Conjugate)?;
    Ok(row_from_seed(&model.coeffs, &s, lo, hi))
}

/// Floquet multiplier of the principal branch.
pub fn multiplier(model: &BackgroundModel, pt: SpectralPoint) -> Result<Complex64> {
    Ok(seed(model, pt, Branch::Principal)?.w)
}

// ---------------------------------------------------------------------------
// Spectral weight
// ---------------------------------------------------------------------------

/// Spectral weight via the Wronskian of the two Floquet branches:
/// `rho = sign(side) / W(conjugate, principal)` with the Wronskian evaluated
/// at site 0.
pub fn weight_rho(model: &BackgroundModel, pt: SpectralPoint) -> Result<Complex64> {
    let (p, c) = seed_pair(model, pt)?;
    let w = model.coeffs.a(0) * (p.psi1 - c.psi1);
    if w.norm() == 0.0 {
        return Err(Error::AtBandEdge(pt.argument().re));
    }
    Ok(model.side.sign() / w)
}

/// Spectral weight via the product formula: all Dirichlet points over the
/// principal square root of the edge polynomial,
/// `rho = prod_j (z - mu_j) / ( -prod_k sqrt(z - E_k) )`.
/// Used to cross-check the Wronskian route.
pub fn weight_rho_product(model: &BackgroundModel, pt: SpectralPoint) -> Result<Complex64> {
    let (z, conjugate) = match pt {
        SpectralPoint::Complex(_) => (pt.argument(), false),
        SpectralPoint::Boundary { lambda, sheet } => {
            (Complex64::new(lambda, 0.0), sheet == Sheet::Lower)
        }
    };
    let mut num = Complex64::new(1.0, 0.0);
    for d in &model.dirichlet {
        num *= z - d.mu;
    }
    let mut den = Complex64::new(-1.0, 0.0);
    for &e in &model.bands.edges {
        den *= (z - e).sqrt();
    }
    if den.norm() == 0.0 {
        return Err(Error::AtBandEdge(z.re));
    }
    let rho = num / den;
    Ok(if conjugate { rho.conj() } else { rho })
}

// ---------------------------------------------------------------------------
// Pole regularization
// ---------------------------------------------------------------------------

/// The three Dirichlet regularizer products at a spectral argument:
/// `delta` strips principal-branch poles, `delta_conj` strips
/// conjugate-branch poles, and both carry half-order factors at
/// edge-coincident points (in `delta_hat` and `delta_conj`).
#[derive(Clone, Copy, Debug)]
pub struct PoleFactors {
    /// Product of `(z - mu)` over principal-pole Dirichlet points.
    pub delta: Complex64,
    /// `delta` times `sqrt(z - mu)` over edge-coincident Dirichlet points.
    pub delta_hat: Complex64,
    /// Product of `(z - mu)` over conjugate-pole points times the same
    /// square-root factors.
    pub delta_conj: Complex64,
}

/// Evaluate the Dirichlet regularizer products at a point.
pub fn pole_factors(model: &BackgroundModel, pt: SpectralPoint) -> PoleFactors {
    let (z, conjugate) = match pt {
        SpectralPoint::Complex(_) => (pt.argument(), false),
        SpectralPoint::Boundary { lambda, sheet } => {
            (Complex64::new(lambda, 0.0), sheet == Sheet::Lower)
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let mut delta = one;
    let mut half = one;
    let mut conj_part = one;
    for d in &model.dirichlet {
        match d.class {
            DirichletClass::Pole => delta *= z - d.mu,
            DirichletClass::ConjugatePole => conj_part *= z - d.mu,
            DirichletClass::Edge => half *= (z - d.mu).sqrt(),
        }
    }
    let f = PoleFactors {
        delta,
        delta_hat: delta * half,
        delta_conj: conj_part * half,
    };
    if conjugate {
        PoleFactors {
            delta: f.delta.conj(),
            delta_hat: f.delta_hat.conj(),
            delta_conj: f.delta_conj.conj(),
        }
    } else {
        f
    }
}

/// Pole-regularized Floquet values at one site.
#[derive(Clone, Copy, Debug)]
pub struct Regularized {
    pub factors: PoleFactors,
    /// `delta * psi(z, n)`: regular at principal-pole Dirichlet points.
    pub psi_tilde: Complex64,
    /// `delta_hat * psi(z, n)`: additionally bounded at edge-coincident
    /// Dirichlet points.
    pub psi_hat: Complex64,
}

/// Regularized principal Floquet solution at site `n`.
pub fn regularize(model: &BackgroundModel, pt: SpectralPoint, n: i64) -> Result<Regularized> {
    let factors = pole_factors(model, pt);
    let psi = floquet(model, pt, n)?;
    Ok(Regularized {
        factors,
        psi_tilde: factors.delta * psi,
        psi_hat: factors.delta_hat * psi,
    })
}

// ---------------------------------------------------------------------------
// Validation integrals and expansions
// ---------------------------------------------------------------------------

/// Defect of the Floquet orthogonality relation
/// `(1/2pi i) oint psi(., m) conj(psi(., n)) rho dlambda = delta_{mn}`,
/// integrated with `nodes` contour points per band.
pub fn orthogonality_defect(
    model: &BackgroundModel,
    m: i64,
    n: i64,
    nodes: usize,
) -> Result<f64> {
    let lo = m.min(n);
    let hi = m.max(n);
    let mut total = Complex64::new(0.0, 0.0);
    for &(blo, bhi) in model.bands.bands().iter() {
        let rule = band_rule(blo, bhi, nodes)?;
        let value = contour_integral(&rule, |lambda, sheet| {
            let pt = SpectralPoint::Boundary { lambda, sheet };
            let row = floquet_row(model, pt, lo, hi)?;
            let vm = row[(m - lo) as usize];
            let vn = row[(n - lo) as usize];
            let rho = weight_rho(model, pt)?;
            Ok(vm * vn.conj() * rho)
        })?;
        total += value;
    }
    let result = total / Complex64::new(0.0, 2.0 * std::f64::consts::PI);
    let expected = if m == n { 1.0 } else { 0.0 };
    Ok((result - expected).norm())
}

/// Relative defect of the large-|z| expansion of the principal Floquet
/// solution against its two leading terms. For the right side
/// `psi ~ z^{-n} (prod* a)(1 + sum* b(j+1)/z)`, for the left side
/// `psi ~ z^{n} (prod* a)^{-1}(1 - sum* b(j)/z)`, with the starred product
/// and sum extended to negative `n` in the usual inverse/negated sense.
pub fn asymptotic_defect(model: &BackgroundModel, z: Complex64, n: i64) -> Result<f64> {
    let psi = floquet(model, SpectralPoint::Complex(z), n)?;
    let star_prod = |f: &dyn Fn(i64) -> f64| -> f64 {
        if n > 0 {
            (0..n).map(f).product()
        } else if n == 0 {
            1.0
        } else {
            1.0 / (n..0).map(f).product::<f64>()
        }
    };
    let star_sum = |f: &dyn Fn(i64) -> f64| -> f64 {
        if n > 0 {
            (0..n).map(f).sum()
        } else if n == 0 {
            0.0
        } else {
            -(n..0).map(f).sum::<f64>()
        }
    };
    let coeffs = &model.coeffs;
    let expected = match model.side {
        Side::Plus => {
            let prod = star_prod(&|j| coeffs.a(j));
            let sum = star_sum(&|j| coeffs.b(j + 1));
            z.powi(-(n as i32)) * prod * (1.0 + sum / z)
        }
        Side::Minus => {
            let prod = star_prod(&|j| coeffs.a(j));
            let sum = star_sum(&|j| coeffs.b(j));
            z.powi(n as i32) / prod * (1.0 - sum / z)
        }
    };
    Ok((psi / expected - 1.0).norm())
}
