//! Steplike Jacobi operators: two periodic backgrounds glued at the origin
//! plus finitely many coefficient overrides.
//!
//! The operator acts as `(H f)(n) = a(n-1) f(n-1) + b(n) f(n) + a(n) f(n+1)`
//! where `(a(n), b(n))` equal the right background for `n >= 0`, the left
//! background for `n < 0`, except on the finite set of overridden sites.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::background::{build_background, BackgroundModel, PeriodicCoefficients, Side};
use crate::error::{Error, Result};

/// One overridden lattice site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideEntry {
    pub n: i64,
    pub a: f64,
    pub b: f64,
}

/// Serializable description of a steplike operator (the on-disk format).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteplikeSpec {
    pub left: PeriodicCoefficients,
    pub right: PeriodicCoefficients,
    #[serde(default)]
    pub overrides: Vec<OverrideEntry>,
}

/// A fully built steplike operator with analyzed backgrounds.
#[derive(Clone, Debug)]
pub struct SteplikeOperator {
    pub left: BackgroundModel,
    pub right: BackgroundModel,
    overrides: BTreeMap<i64, (f64, f64)>,
    /// Inclusive range of overridden sites, `None` when there are none.
    pub window: Option<(i64, i64)>,
}

/// Margin (sites on each side of the override window) a dense truncation
/// must keep so boundary effects stay away from the perturbation.
pub const TRUNCATION_MARGIN: i64 = 20;

impl SteplikeOperator {
    /// Validate a spec and build both background models.
    pub fn build(spec: SteplikeSpec) -> Result<SteplikeOperator> {
        let left = build_background(spec.left, Side::Minus)?;
        let right = build_background(spec.right, Side::Plus)?;
        let mut overrides = BTreeMap::new();
        for o in &spec.overrides {
            if o.a <= 0.0 || !o.a.is_finite() {
                return Err(Error::NonPositiveCoefficient { index: o.n, value: o.a });
            }
            if !o.b.is_finite() {
                return Err(Error::Config(format!("override b({}) is not finite", o.n)));
            }
            if overrides.insert(o.n, (o.a, o.b)).is_some() {
                return Err(Error::Config(format!("duplicate override at site {}", o.n)));
            }
        }
        let window = overrides
            .keys()
            .next()
            .copied()
            .map(|lo| (lo, *overrides.keys().next_back().unwrap()));
        Ok(SteplikeOperator { left, right, overrides, window })
    }

    /// Rebuild the serializable description.
    pub fn to_spec(&self) -> SteplikeSpec {
        SteplikeSpec {
            left: self.left.coeffs.clone(),
            right: self.right.coeffs.clone(),
            overrides: self
                .overrides
                .iter()
                .map(|(&n, &(a, b))| OverrideEntry { n, a, b })
                .collect(),
        }
    }

    pub fn model(&self, side: Side) -> &BackgroundModel {
        match side {
            Side::Minus => &self.left,
            Side::Plus => &self.right,
        }
    }

    /// The background governing site `n` under the steplike convention.
    pub fn background_side(n: i64) -> Side {
        if n >= 0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }

    /// Unperturbed (steplike composite) coefficients at site `n`.
    pub fn background_coefficient(&self, n: i64) -> (f64, f64) {
        let m = self.model(Self::background_side(n));
        (m.coeffs.a(n), m.coeffs.b(n))
    }

    /// True coefficients `(a(n), b(n))` including overrides.
    pub fn coefficient(&self, n: i64) -> (f64, f64) {
        self.overrides
            .get(&n)
            .copied()
            .unwrap_or_else(|| self.background_coefficient(n))
    }

    pub fn a(&self, n: i64) -> f64 {
        self.coefficient(n).0
    }

    pub fn b(&self, n: i64) -> f64 {
        self.coefficient(n).1
    }

    /// First moment of the perturbation,
    /// `sum_n |n| (|a(n) - a_q(n)| + |b(n) - b_q(n)|)`; finite by
    /// construction since only overridden sites contribute.
    pub fn hypothesis_weight(&self) -> f64 {
        self.overrides
            .iter()
            .map(|(&n, &(a, b))| {
                let (aq, bq) = self.background_coefficient(n);
                n.abs() as f64 * ((a - aq).abs() + (b - bq).abs())
            })
            .sum()
    }

    /// Diagonal `b(lo..=hi)` and off-diagonal `a(lo..hi)` of the truncation
    /// of `H` to `[lo, hi]` with Dirichlet boundary conditions.
    pub fn dense_truncation(&self, lo: i64, hi: i64) -> Result<(Vec<f64>, Vec<f64>)> {
        if lo >= hi {
            return Err(Error::RangeMismatch(format!(
                "truncation range [{lo}, {hi}] is empty"
            )));
        }
        let diag = (lo..=hi).map(|n| self.b(n)).collect();
        let off = (lo..hi).map(|n| self.a(n)).collect();
        Ok((diag, off))
    }

    /// Eigenvalues of the Dirichlet truncation to `[lo, hi]`, sorted
    /// ascending. The range must contain the override window with at least
    /// `TRUNCATION_MARGIN` sites of margin on each side.
    pub fn dense_eigenvalues(&self, lo: i64, hi: i64) -> Result<Vec<f64>> {
        let (wlo, whi) = self.window.unwrap_or((0, 0));
        let needed = TRUNCATION_MARGIN;
        let got = (wlo - lo).min(hi - whi);
        if got < needed {
            return Err(Error::WindowTooSmall { needed, got });
        }
        let (diag, off) = self.dense_truncation(lo, hi)?;
        let m = diag.len();
        let mut mat = DMatrix::zeros(m, m);
        for (j, &d) in diag.iter().enumerate() {
            mat[(j, j)] = d;
        }
        for (j, &a) in off.iter().enumerate() {
            mat[(j, j + 1)] = a;
            mat[(j + 1, j)] = a;
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        Ok(ev)
    }

    /// True if `lambda` belongs to the union of the two background spectra
    /// (within `tol` of a band).
    pub fn in_union_spectrum(&self, lambda: f64, tol: f64) -> bool {
        [&self.left, &self.right].iter().any(|m| {
            m.bands
                .bands()
                .iter()
                .any(|&(lo, hi)| lambda >= lo - tol && lambda <= hi + tol)
        })
    }

    /// Candidate discrete eigenvalues from dense truncations: eigenvalues at
    /// radius `radius` that lie in open gaps of the union spectrum and are
    /// stable (within 1e-8) against doubling the radius. A cheap,
    /// quadrature-free cross-check of the Wronskian root finder.
    pub fn gap_eigenvalue_candidates(&self, radius: i64) -> Result<Vec<f64>> {
        let (wlo, whi) = self.window.unwrap_or((0, 0));
        let c = (wlo + whi) / 2;
        let e1 = self.dense_eigenvalues(c - radius, c + radius)?;
        let e2 = self.dense_eigenvalues(c - 2 * radius, c + 2 * radius)?;
        let diam = self
            .left
            .bands
            .diameter()
            .max(self.right.bands.diameter());
        let clearance = 1e-7 * diam;
        let mut out: Vec<f64> = Vec::new();
        for &e in &e1 {
            if self.in_union_spectrum(e, clearance) {
                continue;
            }
            let stable = e2.iter().any(|&f| (f - e).abs() < 1e-8);
            if stable && !out.iter().any(|&g| (g - e).abs() < 1e-8) {
                out.push(e);
            }
        }
        Ok(out)
    }
}
