//! Double-double arithmetic (~31 significant decimal digits) and a dense LU
//! solver running in it.
//!
//! The GLM kernel entries grow geometrically toward the far side of the step
//! (like |w|^(-2|n|) in the row index n), and the linear systems built from
//! them are solvable only through cancellations that exceed the 16 digits of
//! f64. The entries themselves are accurate to relative f64 precision, and a
//! perturbation analysis shows entrywise-relative accuracy of the kernel is
//! enough for relative accuracy of the solution — provided the elimination
//! itself does not lose further digits. Running the factorization in
//! double-double precision achieves exactly that at negligible cost for the
//! system sizes involved (tens to a few hundreds).
//!
//! The representation is the classical unevaluated sum of two f64 values
//! (Dekker 1971, Kahan), with error-free transforms `two_sum` and `two_prod`
//! (the latter via fused multiply-add).

/// A double-double value: the unevaluated sum `hi + lo` with |lo| <= ulp(hi)/2.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Requires |a| >= |b| (or a == 0).
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            self.neg()
        } else {
            self
        }
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let s2 = s2 + t1;
        let (s1, s2) = quick_two_sum(s1, s2);
        let s2 = s2 + t2;
        let (hi, lo) = quick_two_sum(s1, s2);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    #[inline]
    pub fn mul(self, o: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, o.hi);
        let p2 = p2 + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, x: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, x);
        let p2 = p2 + self.lo * x;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    /// Three-correction long division.
    #[inline]
    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r1 = self.sub(o.mul_f64(q1));
        let q2 = r1.hi / o.hi;
        let r2 = r1.sub(o.mul_f64(q2));
        let q3 = r2.hi / o.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e }.add(Dd::from_f64(q3))
    }

    /// Square root by one double-double Newton step from the f64 seed.
    pub fn sqrt(self) -> Dd {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ZERO;
        }
        let x0 = self.hi.sqrt();
        let x = Dd::from_f64(x0);
        let r = self.div(x);
        x.add(r).mul_f64(0.5)
    }

    /// True if self is strictly smaller than `o`.
    #[inline]
    pub fn lt(self, o: Dd) -> bool {
        self.hi < o.hi || (self.hi == o.hi && self.lo < o.lo)
    }
}

/// LU factorization with partial pivoting of a dense double-double matrix,
/// reusable across right-hand sides.
pub struct LuFactors {
    n: usize,
    /// Pivoted rows; the strict lower triangle holds the elimination
    /// multipliers.
    lu: Vec<Vec<Dd>>,
    /// Row swapped with row `col` at elimination step `col`.
    swaps: Vec<usize>,
}

/// Factor a row-major `n x n` matrix (consumed). Returns `None` if a pivot
/// is exactly zero (singular to working precision).
pub fn lu_factor(mut a: Vec<Vec<Dd>>) -> Option<LuFactors> {
    let n = a.len();
    debug_assert!(a.iter().all(|r| r.len() == n));
    let mut swaps = Vec::with_capacity(n);
    for col in 0..n {
        // Partial pivot on |hi|.
        let mut piv = col;
        let mut best = a[col][col].abs();
        for row in col + 1..n {
            let v = a[row][col].abs();
            if best.lt(v) {
                best = v;
                piv = row;
            }
        }
        if best.hi == 0.0 {
            return None;
        }
        swaps.push(piv);
        if piv != col {
            a.swap(col, piv);
        }
        let inv_piv = Dd::ONE.div(a[col][col]);
        for row in col + 1..n {
            let factor = a[row][col].mul(inv_piv);
            a[row][col] = factor;
            if factor.hi == 0.0 && factor.lo == 0.0 {
                continue;
            }
            for k in col + 1..n {
                let sub = factor.mul(a[col][k]);
                a[row][k] = a[row][k].sub(sub);
            }
        }
    }
    Some(LuFactors { n, lu: a, swaps })
}

impl LuFactors {
    pub fn size(&self) -> usize {
        self.n
    }

    /// Solve for one right-hand side.
    pub fn solve(&self, rhs: &[Dd]) -> Vec<Dd> {
        let n = self.n;
        debug_assert_eq!(rhs.len(), n);
        let mut b = rhs.to_vec();
        // The stored rows were swapped wholesale during elimination
        // (multipliers included), so the whole permutation must hit the
        // right-hand side before any multiplier is applied.
        for col in 0..n {
            if self.swaps[col] != col {
                b.swap(col, self.swaps[col]);
            }
        }
        for col in 0..n {
            let bc = b[col];
            if bc.hi == 0.0 && bc.lo == 0.0 {
                continue;
            }
            for row in col + 1..n {
                let f = self.lu[row][col];
                if f.hi != 0.0 || f.lo != 0.0 {
                    b[row] = b[row].sub(f.mul(bc));
                }
            }
        }
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc = acc.sub(self.lu[row][k].mul(b[k]));
            }
            b[row] = acc.div(self.lu[row][row]);
        }
        b
    }
}

/// Solve the dense system `a x = rhs` by LU with partial pivoting, entirely in
/// double-double arithmetic. `a` is row-major `n x n` and is consumed.
/// Returns `None` if a pivot is exactly zero (singular to working precision).
pub fn solve_dense(a: Vec<Vec<Dd>>, rhs: Vec<Dd>) -> Option<Vec<Dd>> {
    Some(lu_factor(a)?.solve(&rhs))
}

/// One-norm of a row-major dense matrix of f64 (max absolute column sum).
pub fn one_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .map(|j| a.iter().map(|row| row[j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_digits_f64_drops() {
        let big = Dd::from_f64(1e16);
        let one = Dd::ONE;
        let diff = big.add(one).sub(big);
        assert_eq!(diff.to_f64(), 1.0);
    }

    #[test]
    fn sqrt_two_squared() {
        let two = Dd::from_f64(2.0);
        let r = two.sqrt();
        let err = r.mul(r).sub(two);
        assert!(err.to_f64().abs() < 1e-30, "residual {:e}", err.to_f64());
    }

    #[test]
    fn division_roundtrip() {
        let a = Dd::from_f64(1.0).div(Dd::from_f64(3.0));
        let back = a.mul_f64(3.0).sub(Dd::ONE);
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn solves_hilbert_like_system() {
        // 6x6 Hilbert matrix: condition number ~ 1.5e7. Solve H x = H * ones
        // and recover ones to far better than f64 could through a normal solve.
        let n = 6;
        let h: Vec<Vec<Dd>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Dd::ONE.div(Dd::from_f64((i + j + 1) as f64)))
                    .collect()
            })
            .collect();
        let rhs: Vec<Dd> = (0..n)
            .map(|i| {
                let mut s = Dd::ZERO;
                for j in 0..n {
                    s = s.add(h[i][j]);
                }
                s
            })
            .collect();
        let x = solve_dense(h, rhs).expect("nonsingular");
        for xi in x {
            assert!((xi.to_f64() - 1.0).abs() < 1e-20);
        }
    }

    #[test]
    fn geometric_scaling_system() {
        // Rows scaled over 20 orders of magnitude; LU with partial pivoting in
        // double-double must still return the exact solution pattern.
        let n = 5;
        let scales = [1.0, 1e5, 1e10, 1e15, 1e20];
        let mut a = vec![vec![Dd::ZERO; n]; n];
        let truth = [1.0, -2.0, 0.0, -2.0, 0.0];
        let mut rhs = vec![Dd::ZERO; n];
        for i in 0..n {
            for j in 0..n {
                let v = scales[i] / (1.0 + (i as f64 - j as f64).abs());
                a[i][j] = Dd::from_f64(v);
                rhs[i] = rhs[i].add(a[i][j].mul_f64(truth[j]));
            }
        }
        let x = solve_dense(a, rhs).expect("nonsingular");
        for (xi, ti) in x.iter().zip(truth.iter()) {
            assert!((xi.to_f64() - ti).abs() < 1e-12);
        }
    }
}
