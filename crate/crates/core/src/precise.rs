//! Double-double arithmetic and an extended-precision evaluator of the
//! scalar transform `z ↦ ⟨σ(z), f⟩`.
//!
//! Second differences of the transform lose `ε/h²` to cancellation in
//! `f64`. Evaluated here to roughly 32 significant digits, the same
//! differences can use steps small enough that the kernel's knot kinks are
//! almost never inside the stencil.

use std::ops::{Add, Mul, Neg, Sub};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const PI_2: Dd = Dd {
    hi: std::f64::consts::FRAC_PI_2,
    lo: 6.123_233_995_736_766e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact product with an `f64`, up to double-double rounding.
    pub fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    pub fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let r = self - Dd::from(b).mul_f64(q1);
        let q2 = r.hi / b;
        let r = r - Dd::from(b).mul_f64(q2);
        let q3 = r.hi / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }

    pub fn floor(self) -> f64 {
        let f = self.hi.floor();
        if f == self.hi && self.lo < 0.0 {
            f - 1.0
        } else {
            f
        }
    }

    /// `(sin x, cos x)`, argument reduced by multiples of `π/2`.
    pub fn sin_cos(self) -> (Dd, Dd) {
        let q = (self.hi / PI_2.hi).round();
        let r = self - PI_2.mul_f64(q);
        let r2 = r * r;
        // Taylor series; |r| ≤ π/4 + rounding, 30 terms reach 1e-40.
        let mut sin = Dd::ZERO;
        let mut cos = Dd::ZERO;
        let mut term_s = r;
        let mut term_c = Dd::ONE;
        for i in 0..15 {
            sin = sin + term_s;
            cos = cos + term_c;
            let n = 2.0 * i as f64;
            term_s = -(term_s * r2).div_f64((n + 2.0) * (n + 3.0));
            term_c = -(term_c * r2).div_f64((n + 1.0) * (n + 2.0));
        }
        match (q as i64).rem_euclid(4) {
            0 => (sin, cos),
            1 => (cos, -sin),
            2 => (-sin, -cos),
            _ => (-cos, sin),
        }
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

/// Nodal values contracted against every axis' kernel basis rows, so that
/// a point evaluation reduces to a few products.
///
/// For the cubic kernel the weights of one axis are a combination of the
/// rows `e_0..e_{n-1}, K_0..K_{n-1}`; the contraction with the nodal
/// values is computed once, here, in double-double.
pub(crate) struct ContractedFunction {
    /// Row count per axis (`n` linear, `2n` cubic).
    rows: Vec<usize>,
    table: Vec<Dd>,
}

impl ContractedFunction {
    /// `bases[a]` maps a row index of axis `a` to its weight vector:
    /// `None` for a unit row `e_r`, otherwise the dense row.
    pub(crate) fn new(values: &[f64], n: &[usize], bases: &[Vec<Option<&[f64]>>]) -> Self {
        let mut shape: Vec<usize> = n.to_vec();
        let mut table: Vec<Dd> = values.iter().map(|&v| Dd::from(v)).collect();
        for (axis, basis) in bases.iter().enumerate() {
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let len = shape[axis];
            let rows = basis.len();
            let mut next = vec![Dd::ZERO; outer * rows * inner];
            for o in 0..outer {
                let src = &table[o * len * inner..(o + 1) * len * inner];
                let dst = &mut next[o * rows * inner..(o + 1) * rows * inner];
                for (r, row) in basis.iter().enumerate() {
                    let out = &mut dst[r * inner..(r + 1) * inner];
                    match row {
                        None => out.copy_from_slice(&src[r * inner..(r + 1) * inner]),
                        Some(w) => {
                            for (i, &wi) in w.iter().enumerate() {
                                if wi != 0.0 {
                                    let s = &src[i * inner..(i + 1) * inner];
                                    for (acc, v) in out.iter_mut().zip(s) {
                                        *acc = *acc + v.mul_f64(wi);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            table = next;
            shape[axis] = rows;
        }
        Self { rows: shape, table }
    }

    /// `Σ Π_a c_a · table[r_0, r_1, …]` over the per-axis (row, coefficient)
    /// lists.
    pub(crate) fn evaluate(&self, terms: &[Vec<(usize, Dd)>]) -> Dd {
        fn rec(t: &ContractedFunction, terms: &[Vec<(usize, Dd)>], axis: usize, offset: usize, scale: Dd) -> Dd {
            if axis == terms.len() {
                return scale * t.table[offset];
            }
            let mut acc = Dd::ZERO;
            for &(r, c) in &terms[axis] {
                acc = acc + rec(t, terms, axis + 1, offset * t.rows[axis] + r, scale * c);
            }
            acc
        }
        rec(self, terms, 0, 0, Dd::ONE)
    }
}
