//! One-dimensional point-evaluation weights on a uniform node line.
//!
//! The cubic kernel is the natural cubic spline interpolant written as a
//! linear functional of the nodal values: `s(x) = Σ_i w_i(x) f_i`. With
//! second-derivative moments `M = (6/h²) K f`, where `K = T⁻¹ D`, `T` the
//! tridiagonal (1, 4, 1) system and `D` the second-difference operator,
//! the weights on cell `[x_j, x_{j+1}]` at local coordinate `u` are
//!
//! ```text
//! w(x) = (1-u) e_j + u e_{j+1} + α(u) K_j + β(u) K_{j+1}
//! α(u) = (1-u)³ - (1-u),   β(u) = u³ - u
//! ```
//!
//! `x ↦ w(x)` is C² across knots, reproduces nodal values, constants and
//! affine functions, and its x-derivatives are available in closed form.

use crate::precise::Dd;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SplineAxis {
    lo: f64,
    h: f64,
    n: usize,
    /// Row-major n × n; rows 0 and n-1 are zero (natural end conditions).
    k: Vec<f64>,
}

impl SplineAxis {
    pub(crate) fn new(lo: f64, h: f64, n: usize) -> Self {
        assert!(n >= 3);
        let m = n - 2;
        let mut k = vec![0.0; n * n];
        // Thomas factorisation of tridiag(1, 4, 1), reused for every column.
        let mut c_prime = vec![0.0; m];
        let mut denom = vec![0.0; m];
        denom[0] = 4.0;
        c_prime[0] = 1.0 / 4.0;
        for i in 1..m {
            denom[i] = 4.0 - c_prime[i - 1];
            c_prime[i] = 1.0 / denom[i];
        }
        let mut rhs = vec![0.0; m];
        for col in 0..n {
            // Column `col` of D: row i (node i+1) has (1, -2, 1) at nodes i, i+1, i+2.
            for (i, r) in rhs.iter_mut().enumerate() {
                *r = if col == i || col == i + 2 {
                    1.0
                } else if col == i + 1 {
                    -2.0
                } else {
                    0.0
                };
            }
            rhs[0] /= denom[0];
            for i in 1..m {
                rhs[i] = (rhs[i] - rhs[i - 1]) / denom[i];
            }
            for i in (0..m - 1).rev() {
                rhs[i] -= c_prime[i] * rhs[i + 1];
            }
            for i in 0..m {
                k[(i + 1) * n + col] = rhs[i];
            }
        }
        Self { lo, h, n, k }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// Cell index and local coordinate, snapping to a node when `x` is
    /// within rounding of one.
    fn locate(&self, x: f64) -> (usize, f64) {
        let mut u = (x - self.lo) / self.h;
        let r = u.round();
        if (u - r).abs() <= 8.0 * f64::EPSILON * r.abs().max(1.0) {
            u = r;
        }
        let j = (u.floor().max(0.0) as usize).min(self.n - 2);
        (j, u - j as f64)
    }

    /// Writes the `deriv`-th x-derivative of the cubic weights at `x`.
    pub(crate) fn cubic(&self, x: f64, deriv: u8, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        let (j, u) = self.locate(x);
        let v = 1.0 - u;
        let (lin0, lin1, a, b) = match deriv {
            0 => (v, u, v * v * v - v, u * u * u - u),
            1 => {
                let s = 1.0 / self.h;
                (-s, s, (1.0 - 3.0 * v * v) * s, (3.0 * u * u - 1.0) * s)
            }
            2 => {
                let s = 1.0 / (self.h * self.h);
                (0.0, 0.0, 6.0 * v * s, 6.0 * u * s)
            }
            _ => unreachable!("cubic weights are evaluated up to second order"),
        };
        let kj = &self.k[j * self.n..(j + 1) * self.n];
        let kj1 = &self.k[(j + 1) * self.n..(j + 2) * self.n];
        for ((o, &p), &q) in out.iter_mut().zip(kj).zip(kj1) {
            *o = a * p + b * q;
        }
        out[j] += lin0;
        out[j + 1] += lin1;
    }

    /// Row `j` of `K`.
    pub(crate) fn k_row(&self, j: usize) -> &[f64] {
        &self.k[j * self.n..(j + 1) * self.n]
    }

    /// Cubic weights at `x` in double-double, as coefficients on the rows
    /// `e_0..e_{n-1}` (indices `0..n`) and `K_0..K_{n-1}` (indices `n..2n`).
    pub(crate) fn cubic_terms(&self, x: Dd) -> [(usize, Dd); 4] {
        let (j, u) = self.locate_dd(x);
        let v = Dd::ONE - u;
        [
            (j, v),
            (j + 1, u),
            (self.n + j, v * v * v - v),
            (self.n + j + 1, u * u * u - u),
        ]
    }

    /// x-derivative of [`SplineAxis::cubic_terms`], same row indices.
    pub(crate) fn cubic_terms_d1(&self, x: Dd) -> [(usize, Dd); 4] {
        let (j, u) = self.locate_dd(x);
        let v = Dd::ONE - u;
        let s = Dd::ONE.div_f64(self.h);
        [
            (j, -s),
            (j + 1, s),
            (self.n + j, (Dd::ONE - (v * v).mul_f64(3.0)) * s),
            (self.n + j + 1, ((u * u).mul_f64(3.0) - Dd::ONE) * s),
        ]
    }

    pub(crate) fn linear_terms(&self, x: Dd) -> [(usize, Dd); 2] {
        let (j, u) = self.locate_dd(x);
        [(j, Dd::ONE - u), (j + 1, u)]
    }

    fn locate_dd(&self, x: Dd) -> (usize, Dd) {
        let u = (x - Dd::from(self.lo)).div_f64(self.h);
        let j = (u.floor().max(0.0) as usize).min(self.n - 2);
        (j, u - Dd::from(j as f64))
    }

    /// Piecewise-linear hat weights (value only).
    pub(crate) fn linear(&self, x: f64, out: &mut [f64]) {
        let (j, u) = self.locate(x);
        out.iter_mut().for_each(|o| *o = 0.0);
        out[j] = 1.0 - u;
        out[j + 1] = u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis() -> SplineAxis {
        SplineAxis::new(-1.0, 0.1, 21)
    }

    fn nodes(ax: &SplineAxis) -> Vec<f64> {
        (0..ax.n).map(|i| ax.lo + i as f64 * ax.h).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn reproduces_nodal_values() {
        let ax = axis();
        let xs = nodes(&ax);
        let f: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let mut w = vec![0.0; ax.n];
        for (i, &x) in xs.iter().enumerate() {
            ax.cubic(x, 0, &mut w);
            assert_eq!(dot(&w, &f), f[i]);
        }
    }

    #[test]
    fn natural_spline_moments_match_tridiagonal_system() {
        // Interior rows of K applied to f solve M_{i-1} + 4 M_i + M_{i+1} = D f.
        let ax = axis();
        let f: Vec<f64> = nodes(&ax).iter().map(|x| x.powi(3) - x).collect();
        let m: Vec<f64> = (0..ax.n)
            .map(|i| dot(&ax.k[i * ax.n..(i + 1) * ax.n], &f))
            .collect();
        assert_eq!(m[0], 0.0);
        assert_eq!(m[ax.n - 1], 0.0);
        for i in 1..ax.n - 1 {
            let lhs = m[i - 1] + 4.0 * m[i] + m[i + 1];
            let rhs = f[i - 1] - 2.0 * f[i] + f[i + 1];
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn extended_terms_match_dense_weights() {
        let ax = axis();
        let mut w = vec![0.0; ax.n];
        for (&x, deriv) in [-0.93, -0.2, 0.0, 0.4449, 0.97].iter().zip([0, 1, 0, 1, 1]) {
            ax.cubic(x, deriv, &mut w);
            let terms = match deriv {
                0 => ax.cubic_terms(Dd::from(x)),
                _ => ax.cubic_terms_d1(Dd::from(x)),
            };
            let mut dense = vec![0.0; ax.n];
            for (r, c) in terms {
                let c = c.to_f64();
                if r < ax.n {
                    dense[r] += c;
                } else {
                    for (d, k) in dense.iter_mut().zip(ax.k_row(r - ax.n)) {
                        *d += c * k;
                    }
                }
            }
            for (a, b) in dense.iter().zip(&w) {
                assert!((a - b).abs() < 1e-13, "x = {x}, derivative {deriv}");
            }
        }
    }

    #[test]
    fn derivative_weights_match_central_differences() {
        let ax = axis();
        let f: Vec<f64> = nodes(&ax).iter().map(|x| (-4.0 * x * x).exp()).collect();
        let eval = |x: f64, d: u8| {
            let mut w = vec![0.0; ax.n];
            ax.cubic(x, d, &mut w);
            dot(&w, &f)
        };
        let x = 0.037;
        let h = 1e-5;
        let d1 = (eval(x + h, 0) - eval(x - h, 0)) / (2.0 * h);
        let d2 = (eval(x + h, 1) - eval(x - h, 1)) / (2.0 * h);
        assert!((d1 - eval(x, 1)).abs() < 1e-8);
        assert!((d2 - eval(x, 2)).abs() < 1e-6);
    }

    #[test]
    fn second_derivative_is_continuous_across_knots() {
        let ax = axis();
        let knot = ax.lo + 7.0 * ax.h;
        let mut left = vec![0.0; ax.n];
        let mut right = vec![0.0; ax.n];
        for d in 0..=2 {
            ax.cubic(knot - 1e-12, d, &mut left);
            ax.cubic(knot + 1e-12, d, &mut right);
            let jump = left
                .iter()
                .zip(&right)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // Only the O(1e-12) drift from the bounded next derivative remains.
            assert!(jump < 1e-7, "order {d} jump {jump}");
        }
    }

    #[test]
    fn linear_weights_are_hats() {
        let ax = axis();
        let mut w = vec![0.0; ax.n];
        ax.linear(-0.95, &mut w);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert_eq!(w.iter().filter(|v| **v != 0.0).count(), 2);
    }
}
