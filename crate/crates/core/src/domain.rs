//! Grid discretisation of the base manifold, distributions as weight
//! vectors, test functions as nodal samples, and the pairing between them.

use serde::{Deserialize, Serialize};

use crate::precise::{ContractedFunction, Dd};
use crate::spline::SplineAxis;
use crate::{Error, Result};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Point-evaluation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelOrder {
    /// Piecewise-linear hats. Continuous only; not admissible for curvature.
    Linear,
    /// Natural cubic spline interpolation, C² in the evaluation point.
    Cubic,
}

impl TryFrom<u8> for KernelOrder {
    type Error = Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            1 => Ok(Self::Linear),
            3 => Ok(Self::Cubic),
            other => Err(Error::UnsupportedKernelOrder(other)),
        }
    }
}

/// JSON header of a grid: `{dim, extent, n, margin}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub dim: usize,
    pub extent: Vec<Interval>,
    pub n: Vec<usize>,
    pub margin: usize,
}

/// Uniform tensor-product node lattice over a box.
///
/// Nodes are indexed in C order (last axis fastest). Test functions must
/// vanish on every node with some index within `margin` of either end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GridHeader", try_from = "GridHeader")]
pub struct GridDomain {
    extent: Vec<Interval>,
    n: Vec<usize>,
    spacing: Vec<f64>,
    quad_weight: f64,
    margin: usize,
    splines: Vec<SplineAxis>,
}

impl From<GridDomain> for GridHeader {
    fn from(g: GridDomain) -> Self {
        g.header()
    }
}

impl TryFrom<GridHeader> for GridDomain {
    type Error = Error;

    fn try_from(h: GridHeader) -> Result<Self> {
        make_grid(h.dim, &h.extent, &h.n, h.margin)
    }
}

pub const MIN_NODES: usize = 8;
pub const MIN_MARGIN: usize = 3;

/// Builds a grid. `extent` and `n` may have length 1, in which case they
/// are repeated on every axis.
pub fn make_grid(dim: usize, extent: &[Interval], n: &[usize], margin: usize) -> Result<GridDomain> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
    }
    let expand = |len: usize, what: &str| -> Result<()> {
        if len == 1 || len == dim {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("{what} has {len} entries for dim {dim}")))
        }
    };
    expand(extent.len(), "extent")?;
    expand(n.len(), "n")?;
    let extent: Vec<Interval> = (0..dim).map(|a| extent[a.min(extent.len() - 1)]).collect();
    let n: Vec<usize> = (0..dim).map(|a| n[a.min(n.len() - 1)]).collect();

    for a in 0..dim {
        if n[a] < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: n = {} < {MIN_NODES}",
                n[a]
            )));
        }
        let iv = extent[a];
        if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.hi <= iv.lo {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: degenerate extent [{}, {}]",
                iv.lo, iv.hi
            )));
        }
        if 2 * margin + 2 > n[a] {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: margin {margin} leaves no interior among {} nodes",
                n[a]
            )));
        }
    }
    if margin < MIN_MARGIN {
        return Err(Error::InvalidGrid(format!("margin {margin} < {MIN_MARGIN}")));
    }

    let spacing: Vec<f64> = (0..dim)
        .map(|a| (extent[a].hi - extent[a].lo) / (n[a] - 1) as f64)
        .collect();
    let quad_weight = spacing.iter().product();
    let splines = (0..dim)
        .map(|a| SplineAxis::new(extent[a].lo, spacing[a], n[a]))
        .collect();
    Ok(GridDomain {
        extent,
        n,
        spacing,
        quad_weight,
        margin,
        splines,
    })
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn extent(&self) -> &[Interval] {
        &self.extent
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Product of spacings: the trapezoid weight of an interior node.
    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            dim: self.dim(),
            extent: self.extent.clone(),
            n: self.n.clone(),
            margin: self.margin,
        }
    }

    /// Region where point evaluation is admissible: at least `margin`
    /// spacings from the boundary on every axis.
    pub fn safe_interval(&self, axis: usize) -> Interval {
        let pad = self.margin as f64 * self.spacing[axis];
        Interval::new(self.extent[axis].lo + pad, self.extent[axis].hi - pad)
    }

    pub fn center(&self) -> Vec<f64> {
        self.extent.iter().map(Interval::center).collect()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.n[a];
            flat /= self.n[a];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.n).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node_coord(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.extent[a].lo + i as f64 * self.spacing[a])
            .collect()
    }

    /// Coordinates of every node in C order.
    pub fn node_coords(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node_coord(&self.unravel(i))).collect()
    }

    pub fn is_margin_node(&self, flat: usize) -> bool {
        self.unravel(flat)
            .iter()
            .zip(&self.n)
            .any(|(&i, &n)| i < self.margin || i + self.margin >= n)
    }

    /// Flat indices of non-margin nodes, ascending.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_margin_node(i)).collect()
    }

    /// Whether `point` admits point evaluation.
    pub fn is_safe(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point.iter().enumerate().all(|(a, &x)| {
                let s = self.safe_interval(a);
                let slack = 1e-9 * self.spacing[a];
                x.is_finite() && x >= s.lo - slack && x <= s.hi + slack
            })
    }

    /// 1D factor for `axis`: the `deriv`-th derivative of the kernel
    /// weights, optionally multiplied by the boundary cutoff of that axis.
    pub(crate) fn axis_factor(
        &self,
        axis: usize,
        x: f64,
        deriv: u8,
        order: KernelOrder,
        with_cutoff: bool,
        out: &mut [f64],
    ) {
        let sp = &self.splines[axis];
        match order {
            KernelOrder::Linear => {
                debug_assert_eq!(deriv, 0);
                sp.linear(x, out);
            }
            KernelOrder::Cubic => sp.cubic(x, deriv, out),
        }
        if with_cutoff {
            let c = self.cutoff(axis, x);
            match deriv {
                0 => out.iter_mut().for_each(|v| *v *= c[0]),
                1 => {
                    let mut w0 = vec![0.0; sp.len()];
                    sp.cubic(x, 0, &mut w0);
                    for (o, w) in out.iter_mut().zip(&w0) {
                        *o = c[0] * *o + c[1] * w;
                    }
                }
                _ => {
                    let mut w0 = vec![0.0; sp.len()];
                    let mut w1 = vec![0.0; sp.len()];
                    sp.cubic(x, 0, &mut w0);
                    sp.cubic(x, 1, &mut w1);
                    for ((o, a), b) in out.iter_mut().zip(&w0).zip(&w1) {
                        *o = c[0] * *o + 2.0 * c[1] * b + c[2] * a;
                    }
                }
            }
        }
    }

    /// Kernel weights of `axis` at `x` in double-double, as terms on the
    /// basis rows used by [`GridDomain::contract`].
    pub(crate) fn axis_terms_dd(
        &self,
        axis: usize,
        x: Dd,
        order: KernelOrder,
        with_cutoff: bool,
    ) -> Vec<(usize, Dd)> {
        let sp = &self.splines[axis];
        let mut terms = match order {
            KernelOrder::Linear => sp.linear_terms(x).to_vec(),
            KernelOrder::Cubic => sp.cubic_terms(x).to_vec(),
        };
        if with_cutoff {
            let c = self.cutoff_dd(axis, x);
            terms.iter_mut().for_each(|(_, v)| *v = *v * c);
        }
        terms
    }

    /// x-derivative of [`GridDomain::axis_terms_dd`] for the cubic kernel,
    /// on the same rows.
    pub(crate) fn axis_terms_d1_dd(&self, axis: usize, x: Dd, with_cutoff: bool) -> Vec<(usize, Dd)> {
        let sp = &self.splines[axis];
        let d1 = sp.cubic_terms_d1(x);
        if !with_cutoff {
            return d1.to_vec();
        }
        let (c, c1) = self.cutoff_jet_dd(axis, x);
        sp.cubic_terms(x)
            .iter()
            .zip(&d1)
            .map(|(&(r, w), &(_, w1))| (r, c1 * w + c * w1))
            .collect()
    }

    /// Value of [`GridDomain::cutoff`] in double-double.
    pub(crate) fn cutoff_dd(&self, axis: usize, x: Dd) -> Dd {
        self.cutoff_jet_dd(axis, x).0
    }

    /// Value and first derivative of [`GridDomain::cutoff`] in double-double.
    fn cutoff_jet_dd(&self, axis: usize, x: Dd) -> (Dd, Dd) {
        let safe = self.safe_interval(axis);
        let width = 2.0 * self.spacing[axis];
        // Smoothstep and its derivative in the scaled variable.
        let step = |z: Dd| {
            if z.hi <= 0.0 {
                (Dd::ZERO, Dd::ZERO)
            } else if z.hi >= 1.0 {
                (Dd::ONE, Dd::ZERO)
            } else {
                let z2 = z * z;
                let one_minus = Dd::ONE - z;
                (
                    z2 * z * (Dd::from(10.0) - z.mul_f64(15.0) + z2.mul_f64(6.0)),
                    (z2 * one_minus * one_minus).mul_f64(30.0),
                )
            }
        };
        let (lo, lo1) = step((x - Dd::from(safe.lo)).div_f64(width));
        let (hi, hi1) = step((Dd::from(safe.hi) - x).div_f64(width));
        (lo * hi, (lo1 * hi - lo * hi1).div_f64(width))
    }

    /// Empty coefficient tensor over the kernel basis rows of `order`.
    pub(crate) fn basis_tensor(&self, order: KernelOrder) -> BasisTensor {
        let rows: Vec<usize> = self
            .n
            .iter()
            .map(|&n| if order == KernelOrder::Cubic { 2 * n } else { n })
            .collect();
        let len = rows.iter().product();
        BasisTensor {
            rows,
            data: vec![Dd::ZERO; len],
        }
    }

    /// Node weights `Σ c_r · (row_{r_0} ⊗ row_{r_1} ⊗ …)`: row `r < n`
    /// is the unit vector `e_r`, row `n + j` is `K_j`.
    pub(crate) fn expand(&self, t: &BasisTensor) -> DistributionVector {
        let mut shape = t.rows.clone();
        let mut data: Vec<f64> = t.data.iter().map(|v| v.to_f64()).collect();
        for (axis, sp) in self.splines.iter().enumerate() {
            let n = sp.len();
            let r = shape[axis];
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for row in 0..r {
                    let src = &data[(o * r + row) * inner..(o * r + row + 1) * inner];
                    if src.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let mut add = |node: usize, scale: f64| {
                        let dst = &mut out[(o * n + node) * inner..(o * n + node + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += scale * s;
                        }
                    };
                    if row < n {
                        add(row, 1.0);
                    } else {
                        for (node, &k) in sp.k_row(row - n).iter().enumerate() {
                            if k != 0.0 {
                                add(node, k);
                            }
                        }
                    }
                }
            }
            shape[axis] = n;
            data = out;
        }
        DistributionVector { weights: data }
    }

    /// Nodal values contracted with every axis' kernel basis rows.
    pub(crate) fn contract(&self, values: &[f64], order: KernelOrder) -> ContractedFunction {
        let bases: Vec<Vec<Option<&[f64]>>> = self
            .splines
            .iter()
            .map(|sp| {
                let n = sp.len();
                let mut rows: Vec<Option<&[f64]>> = vec![None; n];
                if order == KernelOrder::Cubic {
                    rows.extend((0..n).map(|j| Some(sp.k_row(j))));
                }
                rows
            })
            .collect();
        ContractedFunction::new(values, &self.n, &bases)
    }

    /// Separable C² cutoff along one axis and its first two derivatives:
    /// one inside the safe interval shrunk by two spacings at each end,
    /// zero outside the safe interval, quintic smoothstep in between.
    pub(crate) fn cutoff(&self, axis: usize, x: f64) -> [f64; 3] {
        let safe = self.safe_interval(axis);
        let width = 2.0 * self.spacing[axis];
        let lo = smoothstep((x - safe.lo) / width);
        let hi = smoothstep((safe.hi - x) / width);
        let (lo1, lo2) = (lo[1] / width, lo[2] / (width * width));
        let (hi1, hi2) = (-hi[1] / width, hi[2] / (width * width));
        [
            lo[0] * hi[0],
            lo1 * hi[0] + lo[0] * hi1,
            lo2 * hi[0] + 2.0 * lo1 * hi1 + lo[0] * hi2,
        ]
    }
}

/// Quintic smoothstep `6x⁵ - 15x⁴ + 10x³` on [0, 1], clamped outside,
/// with first and second derivatives.
fn smoothstep(x: f64) -> [f64; 3] {
    if x <= 0.0 {
        [0.0; 3]
    } else if x >= 1.0 {
        [1.0, 0.0, 0.0]
    } else {
        let x2 = x * x;
        [
            x2 * x * (10.0 - 15.0 * x + 6.0 * x2),
            30.0 * x2 * (1.0 - x) * (1.0 - x),
            60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
        ]
    }
}

/// `out += scale · (f_0 ⊗ f_1 ⊗ …)` in C order.
pub(crate) fn accumulate_outer(out: &mut [f64], scale: f64, factors: &[&[f64]]) {
    match factors {
        [] => {}
        [f0] => {
            for (o, &v) in out.iter_mut().zip(f0.iter()) {
                *o += scale * v;
            }
        }
        [f0, rest @ ..] => {
            let stride: usize = rest.iter().map(|f| f.len()).product();
            for (chunk, &v) in out.chunks_exact_mut(stride).zip(f0.iter()) {
                let c = scale * v;
                if c != 0.0 {
                    accumulate_outer(chunk, c, rest);
                }
            }
        }
    }
}

/// Double-double coefficients of a distribution on tensor products of
/// kernel basis rows; produced by extended-precision family evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTensor {
    rows: Vec<usize>,
    data: Vec<Dd>,
}

impl BasisTensor {
    /// `self += scale · (t_0 ⊗ t_1 ⊗ …)` for sparse per-axis terms.
    pub(crate) fn add_outer(&mut self, scale: Dd, terms: &[Vec<(usize, Dd)>]) {
        fn go(data: &mut [Dd], rows: &[usize], scale: Dd, terms: &[Vec<(usize, Dd)>]) {
            match terms {
                [] => data[0] = data[0] + scale,
                [first, rest @ ..] => {
                    let stride: usize = rows[1..].iter().product();
                    for &(r, c) in first {
                        go(&mut data[r * stride..(r + 1) * stride], &rows[1..], scale * c, rest);
                    }
                }
            }
        }
        debug_assert_eq!(terms.len(), self.rows.len());
        go(&mut self.data, &self.rows, scale, terms);
    }

    /// `(self - other) / denom`, entrywise in double-double.
    pub(crate) fn difference_quotient(&self, other: &BasisTensor, denom: f64) -> BasisTensor {
        debug_assert_eq!(self.rows, other.rows);
        BasisTensor {
            rows: self.rows.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).div_f64(denom)).collect(),
        }
    }
}

/// An order-0 distribution: one weight per grid node, quadrature included.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector {
    weights: Vec<f64>,
}

impl DistributionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { weights })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            weights: vec![0.0; len],
        }
    }

    /// Caller guarantees finiteness.
    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &DistributionVector) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += alpha * o;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| alpha * w).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Nodal samples of a test function, zero on the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    values: Vec<f64>,
    support_ok: bool,
}

/// Clipping that changes a value by more than this fraction of the peak
/// amplitude is reported through `support_ok`.
pub const SUPPORT_CLIP_TOL: f64 = 1e-12;

impl TestFunction {
    /// Takes nodal samples, forcing the margin to zero.
    pub fn from_samples(domain: &GridDomain, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::LengthMismatch {
                expected: domain.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let peak = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut support_ok = true;
        for (i, v) in values.iter_mut().enumerate() {
            if domain.is_margin_node(i) {
                if v.abs() > SUPPORT_CLIP_TOL * peak {
                    support_ok = false;
                }
                *v = 0.0;
            }
        }
        Ok(Self { values, support_ok })
    }

    pub fn zeros(domain: &GridDomain) -> Self {
        Self {
            values: vec![0.0; domain.len()],
            support_ok: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// False when forcing the margin to zero clipped a significant value.
    pub fn support_ok(&self) -> bool {
        self.support_ok
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn set_support_ok(&mut self, ok: bool) {
        self.support_ok = ok;
    }

    /// `Σ c_i f_i`. Margin zeros are preserved; support flags are combined.
    pub fn linear_combination(coeffs: &[f64], fs: &[&TestFunction]) -> Result<Self> {
        if coeffs.len() != fs.len() {
            return Err(Error::LengthMismatch {
                expected: fs.len(),
                found: coeffs.len(),
            });
        }
        let len = fs.first().map_or(0, |f| f.len());
        let mut values = vec![0.0; len];
        for (c, f) in coeffs.iter().zip(fs) {
            if f.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    found: f.len(),
                });
            }
            for (v, x) in values.iter_mut().zip(&f.values) {
                *v += c * x;
            }
        }
        Ok(Self {
            values,
            support_ok: fs.iter().all(|f| f.support_ok),
        })
    }
}

/// Samples a closed-form function at every node and clips the margin.
pub fn make_test_function<F>(domain: &GridDomain, f: F) -> TestFunction
where
    F: Fn(&[f64]) -> f64,
{
    let values = (0..domain.len())
        .map(|i| f(&domain.node_coord(&domain.unravel(i))))
        .collect();
    TestFunction::from_samples(domain, values).expect("sampled on the domain's own nodes")
}

/// `⟨w, f⟩ = Σ_i w_i f_i`.
pub fn pair(w: &DistributionVector, f: &TestFunction) -> Result<f64> {
    if w.len() != f.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            found: f.len(),
        });
    }
    Ok(dot(&w.weights, &f.values))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Discrete point evaluation `δ_x`.
pub fn eval_functional(
    domain: &GridDomain,
    point: &[f64],
    order: KernelOrder,
) -> Result<DistributionVector> {
    if point.len() != domain.dim() {
        return Err(Error::LengthMismatch {
            expected: domain.dim(),
            found: point.len(),
        });
    }
    if !domain.is_safe(point) {
        return Err(Error::TooCloseToBoundary {
            point: point.to_vec(),
            margin: domain.margin(),
        });
    }
    let factors: Vec<Vec<f64>> = (0..domain.dim())
        .map(|a| {
            let mut f = vec![0.0; domain.n()[a]];
            domain.axis_factor(a, point[a], 0, order, false, &mut f);
            f
        })
        .collect();
    let refs: Vec<&[f64]> = factors.iter().map(Vec::as_slice).collect();
    let mut weights = vec![0.0; domain.len()];
    accumulate_outer(&mut weights, 1.0, &refs);
    Ok(DistributionVector::from_raw(weights))
}

/// Closed-form test functions used by the CLI and the curvature pools.
pub mod builtin {
    use super::{make_test_function, GridDomain, TestFunction};

    fn dist2(x: &[f64], c: &[f64]) -> f64 {
        x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `exp(-|x - c|² / width²)`.
    pub fn gaussian(domain: &GridDomain, center: &[f64], width: f64) -> TestFunction {
        let c = center.to_vec();
        make_test_function(domain, move |x| (-dist2(x, &c) / (width * width)).exp())
    }

    /// `exp(1 - 1/(1 - |x - c|²/r²))` inside the ball, zero outside.
    pub fn bump(domain: &GridDomain, center: &[f64], radius: f64) -> TestFunction {
        let c = center.to_vec();
        make_test_function(domain, move |x| bump_value(dist2(x, &c) / (radius * radius)))
    }

    pub(crate) fn bump_value(q: f64) -> f64 {
        if q < 1.0 {
            (1.0 - 1.0 / (1.0 - q)).exp()
        } else {
            0.0
        }
    }

    /// Two bumps of radius `radius` at `center ± offset·e_0`, the second
    /// with half the amplitude.
    pub fn two_bumps(domain: &GridDomain, center: &[f64], offset: f64, radius: f64) -> TestFunction {
        let mut c1 = center.to_vec();
        let mut c2 = center.to_vec();
        c1[0] -= offset;
        c2[0] += offset;
        make_test_function(domain, move |x| {
            bump_value(dist2(x, &c1) / (radius * radius))
                + 0.5 * bump_value(dist2(x, &c2) / (radius * radius))
        })
    }
}
