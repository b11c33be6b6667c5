//! Families `σ: Σ → D'(M)` of distributions parametrised by a chart, with
//! first and second chart derivatives.
//!
//! Every shipped family is a weighted sum of point evaluations at points
//! `p_j(y)` that move smoothly with the chart coordinate `y`:
//!
//! ```text
//! σ(y) = Σ_j c_j · χ(p_j(y)) · δ_{p_j(y)}
//! ```
//!
//! Derivatives follow from the chain rule through the C² cubic kernel, so
//! they are exact for the discrete family rather than approximations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{
    accumulate_outer, BasisTensor, DistributionVector, GridDomain, Interval, KernelOrder,
    TestFunction,
};
use crate::parallel::*;
use crate::precise::Dd;
use crate::{Error, Result};

/// Parameter rectangle of a family. Periodic axes carry their period as
/// the interval width and never restrict stencils.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    bounds: Vec<Interval>,
    periodic: Vec<bool>,
}

impl Chart {
    pub fn new(bounds: Vec<Interval>, periodic: Vec<bool>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != periodic.len() {
            return Err(Error::InvalidEmbedding(format!(
                "chart needs k >= 1 bounds matching periodic flags ({} vs {})",
                bounds.len(),
                periodic.len()
            )));
        }
        for (a, iv) in bounds.iter().enumerate() {
            if !(iv.hi > iv.lo) {
                return Err(Error::InvalidEmbedding(format!(
                    "chart axis {a} is degenerate: [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(Self { bounds, periodic })
    }

    /// Dimension of the parameter manifold.
    pub fn k(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.bounds[axis].width()
    }

    /// Membership up to rounding: bounds are widened by `1e-12 ·` width.
    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.k()
            && y.iter().enumerate().all(|(a, &v)| v.is_finite() && self.within(a, v))
    }

    fn within(&self, axis: usize, v: f64) -> bool {
        let iv = self.bounds[axis];
        let slack = 1e-12 * iv.width();
        self.periodic[axis] || (v >= iv.lo - slack && v <= iv.hi + slack)
    }

    /// Errors unless `y ± reach_a e_a` stays in the chart on every
    /// non-periodic axis with a nonzero reach.
    pub fn check_stencil(&self, y: &[f64], reach: &[f64]) -> Result<()> {
        if !self.contains(y) {
            return Err(Error::OutsideChart { y: y.to_vec() });
        }
        for (a, &r) in reach.iter().enumerate() {
            if r != 0.0
                && !self.periodic[a]
                && !(self.within(a, y[a] - r) && self.within(a, y[a] + r))
            {
                return Err(Error::StencilOutsideChart { y: y.to_vec() });
            }
        }
        Ok(())
    }

    /// Maps the unit cube onto the chart; used to draw sample points.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(u)
            .map(|(iv, &t)| iv.lo + t * iv.width())
            .collect()
    }
}

/// Per-axis finite-difference steps used when analytic derivatives are
/// absent and by the scalar-transform derivative checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSteps {
    /// Central differences of σ for first derivatives.
    pub first: Vec<f64>,
    /// Central differences of analytic first derivatives.
    pub second: Vec<f64>,
    /// The same differences taken in double-double through
    /// [`Embedding::extended_tangent`], when the family has it.
    pub second_extended: Vec<f64>,
    /// Second-order stencils on σ alone.
    pub second_sigma: Vec<f64>,
}

impl FdSteps {
    /// `1e-3 · width` for first derivatives; `1e-6 · width` when
    /// differencing analytic first derivatives, whose only error besides
    /// rounding is the kernel's knot kinks crossed by the stencil, and
    /// `1e-8 · width` for the same in double-double, where rounding is no
    /// longer a floor; `1e-2 · width` for stencils on σ alone.
    pub fn for_chart(chart: &Chart) -> Self {
        let widths: Vec<f64> = (0..chart.k()).map(|a| chart.width(a)).collect();
        let scaled = |s: f64| widths.iter().map(|w| s * w).collect();
        Self {
            first: scaled(1e-3),
            second: scaled(1e-6),
            second_extended: scaled(1e-8),
            second_sigma: scaled(1e-2),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let all = [&self.first, &self.second, &self.second_extended, &self.second_sigma];
        if all.iter().any(|v| v.len() != k) {
            return Err(Error::InvalidArgument(format!("fd steps need {k} entries per kind")));
        }
        if all.iter().any(|v| v.iter().any(|h| !(*h > 0.0))) {
            return Err(Error::InvalidArgument("fd steps must be positive".into()));
        }
        Ok(())
    }
}

/// σ together with all first and second chart derivatives at one point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub sigma: DistributionVector,
    pub first: Vec<DistributionVector>,
    /// Packed upper triangle, `(a, b)` with `a <= b`.
    second: Vec<DistributionVector>,
    k: usize,
}

impl Jet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn second(&self, a: usize, b: usize) -> &DistributionVector {
        &self.second[packed(self.k, a.min(b), a.max(b))]
    }

    pub fn has_second(&self) -> bool {
        !self.second.is_empty()
    }
}

fn packed(k: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < k);
    a * k - a * (a + 1) / 2 + b
}

/// A smooth family of distributions over a chart.
///
/// Only `sigma` is required; families that can differentiate themselves
/// report it through `analytic_order` and override `d_sigma`/`d2_sigma`.
pub trait Embedding: Send + Sync {
    fn domain(&self) -> &GridDomain;

    fn chart(&self) -> &Chart;

    fn fd_steps(&self) -> &FdSteps;

    fn sigma(&self, y: &[f64]) -> Result<DistributionVector>;

    /// Highest chart-derivative order available in closed form (0, 1 or 2).
    fn analytic_order(&self) -> u8 {
        0
    }

    fn d_sigma(&self, _y: &[f64], _axis: usize) -> Result<DistributionVector> {
        Err(Error::NoAnalyticDerivative(1))
    }

    fn d2_sigma(&self, _y: &[f64], _a: usize, _b: usize) -> Result<DistributionVector> {
        Err(Error::NoAnalyticDerivative(2))
    }

    /// Derivatives up to `order`, analytic where available and finite
    /// differences otherwise.
    fn jet(&self, y: &[f64], order: u8) -> Result<Jet> {
        let k = self.chart().k();
        let sigma = self.sigma(y)?;
        let first = if order >= 1 {
            (0..k).map(|a| tangent_vector(self, y, a)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut second = Vec::new();
        if order >= 2 {
            for a in 0..k {
                for b in a..k {
                    second.push(fd_second(self, y, a, b)?);
                }
            }
        }
        Ok(Jet {
            sigma,
            first,
            second,
            k,
        })
    }

    fn descriptor(&self) -> Option<EmbeddingDescriptor> {
        None
    }

    /// Double-double evaluator of `z ↦ (⟨σ(z), f⟩)_f` for the given
    /// functions, used by finite-difference Hessians. `None` when the
    /// family has no such evaluator; differences are then taken in `f64`.
    fn extended_transform<'a>(&'a self, _fs: &[&TestFunction]) -> Option<ExtendedTransform<'a>> {
        None
    }

    /// Double-double evaluator of the tangent field `Σ_a c_a ∂_a σ(z)`
    /// as coefficients on the kernel basis rows, used by the flow
    /// derivative. `None` when unsupported.
    fn extended_tangent(&self) -> Option<ExtendedTangent<'_>> {
        None
    }
}

/// See [`Embedding::extended_transform`].
pub type ExtendedTransform<'a> = Box<dyn Fn(&[Dd]) -> Result<Vec<Dd>> + Send + Sync + 'a>;

/// See [`Embedding::extended_tangent`]; arguments are the chart point and
/// the coefficients `c`.
pub type ExtendedTangent<'a> = Box<dyn Fn(&[Dd], &[f64]) -> Result<BasisTensor> + Send + Sync + 'a>;

/// JSON description sufficient to rebuild a shipped family on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EmbeddingDescriptor {
    Dirac { kernel_order: u8 },
    Line { t_samples: usize },
    Circle { radius: f64, t_samples: usize },
}

impl EmbeddingDescriptor {
    pub fn build(&self, domain: &GridDomain) -> Result<FamilyEmbedding> {
        match *self {
            Self::Dirac { kernel_order } => {
                dirac_embedding(domain, KernelOrder::try_from(kernel_order)?)
            }
            Self::Line { t_samples } => line_embedding(domain, t_samples),
            Self::Circle { radius, t_samples } => circle_embedding(domain, radius, t_samples),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dirac { .. } => "dirac",
            Self::Line { .. } => "line",
            Self::Circle { .. } => "circle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Geometry {
    /// `p(y) = y`.
    Dirac,
    /// `p(θ, s, t) = center + s (cos θ, sin θ) + t (-sin θ, cos θ)`.
    Line {
        center: [f64; 2],
        ts: Vec<f64>,
        dt: f64,
    },
    /// `p(c, φ) = c + r (cos φ, sin φ)`.
    Circle { radius: f64, phis: Vec<f64> },
}

/// One quadrature point of the family: weight, position, and the first and
/// second chart derivatives of the position (packed like [`Jet`]).
struct MovingPoint {
    weight: f64,
    p: Vec<f64>,
    jac: Vec<Vec<f64>>,
    hess: Vec<Vec<f64>>,
}

/// A shipped family: Dirac points, lines with arclength, or circles of
/// fixed radius with arclength.
#[derive(Debug, Clone)]
pub struct FamilyEmbedding {
    domain: GridDomain,
    chart: Chart,
    steps: FdSteps,
    kernel: KernelOrder,
    geometry: Geometry,
    descriptor: EmbeddingDescriptor,
}

/// `δ_x` for every admissible `x`; its transform is the identity on
/// nodal values.
pub fn dirac_embedding(domain: &GridDomain, kernel: KernelOrder) -> Result<FamilyEmbedding> {
    let bounds = (0..domain.dim()).map(|a| domain.safe_interval(a)).collect();
    let chart = Chart::new(bounds, vec![false; domain.dim()])?;
    Ok(FamilyEmbedding {
        domain: domain.clone(),
        steps: FdSteps::for_chart(&chart),
        chart,
        kernel,
        geometry: Geometry::Dirac,
        descriptor: EmbeddingDescriptor::Dirac {
            kernel_order: match kernel {
                KernelOrder::Linear => 1,
                KernelOrder::Cubic => 3,
            },
        },
    })
}

pub const MIN_T_SAMPLES: usize = 64;

/// Lines in a 2D domain, chart `(θ, s)` with `θ ∈ [0, π)` periodic and
/// `|s|` up to the inradius of the admissible box around its center.
///
/// Each line is integrated on a fixed uniform `t` grid spanning half the
/// domain diagonal on either side; samples fade out through the C²
/// boundary cutoff.
pub fn line_embedding(domain: &GridDomain, t_samples: usize) -> Result<FamilyEmbedding> {
    if domain.dim() != 2 {
        return Err(Error::InvalidEmbedding(format!(
            "line family needs a 2D domain, got {}D",
            domain.dim()
        )));
    }
    if t_samples < MIN_T_SAMPLES {
        return Err(Error::InvalidEmbedding(format!(
            "t_samples = {t_samples} < {MIN_T_SAMPLES}"
        )));
    }
    let safe = [domain.safe_interval(0), domain.safe_interval(1)];
    let s_max = 0.5 * safe[0].width().min(safe[1].width());
    let center = [safe[0].center(), safe[1].center()];
    let half_diag = 0.5 * domain.extent().iter().map(|iv| iv.width().powi(2)).sum::<f64>().sqrt();
    let dt = 2.0 * half_diag / (t_samples - 1) as f64;
    let ts = (0..t_samples).map(|j| -half_diag + j as f64 * dt).collect();
    let chart = Chart::new(
        vec![
            Interval::new(0.0, std::f64::consts::PI),
            Interval::new(-s_max, s_max),
        ],
        vec![true, false],
    )?;
    Ok(FamilyEmbedding {
        domain: domain.clone(),
        steps: FdSteps::for_chart(&chart),
        chart,
        kernel: KernelOrder::Cubic,
        geometry: Geometry::Line { center, ts, dt },
        descriptor: EmbeddingDescriptor::Line { t_samples },
    })
}

/// Circles of fixed `radius` in a 2D domain, charted by their centers.
/// The chart keeps every circle inside the admissible box.
pub fn circle_embedding(
    domain: &GridDomain,
    radius: f64,
    t_samples: usize,
) -> Result<FamilyEmbedding> {
    if domain.dim() != 2 {
        return Err(Error::InvalidEmbedding(format!(
            "circle family needs a 2D domain, got {}D",
            domain.dim()
        )));
    }
    if t_samples < MIN_T_SAMPLES {
        return Err(Error::InvalidEmbedding(format!(
            "t_samples = {t_samples} < {MIN_T_SAMPLES}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidEmbedding(format!("radius {radius} must be positive")));
    }
    let bounds: Vec<Interval> = (0..2)
        .map(|a| {
            let s = domain.safe_interval(a);
            Interval::new(s.lo + radius, s.hi - radius)
        })
        .collect();
    if bounds.iter().any(|iv| !(iv.hi > iv.lo)) {
        return Err(Error::InvalidEmbedding(format!(
            "radius {radius} too large: no admissible centers"
        )));
    }
    let chart = Chart::new(bounds, vec![false, false])?;
    let phis = (0..t_samples)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 / t_samples as f64)
        .collect();
    Ok(FamilyEmbedding {
        domain: domain.clone(),
        steps: FdSteps::for_chart(&chart),
        chart,
        kernel: KernelOrder::Cubic,
        geometry: Geometry::Circle { radius, phis },
        descriptor: EmbeddingDescriptor::Circle { radius, t_samples },
    })
}

impl FamilyEmbedding {
    pub fn kernel(&self) -> KernelOrder {
        self.kernel
    }

    /// Replaces the finite-difference steps.
    pub fn with_fd_steps(mut self, steps: FdSteps) -> Result<Self> {
        steps.validate(self.chart.k())?;
        self.steps = steps;
        Ok(self)
    }

    fn uses_cutoff(&self) -> bool {
        matches!(self.geometry, Geometry::Line { .. })
    }

    fn moving_points(&self, y: &[f64]) -> Vec<MovingPoint> {
        let k = self.chart.k();
        match &self.geometry {
            Geometry::Dirac => {
                let jac = (0..k)
                    .map(|a| (0..k).map(|c| if a == c { 1.0 } else { 0.0 }).collect())
                    .collect();
                vec![MovingPoint {
                    weight: 1.0,
                    p: y.to_vec(),
                    jac,
                    hess: vec![vec![0.0; k]; k * (k + 1) / 2],
                }]
            }
            Geometry::Line { center, ts, dt } => {
                let (sin, cos) = y[0].sin_cos();
                let s = y[1];
                ts.iter()
                    .map(|&t| {
                        let rel = [s * cos - t * sin, s * sin + t * cos];
                        MovingPoint {
                            weight: *dt,
                            p: vec![center[0] + rel[0], center[1] + rel[1]],
                            jac: vec![vec![-s * sin - t * cos, s * cos - t * sin], vec![cos, sin]],
                            // (θθ, θs, ss)
                            hess: vec![vec![-rel[0], -rel[1]], vec![-sin, cos], vec![0.0, 0.0]],
                        }
                    })
                    .collect()
            }
            Geometry::Circle { radius, phis } => {
                let w = radius * 2.0 * std::f64::consts::PI / phis.len() as f64;
                phis.iter()
                    .map(|&phi| {
                        let (sin, cos) = phi.sin_cos();
                        MovingPoint {
                            weight: w,
                            p: vec![y[0] + radius * cos, y[1] + radius * sin],
                            jac: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                            hess: vec![vec![0.0, 0.0]; 3],
                        }
                    })
                    .collect()
            }
        }
    }

    /// Quadrature weights and positions in double-double.
    fn moving_points_dd(&self, y: &[Dd]) -> Vec<(f64, Vec<Dd>)> {
        match &self.geometry {
            Geometry::Dirac => vec![(1.0, y.to_vec())],
            Geometry::Line { center, ts, dt } => {
                let (sin, cos) = y[0].sin_cos();
                let s = y[1];
                ts.iter()
                    .map(|&t| {
                        let p0 = Dd::from(center[0]) + s * cos - sin.mul_f64(t);
                        let p1 = Dd::from(center[1]) + s * sin + cos.mul_f64(t);
                        (*dt, vec![p0, p1])
                    })
                    .collect()
            }
            Geometry::Circle { radius, phis } => {
                let w = radius * 2.0 * std::f64::consts::PI / phis.len() as f64;
                phis.iter()
                    .map(|&phi| {
                        let (sin, cos) = phi.sin_cos();
                        (w, vec![y[0] + Dd::from(radius * cos), y[1] + Dd::from(radius * sin)])
                    })
                    .collect()
            }
        }
    }

    /// [`Self::moving_points_dd`] with each position's derivative along
    /// the chart direction `c`.
    fn moving_points_dd_along(&self, y: &[Dd], c: &[f64]) -> Vec<(f64, Vec<Dd>, Vec<Dd>)> {
        match &self.geometry {
            Geometry::Line { ts, .. } => {
                let (sin, cos) = y[0].sin_cos();
                let s = y[1];
                self.moving_points_dd(y)
                    .into_iter()
                    .zip(ts)
                    .map(|((w, p), &t)| {
                        // ∂_θ p = (-s sin θ - t cos θ, s cos θ - t sin θ), ∂_s p = (cos θ, sin θ).
                        let d0 = (-(s * sin) - cos.mul_f64(t)).mul_f64(c[0]) + cos.mul_f64(c[1]);
                        let d1 = (s * cos - sin.mul_f64(t)).mul_f64(c[0]) + sin.mul_f64(c[1]);
                        (w, p, vec![d0, d1])
                    })
                    .collect()
            }
            // Translations of a fixed stencil: ∂p/∂y is the identity.
            Geometry::Dirac | Geometry::Circle { .. } => {
                let dir: Vec<Dd> = c.iter().map(|&v| Dd::from(v)).collect();
                self.moving_points_dd(y)
                    .into_iter()
                    .map(|(w, p)| (w, p, dir.clone()))
                    .collect()
            }
        }
    }

    /// Single pass over the quadrature points producing σ and, depending
    /// on `order`, its first and second chart derivatives.
    fn analytic_jet(&self, y: &[f64], order: u8) -> Result<Jet> {
        if !self.chart.contains(y) {
            return Err(Error::OutsideChart { y: y.to_vec() });
        }
        if order > 0 && self.kernel == KernelOrder::Linear {
            return Err(Error::NoAnalyticDerivative(order));
        }
        let dom = &self.domain;
        let dim = dom.dim();
        let k = self.chart.k();
        let len = dom.len();
        let mut sigma = vec![0.0; len];
        let mut first = vec![vec![0.0; len]; if order >= 1 { k } else { 0 }];
        let mut second = vec![vec![0.0; len]; if order >= 2 { k * (k + 1) / 2 } else { 0 }];
        let cutoff = self.uses_cutoff();

        // g[c][d]: d-th derivative of the axis-c factor at p_c.
        let mut g: Vec<Vec<Vec<f64>>> = (0..dim)
            .map(|c| vec![vec![0.0; dom.n()[c]]; order as usize + 1])
            .collect();
        let mut derivs = vec![0u8; dim];

        for mp in self.moving_points(y) {
            if cutoff {
                if (0..dim).any(|c| dom.cutoff(c, mp.p[c])[0] == 0.0) {
                    continue;
                }
            } else if !dom.is_safe(&mp.p) {
                return Err(Error::TooCloseToBoundary {
                    point: mp.p,
                    margin: dom.margin(),
                });
            }
            for (c, gc) in g.iter_mut().enumerate() {
                for (d, buf) in gc.iter_mut().enumerate() {
                    dom.axis_factor(c, mp.p[c], d as u8, self.kernel, cutoff, buf);
                }
            }
            let add = |out: &mut [f64], coef: f64, derivs: &[u8]| {
                if coef != 0.0 {
                    let f: Vec<&[f64]> =
                        (0..dim).map(|c| g[c][derivs[c] as usize].as_slice()).collect();
                    accumulate_outer(out, mp.weight * coef, &f);
                }
            };
            derivs.iter_mut().for_each(|d| *d = 0);
            add(&mut sigma, 1.0, &derivs);
            for (a, out) in first.iter_mut().enumerate() {
                for c in 0..dim {
                    derivs[c] = 1;
                    add(out, mp.jac[a][c], &derivs);
                    derivs[c] = 0;
                }
            }
            if order >= 2 {
                for a in 0..k {
                    for b in a..k {
                        let out = &mut second[packed(k, a, b)];
                        let hab = &mp.hess[packed(k, a, b)];
                        for c in 0..dim {
                            derivs[c] = 1;
                            add(out, hab[c], &derivs);
                            derivs[c] = 2;
                            add(out, mp.jac[a][c] * mp.jac[b][c], &derivs);
                            derivs[c] = 1;
                            for d in c + 1..dim {
                                derivs[d] = 1;
                                add(
                                    out,
                                    mp.jac[a][c] * mp.jac[b][d] + mp.jac[a][d] * mp.jac[b][c],
                                    &derivs,
                                );
                                derivs[d] = 0;
                            }
                            derivs[c] = 0;
                        }
                    }
                }
            }
        }
        let wrap = |v: Vec<Vec<f64>>| v.into_iter().map(DistributionVector::from_raw).collect();
        Ok(Jet {
            sigma: DistributionVector::from_raw(sigma),
            first: wrap(first),
            second: wrap(second),
            k,
        })
    }
}

impl Embedding for FamilyEmbedding {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }

    fn chart(&self) -> &Chart {
        &self.chart
    }

    fn fd_steps(&self) -> &FdSteps {
        &self.steps
    }

    fn analytic_order(&self) -> u8 {
        match self.kernel {
            KernelOrder::Linear => 0,
            KernelOrder::Cubic => 2,
        }
    }

    fn sigma(&self, y: &[f64]) -> Result<DistributionVector> {
        Ok(self.analytic_jet(y, 0)?.sigma)
    }

    fn d_sigma(&self, y: &[f64], axis: usize) -> Result<DistributionVector> {
        check_axis(self.chart.k(), axis)?;
        Ok(self.analytic_jet(y, 1)?.first.swap_remove(axis))
    }

    fn d2_sigma(&self, y: &[f64], a: usize, b: usize) -> Result<DistributionVector> {
        check_axis(self.chart.k(), a)?;
        check_axis(self.chart.k(), b)?;
        let k = self.chart.k();
        Ok(self.analytic_jet(y, 2)?.second.swap_remove(packed(k, a.min(b), a.max(b))))
    }

    fn jet(&self, y: &[f64], order: u8) -> Result<Jet> {
        if order <= self.analytic_order() {
            self.analytic_jet(y, order)
        } else {
            let mut jet = self.analytic_jet(y, order.min(self.analytic_order()))?;
            let k = self.chart.k();
            if order >= 1 && jet.first.is_empty() {
                jet.first = (0..k).map(|a| tangent_vector(self, y, a)).collect::<Result<_>>()?;
            }
            if order >= 2 {
                for a in 0..k {
                    for b in a..k {
                        jet.second.push(fd_second(self, y, a, b)?);
                    }
                }
            }
            Ok(jet)
        }
    }

    fn descriptor(&self) -> Option<EmbeddingDescriptor> {
        Some(self.descriptor.clone())
    }

    fn extended_transform<'a>(&'a self, fs: &[&TestFunction]) -> Option<ExtendedTransform<'a>> {
        let tables: Vec<_> = fs
            .par_iter()
            .map(|f| self.domain.contract(f.values(), self.kernel))
            .collect();
        Some(Box::new(move |z: &[Dd]| {
            let zf: Vec<f64> = z.iter().map(|v| v.to_f64()).collect();
            if z.len() != self.chart.k() || !self.chart.contains(&zf) {
                return Err(Error::OutsideChart { y: zf });
            }
            let dom = &self.domain;
            let cutoff = self.uses_cutoff();
            let mut out = vec![Dd::ZERO; tables.len()];
            for (weight, p) in self.moving_points_dd(z) {
                let pf: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
                if cutoff {
                    if (0..dom.dim()).any(|c| dom.cutoff(c, pf[c])[0] == 0.0) {
                        continue;
                    }
                } else if !dom.is_safe(&pf) {
                    return Err(Error::TooCloseToBoundary {
                        point: pf,
                        margin: dom.margin(),
                    });
                }
                let terms: Vec<Vec<(usize, Dd)>> = (0..dom.dim())
                    .map(|c| dom.axis_terms_dd(c, p[c], self.kernel, cutoff))
                    .collect();
                for (o, t) in out.iter_mut().zip(&tables) {
                    *o = *o + t.evaluate(&terms).mul_f64(weight);
                }
            }
            Ok(out)
        }))
    }

    fn extended_tangent(&self) -> Option<ExtendedTangent<'_>> {
        if self.kernel != KernelOrder::Cubic {
            return None;
        }
        Some(Box::new(move |z: &[Dd], c: &[f64]| {
            let zf: Vec<f64> = z.iter().map(|v| v.to_f64()).collect();
            let k = self.chart.k();
            if z.len() != k || !self.chart.contains(&zf) {
                return Err(Error::OutsideChart { y: zf });
            }
            if c.len() != k {
                return Err(Error::LengthMismatch { expected: k, found: c.len() });
            }
            let dom = &self.domain;
            let cutoff = self.uses_cutoff();
            let mut out = dom.basis_tensor(self.kernel);
            for (weight, p, dp) in self.moving_points_dd_along(z, c) {
                let pf: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
                if cutoff {
                    if (0..dom.dim()).any(|a| dom.cutoff(a, pf[a])[0] == 0.0) {
                        continue;
                    }
                } else if !dom.is_safe(&pf) {
                    return Err(Error::TooCloseToBoundary {
                        point: pf,
                        margin: dom.margin(),
                    });
                }
                let values: Vec<Vec<(usize, Dd)>> = (0..dom.dim())
                    .map(|a| dom.axis_terms_dd(a, p[a], self.kernel, cutoff))
                    .collect();
                // Product rule over the axes of the tensor-product kernel.
                for a in 0..dom.dim() {
                    let mut terms = values.clone();
                    terms[a] = dom.axis_terms_d1_dd(a, p[a], cutoff);
                    out.add_outer(dp[a].mul_f64(weight), &terms);
                }
            }
            Ok(out)
        }))
    }
}

fn check_axis(k: usize, axis: usize) -> Result<()> {
    if axis < k {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("chart axis {axis} out of range for k = {k}")))
    }
}

/// Hides analytic second derivatives of another family, forcing the
/// finite-difference path for `d2_sigma`.
pub struct FirstDerivativesOnly<'a>(pub &'a dyn Embedding);

impl Embedding for FirstDerivativesOnly<'_> {
    fn domain(&self) -> &GridDomain {
        self.0.domain()
    }

    fn chart(&self) -> &Chart {
        self.0.chart()
    }

    fn fd_steps(&self) -> &FdSteps {
        self.0.fd_steps()
    }

    fn sigma(&self, y: &[f64]) -> Result<DistributionVector> {
        self.0.sigma(y)
    }

    fn analytic_order(&self) -> u8 {
        self.0.analytic_order().min(1)
    }

    fn d_sigma(&self, y: &[f64], axis: usize) -> Result<DistributionVector> {
        self.0.d_sigma(y, axis)
    }

    fn descriptor(&self) -> Option<EmbeddingDescriptor> {
        self.0.descriptor()
    }

    fn extended_transform<'a>(&'a self, fs: &[&TestFunction]) -> Option<ExtendedTransform<'a>> {
        self.0.extended_transform(fs)
    }

    fn extended_tangent(&self) -> Option<ExtendedTangent<'_>> {
        self.0.extended_tangent()
    }
}

fn offset(y: &[f64], axis: usize, delta: f64) -> Vec<f64> {
    let mut z = y.to_vec();
    z[axis] += delta;
    z
}

fn unit_reach(k: usize, axis: usize, h: f64) -> Vec<f64> {
    let mut r = vec![0.0; k];
    r[axis] = h;
    r
}

fn combine(terms: &[(f64, &DistributionVector)]) -> DistributionVector {
    let mut out = DistributionVector::zeros(terms[0].1.len());
    for (c, v) in terms {
        out.axpy(*c, v);
    }
    out
}

/// `∂σ/∂y_axis`: analytic when available, else a central difference.
pub fn tangent_vector<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    axis: usize,
) -> Result<DistributionVector> {
    check_axis(emb.chart().k(), axis)?;
    if emb.analytic_order() >= 1 {
        return emb.d_sigma(y, axis);
    }
    let h = emb.fd_steps().first[axis];
    emb.chart().check_stencil(y, &unit_reach(emb.chart().k(), axis, h))?;
    let plus = emb.sigma(&offset(y, axis, h))?;
    let minus = emb.sigma(&offset(y, axis, -h))?;
    Ok(combine(&[(0.5 / h, &plus), (-0.5 / h, &minus)]))
}

/// Pushed-forward tangent space `T_yσ(T_yΣ)`.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub y: Vec<f64>,
    pub basis: Vec<DistributionVector>,
    pub singular_values: Vec<f64>,
}

/// Relative singular-value threshold of the immersion check.
pub const IMMERSION_RANK_TOL: f64 = 1e-8;

/// Tangent frame at `y`; errors if the frame is rank deficient.
pub fn fd_tangent<E: Embedding + ?Sized>(emb: &E, y: &[f64]) -> Result<TangentFrame> {
    let k = emb.chart().k();
    let basis: Vec<DistributionVector> =
        (0..k).map(|a| tangent_vector(emb, y, a)).collect::<Result<_>>()?;
    let singular_values = singular_values(&basis);
    let rank = numeric_rank(&singular_values, IMMERSION_RANK_TOL);
    if rank < k {
        return Err(Error::RankDeficient {
            y: y.to_vec(),
            rank,
            k,
        });
    }
    Ok(TangentFrame {
        y: y.to_vec(),
        basis,
        singular_values,
    })
}

pub(crate) fn singular_values(columns: &[DistributionVector]) -> Vec<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    let m = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].weights()[i]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values at or above `tol · σ_max`.
pub fn numeric_rank(sorted_desc: &[f64], tol: f64) -> usize {
    let Some(&max) = sorted_desc.first() else {
        return 0;
    };
    if max == 0.0 {
        return 0;
    }
    sorted_desc.iter().filter(|&&s| s >= tol * max).count()
}

/// `∂²σ/∂y_a∂y_b`.
///
/// Analytic when available; otherwise a central difference of the
/// analytic first derivatives (in double-double when the family has an
/// extended tangent evaluator), or a second-order stencil on σ itself.
/// The result is exactly symmetric in `(a, b)`.
pub fn fd_second<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    a: usize,
    b: usize,
) -> Result<DistributionVector> {
    let k = emb.chart().k();
    check_axis(k, a)?;
    check_axis(k, b)?;
    let (a, b) = (a.min(b), a.max(b));
    if emb.analytic_order() >= 2 {
        return emb.d2_sigma(y, a, b);
    }
    let tangent = match emb.analytic_order() {
        0 => None,
        _ => emb.extended_tangent(),
    };
    let steps = match (emb.analytic_order(), &tangent) {
        (0, _) => &emb.fd_steps().second_sigma,
        (_, Some(_)) => &emb.fd_steps().second_extended,
        (_, None) => &emb.fd_steps().second,
    };
    let (ha, hb) = (steps[a], steps[b]);
    let mut reach = vec![0.0; k];
    reach[a] = ha;
    reach[b] = hb;
    emb.chart().check_stencil(y, &reach)?;

    if let Some(t) = tangent {
        let diff = |along: usize, h: f64, of: usize| -> Result<BasisTensor> {
            let mut c = vec![0.0; k];
            c[of] = 1.0;
            let at = |d: f64| {
                let z: Vec<Dd> = y
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if i == along { Dd::from(v) + Dd::from(d) } else { Dd::from(v) })
                    .collect();
                t(&z, &c)
            };
            Ok(at(h)?.difference_quotient(&at(-h)?, 2.0 * h))
        };
        let dom = emb.domain();
        if a == b {
            return Ok(dom.expand(&diff(a, ha, a)?));
        }
        let ab = dom.expand(&diff(a, ha, b)?);
        let ba = dom.expand(&diff(b, hb, a)?);
        return Ok(combine(&[(0.5, &ab), (0.5, &ba)]));
    }

    if emb.analytic_order() >= 1 {
        let diff = |along: usize, h: f64, of: usize| -> Result<DistributionVector> {
            let p = emb.d_sigma(&offset(y, along, h), of)?;
            let m = emb.d_sigma(&offset(y, along, -h), of)?;
            Ok(combine(&[(0.5 / h, &p), (-0.5 / h, &m)]))
        };
        if a == b {
            return diff(a, ha, a);
        }
        let ab = diff(a, ha, b)?;
        let ba = diff(b, hb, a)?;
        return Ok(combine(&[(0.5, &ab), (0.5, &ba)]));
    }

    if a == b {
        let p = emb.sigma(&offset(y, a, ha))?;
        let c = emb.sigma(y)?;
        let m = emb.sigma(&offset(y, a, -ha))?;
        let s = 1.0 / (ha * ha);
        return Ok(combine(&[(s, &p), (-2.0 * s, &c), (s, &m)]));
    }
    let corner = |sa: f64, sb: f64| {
        let mut z = y.to_vec();
        z[a] += sa * ha;
        z[b] += sb * hb;
        emb.sigma(&z)
    };
    let s = 0.25 / (ha * hb);
    let pp = corner(1.0, 1.0)?;
    let pm = corner(1.0, -1.0)?;
    let mp = corner(-1.0, 1.0)?;
    let mm = corner(-1.0, -1.0)?;
    Ok(combine(&[(s, &pp), (-s, &pm), (-s, &mp), (s, &mm)]))
}
