//! Second fundamental form of `σ(Σ) ⊂ D'(M)` and its identification with
//! the Hessian of the transform.
//!
//! The normal space at `y` is never materialised. It is probed through
//! test functions `f` with `d(R f)_y = 0`: for those, pairing with the
//! flat derivative `Σ X_a Y_b ∂_a∂_b σ` is independent of the tangential
//! part, and equals `Xᵀ Hess(R f)(y) Y`.

use nalgebra::{DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{
    builtin, dot, pair, BasisTensor, DistributionVector, GridDomain, GridHeader, TestFunction,
};
use crate::embeddings::{tangent_vector, Embedding, EmbeddingDescriptor, Jet};
use crate::fd::rel_err;
use crate::parallel::*;
use crate::precise::Dd;
use crate::{Error, Result};

/// Annihilator tolerance: `|d(R f)_y| ≤ η ‖f‖`.
pub const ANNIHILATOR_ETA: f64 = 1e-9;

fn check_y<E: Embedding + ?Sized>(emb: &E, y: &[f64]) -> Result<()> {
    if emb.chart().contains(y) {
        Ok(())
    } else {
        Err(Error::OutsideChart { y: y.to_vec() })
    }
}

fn check_dir(k: usize, v: &[f64]) -> Result<()> {
    if v.len() == k {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: k,
            found: v.len(),
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `d(R f)_y`, component `a` being `⟨∂_a σ(y), f⟩`.
pub fn differential_of_transform<E: Embedding + ?Sized>(
    emb: &E,
    f: &TestFunction,
    y: &[f64],
) -> Result<Vec<f64>> {
    check_y(emb, y)?;
    (0..emb.chart().k())
        .map(|a| pair(&tangent_vector(emb, y, a)?, f))
        .collect()
}

/// Which route produces the Hessian of `R f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// `⟨∂_a∂_b σ(y), f⟩` from the family's second derivatives.
    Analytic,
    /// Finite differences of the scalar map `y ↦ ⟨σ(y), f⟩` alone.
    FiniteDifference,
}

/// Hessian of `R f` at `y`, symmetrised; `asymmetry` is `max|H - Hᵀ|`
/// before symmetrisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianMatrix {
    pub y: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub asymmetry: f64,
}

impl HessianMatrix {
    fn from_raw(y: &[f64], raw: Vec<Vec<f64>>) -> Self {
        let k = raw.len();
        let mut asymmetry = 0.0_f64;
        let mut h = raw.clone();
        for a in 0..k {
            for b in 0..k {
                asymmetry = asymmetry.max((raw[a][b] - raw[b][a]).abs());
                h[a][b] = 0.5 * (raw[a][b] + raw[b][a]);
            }
        }
        Self {
            y: y.to_vec(),
            h,
            asymmetry,
        }
    }

    /// `Xᵀ H Y`.
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (a, row) in self.h.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                acc += x[a] * v * y[b];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Hessian of `R f` at `y`. The analytic mode falls back to finite
/// differences when the family has no closed-form second derivatives.
pub fn hessian_of_transform<E: Embedding + ?Sized>(
    emb: &E,
    f: &TestFunction,
    y: &[f64],
    mode: HessianMode,
) -> Result<HessianMatrix> {
    check_y(emb, y)?;
    let k = emb.chart().k();
    if mode == HessianMode::Analytic && emb.analytic_order() >= 2 {
        let jet = emb.jet(y, 2)?;
        let raw = (0..k)
            .map(|a| (0..k).map(|b| pair(jet.second(a, b), f)).collect())
            .collect::<Result<_>>()?;
        return Ok(HessianMatrix::from_raw(y, raw));
    }
    let steps = default_hessian_steps(emb);
    Ok(transform_hessians_fd(emb, &[f], y, &steps)?.remove(0))
}

/// Relative step of finite-difference Hessians evaluated in double-double.
pub const EXTENDED_HESSIAN_STEP: f64 = 1e-6;

/// Steps of the finite-difference Hessian: `EXTENDED_HESSIAN_STEP` of each
/// chart width when the family has a double-double evaluator, the family's
/// σ-stencil steps otherwise.
pub fn default_hessian_steps<E: Embedding + ?Sized>(emb: &E) -> Vec<f64> {
    if emb.extended_transform(&[]).is_some() {
        let chart = emb.chart();
        (0..chart.k()).map(|a| EXTENDED_HESSIAN_STEP * chart.width(a)).collect()
    } else {
        emb.fd_steps().second_sigma.clone()
    }
}

/// Finite-difference Hessians of `y ↦ ⟨σ(y), f⟩` for several `f` at once.
///
/// Central second differences at steps `h` and `2h` are combined by one
/// Richardson step, `(4 D_h - D_2h) / 3`, cancelling the `h²` term; mixed
/// partials use the four-corner stencil in the same way. Only the scalar
/// transform is evaluated, never derivatives of σ; in double-double when
/// the family supports it.
pub fn transform_hessians_fd<E: Embedding + ?Sized>(
    emb: &E,
    fs: &[&TestFunction],
    y: &[f64],
    steps: &[f64],
) -> Result<Vec<HessianMatrix>> {
    let k = emb.chart().k();
    check_dir(k, steps)?;
    if steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidArgument("hessian steps must be positive".into()));
    }
    let reach: Vec<f64> = steps.iter().map(|h| 2.0 * h).collect();
    emb.chart().check_stencil(y, &reach)?;

    // Stencil offsets in units of the per-axis steps.
    let mut offsets: Vec<Vec<f64>> = vec![vec![0.0; k]];
    for a in 0..k {
        for m in [1.0, -1.0, 2.0, -2.0] {
            let mut o = vec![0.0; k];
            o[a] = m;
            offsets.push(o);
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            for m in [1.0, 2.0] {
                for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut o = vec![0.0; k];
                    o[a] = sa * m;
                    o[b] = sb * m;
                    offsets.push(o);
                }
            }
        }
    }
    let extended = emb.extended_transform(fs);
    let values: Vec<Vec<Dd>> = offsets
        .par_iter()
        .map(|o| match &extended {
            Some(eval) => {
                // y + o h is exact in double-double.
                let z: Vec<Dd> = y
                    .iter()
                    .zip(o)
                    .zip(steps)
                    .map(|((v, o), h)| Dd::from(*v) + Dd::from(o * h))
                    .collect();
                eval(&z)
            }
            None => {
                let z: Vec<f64> = y.iter().zip(o).zip(steps).map(|((v, o), h)| v + o * h).collect();
                let s = emb.sigma(&z)?;
                fs.iter().map(|f| pair(&s, f).map(Dd::from)).collect()
            }
        })
        .collect::<Result<_>>()?;
    let at = |o: &[f64], j: usize| -> Dd {
        let idx = offsets.iter().position(|p| p.as_slice() == o).expect("stencil point");
        values[idx][j]
    };
    let axis_pt = |a: usize, m: f64| {
        let mut o = vec![0.0; k];
        o[a] = m;
        o
    };
    let corner = |a: usize, b: usize, sa: f64, sb: f64| {
        let mut o = vec![0.0; k];
        o[a] = sa;
        o[b] = sb;
        o
    };
    let richardson = |d1: Dd, d2: Dd| (d1.mul_f64(4.0) - d2).div_f64(3.0).to_f64();

    let mut out = Vec::with_capacity(fs.len());
    for j in 0..fs.len() {
        let center = at(&vec![0.0; k], j);
        let mut raw = vec![vec![0.0; k]; k];
        for a in 0..k {
            let h = steps[a];
            let d = |m: f64| {
                (at(&axis_pt(a, m), j) - center.mul_f64(2.0) + at(&axis_pt(a, -m), j))
                    .div_f64(m * m)
                    .div_f64(h)
                    .div_f64(h)
            };
            raw[a][a] = richardson(d(1.0), d(2.0));
        }
        for a in 0..k {
            for b in a + 1..k {
                let (ha, hb) = (steps[a], steps[b]);
                // Same corners, summed in the order each axis pairing implies.
                let mixed = |m: f64, swap: bool| {
                    let pp = at(&corner(a, b, m, m), j);
                    let pm = at(&corner(a, b, m, -m), j);
                    let mp = at(&corner(a, b, -m, m), j);
                    let mm = at(&corner(a, b, -m, -m), j);
                    let num = if swap {
                        pp - mp - pm + mm
                    } else {
                        pp - pm - mp + mm
                    };
                    num.div_f64(4.0 * m * m).div_f64(ha).div_f64(hb)
                };
                raw[a][b] = richardson(mixed(1.0, false), mixed(2.0, false));
                raw[b][a] = richardson(mixed(1.0, true), mixed(2.0, true));
            }
        }
        out.push(HessianMatrix::from_raw(y, raw));
    }
    Ok(out)
}

/// Test functions whose transform has vanishing differential at `y`.
#[derive(Debug, Clone)]
pub struct AnnihilatorBasis {
    pub y: Vec<f64>,
    pub functions: Vec<TestFunction>,
    /// Row `i` holds the pool coefficients of `functions[i]`.
    pub coefficients: Vec<Vec<f64>>,
    /// Largest `|d(R f)_y| / ‖f‖` over the basis.
    pub construction_residual: f64,
}

/// Annihilator combinations of `pool` at `y`.
///
/// With `G[p][a] = d(R pool_p)_y(e_a)`, the coefficient vectors span the
/// left nullspace of `G`. Any pool with a nonzero annihilator is accepted.
pub fn annihilator_basis<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    pool: &[TestFunction],
) -> Result<AnnihilatorBasis> {
    check_y(emb, y)?;
    if pool.is_empty() {
        return Err(Error::PoolTooSmall("empty pool".into()));
    }
    let k = emb.chart().k();
    let p = pool.len();
    let n = pool[0].len();
    if let Some(bad) = pool.iter().find(|f| f.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    if p > n {
        return Err(Error::PoolTooSmall(format!("{p} functions exceed {n} nodes")));
    }
    // Orthonormal pool: basis functions then have unit norm and carry no
    // cancellation from nearly parallel pool members.
    let samples = DMatrix::from_fn(n, p, |i, j| pool[j].values()[i]);
    let qr = samples.qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rank = r.diagonal().iter().filter(|v| v.abs() > 1e-12 * rmax).count();
    if rank < p {
        return Err(Error::PoolTooSmall(format!("pool of {p} functions has rank {rank}")));
    }
    let q = qr.q();
    let ortho: Vec<TestFunction> = (0..p)
        .map(|j| TestFunction::from_samples(emb.domain(), q.column(j).iter().copied().collect()))
        .collect::<Result<_>>()?;

    let jet = emb.jet(y, 1)?;
    let cols = p.max(k);
    let g = DMatrix::from_fn(p, cols, |i, a| {
        if a < k {
            dot(jet.first[a].weights(), ortho[i].values())
        } else {
            0.0
        }
    });
    let svd = SVD::new(g, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let refs: Vec<&TestFunction> = ortho.iter().collect();
    let probe = Probe { jet: &jet };

    let mut functions = Vec::new();
    let mut coefficients = Vec::new();
    let mut residual = 0.0_f64;
    // A unit coefficient vector gives a unit-norm function whose
    // differential has norm equal to the singular value.
    for (col, &s) in svd.singular_values.iter().enumerate() {
        if s > ANNIHILATOR_ETA {
            continue;
        }
        let c = u.column(col).clone_owned();
        let mut f = TestFunction::linear_combination(c.as_slice(), &refs)?;
        f.set_support_ok(pool.iter().all(TestFunction::support_ok));
        let ratio = norm(&probe.differential(&f)) / f.norm();
        if ratio <= ANNIHILATOR_ETA {
            residual = residual.max(ratio);
            let pool_coeffs = r
                .solve_upper_triangular(&c)
                .expect("full-rank triangular factor");
            functions.push(f);
            coefficients.push(pool_coeffs.iter().copied().collect());
        }
    }
    if functions.is_empty() {
        return Err(Error::EmptyNullspace);
    }
    Ok(AnnihilatorBasis {
        y: y.to_vec(),
        functions,
        coefficients,
        construction_residual: residual,
    })
}

/// Pairings that reuse one jet of σ at a fixed chart point.
struct Probe<'a> {
    jet: &'a Jet,
}

impl Probe<'_> {
    fn differential(&self, f: &TestFunction) -> Vec<f64> {
        self.jet.first.iter().map(|t| dot(t.weights(), f.values())).collect()
    }

    fn require_annihilator(&self, f: &TestFunction) -> Result<()> {
        let measured = norm(&self.differential(f));
        let bound = ANNIHILATOR_ETA * f.norm();
        if measured <= bound {
            Ok(())
        } else {
            Err(Error::AnnihilatorViolated { measured, bound })
        }
    }

    /// `Σ_{a,b} X_a Y_b ∂_a∂_b σ`, accumulated over `a ≤ b` with the
    /// symmetric coefficient `X_a Y_b + X_b Y_a`, so swapping `X` and `Y`
    /// reproduces the same floating-point result.
    fn flat_derivative(&self, x: &[f64], y: &[f64]) -> DistributionVector {
        let k = self.jet.k();
        let mut out = DistributionVector::zeros(self.jet.sigma.len());
        for a in 0..k {
            out.axpy(x[a] * y[a], self.jet.second(a, a));
            for b in a + 1..k {
                out.axpy(x[a] * y[b] + x[b] * y[a], self.jet.second(a, b));
            }
        }
        out
    }
}

/// `⟨S(X, Y)(y), f⟩` for an annihilator `f`.
///
/// Errors with the measured differential when `f` does not annihilate the
/// tangent space at `y` within `η ‖f‖`.
pub fn sff_pairing<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    x_dir: &[f64],
    y_dir: &[f64],
    f: &TestFunction,
) -> Result<f64> {
    check_y(emb, y)?;
    let k = emb.chart().k();
    check_dir(k, x_dir)?;
    check_dir(k, y_dir)?;
    let jet = emb.jet(y, 2)?;
    let probe = Probe { jet: &jet };
    probe.require_annihilator(f)?;
    pair(&probe.flat_derivative(x_dir, y_dir), f)
}

/// Euclidean projection of `v` off the tangent span at `y`.
///
/// This picks one representative of the class of `v` in the normal space
/// using the plain dot product on weight vectors. That inner product is
/// not canonical; the representative is for visualisation only.
pub fn normal_representative<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    v: &DistributionVector,
) -> Result<DistributionVector> {
    let jet = emb.jet(y, 1)?;
    let k = jet.first.len();
    let gram = DMatrix::from_fn(k, k, |a, b| dot(jet.first[a].weights(), jet.first[b].weights()));
    let rhs = nalgebra::DVector::from_fn(k, |a, _| dot(jet.first[a].weights(), v.weights()));
    let coef = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::RankDeficient {
            y: y.to_vec(),
            rank: k - 1,
            k,
        })?;
    let mut out = v.clone();
    for (a, t) in jet.first.iter().enumerate() {
        out.axpy(-coef[a], t);
    }
    Ok(out)
}

/// `∇_X Y` along σ(Σ) for a chart vector field `Y`, as the derivative at
/// `t = 0` of `(dσ · Y)(y + tX)`.
///
/// For constant `X` the chart flow is a translation, so the central
/// difference with step `step` realises the flow derivative directly.
/// Families with [`Embedding::extended_tangent`] difference the tangent
/// field in double-double and round once at the end; `Y` itself is
/// sampled at the nearest `f64` points of the flow.
pub fn flat_covariant_derivative<E, F>(
    emb: &E,
    y: &[f64],
    x_dir: &[f64],
    y_field: F,
    step: f64,
) -> Result<DistributionVector>
where
    E: Embedding + ?Sized,
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = emb.chart().k();
    check_dir(k, x_dir)?;
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("flow step {step} must be positive")));
    }
    let reach: Vec<f64> = x_dir.iter().map(|v| (v * step).abs()).collect();
    emb.chart().check_stencil(y, &reach)?;
    if let Some(tangent) = emb.extended_tangent() {
        let at = |t: f64| -> Result<BasisTensor> {
            let z: Vec<Dd> = y
                .iter()
                .zip(x_dir)
                .map(|(a, b)| Dd::from(*a) + Dd::from(t).mul_f64(*b))
                .collect();
            let zf: Vec<f64> = z.iter().map(|v| v.to_f64()).collect();
            let coeffs = y_field(&zf);
            check_dir(k, &coeffs)?;
            tangent(&z, &coeffs)
        };
        let quotient = at(step)?.difference_quotient(&at(-step)?, 2.0 * step);
        return Ok(emb.domain().expand(&quotient));
    }
    let push = |t: f64| -> Result<DistributionVector> {
        let z: Vec<f64> = y.iter().zip(x_dir).map(|(a, b)| a + t * b).collect();
        let coeffs = y_field(&z);
        check_dir(k, &coeffs)?;
        let jet = emb.jet(&z, 1)?;
        let mut v = DistributionVector::zeros(jet.sigma.len());
        for (c, t) in coeffs.iter().zip(&jet.first) {
            v.axpy(*c, t);
        }
        Ok(v)
    };
    let plus = push(step)?;
    let minus = push(-step)?;
    let mut out = plus.scaled(0.5 / step);
    out.axpy(-0.5 / step, &minus);
    Ok(out)
}

/// Relative flow step of the double-double tangent path.
pub const EXTENDED_FLOW_STEP: f64 = 1e-8;

/// Default flow step: [`EXTENDED_FLOW_STEP`] of the narrowest chart axis
/// when the family has an extended tangent evaluator, `1e-6` otherwise.
pub fn default_flow_step<E: Embedding + ?Sized>(emb: &E) -> f64 {
    let chart = emb.chart();
    let w = (0..chart.k()).map(|a| chart.width(a)).fold(f64::INFINITY, f64::min);
    let rel = if emb.extended_tangent().is_some() {
        EXTENDED_FLOW_STEP
    } else {
        1e-6
    };
    rel * w
}

/// Parameters of one theorem check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n_directions: usize,
    pub tol: f64,
    pub seed: u64,
    /// Steps of the finite-difference Hessian; [`default_hessian_steps`]
    /// when absent.
    pub hessian_steps: Option<Vec<f64>>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n_directions: 10,
            tol: 1e-4,
            seed: 0,
            hessian_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRecord {
    pub direction: usize,
    pub function: usize,
    pub sff_value: f64,
    pub hessian_value: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Outcome of comparing `⟨S(X, Y)(y), f⟩` with `Xᵀ Hess(R f)(y) Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub embedding: Option<EmbeddingDescriptor>,
    pub grid: GridHeader,
    pub y: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
    /// Whether the second fundamental form used closed-form or
    /// finite-difference second derivatives of σ.
    pub second_derivatives: HessianMode,
    pub hessian_steps: Vec<f64>,
    pub annihilator_residual: f64,
    pub directions: Vec<DirectionPair>,
    pub records: Vec<CurvatureRecord>,
    pub max_rel_residual: f64,
    pub pass: bool,
}

/// `n` pairs of directions uniform on the unit sphere of the chart.
pub fn random_directions(k: usize, n: usize, seed: u64) -> Vec<DirectionPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };
    (0..n)
        .map(|_| {
            let x = unit();
            let y = unit();
            DirectionPair { x, y }
        })
        .collect()
}

/// Pool of Gaussian bumps with centers uniform in the admissible box and
/// width `0.15 ·` the shortest domain side, margin-clipped.
pub fn bump_pool(domain: &GridDomain, size: usize, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 0.15
        * domain
            .extent()
            .iter()
            .map(|iv| iv.width())
            .fold(f64::INFINITY, f64::min);
    (0..size)
        .map(|_| {
            let center: Vec<f64> = (0..domain.dim())
                .map(|a| {
                    let s = domain.safe_interval(a);
                    s.lo + rng.random::<f64>() * s.width()
                })
                .collect();
            builtin::gaussian(domain, &center, width)
        })
        .collect()
}

/// Builds the annihilator basis of `pool` at `y` and compares both sides
/// of the curvature identity for `opts.n_directions` random direction
/// pairs and every basis function.
pub fn verify_curvature_theorem<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    pool: &[TestFunction],
    opts: &VerifyOptions,
) -> Result<CurvatureReport> {
    let basis = annihilator_basis(emb, y, pool)?;
    let mut report = verify_against(emb, y, &basis.functions, opts)?;
    report.annihilator_residual = basis.construction_residual;
    Ok(report)
}

/// Curvature comparison on caller-supplied functions, each of which must
/// satisfy the annihilator bound at `y`.
pub fn verify_against<E: Embedding + ?Sized>(
    emb: &E,
    y: &[f64],
    functions: &[TestFunction],
    opts: &VerifyOptions,
) -> Result<CurvatureReport> {
    check_y(emb, y)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let k = emb.chart().k();
    let jet = emb.jet(y, 2)?;
    let probe = Probe { jet: &jet };
    let mut annihilator_residual = 0.0_f64;
    for f in functions {
        probe.require_annihilator(f)?;
        annihilator_residual = annihilator_residual.max(norm(&probe.differential(f)) / f.norm());
    }

    let steps = opts
        .hessian_steps
        .clone()
        .unwrap_or_else(|| default_hessian_steps(emb));
    let refs: Vec<&TestFunction> = functions.iter().collect();
    let hessians = transform_hessians_fd(emb, &refs, y, &steps)?;
    let directions = random_directions(k, opts.n_directions, opts.seed);

    let per_direction: Vec<Vec<CurvatureRecord>> = directions
        .par_iter()
        .enumerate()
        .map(|(i, dp)| {
            let second = probe.flat_derivative(&dp.x, &dp.y);
            functions
                .iter()
                .zip(&hessians)
                .enumerate()
                .map(|(j, (f, h))| {
                    let sff = dot(second.weights(), f.values());
                    let hv = h.quadratic_form(&dp.x, &dp.y);
                    CurvatureRecord {
                        direction: i,
                        function: j,
                        sff_value: sff,
                        hessian_value: hv,
                        abs_residual: (sff - hv).abs(),
                        rel_residual: rel_err(sff, hv),
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<CurvatureRecord> = per_direction.into_iter().flatten().collect();
    let max_rel_residual = records.iter().fold(0.0_f64, |m, r| m.max(r.rel_residual));
    Ok(CurvatureReport {
        embedding: emb.descriptor(),
        grid: emb.domain().header(),
        y: y.to_vec(),
        tolerance: opts.tol,
        seed: opts.seed,
        second_derivatives: if emb.analytic_order() >= 2 {
            HessianMode::Analytic
        } else {
            HessianMode::FiniteDifference
        },
        hessian_steps: steps,
        annihilator_residual,
        directions,
        records,
        max_rel_residual,
        pass: max_rel_residual <= opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_grid, make_test_function, Interval, KernelOrder};
    use crate::embeddings::{circle_embedding, dirac_embedding, line_embedding, FamilyEmbedding};

    fn square(n: usize, half: f64) -> GridDomain {
        make_grid(2, &[Interval::new(-half, half)], &[n], 3).unwrap()
    }

    fn dirac() -> FamilyEmbedding {
        dirac_embedding(&square(64, 1.0), KernelOrder::Cubic).unwrap()
    }

    fn line() -> FamilyEmbedding {
        line_embedding(&square(128, 4.0), 256).unwrap()
    }

    fn quadratics(d: &GridDomain) -> Vec<TestFunction> {
        vec![
            make_test_function(d, |x| x[0] * x[0]),
            make_test_function(d, |x| x[1] * x[1]),
            make_test_function(d, |x| x[0] * x[1]),
        ]
    }

    #[test]
    fn differential_of_coordinate_function() {
        let e = dirac();
        let f = make_test_function(e.domain(), |x| x[0]);
        // The margin clip perturbs the spline near the boundary; the
        // perturbation decays geometrically towards the center.
        for y in [[0.0, 0.0], [0.21, -0.32], [-0.27, 0.3]] {
            let d = differential_of_transform(&e, &f, &y).unwrap();
            assert!((d[0] - 1.0).abs() < 1e-9 && d[1].abs() < 1e-9, "{d:?}");
        }
        let zero = TestFunction::zeros(e.domain());
        assert_eq!(differential_of_transform(&e, &zero, &[0.1, 0.2]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn radial_function_has_no_angular_derivative() {
        let l = line();
        let f = builtin::gaussian(l.domain(), &[0.0, 0.0], 1.0);
        let d = differential_of_transform(&l, &f, &[0.7, 0.4]).unwrap();
        assert!(d[0].abs() < 1e-6 * d[1].abs(), "{d:?}");
    }

    #[test]
    fn dirac_hessians_of_quadratics() {
        let e = dirac();
        let q = quadratics(e.domain());
        let want = [[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 2.0]], [[0.0, 1.0], [1.0, 0.0]]];
        for mode in [HessianMode::Analytic, HessianMode::FiniteDifference] {
            for (f, w) in q.iter().zip(&want) {
                let h = hessian_of_transform(&e, f, &[0.0, 0.0], mode).unwrap();
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((h.h[a][b] - w[a][b]).abs() < 1e-8, "{mode:?} {:?}", h.h);
                    }
                }
                assert!(h.asymmetry <= 1e-8 * h.max_abs());
            }
        }
    }

    #[test]
    fn line_hessian_of_gaussian_matches_closed_form() {
        // R f(θ, s) = √π e^{-s²}, so ∂²_s R f(θ, 0) = -2√π.
        let l = line();
        let f = builtin::gaussian(l.domain(), &[0.0, 0.0], 1.0);
        let want = -2.0 * std::f64::consts::PI.sqrt();
        for mode in [HessianMode::Analytic, HessianMode::FiniteDifference] {
            let h = hessian_of_transform(&l, &f, &[0.9, 0.0], mode).unwrap();
            assert!(rel_err(h.h[1][1], want) < 1e-3, "{mode:?} {:?}", h.h);
        }
    }

    #[test]
    fn hessian_paths_agree_and_fd_is_symmetric() {
        let l = line();
        let f = builtin::gaussian(l.domain(), &[0.5, -0.8], 0.9);
        let y = l.chart().from_unit(&[0.23, 0.61]);
        let a = hessian_of_transform(&l, &f, &y, HessianMode::Analytic).unwrap();
        let d = hessian_of_transform(&l, &f, &y, HessianMode::FiniteDifference).unwrap();
        assert!(d.asymmetry <= 1e-8 * d.max_abs());
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.h[i][j] - d.h[i][j]).abs() < 1e-9 * a.max_abs());
            }
        }
    }

    #[test]
    fn annihilator_of_centered_quadratics_and_bump() {
        let e = dirac();
        let mut pool = quadratics(e.domain());
        pool.push(builtin::bump(e.domain(), &[0.0, 0.0], 0.5));
        let b = annihilator_basis(&e, &[0.0, 0.0], &pool).unwrap();
        assert_eq!(b.functions.len(), 4);
        assert!(b.construction_residual <= ANNIHILATOR_ETA);
    }

    #[test]
    fn annihilator_excludes_linear_function() {
        let e = dirac();
        let d = e.domain();
        let x1 = make_test_function(d, |x| x[0]);
        let x1sq = make_test_function(d, |x| x[0] * x[0]);
        let b = annihilator_basis(&e, &[0.0, 0.0], &[x1, x1sq.clone()]).unwrap();
        assert_eq!(b.functions.len(), 1);
        let c = &b.coefficients[0];
        assert!(c[0].abs() < 1e-9 * c[1].abs(), "{c:?}");
        // The basis function is a multiple of x₁².
        let f = &b.functions[0];
        let scale = c[1];
        for (v, w) in f.values().iter().zip(x1sq.values()) {
            assert!((v - scale * w).abs() < 1e-12);
        }
    }

    #[test]
    fn line_annihilator_from_bump_pool() {
        let l = line();
        let pool = bump_pool(l.domain(), 12, 11);
        let y = l.chart().from_unit(&[0.4, 0.35]);
        let b = annihilator_basis(&l, &y, &pool).unwrap();
        assert!(b.functions.len() >= 10);
        for f in &b.functions {
            let d = differential_of_transform(&l, f, &y).unwrap();
            assert!(norm(&d) <= 1e-9 * f.norm());
        }
        assert_eq!(b.coefficients.len(), b.functions.len());
        assert!(b.coefficients.iter().all(|c| c.len() == 12));
    }

    #[test]
    fn annihilator_rejects_empty_and_dependent_pools() {
        let e = dirac();
        assert!(matches!(annihilator_basis(&e, &[0.0, 0.0], &[]), Err(Error::PoolTooSmall(_))));
        let f = make_test_function(e.domain(), |x| x[0] * x[0]);
        let pool = vec![f.clone(), f];
        assert!(matches!(
            annihilator_basis(&e, &[0.0, 0.0], &pool),
            Err(Error::PoolTooSmall(_))
        ));
        let x1 = make_test_function(e.domain(), |x| x[0]);
        assert!(matches!(
            annihilator_basis(&e, &[0.0, 0.0], &[x1]),
            Err(Error::EmptyNullspace)
        ));
    }

    #[test]
    fn sff_examples() {
        let e = dirac();
        let f = make_test_function(e.domain(), |x| x[0] * x[0]);
        let y = [0.0, 0.0];
        let v = sff_pairing(&e, &y, &[1.0, 0.0], &[1.0, 0.0], &f).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
        assert_eq!(sff_pairing(&e, &y, &[0.0, 0.0], &[0.3, 0.4], &f).unwrap(), 0.0);
        let (x, z) = ([0.6, -0.8], [0.28, 0.96]);
        let xy = sff_pairing(&e, &y, &x, &z, &f).unwrap();
        let yx = sff_pairing(&e, &y, &z, &x, &f).unwrap();
        assert_eq!(xy, yx);
    }

    #[test]
    fn sff_requires_annihilator() {
        let e = dirac();
        let f = make_test_function(e.domain(), |x| x[0]);
        match sff_pairing(&e, &[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &f) {
            Err(Error::AnnihilatorViolated { measured, bound }) => {
                assert!(measured > bound);
                assert!((measured - f.norm() * 0.0 - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flow_identity_for_constant_and_linear_fields() {
        for e in [dirac(), circle_embedding(&square(64, 1.0), 0.3, 128).unwrap()] {
            let y = e.chart().from_unit(&[0.37, 0.58]);
            let pool = bump_pool(e.domain(), 12, 5);
            let b = annihilator_basis(&e, &y, &pool).unwrap();
            let x = [0.6, 0.8];
            let c = [-0.28, 0.96];
            let step = default_flow_step(&e);
            let constant = flat_covariant_derivative(&e, &y, &x, |_| c.to_vec(), step).unwrap();
            // Y(u) = u₁ e₂; at y the field is (0, y₁) and DY·X = (0, X₁).
            let linear =
                flat_covariant_derivative(&e, &y, &x, |u| vec![0.0, u[0]], step).unwrap();
            for f in &b.functions {
                let s = sff_pairing(&e, &y, &x, &c, f).unwrap();
                assert!(rel_err(pair(&constant, f).unwrap(), s) <= 1e-8);
                let s = sff_pairing(&e, &y, &x, &[0.0, y[0]], f).unwrap();
                let tangential = differential_of_transform(&e, f, &y).unwrap()[1] * x[0];
                let got = pair(&linear, f).unwrap();
                assert!((got - s - tangential).abs() <= 1e-8 * (s.abs() + 1e-12), "{got} {s}");
            }
        }
    }

    #[test]
    fn zero_field_has_zero_derivative() {
        let e = dirac();
        let v = flat_covariant_derivative(&e, &[0.1, 0.1], &[1.0, 0.0], |_| vec![0.0, 0.0], 1e-6)
            .unwrap();
        assert!(v.weights().iter().all(|w| *w == 0.0));
        assert!(flat_covariant_derivative(&e, &[0.1, 0.1], &[1.0, 0.0], |_| vec![0.0], 1e-6).is_err());
    }

    #[test]
    fn dirac_quadratics_verify_tightly() {
        let e = dirac();
        let opts = VerifyOptions {
            tol: 1e-8,
            ..VerifyOptions::default()
        };
        let r = verify_curvature_theorem(&e, &[0.0, 0.0], &quadratics(e.domain()), &opts).unwrap();
        assert!(r.pass, "{}", r.max_rel_residual);
        assert_eq!(r.records.len(), 30);
        assert_eq!(r.second_derivatives, HessianMode::Analytic);
    }

    #[test]
    fn injected_non_annihilator_is_rejected() {
        let e = dirac();
        let mut fs = quadratics(e.domain());
        fs.push(make_test_function(e.domain(), |x| x[0] + x[1]));
        let err = verify_against(&e, &[0.0, 0.0], &fs, &VerifyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::AnnihilatorViolated { .. }));
    }

    #[test]
    fn directions_are_unit_and_reproducible() {
        let a = random_directions(3, 20, 42);
        assert_eq!(a, random_directions(3, 20, 42));
        assert_ne!(a, random_directions(3, 20, 43));
        for p in &a {
            assert!((norm(&p.x) - 1.0).abs() < 1e-14 && (norm(&p.y) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_representative_is_orthogonal_to_tangents() {
        let l = line();
        let y = [1.1, 0.8];
        let jet = l.jet(&y, 2).unwrap();
        let n = normal_representative(&l, &y, jet.second(0, 0)).unwrap();
        for t in &jet.first {
            let scale = norm(t.weights()) * n.norm();
            assert!(dot(t.weights(), n.weights()).abs() <= 1e-10 * scale);
        }
    }
}
