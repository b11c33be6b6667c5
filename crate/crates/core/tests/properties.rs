use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

use radcurv::curvature::{bump_pool, hessian_of_transform, verify_against, HessianMode, ANNIHILATOR_ETA};
use radcurv::domain::builtin;
use radcurv::embeddings::{numeric_rank, FdSteps, FirstDerivativesOnly};
use radcurv::fd::{rel_err, OrderCheck};
use radcurv::transform::{kernel_diagnostics, operator_matrix, radon_forward, sample_grid};
use radcurv::{
    annihilator_basis, circle_embedding, differential_of_transform, dirac_embedding, eval_functional,
    fd_second, fd_tangent, line_embedding, make_grid, make_test_function, pair, DistributionVector,
    Embedding, GridDomain, Interval, KernelOrder, TestFunction, VerifyOptions,
};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(20),
        failure_persistence: None,
        ..Config::default()
    }
}

fn square(n: usize, half: f64) -> GridDomain {
    make_grid(2, &[Interval::new(-half, half)], &[n], 3).unwrap()
}

/// Point of the safe box from unit coordinates.
fn safe_point(d: &GridDomain, u: &[f64]) -> Vec<f64> {
    (0..d.dim())
        .map(|a| {
            let s = d.safe_interval(a);
            s.lo + u[a] * s.width()
        })
        .collect()
}

fn families() -> Vec<(&'static str, Box<dyn Embedding>)> {
    let d = square(32, 1.0);
    vec![
        ("dirac", Box::new(dirac_embedding(&d, KernelOrder::Cubic).unwrap())),
        ("line", Box::new(line_embedding(&square(48, 3.0), 128).unwrap())),
        ("circle", Box::new(circle_embedding(&d, 0.3, 96).unwrap())),
    ]
}

fn unit2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1..0.9_f64, 2)
}

fn smooth_f(d: &GridDomain) -> TestFunction {
    builtin::gaussian(d, &d.center(), 0.2 * d.extent()[0].width())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn pairing_is_bilinear(
        w1 in prop::collection::vec(-1.0..1.0_f64, 144),
        w2 in prop::collection::vec(-1.0..1.0_f64, 144),
        alpha in -3.0..3.0_f64,
        beta in -3.0..3.0_f64,
    ) {
        let d = make_grid(2, &[Interval::new(0.0, 1.0)], &[12], 3).unwrap();
        let f = make_test_function(&d, |x| (5.0 * x[0]).sin() + x[1]);
        let (a, b) = (DistributionVector::new(w1).unwrap(), DistributionVector::new(w2).unwrap());
        let mut combo = a.scaled(alpha);
        combo.axpy(beta, &b);
        let lhs = pair(&combo, &f).unwrap();
        let rhs = alpha * pair(&a, &f).unwrap() + beta * pair(&b, &f).unwrap();
        prop_assert!(rel_err(lhs, rhs) <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn affine_functions_are_reproduced(u in unit2(), c in prop::collection::vec(-2.0..2.0_f64, 3)) {
        let d = square(20, 1.5);
        let p = safe_point(&d, &u);
        let w = eval_functional(&d, &p, KernelOrder::Cubic).unwrap();
        // Test functions vanish on the margin, so sum over the raw nodes.
        let got: f64 = d
            .node_coords()
            .iter()
            .zip(w.weights())
            .map(|(x, wi)| wi * (c[0] + c[1] * x[0] + c[2] * x[1]))
            .sum();
        prop_assert!((got - (c[0] + c[1] * p[0] + c[2] * p[1])).abs() <= 1e-12, "{got}");
    }

    #[test]
    fn transport_is_linear_in_f(u in unit2(), alpha in -3.0..3.0_f64, beta in -3.0..3.0_f64) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let d = e.domain();
            let f = smooth_f(d);
            let g = builtin::two_bumps(d, &d.center(), 0.2 * d.extent()[0].width(), 0.15 * d.extent()[0].width());
            let fg = TestFunction::linear_combination(&[alpha, beta], &[&f, &g]).unwrap();
            let s = e.sigma(&y).unwrap();
            let lhs = pair(&s, &fg).unwrap();
            let rhs = alpha * pair(&s, &f).unwrap() + beta * pair(&s, &g).unwrap();
            prop_assert!(rel_err(lhs, rhs) <= 1e-12, "{name}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn radon_forward_is_linear(alpha in -3.0..3.0_f64, beta in -3.0..3.0_f64) {
        let d = square(32, 1.0);
        let e = circle_embedding(&d, 0.3, 96).unwrap();
        let samples = sample_grid(e.chart().bounds(), e.chart().periodic(), &[5, 5]).unwrap();
        let f = smooth_f(&d);
        let g = make_test_function(&d, |x| x[0] * x[1]);
        let fg = TestFunction::linear_combination(&[alpha, beta], &[&f, &g]).unwrap();
        let rf = radon_forward(&e, &f, &samples).unwrap().values;
        let rg = radon_forward(&e, &g, &samples).unwrap().values;
        let rfg = radon_forward(&e, &fg, &samples).unwrap().values;
        for ((a, b), c) in rf.iter().zip(&rg).zip(&rfg) {
            prop_assert!(rel_err(*c, alpha * a + beta * b) <= 1e-12);
        }
    }

    #[test]
    fn matrix_rows_reproduce_the_transform_exactly(u in unit2()) {
        let d = square(24, 2.0);
        let e = line_embedding(&d, 96).unwrap();
        let samples: Vec<Vec<f64>> = (0..4)
            .map(|i| e.chart().from_unit(&[u[0], (u[1] + 0.2 * i as f64) % 1.0]))
            .collect();
        let f = smooth_f(&d);
        let a = operator_matrix(&e, &samples).unwrap();
        prop_assert_eq!(a.apply(&f).unwrap(), radon_forward(&e, &f, &samples).unwrap().values);
    }

    #[test]
    fn line_chart_identifies_antipodal_parameters(u in unit2()) {
        let d = square(48, 3.0);
        let e = line_embedding(&d, 128).unwrap();
        let y = e.chart().from_unit(&u);
        let f = builtin::gaussian(&d, &[0.3, -0.2], 0.8);
        let a = pair(&e.sigma(&[y[0] + std::f64::consts::PI, y[1]]).unwrap(), &f).unwrap();
        let b = pair(&e.sigma(&[y[0], -y[1]]).unwrap(), &f).unwrap();
        prop_assert!(rel_err(a, b) <= 1e-8, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn weights_sum_to_one(u in unit2()) {
        let d = square(16, 1.0);
        let p = safe_point(&d, &u);
        for order in [KernelOrder::Linear, KernelOrder::Cubic] {
            let w = eval_functional(&d, &p, order).unwrap();
            prop_assert!((w.sum() - 1.0).abs() <= 1e-12, "{order:?}: {}", w.sum());
        }
    }
}

proptest! {
    #![proptest_config(config(20))]

    #[test]
    fn shipped_families_are_immersions(u in unit2()) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let frame = fd_tangent(e.as_ref(), &y).unwrap();
            prop_assert_eq!(numeric_rank(&frame.singular_values, 1e-8), 2, "{}", name);
        }
    }

    /// Analytic first derivatives against central differences of σ,
    /// paired with a smooth function, as the step halves.
    #[test]
    fn first_derivatives_converge_at_second_order(u in unit2(), axis in 0..2_usize) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let f = smooth_f(e.domain());
            let exact = pair(&e.d_sigma(&y, axis).unwrap(), &f).unwrap();
            let h = 1e-4 * e.chart().width(axis);
            let quotient = |h: f64| {
                let mut p = y.clone();
                let mut m = y.clone();
                p[axis] += h;
                m[axis] -= h;
                (pair(&e.sigma(&p).unwrap(), &f).unwrap() - pair(&e.sigma(&m).unwrap(), &f).unwrap()) / (2.0 * h)
            };
            let scale = exact.abs().max(pair(&e.sigma(&y).unwrap(), &f).unwrap().abs());
            let check = OrderCheck::new(
                (quotient(h) - exact).abs(),
                (quotient(h / 2.0) - exact).abs(),
                1e-10 * scale,
            );
            prop_assert!(check.passes(1.8), "{name} axis {axis}: {check:?}");
        }
    }

    /// Analytic second derivatives against central differences of the
    /// analytic first derivatives.
    #[test]
    fn second_derivatives_converge_at_second_order(u in unit2()) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let f = smooth_f(e.domain());
            let with_step = |scale: f64| {
                let mut steps = FdSteps::for_chart(e.chart());
                steps.second_extended = (0..2).map(|a| scale * e.chart().width(a)).collect();
                steps
            };
            for (a, b) in [(0, 0), (0, 1), (1, 1)] {
                let exact = pair(&e.d2_sigma(&y, a, b).unwrap(), &f).unwrap();
                let fd = |scale: f64| {
                    let steps = with_step(scale);
                    let stepped = Stepped(e.as_ref(), steps);
                    pair(&fd_second(&FirstDerivativesOnly(&stepped), &y, a, b).unwrap(), &f).unwrap()
                };
                let scale = exact.abs().max(1e-3);
                let check = OrderCheck::new((fd(1e-5) - exact).abs(), (fd(5e-6) - exact).abs(), 1e-11 * scale);
                prop_assert!(check.passes(1.8), "{name} ({a},{b}): {check:?}");
            }
        }
    }

    #[test]
    fn hessians_are_symmetric_before_symmetrisation(u in unit2()) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let f = smooth_f(e.domain());
            for mode in [HessianMode::Analytic, HessianMode::FiniteDifference] {
                let h = hessian_of_transform(e.as_ref(), &f, &y, mode).unwrap();
                prop_assert!(h.asymmetry <= 1e-8 * h.max_abs(), "{name} {mode:?}: {}", h.asymmetry);
            }
        }
    }

    #[test]
    fn annihilator_members_satisfy_the_bound(u in unit2(), seed in 0..1000_u64) {
        for (name, e) in families() {
            let y = e.chart().from_unit(&u);
            let pool = bump_pool(e.domain(), 8, seed);
            let basis = annihilator_basis(e.as_ref(), &y, &pool).unwrap();
            for f in &basis.functions {
                let dr = differential_of_transform(e.as_ref(), f, &y).unwrap();
                let norm = dr.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(norm <= ANNIHILATOR_ETA * f.norm(), "{name}: {norm}");
            }
            // Independence: the coefficient rows have full rank.
            let p = basis.coefficients.len();
            let m = nalgebra::DMatrix::from_fn(p, pool.len(), |i, j| basis.coefficients[i][j]);
            let sv: Vec<f64> = m.singular_values().iter().copied().collect();
            let mut sv = sv;
            sv.sort_by(|a, b| b.total_cmp(a));
            prop_assert_eq!(numeric_rank(&sv, 1e-10), p, "{}", name);

            let opts = VerifyOptions { n_directions: 3, tol: 1e-6, seed, hessian_steps: None };
            let r = verify_against(e.as_ref(), &y, &basis.functions, &opts).unwrap();
            prop_assert_eq!(r.pass, r.max_rel_residual <= r.tolerance);
        }
    }

    #[test]
    fn adding_samples_never_lowers_rank(n_theta in 1..6_usize, n_s in 2..8_usize) {
        let d = square(16, 1.0);
        let e = line_embedding(&d, 96).unwrap();
        let c = e.chart();
        let base = sample_grid(c.bounds(), c.periodic(), &[n_theta, n_s]).unwrap();
        let extra = sample_grid(c.bounds(), c.periodic(), &[n_theta + 1, n_s + 1]).unwrap();
        let mut more = base.clone();
        more.extend(extra);
        let r0 = kernel_diagnostics(&operator_matrix(&e, &base).unwrap(), &d, 1e-10).unwrap();
        let r1 = kernel_diagnostics(&operator_matrix(&e, &more).unwrap(), &d, 1e-10).unwrap();
        prop_assert!(r1.rank >= r0.rank, "{} < {}", r1.rank, r0.rank);
        prop_assert!(r0.rank <= r0.n_rows.min(r0.n_cols));
    }
}

/// Second differences of the cubic point-evaluation weights against the
/// analytic second derivative. The weights are piecewise cubic in the
/// point with a jump in the third derivative at knots: stencils inside one
/// cell are exact up to rounding, stencils straddling a knot converge at
/// first order. Both mean the second derivative is continuous (C²).
#[test]
fn cubic_weights_have_continuous_second_derivatives() {
    let d = square(24, 1.0);
    let e = dirac_embedding(&d, KernelOrder::Cubic).unwrap();
    let spacing = d.spacing()[0];
    let lo = d.extent()[0].lo;
    let weights = |x: f64, y: f64| e.sigma(&[x, y]).unwrap();
    let second_difference = |x: f64, y: f64, h: f64| {
        let (p, c, m) = (weights(x + h, y), weights(x, y), weights(x - h, y));
        let mut out = p.scaled(1.0 / (h * h));
        out.axpy(-2.0 / (h * h), &c);
        out.axpy(1.0 / (h * h), &m);
        out
    };
    let max_diff = |a: &DistributionVector, b: &DistributionVector| {
        a.weights().iter().zip(b.weights()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let mut straddling = 0;
    for i in 0..200 {
        let t = (i as f64 + 0.5) / 200.0;
        let x = -0.6 + 1.2 * t;
        let y = 0.1;
        let exact = e.d2_sigma(&[x, y], 0, 0).unwrap();
        let scale = exact.weights().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let h = 0.02 * spacing;
        let cell = |v: f64| ((v - lo) / spacing).floor();
        let err_h = max_diff(&second_difference(x, y, h), &exact);
        let err_half = max_diff(&second_difference(x, y, h / 2.0), &exact);
        if cell(x - h) == cell(x + h) {
            assert!(err_h <= 1e-6 * scale && err_half <= 1e-6 * scale, "x = {x}: {err_h} {err_half}");
        } else {
            straddling += 1;
            // Third-derivative jump times h, never O(1).
            assert!(err_h <= 10.0 * h / spacing * scale, "x = {x}: {err_h}");
            assert!(err_half <= err_h, "x = {x}: {err_half} > {err_h}");
        }
    }
    assert!(straddling > 0);
}

/// A family with caller-chosen finite-difference steps.
struct Stepped<'a>(&'a dyn Embedding, FdSteps);

impl Embedding for Stepped<'_> {
    fn domain(&self) -> &GridDomain {
        self.0.domain()
    }
    fn chart(&self) -> &radcurv::Chart {
        self.0.chart()
    }
    fn fd_steps(&self) -> &FdSteps {
        &self.1
    }
    fn sigma(&self, y: &[f64]) -> radcurv::Result<DistributionVector> {
        self.0.sigma(y)
    }
    fn analytic_order(&self) -> u8 {
        self.0.analytic_order()
    }
    fn d_sigma(&self, y: &[f64], axis: usize) -> radcurv::Result<DistributionVector> {
        self.0.d_sigma(y, axis)
    }
    fn d2_sigma(&self, y: &[f64], a: usize, b: usize) -> radcurv::Result<DistributionVector> {
        self.0.d2_sigma(y, a, b)
    }
    fn extended_tangent(&self) -> Option<radcurv::embeddings::ExtendedTangent<'_>> {
        self.0.extended_tangent()
    }
}
