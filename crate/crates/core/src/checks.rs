//! Named property checks. The worked problems have one suite each (`ex1` ..
//! `ex11`), each module a suite of its invariants, and [`acceptance`]
//! runs the twelve release criteria. Randomized checks draw from a ChaCha
//! stream seeded by the caller, so a seed fixes every number printed.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eom::{
    acceleration, assemble, el_residual, geodesic_rhs, Gauge, GaugeChoice, GaugeTarget,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fictitious::{
    angular_momentum, circular_speed, drift_rates, integrate_siv, Composed, PointSource, SivConfig,
    SuperposedField, Transform,
};
use crate::integrate::{
    hausdorff_distance, integrate, integrate_ode, IntegratorConfig, State, Trajectory,
};
use crate::jets::{seed_all, Scalar};
use crate::lagrangian::{
    even_odd_split, eval_f64, extract_em_and_metric, hamiltonian, homogeneity_order,
    induced_metric_from_a, CanonicalTerm, Contracted, Extracted, Lagrangian, LagrangianSpec,
    PolynomialCovector,
};
use crate::oracle;
use crate::snradial::{blowup_exponent, linear_fit, log_spaced_states, PhiTerm, RadialState, SnRadialSystem};
use crate::tensors::{multi_indices, SymTensorField};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `measured >= bound`.
    pub fn at_least(name: &str, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured >= bound,
            measured,
            tolerance: bound,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {err}"),
        }
    }

    fn and(mut self, other: bool, why: &str) -> Self {
        if !other {
            self.passed = false;
            self.detail = format!("{}; {why}", self.detail);
        }
        self
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} measured {:>11.3e}  bound {:>9.1e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn guard(name: &str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::failed(name, &e))
}

/// Suite names accepted by [`run_suite`], besides `all` and `acceptance`.
pub const SUITES: &[&str] = &[
    "ex1", "ex2", "ex3", "ex4", "ex5", "ex6", "ex7", "ex8", "ex9", "ex10", "ex11", "jets", "exprdsl",
    "tensors", "lagrangian", "eom", "integrators", "snradial", "fictitious", "oracle",
];

/// Runs one suite, `all` suites, or the `acceptance` criteria.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    Ok(match name {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            out
        }
        "acceptance" => acceptance(seed),
        "ex1" => vec![ex1_equivalence()],
        "ex2" => vec![ex2_polynomial_hamiltonian(rng), ex2_first_order_hamiltonian(rng)],
        "ex3" => vec![ex3_conserved_lagrangian()],
        "ex4" => vec![ex4_composed_residual()],
        "ex5" => vec![ex5_coordinate_time()],
        "ex6" => vec![ex6_singular_hessian(rng)],
        "ex7" => vec![ex7_multiplier()],
        "ex8" => vec![ex8_radial_conservation()],
        "ex9" => vec![ex9_gauge_difference()],
        "ex10" => vec![ex10_induced_metric()],
        "ex11" => vec![ex11_extraction_exact(), ex11_contamination_order()],
        "jets" => vec![jets_finite_differences(rng)],
        "exprdsl" => vec![exprdsl_round_trip()],
        "tensors" => vec![tensors_symmetry(rng)],
        "lagrangian" => vec![lagrangian_homogeneity(rng), lagrangian_split(rng)],
        "eom" => vec![eom_orbit_matches_geodesic()],
        "integrators" => vec![integrators_reparametrization()],
        "snradial" => vec![snradial_blow_up(), snradial_zero_acceleration()],
        "fictitious" => vec![fictitious_siv_drift()],
        "oracle" => vec![oracle_agreement()],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite `{other}`; expected all, acceptance or one of {}",
                SUITES.join(", ")
            )))
        }
    })
}

/// The twelve release criteria, in order.
pub fn acceptance(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c2 = {
        let a = ex2_polynomial_hamiltonian(&mut rng);
        let b = ex2_first_order_hamiltonian(&mut rng);
        let detail = format!("{}; first order: {:.2e} <= 1e-12", a.detail, b.measured);
        let ok = b.passed;
        a.and(ok, "first-order |h|/|L| too large").renamed(detail)
    };
    let c6 = ex8_radial_conservation();
    let c7 = snradial_blow_up();
    vec![
        ex1_equivalence().labelled("1 equivalence"),
        c2.labelled("2 hamiltonian"),
        ex6_singular_hessian(&mut rng).labelled("3 singular hessian"),
        integrators_reparametrization().labelled("4 reparametrization"),
        ex7_multiplier().labelled("5 multiplier"),
        c6.labelled("6 radial conservation"),
        c7.labelled("7 blow-up scaling"),
        snradial_zero_acceleration().labelled("8 zero acceleration"),
        fictitious_siv_drift().labelled("9 siv drift"),
        oracle_agreement().labelled("10 oracle"),
        ex10_induced_metric().labelled("11 induced metric"),
        ex11_extraction_exact().labelled("12 extraction"),
    ]
}

impl CheckResult {
    fn labelled(mut self, label: &str) -> Self {
        self.name = label.into();
        self
    }

    fn renamed(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}

fn expr(text: &str) -> Expr {
    Expr::parse(text).expect("built-in expression")
}

fn quadratic(g: SymTensorField) -> LagrangianSpec {
    LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, g)], None).expect("single term")
}

fn max_rel_drift(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else { return 0.0 };
    it.map(|v| ((v - first) / first).abs()).fold(0.0, f64::max)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// `diag(1 - 2 Phi, -(1 + 2 Phi) I)` in 4D with `Phi = -0.01/r`.
pub fn weak_field_metric() -> SymTensorField {
    SymTensorField::diagonal(&[
        expr("1 + 0.02/r"),
        expr("-(1 - 0.02/r)"),
        expr("-(1 - 0.02/r)"),
        expr("-(1 - 0.02/r)"),
    ])
    .expect("metric")
}

/// Start at `r = 1` moving tangentially with spatial speed 0.1 and
/// `g(v, v) = 1`.
pub fn weak_field_start() -> State {
    let (g00, gss): (f64, f64) = (1.02, -(1.0 - 0.02));
    let vy: f64 = 0.1;
    let v0 = ((1.0 - gss * vy * vy) / g00).sqrt();
    State::new(0.0, vec![0.0, 1.0, 0.0, 0.0], vec![v0, 0.0, vy, 0.0])
}

fn tight() -> IntegratorConfig {
    IntegratorConfig::default().tolerances(1e-11, 1e-13)
}

fn run<L: Lagrangian>(lag: &L, gauge: &Gauge, s0: &State, span: (f64, f64), cfg: &IntegratorConfig) -> Result<Trajectory> {
    integrate(lag, gauge, s0, span, cfg, &[]).map_err(|f| f.error)
}

/// First-order, quadratic and geodesic trajectories agree pairwise.
pub fn ex1_equivalence() -> CheckResult {
    let name = "ex1 equivalence";
    guard(name, || {
        let g = weak_field_metric();
        let s0 = weak_field_start();
        let cfg = tight();
        let l1 = LagrangianSpec::metric(1.0, g.clone())?;
        let t1 = run(&l1, &Gauge::new(GaugeChoice::MetricNormConst(g.clone())), &s0, (0.0, 10.0), &cfg)?;
        let l2 = quadratic(g.clone());
        let t2 = run(&l2, &Gauge::affine(), &s0, (0.0, 10.0), &cfg)?;
        let geo = integrate_ode(
            |_, y: &[f64]| {
                let mut out = y[4..].to_vec();
                out.extend(geodesic_rhs(&g, &y[..4], &y[4..])?);
                Ok(out)
            },
            |_, _| Ok(()),
            0.0,
            &[s0.x.clone(), s0.v.clone()].concat(),
            10.0,
            &cfg,
            &[],
        )
        .map_err(|f| f.error)?;
        let mut worst: f64 = 0.0;
        for k in 0..=200 {
            let tau = 0.05 * k as f64;
            let (a, b) = (t1.position(tau), t2.position(tau));
            let c = geo.interpolate(tau).0[..4].to_vec();
            worst = worst.max(dist(&a, &b)).max(dist(&a, &c)).max(dist(&b, &c));
        }
        let norm_drift = max_rel_drift(t2.diagnostics.iter().map(|d| d.lagrangian));
        Ok(CheckResult::at_most(
            name,
            worst,
            1e-6,
            format!("max pairwise x-distance over tau in [0, 10]; g(v,v) drift along L2 {norm_drift:.1e}"),
        ))
    })
}

/// Random rank-`rank` tensor with a dominant time component.
fn random_tensor(rng: &mut ChaCha8Rng, rank: usize, dim: usize) -> SymTensorField {
    let mut s = SymTensorField::new(rank, dim).expect("rank and dim");
    for idx in multi_indices(dim, rank) {
        let c = if idx.iter().all(|&i| i == 0) {
            rng.random_range(1.5..2.5)
        } else {
            rng.random_range(-0.05..0.05)
        };
        s.set(&idx, Expr::Num(c)).expect("index");
    }
    s
}

fn random_timelike(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v = vec![rng.random_range(1.0..1.5)];
    v.extend((1..dim).map(|_| rng.random_range(-0.3..0.3)));
    v
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `h = (n - 1) L` for single polynomial terms of order 1..4.
pub fn ex2_polynomial_hamiltonian(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "ex2 h = (n-1) L";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for n in 1..=4 {
            let lag = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, random_tensor(rng, n, 4))], None)?;
            for _ in 0..100 {
                let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
                let l = eval_f64(&lag, &x, &v)?;
                let h = hamiltonian(&lag, &x, &v)?;
                worst = worst.max((h - (n as f64 - 1.0) * l).abs() / l.abs());
            }
        }
        Ok(CheckResult::at_most(name, worst, 1e-10, "max |h - (n-1)L|/|L|, n = 1..4, 100 states each"))
    })
}

/// `h = 0` for rooted canonical Lagrangians.
pub fn ex2_first_order_hamiltonian(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "ex2 h = 0 first order";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for n in 1..=4 {
            let lag = LagrangianSpec::new(vec![CanonicalTerm::new(1.0, random_tensor(rng, n, 4))], None)?;
            for _ in 0..100 {
                let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
                let l = eval_f64(&lag, &x, &v)?;
                worst = worst.max(hamiltonian(&lag, &x, &v)?.abs() / l.abs());
            }
        }
        Ok(CheckResult::at_most(name, worst, 1e-12, "max |h|/|L| for rooted terms, n = 1..4"))
    })
}

/// Homogeneous autonomous `L` of order `n != 1` is conserved.
pub fn ex3_conserved_lagrangian() -> CheckResult {
    let name = "ex3 L conserved";
    guard(name, || {
        let l2 = quadratic(weak_field_metric());
        let t2 = run(&l2, &Gauge::affine(), &weak_field_start(), (0.0, 10.0), &IntegratorConfig::default())?;
        let radial = SnRadialSystem::parse(3, "1 + 0.1*r", "1", &Default::default())?.lagrangian();
        let s0 = State::new(0.0, vec![0.0, 1.0], vec![1.0, 0.5]);
        let t3 = run(&radial, &Gauge::affine(), &s0, (0.0, 10.0), &IntegratorConfig::default())?;
        let drift = max_rel_drift(t2.diagnostics.iter().map(|d| d.lagrangian))
            .max(max_rel_drift(t3.diagnostics.iter().map(|d| d.lagrangian)));
        Ok(CheckResult::at_most(name, drift, 1e-8, "relative drift of L for g(v,v) and S3 over tau-span 10"))
    })
}

/// Solutions with constant `L` solve the equations of `sqrt(L)` and `L^2`.
pub fn ex4_composed_residual() -> CheckResult {
    let name = "ex4 f(L) solutions";
    guard(name, || {
        let l2 = quadratic(weak_field_metric());
        let tr = run(&l2, &Gauge::affine(), &weak_field_start(), (0.0, 10.0), &IntegratorConfig::default())?;
        let mut worst: f64 = 0.0;
        for f in [Transform::Sqrt, Transform::Square] {
            let composed = Composed { inner: &l2, f };
            for k in 0..tr.len() {
                let s = tr.state(k);
                let r = el_residual(&composed, s.tau, &s.x, &s.v, tr.acceleration(k))?;
                worst = worst.max(r.amax());
            }
        }
        Ok(CheckResult::at_most(name, worst, 1e-8, "max Euler-Lagrange residual of sqrt(L), L^2 along the L trajectory"))
    })
}

/// The homogeneous extension of a coordinate-time Lagrangian reproduces
/// its motion in an arbitrary parametrization.
pub fn ex5_coordinate_time() -> CheckResult {
    let name = "ex5 coordinate time";
    guard(name, || {
        // harmonic oscillator L = xdot^2/2 - x^2/2 extended to v0 L(x, v1/v0)
        let lag = LagrangianSpec::with_dim(2, vec![], Some(expr("0.5*v1^2/v0 - 0.5*x1^2*v0")))?;
        let schedule = |tau: f64| (1.0 + 0.3 * tau.sin(), 0.3 * tau.cos());
        let gauge = Gauge::new(GaugeChoice::CoordinateTime).with_target(GaugeTarget::Schedule(Arc::new(schedule)));
        let s0 = State::new(0.0, vec![0.0, 1.0], vec![1.0, 0.0]);
        let tr = run(&lag, &gauge, &s0, (0.0, 10.0), &tight())?;
        let mut worst: f64 = 0.0;
        for s in tr.states() {
            worst = worst.max((s.x[1] - s.x[0].cos()).abs());
        }
        // p0 = -h of the coordinate-time Lagrangian, a constant
        let p0_drift = max_rel_drift(tr.diagnostics.iter().map(|d| d.momentum[0]));
        Ok(CheckResult::at_most(
            name,
            worst,
            1e-6,
            format!("max |x(t) - cos t| with v0 = 1 + 0.3 sin tau; p0 drift {p0_drift:.1e}"),
        )
        .and(p0_drift <= 1e-8, "p0 not conserved"))
    })
}

/// `M v = 0` and a vanishing singular value for first-order `L`.
pub fn ex6_singular_hessian(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "ex6 singular hessian";
    guard(name, || {
        let (mut mv, mut sv): (f64, f64) = (0.0, 0.0);
        for _ in 0..50 {
            let mut metric = random_tensor(rng, 2, 4);
            for i in 1..4 {
                metric.set(&[i, i], Expr::Num(-rng.random_range(0.8..1.2)))?;
            }
            let lag = LagrangianSpec::new(
                vec![
                    CanonicalTerm::new(rng.random_range(-1.0..1.0), random_tensor(rng, 1, 4)),
                    CanonicalTerm::new(rng.random_range(0.5..2.0), metric),
                    CanonicalTerm::new(rng.random_range(-0.2..0.2), random_tensor(rng, 3, 4)),
                ],
                None,
            )?;
            let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
            let m = assemble(&lag, 0.0, &x, &v)?.mass_matrix;
            let vv = DVector::from_column_slice(&v);
            mv = mv.max((&m * &vv).norm() / (m.norm() * vv.norm()));
            let s = m.singular_values();
            sv = sv.max(s.min() / s.max());
        }
        let measured = mv.max(sv);
        Ok(CheckResult::at_most(
            name,
            measured,
            1e-10,
            format!("50 random Lagrangians: max |Mv|/(|M||v|) {mv:.1e}, max sigma_min/sigma_max {sv:.1e}"),
        ))
    })
}

/// `chi = -m/2` makes the quadratic constrained Lagrangian reproduce the
/// first-order one.
pub fn ex7_multiplier() -> CheckResult {
    let name = "ex7 multiplier";
    guard(name, || {
        let g = weak_field_metric();
        let a = SymTensorField::covector(&[expr("0.1/r"), Expr::Num(0.0), Expr::Num(0.0), Expr::Num(0.0)])?;
        let (q, m) = (1.0, 1.0);
        let l1 = LagrangianSpec::randers(q, a.clone(), m, g.clone())?;
        let tr = run(&l1, &Gauge::new(GaugeChoice::MetricNormConst(g.clone())), &weak_field_start(), (0.0, 10.0), &tight())?;
        let residual = |chi: f64| -> Result<f64> {
            let lag = LagrangianSpec::new(
                vec![CanonicalTerm::new(q, a.clone()), CanonicalTerm::polynomial(m + chi, g.clone())],
                Some(Expr::Num(-chi)),
            )?;
            let mut worst: f64 = 0.0;
            for k in 0..tr.len() {
                let s = tr.state(k);
                worst = worst.max(el_residual(&lag, s.tau, &s.x, &s.v, tr.acceleration(k))?.amax());
            }
            Ok(worst)
        };
        let (at_half, at_zero) = (residual(-m / 2.0)?, residual(0.0)?);
        Ok(CheckResult::at_most(
            name,
            at_half,
            1e-8,
            format!("residual at chi = -m/2; at chi = 0 it is {at_zero:.2e} ({:.1e}x)", at_zero / at_half),
        )
        .and(at_zero >= 1e3 * at_half, "chi = 0 not separated by 1e3"))
    })
}

fn radial_drift(sys: &SnRadialSystem, s0: &RadialState) -> Result<f64> {
    let sol = sys
        .integrate(s0, 0.0, (0.0, 10.0), &IntegratorConfig::default(), 1e-6)
        .map_err(|f| f.error)?;
    let states: Vec<RadialState> = sol.y.iter().map(|y| RadialState::new(0.0, y[1], y[2], y[3])).collect();
    let mut s = Vec::new();
    let mut p = Vec::new();
    for st in &states {
        s.push(sys.value(st)?);
        p.push(sys.conserved_p0(st)?);
    }
    Ok(max_rel_drift(s).max(max_rel_drift(p)))
}

/// `S_n` and `psi w^{n-1}` along closed-form radial trajectories.
pub fn ex8_radial_conservation() -> CheckResult {
    let name = "ex8 radial conservation";
    guard(name, || {
        let mut worst: f64 = 0.0;
        let s0 = RadialState::new(0.0, 1.0, 1.0, 0.5);
        for n in 2..=4 {
            let sys = SnRadialSystem::parse(n, "1 + 0.1*r", "1", &Default::default())?;
            worst = worst.max(radial_drift(&sys, &s0)?);
        }
        // with phi' != 0 only the exact Euler-Lagrange coefficient conserves
        let mut exact: f64 = 0.0;
        for n in 2..=4 {
            let sys = SnRadialSystem::parse(n, "exp(0.2*r)", "1 + 0.3*r", &Default::default())?.with_phi_term(PhiTerm::OverN);
            exact = exact.max(radial_drift(&sys, &s0)?);
        }
        Ok(CheckResult::at_most(
            name,
            worst,
            1e-8,
            format!("max relative drift of S_n and p0, n = 2..4, psi = 1+0.1r, phi = 1; varying phi (exact form) {exact:.1e}"),
        )
        .and(exact <= 1e-8, "exact form drifts"))
    })
}

/// Spatial acceleration under `L = const` and `sqrt(eta v v) = const`
/// differs at second order in the speed.
pub fn ex9_gauge_difference() -> CheckResult {
    let name = "ex9 gauge difference order";
    guard(name, || {
        let eta = SymTensorField::minkowski(2);
        let s3 = SymTensorField::new(3, 2)?
            .with(&[0, 0, 0], expr("1 + 0.1*x1"))?
            .with(&[1, 1, 1], Expr::Num(1.0))?;
        let lag = LagrangianSpec::new(vec![CanonicalTerm::new(1.0, eta.clone()), CanonicalTerm::new(0.5, s3)], None)?;
        let by_l = Gauge::new(GaugeChoice::LagrangianConst);
        let by_norm = Gauge::new(GaugeChoice::MetricNormConst(eta));
        let mut pts = Vec::new();
        for k in 0..10 {
            let u = 1e-3 * 100f64.powf(k as f64 / 9.0);
            let (x, v) = ([0.0, 1.0], [1.0, u]);
            let a = acceleration(&lag, &by_l, 0.0, &x, &v)?.a;
            let b = acceleration(&lag, &by_norm, 0.0, &x, &v)?.a;
            pts.push((u.ln(), (a[1] - b[1]).abs().ln()));
        }
        let (order, err) = linear_fit(&pts);
        Ok(CheckResult::at_least(
            name,
            order,
            1.9,
            format!("fitted exponent of |delta a_spatial| vs speed in [1e-3, 1e-1] (stderr {err:.1e})"),
        ))
    })
}

fn ex10_fixtures() -> Vec<(&'static str, PolynomialCovector, State)> {
    let cubic = SymTensorField::new(3, 4)
        .and_then(|s| s.with(&[0, 0, 0], expr("1 + 0.1*x1")))
        .and_then(|s| s.with(&[0, 1, 1], Expr::Num(0.2)))
        .expect("cubic field");
    let coulomb = SymTensorField::covector(&[expr("0.1/r"), Expr::Num(0.0), Expr::Num(0.0), Expr::Num(0.0)])
        .expect("potential");
    let swirl = SymTensorField::covector(&[Expr::Num(0.0), expr("-0.2*x2"), expr("0.2*x1"), Expr::Num(0.0)])
        .expect("potential");
    let curved = SymTensorField::diagonal(&[
        expr("1 + 0.1*x1^2"),
        Expr::Num(-1.0),
        expr("-(1 + 0.05*x2^2)"),
        Expr::Num(-1.0),
    ])
    .expect("metric");
    vec![
        (
            "weak field + charge + cubic",
            PolynomialCovector {
                metric: weak_field_metric(),
                potential: Some((1.0, coulomb)),
                cubic: Some((0.05, cubic)),
            },
            weak_field_start(),
        ),
        (
            "curved + magnetic",
            PolynomialCovector {
                metric: curved,
                potential: Some((1.0, swirl)),
                cubic: None,
            },
            State::new(0.0, vec![0.0, 0.5, 0.2, 0.0], vec![1.0, 0.1, 0.2, 0.05]),
        ),
    ]
}

/// `v g(x, v) v` is constant along trajectories of `v . A(x, v)`.
pub fn ex10_induced_metric() -> CheckResult {
    let name = "ex10 induced metric";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for (_, field, s0) in ex10_fixtures() {
            let lag = Contracted(field);
            let tr = run(&lag, &Gauge::affine(), &s0, (0.0, 10.0), &IntegratorConfig::default())?;
            let mut values = Vec::new();
            for s in tr.states() {
                let g = induced_metric_from_a(&lag.0, &s.x, &s.v)?;
                let v = DVector::from_column_slice(&s.v);
                values.push(v.dot(&(&g * &v)));
            }
            worst = worst.max(max_rel_drift(values));
        }
        Ok(CheckResult::at_most(name, worst, 1e-6, "relative drift of v.g(x,v).v over tau-span 10, two fields"))
    })
}

fn ex11_fields() -> (SymTensorField, SymTensorField) {
    let a = SymTensorField::covector(&[expr("0.3 + 0.1*x1"), expr("0.2*x2"), Expr::Num(-0.1), expr("0.05*x0")])
        .expect("potential");
    let g = SymTensorField::diagonal(&[
        expr("1 + 0.1*x1^2"),
        expr("-(1 + 0.2*x2)"),
        Expr::Num(-1.0),
        expr("-(1 + 0.1*x3^2)"),
    ])
    .expect("metric");
    (a, g)
}

/// Exact recovery of `q A` and `m^2 g` from `q A.v + m sqrt(g v v)`.
pub fn ex11_extraction_exact() -> CheckResult {
    let name = "ex11 extraction exact";
    guard(name, || {
        let (a, g) = ex11_fields();
        let (q, m) = (0.7, 1.3);
        let lag = LagrangianSpec::randers(q, a.clone(), m, g.clone())?;
        let mut worst: f64 = 0.0;
        for x in [[0.0, 0.5, -0.3, 0.2], [1.0, -0.4, 0.8, 0.1], [0.2, 0.0, 0.0, 0.0]] {
            let (ax, gx) = extract_em_and_metric(&lag, &x)?;
            let want_a: Vec<f64> = a.coefficients_at(&x)?.iter().map(|c| q * c.2).collect();
            let want_g = g.matrix_f64(&x)? * (m * m);
            for (p, w) in ax.iter().zip(&want_a) {
                worst = worst.max((p - w).abs() / w.abs().max(1.0));
            }
            worst = worst.max((gx - &want_g).amax() / want_g.amax());
        }
        Ok(CheckResult::at_most(name, worst, 1e-12, "max relative error of extracted qA and m^2 g"))
    })
}

/// Order in the spatial speed at which the extracted two-term Lagrangian
/// departs from one with a quartic term.
pub fn ex11_contamination_order() -> CheckResult {
    let name = "ex11 contamination order";
    guard(name, || {
        let (a, g) = ex11_fields();
        let s4 = SymTensorField::new(4, 4)?
            .with(&[0, 0, 0, 0], expr("1 + 0.1*x1"))?
            .with(&[1, 1, 1, 1], Expr::Num(1.0))?
            .with(&[0, 0, 2, 2], Expr::Num(0.3))?;
        let lag = LagrangianSpec::new(
            vec![
                CanonicalTerm::new(0.5, a),
                CanonicalTerm::new(1.0, g),
                CanonicalTerm::new(0.1, s4),
            ],
            None,
        )?;
        let ext = Extracted::new(&lag);
        let gauge = Gauge::new(GaugeChoice::CoordinateTime);
        let x = [0.0, 0.5, -0.3, 0.2];
        let mut pts = Vec::new();
        for k in 0..8 {
            let eps = 1e-3 * 10f64.powf(k as f64 / 7.0 * 1.5);
            let v = [1.0, 0.6 * eps, 0.8 * eps, 0.0];
            let a1 = acceleration(&lag, &gauge, 0.0, &x, &v)?.a;
            let a2 = acceleration(&ext, &gauge, 0.0, &x, &v)?.a;
            pts.push((eps.ln(), (&a1 - &a2).norm().ln()));
        }
        let (order, err) = linear_fit(&pts);
        Ok(CheckResult::at_least(
            name,
            order,
            1.9,
            format!("acceleration difference scales as v^{order:.2} (stderr {err:.1e})"),
        ))
    })
}

/// Jet derivatives against central differences.
pub fn jets_finite_differences(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "jets finite differences";
    guard(name, || {
        let f = |x: &[crate::jets::Jet2]| -> Result<crate::jets::Jet2> {
            let a = x[0].exp().mul(&x[1].sin());
            let b = x[0].mul(&x[0]).add(&x[1].mul(&x[1])).add_const(1.0).sqrt()?;
            Ok(a.add(&b.div(&x[1].cos().add_const(2.0))?))
        };
        let fv = |x: &[f64]| -> f64 {
            x[0].exp() * x[1].sin() + (x[0] * x[0] + x[1] * x[1] + 1.0).sqrt() / (x[1].cos() + 2.0)
        };
        let (mut gerr, mut herr): (f64, f64) = (0.0, 0.0);
        for _ in 0..200 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let j = f(&seed_all(&p))?;
            let h = 1e-5;
            for i in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[i] += h;
                pm[i] -= h;
                let fd = (fv(&pp) - fv(&pm)) / (2.0 * h);
                gerr = gerr.max((fd - j.d(i)).abs() / j.d(i).abs().max(1.0));
                let gp = f(&seed_all(&pp))?;
                let gm = f(&seed_all(&pm))?;
                for k in 0..2 {
                    let fd2 = (gp.d(k) - gm.d(k)) / (2.0 * h);
                    herr = herr.max((fd2 - j.dd(i, k)).abs() / j.dd(i, k).abs().max(1.0));
                }
            }
        }
        Ok(CheckResult::at_most(name, gerr, 1e-6, format!("gradient error; Hessian error {herr:.1e} (bound 1e-4)"))
            .and(herr <= 1e-4, "Hessian mismatch"))
    })
}

/// Printing and reparsing is the identity.
pub fn exprdsl_round_trip() -> CheckResult {
    let name = "exprdsl round trip";
    guard(name, || {
        let samples = [
            "psi0 * r^2",
            "-b/(r+eps)",
            "-r^2",
            "2^3^2",
            "exp(-0.5*(x1^2 + x2^2)) - sqrt(abs(x3))",
            "pow(r, 1.5) * sin(t) / (1 - cos(u))",
            "(a - b) - (c - d)",
        ];
        let mut failures = 0.0;
        for s in samples {
            let e = Expr::parse(s)?;
            if Expr::parse(&e.to_string())? != e {
                failures += 1.0;
            }
        }
        let offset_ok = matches!(Expr::parse("r +"), Err(Error::Syntax { offset: 3, .. }));
        Ok(CheckResult::at_most(name, failures, 0.0, "expressions whose printed form reparses differently")
            .and(offset_ok, "`r +` not reported at offset 3"))
    })
}

/// Contractions are insensitive to index order and homogeneous.
pub fn tensors_symmetry(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "tensors contraction";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for rank in 1..=4 {
            let s = random_tensor(rng, rank, 4);
            let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
            let base = s.contract_full(&x, &v)?;
            let scaled: Vec<f64> = v.iter().map(|c| 1.7 * c).collect();
            let twice = s.contract_full(&x, &scaled)?;
            worst = worst.max((twice - 1.7f64.powi(rank as i32) * base).abs() / base.abs());
            // brute-force sum over every ordered index tuple
            let mut brute = 0.0;
            let total = 4usize.pow(rank as u32);
            for flat in 0..total {
                let mut idx: Vec<usize> = (0..rank).map(|p| flat / 4usize.pow(p as u32) % 4).collect();
                let prod: f64 = idx.iter().map(|&i| v[i]).product();
                idx.sort_unstable();
                let c = s.get(&idx).map_or(Ok(0.0), |e| e.eval_f64(&[] as &[(&str, f64)]))?;
                brute += c * prod;
            }
            worst = worst.max((brute - base).abs() / base.abs());
        }
        Ok(CheckResult::at_most(name, worst, 1e-12, "relative error of contraction vs brute force and scaling"))
    })
}

/// Canonical Lagrangians are first-order homogeneous.
pub fn lagrangian_homogeneity(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "lagrangian homogeneity";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let lag = LagrangianSpec::new(
                vec![
                    CanonicalTerm::new(0.3, random_tensor(rng, 1, 4)),
                    CanonicalTerm::new(1.0, random_tensor(rng, 2, 4)),
                    CanonicalTerm::new(0.2, random_tensor(rng, 4, 4)),
                ],
                None,
            )?;
            let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
            let (order, residual) = homogeneity_order(&lag, &x, &v, 12)?;
            worst = worst.max((order - 1.0).abs()).max(residual);
        }
        Ok(CheckResult::at_most(name, worst, 1e-8, "max |order - 1| and fit residual"))
    })
}

/// The even and odd parts add back to `L` exactly.
pub fn lagrangian_split(rng: &mut ChaCha8Rng) -> CheckResult {
    let name = "lagrangian even/odd split";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let lag = LagrangianSpec::new(
                vec![
                    CanonicalTerm::new(0.5, random_tensor(rng, 1, 4)),
                    CanonicalTerm::new(1.0, random_tensor(rng, 2, 4)),
                    CanonicalTerm::new(0.2, random_tensor(rng, 3, 4)),
                ],
                None,
            )?;
            let (x, v) = (random_point(rng, 4), random_timelike(rng, 4));
            let l = eval_f64(&lag, &x, &v)?;
            let (minus, plus) = even_odd_split(&lag, &x, &v)?;
            worst = worst.max((minus + plus - l).abs() / l.abs());
        }
        Ok(CheckResult::at_most(name, worst, 1e-14, "|L- + L+ - L|/|L|"))
    })
}

/// Augmented first-order solve against the geodesic equation.
pub fn eom_orbit_matches_geodesic() -> CheckResult {
    let name = "eom vs geodesic";
    guard(name, || {
        let g = weak_field_metric();
        let l1 = LagrangianSpec::metric(1.0, g.clone())?;
        let gauge = Gauge::new(GaugeChoice::MetricNormConst(g.clone()));
        let mut worst: f64 = 0.0;
        for (r, speed) in [(1.0, 0.1), (2.0, 0.05), (0.5, 0.2)] {
            let mut s = weak_field_start();
            s.x[1] = r;
            s.v[2] = speed;
            let a = acceleration(&l1, &gauge, 0.0, &s.x, &s.v)?.a;
            let b = geodesic_rhs(&g, &s.x, &s.v)?;
            for (p, q) in a.iter().zip(&b) {
                worst = worst.max((p - q).abs() / b.iter().fold(0.0f64, |m, c| m.max(c.abs())));
            }
        }
        Ok(CheckResult::at_most(name, worst, 1e-8, "relative difference of accelerations"))
    })
}

/// Paths integrated in three parametrizations coincide.
pub fn integrators_reparametrization() -> CheckResult {
    let name = "reparametrization";
    guard(name, || {
        let g = weak_field_metric();
        let l1 = LagrangianSpec::metric(1.0, g)?;
        let s0 = weak_field_start();
        let l0 = eval_f64(&l1, &s0.x, &s0.v)?;
        let cfg = IntegratorConfig {
            h_max: Some(0.05),
            ..IntegratorConfig::default()
        };
        let span = 10.0;
        let base = run(&l1, &Gauge::new(GaugeChoice::LagrangianConst), &s0, (0.0, span), &cfg)?;

        let mut half = s0.clone();
        half.v.iter_mut().for_each(|c| *c *= 0.5);
        let doubled = run(
            &l1,
            &Gauge::new(GaugeChoice::LagrangianConst).with_target(GaugeTarget::Value(0.5 * l0)),
            &half,
            (0.0, 2.0 * span),
            &cfg,
        )?;

        let map = |t: f64| t + 0.1 * t.sin();
        let inverse = move |lam: f64| {
            let mut t = lam;
            for _ in 0..60 {
                t -= (map(t) - lam) / (1.0 + 0.1 * t.cos());
            }
            t
        };
        let schedule = move |lam: f64| {
            let t = inverse(lam);
            let d = 1.0 + 0.1 * t.cos();
            (l0 / d, l0 * 0.1 * t.sin() / (d * d * d))
        };
        let mut wobble = s0.clone();
        wobble.v.iter_mut().for_each(|c| *c /= 1.1);
        let wobbled = run(
            &l1,
            &Gauge::new(GaugeChoice::LagrangianConst).with_target(GaugeTarget::Schedule(Arc::new(schedule))),
            &wobble,
            (0.0, map(span)),
            &cfg,
        )?;
        let d = hausdorff_distance(&base, &doubled)
            .max(hausdorff_distance(&base, &wobbled))
            .max(hausdorff_distance(&doubled, &wobbled));
        Ok(CheckResult::at_most(name, d, 1e-6, "max pairwise Hausdorff distance for tau, 2 tau, tau + 0.1 sin tau"))
    })
}

/// Slope of `log|du/dtau|` against `log u` is `2 - n`.
pub fn snradial_blow_up() -> CheckResult {
    let name = "blow-up slope";
    guard(name, || {
        let mut worst: f64 = 0.0;
        let mut slopes = Vec::new();
        for n in [3u32, 4] {
            let sys = SnRadialSystem::parse(n, "1 + 0.1*r", "1", &Default::default())?;
            let (slope, _) = blowup_exponent(&sys, &log_spaced_states(1.0, 1.0, 1e-4, 1e-1, 16))?;
            slopes.push(format!("n={n}: {slope:.4}"));
            worst = worst.max((slope - (2.0 - n as f64)).abs());
        }
        Ok(CheckResult::at_most(name, worst, 0.05, format!("|slope - (2-n)|; {}", slopes.join(", "))))
    })
}

/// The radial acceleration vanishes at the zero-acceleration speed.
pub fn snradial_zero_acceleration() -> CheckResult {
    let name = "zero acceleration";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for (n, psi, phi) in [(2, "1 + 0.5*r", "1 + 0.2*r"), (3, "3*r", "r"), (3, "1 + 0.5*r", "0.4*r"), (4, "exp(0.2*r)", "1 + 0.1*r")] {
            let sys = SnRadialSystem::parse(n, psi, phi, &Default::default())?;
            for r in [0.5, 1.0, 2.0] {
                let v = sys
                    .zero_accel_speed(r)?
                    .ok_or_else(|| Error::Indeterminate(format!("no real speed at r = {r}")))?;
                let (du, _) = sys.rhs(&RadialState::new(0.0, r, 1.0, v))?;
                worst = worst.max(du.abs());
            }
        }
        Ok(CheckResult::at_most(name, worst, 1e-10, "max |du/dtau| at v = (psi'/(n phi'))^(1/n)"))
    })
}

/// `hdot/h = 2/t`, `Jdot/J = 1/t` on a weak-field orbit under `lambda ~ 1/t`.
pub fn fictitious_siv_drift() -> CheckResult {
    let name = "siv drift";
    guard(name, || {
        let field = SuperposedField::new(vec![PointSource::at_rest(1.0, [0.0; 3])], 0.05)?;
        let speed = circular_speed(&field, 1.0)?;
        let siv = SivConfig::new(1.0, (1.0, 2.0))?;
        let s0 = State::new(1.0, vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, speed, 0.0]);
        let cfg = IntegratorConfig {
            h_max: Some(0.01),
            ..IntegratorConfig::default()
        };
        let tr = integrate_siv(&field, &siv, &s0, &cfg).map_err(|f| f.error)?;
        let drift = drift_rates(&tr, (1, 2))?;
        let (mut eh, mut ej, mut er): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for k in 0..drift.t.len() {
            let t = drift.t[k];
            eh = eh.max((drift.hdot_over_h[k] * t / 2.0 - 1.0).abs());
            ej = ej.max((drift.jdot_over_j[k] * t - 1.0).abs());
            er = er.max((drift.hdot_over_h[k] / drift.jdot_over_j[k] / 2.0 - 1.0).abs());
        }
        let j = |k: usize| angular_momentum(&tr.ode.y[k][..4], &tr.diagnostics[k].momentum, (1, 2));
        let growth = (j(tr.len() - 1) / j(0)).ln() / 2f64.ln();
        Ok(CheckResult::at_most(
            name,
            eh.max(ej).max(er),
            0.01,
            format!(
                "max relative error of hdot/h {eh:.1e}, Jdot/J {ej:.1e}, ratio {er:.1e} over {} samples; ln J grows by {growth:.6} ln 2",
                drift.t.len()
            ),
        ))
    })
}

/// Direct action minimization against shooting on five fixtures.
pub fn oracle_agreement() -> CheckResult {
    let name = "oracle agreement";
    guard(name, || {
        let mut worst: f64 = 0.0;
        let mut notes = Vec::new();
        let mut all_refine = true;
        for fx in oracle::fixtures() {
            let rows = oracle::compare(&fx, &[16, 32, 64])?;
            all_refine &= oracle::refines(&rows) && rows.iter().all(|r| r.converged);
            let last = rows.last().expect("three rows");
            worst = worst.max(last.distance);
            notes.push(format!("{} {:.1e}", fx.name, last.distance));
        }
        Ok(CheckResult::at_most(name, worst, 1e-3, format!("x-distance at N=64: {}", notes.join(", ")))
            .and(all_refine, "error does not decrease with N"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(matches!(run_suite("nope", 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fast_suites_pass() {
        for s in ["ex2", "ex6", "exprdsl", "jets", "tensors", "lagrangian", "snradial"] {
            for r in run_suite(s, 7).unwrap() {
                assert!(r.passed, "{r}");
            }
        }
    }
}
