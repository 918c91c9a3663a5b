//! Brute-force cross-check of the integrator: the action is discretized
//! with the midpoint rule and made stationary over the interior nodes of a
//! path with fixed endpoints, then compared with the integrated trajectory
//! that joins the same endpoints.

use nalgebra::{DMatrix, DVector};

use crate::eom::{assemble, Gauge, GaugeChoice, GaugeTarget};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fictitious::{SivConfig, TimeScaled};
use crate::integrate::{integrate, IntegratorConfig, State, Trajectory};
use crate::jets::{seed_variables, Jet2, Scalar};
use crate::lagrangian::{CanonicalTerm, Lagrangian, LagrangianSpec};
use crate::snradial::SnRadialSystem;
use crate::tensors::SymTensorField;

/// Nodes on a uniform parameter grid; the first and last are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub tau0: f64,
    pub tau1: f64,
    pub nodes: Vec<Vec<f64>>,
}

impl DiscretePath {
    pub fn new(tau0: f64, tau1: f64, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 nodes, got {}", nodes.len())));
        }
        if !(tau1 > tau0) {
            return Err(Error::InvalidArgument(format!("empty parameter span [{tau0}, {tau1}]")));
        }
        let d = nodes[0].len();
        if d == 0 || nodes.iter().any(|n| n.len() != d) {
            return Err(Error::Shape("nodes must share a non-zero dimension".into()));
        }
        Ok(DiscretePath { tau0, tau1, nodes })
    }

    /// `n` equally spaced nodes on the segment from `a` to `b`.
    pub fn straight(a: &[f64], b: &[f64], span: (f64, f64), n: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape("endpoints differ in dimension".into()));
        }
        let nodes = (0..n)
            .map(|k| {
                let s = k as f64 / (n.max(2) - 1) as f64;
                a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect()
            })
            .collect();
        Self::new(span.0, span.1, nodes)
    }

    /// Samples a trajectory at the grid parameters.
    pub fn from_trajectory(traj: &Trajectory, n: usize) -> Result<Self> {
        let (a, b) = traj.span();
        let nodes = (0..n)
            .map(|k| traj.position(a + (b - a) * k as f64 / (n.max(2) - 1) as f64))
            .collect();
        Self::new(a, b, nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn step(&self) -> f64 {
        (self.tau1 - self.tau0) / (self.len() - 1) as f64
    }

    pub fn grid(&self, k: usize) -> f64 {
        self.tau0 + self.step() * k as f64
    }

    fn interior(&self) -> usize {
        self.len() - 2
    }

    fn shifted(&self, delta: &DVector<f64>, scale: f64) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        for k in 1..self.len() - 1 {
            for i in 0..d {
                out.nodes[k][i] += scale * delta[(k - 1) * d + i];
            }
        }
        out
    }
}

fn segment<S: Scalar>(a: &[S], b: &[S], h: f64) -> (Vec<S>, Vec<S>) {
    let mid = a.iter().zip(b).map(|(p, q)| p.add(q).scale(0.5)).collect();
    let vel = a.iter().zip(b).map(|(p, q)| q.sub(p).scale(1.0 / h)).collect();
    (mid, vel)
}

/// `sum_k L(tau_k+1/2, (x_k + x_k+1)/2, (x_k+1 - x_k)/h) h`.
pub fn discrete_action<L: Lagrangian>(lag: &L, path: &DiscretePath) -> Result<f64> {
    check_dim(lag, path)?;
    let h = path.step();
    let mut total = 0.0;
    for k in 0..path.len() - 1 {
        let (mid, vel) = segment(&path.nodes[k], &path.nodes[k + 1], h);
        let tau = path.grid(k) + 0.5 * h;
        total += lag
            .eval(&tau, &mid, &vel)
            .map_err(|e| e.in_context(format!("segment {k}")))?
            * h;
    }
    Ok(total)
}

fn check_dim<L: Lagrangian>(lag: &L, path: &DiscretePath) -> Result<()> {
    if path.dim() != lag.dim() {
        return Err(Error::Shape(format!(
            "path has dimension {}, Lagrangian {}",
            path.dim(),
            lag.dim()
        )));
    }
    Ok(())
}

/// Action, gradient and Hessian with respect to the interior nodes.
fn derivatives<L: Lagrangian>(lag: &L, path: &DiscretePath) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let d = path.dim();
    let h = path.step();
    let m = path.interior() * d;
    let mut grad = DVector::zeros(m);
    let mut hess = DMatrix::zeros(m, m);
    let mut total = 0.0;
    let n = path.len();
    for k in 0..n - 1 {
        let mut point = path.nodes[k].clone();
        point.extend_from_slice(&path.nodes[k + 1]);
        let active: Vec<usize> = (0..2 * d).collect();
        let mut jets = seed_variables(&point, &active)?;
        let b = jets.split_off(d);
        let (mid, vel) = segment(&jets, &b, h);
        let tau = Jet2::constant(path.grid(k) + 0.5 * h);
        let l = lag
            .eval(&tau, &mid, &vel)
            .map_err(|e| e.in_context(format!("segment {k}")))?;
        total += l.value() * h;
        // local slot -> global unknown, None for fixed endpoints
        let slot = |s: usize| -> Option<usize> {
            let node = k + s / d;
            (node >= 1 && node <= n - 2).then(|| (node - 1) * d + s % d)
        };
        for s in 0..2 * d {
            let Some(gi) = slot(s) else { continue };
            grad[gi] += l.d(s) * h;
            for t in 0..2 * d {
                if let Some(gj) = slot(t) {
                    hess[(gi, gj)] += l.dd(s, t) * h;
                }
            }
        }
    }
    Ok((total, grad, hess))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Converged when the gradient max-norm is at most `gtol (1 + |S|)`.
    pub gtol: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 5000,
            gtol: 1e-9,
        }
    }
}

/// Outcome of [`minimize_action`]. When `converged` is false the path is
/// the best iterate found.
#[derive(Debug, Clone)]
pub struct Minimized {
    pub path: DiscretePath,
    pub action: f64,
    /// Max-norm of the gradient; for first-order homogeneous Lagrangians
    /// only the components normal to the path count.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Makes the discrete action stationary between fixed endpoints, starting
/// from the straight segment.
pub fn minimize_action<L: Lagrangian>(
    lag: &L,
    boundary: (&[f64], &[f64]),
    span: (f64, f64),
    n: usize,
    gauge: &GaugeChoice,
    cfg: &MinimizeConfig,
) -> Result<Minimized> {
    let seed = DiscretePath::straight(boundary.0, boundary.1, span, n)?;
    minimize_from(lag, seed, gauge, cfg)
}

/// As [`minimize_action`] from a caller-supplied seed path.
pub fn minimize_from<L: Lagrangian>(
    lag: &L,
    seed: DiscretePath,
    gauge: &GaugeChoice,
    cfg: &MinimizeConfig,
) -> Result<Minimized> {
    check_dim(lag, &seed)?;
    let h = seed.step();
    let (mid, vel) = segment(&seed.nodes[0], &seed.nodes[1], h);
    let degenerate = assemble(lag, seed.tau0 + 0.5 * h, &mid, &vel)?.degeneracy_rank > 0;
    if !degenerate {
        return newton(lag, seed, cfg);
    }
    if matches!(gauge, GaugeChoice::Affine) {
        return Err(Error::UnderDetermined {
            rank: lag.dim() - 1,
            dim: lag.dim(),
        });
    }
    newton_normal(lag, seed, gauge, cfg)
}

fn newton<L: Lagrangian>(lag: &L, mut path: DiscretePath, cfg: &MinimizeConfig) -> Result<Minimized> {
    let (mut s, mut g, mut hess) = derivatives(lag, &path)?;
    for it in 0..cfg.max_iters {
        let gn = g.amax();
        if gn <= cfg.gtol * (1.0 + s.abs()) {
            return Ok(Minimized {
                path,
                action: s,
                gradient_norm: gn,
                iterations: it,
                converged: true,
            });
        }
        let step = hess
            .clone()
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| Error::Singular("discrete action Hessian".into()))?;
        let (next, ns, ng, nh) = backtrack(lag, &path, &step, gn, |p| derivatives(lag, p))?;
        path = next;
        (s, g, hess) = (ns, ng, nh);
    }
    let gn = g.amax();
    log::warn!("action minimization stopped after {} iterations with gradient {gn:e}", cfg.max_iters);
    Ok(Minimized {
        path,
        action: s,
        gradient_norm: gn,
        iterations: cfg.max_iters,
        converged: false,
    })
}

type Derivs = (f64, DVector<f64>, DMatrix<f64>);

/// Halves the step until the measured gradient norm decreases; takes the
/// smallest step if none does.
fn backtrack<L: Lagrangian>(
    _lag: &L,
    path: &DiscretePath,
    step: &DVector<f64>,
    current: f64,
    eval: impl Fn(&DiscretePath) -> Result<Derivs>,
) -> Result<(DiscretePath, f64, DVector<f64>, DMatrix<f64>)> {
    let mut scale = 1.0;
    let mut last_err = None;
    for _ in 0..30 {
        let trial = path.shifted(step, scale);
        match eval(&trial) {
            Ok((s, g, h)) if g.amax() < current || scale < 1e-6 => return Ok((trial, s, g, h)),
            Ok(_) => {}
            Err(e) if e.is_runtime() => last_err = Some(e),
            Err(e) => return Err(e),
        }
        scale *= 0.5;
    }
    Err(last_err.unwrap_or_else(|| Error::NoConvergence("line search failed".into())))
}

/// Orthonormal complement of `t` in `R^d`, as columns.
fn normal_basis(t: &[f64]) -> DMatrix<f64> {
    let d = t.len();
    let norm = t.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut u: Vec<f64> = t.iter().map(|c| c / norm).collect();
    // Householder reflection taking e0 to the unit tangent
    u[0] -= 1.0;
    let un = u.iter().map(|c| c * c).sum::<f64>();
    let mut reflect = DMatrix::identity(d, d);
    if un > 1e-30 {
        for i in 0..d {
            for j in 0..d {
                reflect[(i, j)] -= 2.0 * u[i] * u[j] / un;
            }
        }
    }
    reflect.columns(1, d - 1).into_owned()
}

/// Block-diagonal basis of displacements normal to the path at each
/// interior node.
fn normal_frame(path: &DiscretePath) -> DMatrix<f64> {
    let d = path.dim();
    let m = path.interior();
    let mut b = DMatrix::zeros(m * d, m * (d - 1));
    for k in 1..path.len() - 1 {
        let t: Vec<f64> = path.nodes[k + 1]
            .iter()
            .zip(&path.nodes[k - 1])
            .map(|(p, q)| p - q)
            .collect();
        let block = normal_basis(&t);
        b.view_mut(((k - 1) * d, (k - 1) * (d - 1)), (d, d - 1)).copy_from(&block);
    }
    b
}

fn newton_normal<L: Lagrangian>(
    lag: &L,
    seed: DiscretePath,
    gauge: &GaugeChoice,
    cfg: &MinimizeConfig,
) -> Result<Minimized> {
    let mut path = redistribute(lag, &seed, gauge)?;
    let reduced = |p: &DiscretePath| -> Result<(f64, DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (s, g, h) = derivatives(lag, p)?;
        let b = normal_frame(p);
        let gr = b.transpose() * g;
        let hr = b.transpose() * h * &b;
        Ok((s, gr, hr, b))
    };
    let (mut s, mut g, mut h, mut b) = reduced(&path)?;
    for it in 0..cfg.max_iters {
        let gn = g.amax();
        if gn <= cfg.gtol * (1.0 + s.abs()) {
            return Ok(Minimized {
                path,
                action: s,
                gradient_norm: gn,
                iterations: it,
                converged: true,
            });
        }
        let y = h
            .clone()
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| Error::Singular("reduced discrete action Hessian".into()))?;
        let step = &b * y;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = path.shifted(&step, scale);
            if let Ok(trial) = redistribute(lag, &trial, gauge) {
                if let Ok(r) = reduced(&trial) {
                    if r.1.amax() < gn || scale < 1e-6 {
                        accepted = Some((trial, r));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        let Some((next, r)) = accepted else {
            return Err(Error::NoConvergence("line search failed".into()));
        };
        path = next;
        (s, g, h, b) = r;
    }
    let gn = g.amax();
    log::warn!("action minimization stopped after {} iterations with gradient {gn:e}", cfg.max_iters);
    Ok(Minimized {
        path,
        action: s,
        gradient_norm: gn,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Moves interior nodes along a cubic interpolant of the path so every
/// segment carries the same increment of the gauge quantity.
pub fn redistribute<L: Lagrangian>(lag: &L, path: &DiscretePath, gauge: &GaugeChoice) -> Result<DiscretePath> {
    let n = path.len();
    let h = path.step();
    let mut cum = vec![0.0; n];
    for k in 0..n - 1 {
        let (mid, vel) = segment(&path.nodes[k], &path.nodes[k + 1], h);
        let q = gauge
            .quantity(lag, &(path.grid(k) + 0.5 * h), &mid, &vel)?
            .ok_or_else(|| Error::CannotProject("affine gauge has no increments".into()))?;
        if !(q > 0.0) {
            return Err(Error::CannotProject(format!("gauge increment {q} on segment {k}")));
        }
        cum[k + 1] = cum[k] + q * h;
    }
    let d = path.dim();
    // node tangents with respect to the cumulative increment
    let slope = |k: usize, i: usize| -> f64 {
        let f = |j: usize| path.nodes[j][i];
        if k == 0 {
            (f(1) - f(0)) / (cum[1] - cum[0])
        } else if k == n - 1 {
            (f(n - 1) - f(n - 2)) / (cum[n - 1] - cum[n - 2])
        } else {
            let (h1, h2) = (cum[k] - cum[k - 1], cum[k + 1] - cum[k]);
            -h2 / (h1 * (h1 + h2)) * f(k - 1) + (h2 - h1) / (h1 * h2) * f(k) + h1 / (h2 * (h1 + h2)) * f(k + 1)
        }
    };
    let mut out = path.clone();
    let mut seg = 0;
    for j in 1..n - 1 {
        let level = cum[n - 1] * j as f64 / (n - 1) as f64;
        while cum[seg + 1] < level {
            seg += 1;
        }
        let width = cum[seg + 1] - cum[seg];
        let s = (level - cum[seg]) / width;
        let (h00, h10, h01, h11) = (
            2.0 * s.powi(3) - 3.0 * s * s + 1.0,
            s.powi(3) - 2.0 * s * s + s,
            -2.0 * s.powi(3) + 3.0 * s * s,
            s.powi(3) - s * s,
        );
        for i in 0..d {
            out.nodes[j][i] = h00 * path.nodes[seg][i]
                + h10 * width * slope(seg, i)
                + h01 * path.nodes[seg + 1][i]
                + h11 * width * slope(seg + 1, i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub integrator: IntegratorConfig,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            tol: 1e-8,
            max_iters: 40,
            integrator: IntegratorConfig::default().tolerances(1e-11, 1e-13),
        }
    }
}

/// Finds the initial velocity whose trajectory reaches `b` at the end of
/// `span`, by Newton iteration with a difference-quotient Jacobian. An
/// `Initial` gauge target follows the trial velocity.
pub fn shoot<L: Lagrangian>(
    lag: &L,
    gauge: &Gauge,
    a: &[f64],
    b: &[f64],
    span: (f64, f64),
    cfg: &ShootingConfig,
) -> Result<(Trajectory, f64)> {
    let d = lag.dim();
    if a.len() != d || b.len() != d {
        return Err(Error::Shape(format!("endpoints must have {d} components")));
    }
    let run = |v: &DVector<f64>| -> Result<(Trajectory, DVector<f64>)> {
        let s0 = State::new(span.0, a.to_vec(), v.as_slice().to_vec());
        let traj = integrate(lag, gauge, &s0, span, &cfg.integrator, &[]).map_err(|f| f.error)?;
        let end = traj.last().expect("non-empty trajectory");
        let miss = DVector::from_fn(d, |i, _| end.x[i] - b[i]);
        Ok((traj, miss))
    };
    let mut v = DVector::from_fn(d, |i, _| (b[i] - a[i]) / (span.1 - span.0));
    let (mut traj, mut miss) = run(&v)?;
    for _ in 0..cfg.max_iters {
        let res = miss.amax();
        if res <= cfg.tol {
            return Ok((traj, res));
        }
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let eps = 1e-7 * v[j].abs().max(1.0);
            let mut vp = v.clone();
            vp[j] += eps;
            let (_, mp) = run(&vp)?;
            jac.set_column(j, &((mp - &miss) / eps));
        }
        let dv = jac
            .lu()
            .solve(&(-&miss))
            .ok_or_else(|| Error::Singular("shooting Jacobian".into()))?;
        let mut scale = 1.0;
        loop {
            let trial = &v + &dv * scale;
            if let Ok((t, m)) = run(&trial) {
                if m.amax() < res || scale < 1e-4 {
                    v = trial;
                    traj = t;
                    miss = m;
                    break;
                }
            }
            if scale < 1e-4 {
                return Err(Error::NoConvergence(format!("shooting stalled at miss {res:e}")));
            }
            scale *= 0.5;
        }
    }
    let res = miss.amax();
    if res <= cfg.tol {
        Ok((traj, res))
    } else {
        Err(Error::NoConvergence(format!("shooting miss {res:e} after {} iterations", cfg.max_iters)))
    }
}

/// Largest Euclidean distance between each node and the trajectory at the
/// node's grid parameter.
pub fn nodewise_distance(path: &DiscretePath, traj: &Trajectory) -> f64 {
    (0..path.len())
        .map(|k| {
            let x = traj.position(path.grid(k));
            x.iter()
                .zip(&path.nodes[k])
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Lagrangians used by the comparison fixtures.
#[derive(Debug, Clone)]
pub enum FixtureLagrangian {
    Spec(LagrangianSpec),
    Scaled(TimeScaled<LagrangianSpec>),
}

impl Lagrangian for FixtureLagrangian {
    fn dim(&self) -> usize {
        match self {
            FixtureLagrangian::Spec(l) => l.dim(),
            FixtureLagrangian::Scaled(l) => l.dim(),
        }
    }
    fn eval<S: Scalar>(&self, tau: &S, x: &[S], v: &[S]) -> Result<S> {
        match self {
            FixtureLagrangian::Spec(l) => l.eval(tau, x, v),
            FixtureLagrangian::Scaled(l) => l.eval(tau, x, v),
        }
    }
    fn is_autonomous(&self) -> bool {
        match self {
            FixtureLagrangian::Spec(l) => l.is_autonomous(),
            FixtureLagrangian::Scaled(l) => l.is_autonomous(),
        }
    }
}

/// A boundary-value problem solved both ways.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub lagrangian: FixtureLagrangian,
    pub gauge: GaugeChoice,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub span: (f64, f64),
}

fn quadratic(g: SymTensorField) -> LagrangianSpec {
    LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, g)], None).expect("single term")
}

fn diag(entries: &[&str]) -> SymTensorField {
    let exprs: Vec<Expr> = entries.iter().map(|e| Expr::parse(e).expect("fixture expression")).collect();
    SymTensorField::diagonal(&exprs).expect("fixture metric")
}

/// `diag(1 - 2 Phi, -(1 + 2 Phi), ..)` in `(t, x, y)` with `Phi = -0.01/r`.
pub fn weak_field_metric() -> SymTensorField {
    diag(&["1 + 0.02/r", "-(1 - 0.02/r)", "-(1 - 0.02/r)"])
}

/// The five comparison fixtures: flat, weak field (first order), polar
/// plane, cubic radial and scale-factor flat.
pub fn fixtures() -> Vec<Fixture> {
    let flat = quadratic(SymTensorField::minkowski(3));
    let weak = LagrangianSpec::metric(1.0, weak_field_metric()).expect("metric");
    let polar = quadratic(diag(&["1", "x0^2"]));
    let radial = SnRadialSystem::parse(3, "1 + 0.1*r", "1", &Default::default())
        .expect("radial fixture")
        .lagrangian();
    let siv = SivConfig::new(1.0, (1.0, 2.0)).expect("siv fixture");
    vec![
        Fixture {
            name: "flat".into(),
            lagrangian: FixtureLagrangian::Spec(flat.clone()),
            gauge: GaugeChoice::Affine,
            a: vec![0.0, 0.0, 0.0],
            b: vec![1.0, 0.3, -0.2],
            span: (0.0, 1.0),
        },
        Fixture {
            name: "weak-field".into(),
            lagrangian: FixtureLagrangian::Spec(weak),
            gauge: GaugeChoice::MetricNormConst(weak_field_metric()),
            a: vec![0.0, 1.0, 0.0],
            b: vec![2.0, 1.0, 0.6],
            span: (0.0, 1.0),
        },
        Fixture {
            name: "polar".into(),
            lagrangian: FixtureLagrangian::Spec(polar),
            gauge: GaugeChoice::Affine,
            a: vec![1.0, 0.0],
            b: vec![1.2, 0.8],
            span: (0.0, 1.0),
        },
        Fixture {
            name: "cubic-radial".into(),
            lagrangian: FixtureLagrangian::Spec(radial),
            gauge: GaugeChoice::Affine,
            a: vec![0.0, 1.0],
            b: vec![1.0, 1.5],
            span: (0.0, 1.0),
        },
        Fixture {
            name: "siv-flat".into(),
            lagrangian: FixtureLagrangian::Scaled(TimeScaled { inner: flat, siv }),
            gauge: GaugeChoice::Affine,
            a: vec![0.0, 0.0, 0.0],
            b: vec![1.0, 0.4, 0.1],
            span: (1.0, 2.0),
        },
    ]
}

/// Result of solving one fixture both ways.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub name: String,
    pub nodes: usize,
    pub distance: f64,
    pub minimized_action: f64,
    /// Discrete action of the integrated trajectory sampled on the grid.
    pub trajectory_action: f64,
    pub shooting_miss: f64,
    pub converged: bool,
}

/// The boundary-matched integrated trajectory of a fixture.
pub fn fixture_trajectory(fx: &Fixture, cfg: &ShootingConfig) -> Result<(Trajectory, f64)> {
    let gauge = Gauge::new(fx.gauge.clone()).with_target(GaugeTarget::Initial);
    shoot(&fx.lagrangian, &gauge, &fx.a, &fx.b, fx.span, cfg)
}

/// Minimizes with `n` nodes and compares against `traj`.
pub fn compare_with(fx: &Fixture, traj: &Trajectory, shooting_miss: f64, n: usize, cfg: &MinimizeConfig) -> Result<Comparison> {
    let min = minimize_action(&fx.lagrangian, (&fx.a, &fx.b), fx.span, n, &fx.gauge, cfg)?;
    let sampled = DiscretePath::from_trajectory(traj, n)?;
    Ok(Comparison {
        name: fx.name.clone(),
        nodes: n,
        distance: nodewise_distance(&min.path, traj),
        minimized_action: min.action,
        trajectory_action: discrete_action(&fx.lagrangian, &sampled)?,
        shooting_miss,
        converged: min.converged,
    })
}

/// Distances below this are exact up to rounding.
pub const EXACT_DISTANCE: f64 = 1e-12;

/// Whether the distance shrinks at every refinement, or is already at
/// rounding level.
pub fn refines(rows: &[Comparison]) -> bool {
    rows.windows(2)
        .all(|w| w[1].distance < w[0].distance || w[1].distance <= EXACT_DISTANCE)
}

/// Solves a fixture both ways at each node count.
pub fn compare(fx: &Fixture, node_counts: &[usize]) -> Result<Vec<Comparison>> {
    let (traj, miss) = fixture_trajectory(fx, &ShootingConfig::default())?;
    node_counts
        .iter()
        .map(|&n| compare_with(fx, &traj, miss, n, &MinimizeConfig::default()))
        .collect()
}
