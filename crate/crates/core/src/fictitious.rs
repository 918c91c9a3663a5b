//! Effects of a parametrization in which `L` is not constant: the momentum
//! equation of `f(L)`, scale-factor driven drift of energy and angular
//! momentum, and a static weak-field metric superposed from point sources.

use nalgebra::{DMatrix, DVector};

use crate::eom::{assemble, Gauge};
use crate::error::{Error, Result};
use crate::integrate::{integrate_ode, IntegrationFailure, IntegratorConfig, OdeSolution, State, Trajectory};
use crate::jets::Scalar;
use crate::lagrangian::Lagrangian;

/// Outer function applied to the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    Sqrt,
    Square,
    /// `L^a`.
    Power(f64),
}

impl Transform {
    pub fn apply<S: Scalar>(&self, l: &S) -> Result<S> {
        match self {
            Transform::Identity => Ok(l.clone()),
            Transform::Sqrt => l.sqrt(),
            Transform::Square => Ok(l.mul(l)),
            Transform::Power(a) => l.powf(*a),
        }
    }

    /// `(f'(L), f''(L))`.
    pub fn derivatives(&self, l: f64) -> Result<(f64, f64)> {
        match *self {
            Transform::Identity => Ok((1.0, 0.0)),
            Transform::Sqrt => {
                if !(l > 0.0) {
                    return Err(Error::domain("sqrt(L)", format!("L = {l} is not positive")));
                }
                let s = l.sqrt();
                Ok((0.5 / s, -0.25 / (s * l)))
            }
            Transform::Square => Ok((2.0 * l, 2.0)),
            Transform::Power(a) => {
                if !(l > 0.0) {
                    return Err(Error::domain("L^a", format!("L = {l} is not positive")));
                }
                Ok((a * l.powf(a - 1.0), a * (a - 1.0) * l.powf(a - 2.0)))
            }
        }
    }

    /// `f''/f'`, failing where `f'` vanishes.
    pub fn damping(&self, l: f64) -> Result<f64> {
        let (d1, d2) = self.derivatives(l)?;
        if d1 == 0.0 {
            return Err(Error::domain("f(L)", format!("f'(L) vanishes at L = {l}")));
        }
        Ok(d2 / d1)
    }
}

/// `dp/dtau = dL/dx - (f''/f') Ldot p` with `p = dL/dv`: the momentum
/// equation of the action `int f(L)` written in terms of `L`.
pub fn transformed_rhs<L: Lagrangian>(
    lag: &L,
    f: Transform,
    tau: f64,
    x: &[f64],
    v: &[f64],
    ldot: f64,
) -> Result<DVector<f64>> {
    let sys = assemble(lag, tau, x, v)?;
    let k = f.damping(sys.lagrangian)?;
    Ok(&sys.force - &sys.momentum * (k * ldot))
}

/// The Lagrangian `f(L)`.
#[derive(Debug, Clone)]
pub struct Composed<L> {
    pub inner: L,
    pub f: Transform,
}

impl<L: Lagrangian> Lagrangian for Composed<L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval<S: Scalar>(&self, tau: &S, x: &[S], v: &[S]) -> Result<S> {
        self.f.apply(&self.inner.eval(tau, x, v)?)
    }
    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}

/// Scale factor `lambda(t) = t0 / t` on `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SivConfig {
    pub t0: f64,
    pub span: (f64, f64),
}

impl SivConfig {
    pub fn new(t0: f64, span: (f64, f64)) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(Error::InvalidArgument(format!("t0 must be positive, got {t0}")));
        }
        if !(span.0 > 0.0 && span.1 > span.0) {
            return Err(Error::InvalidArgument(format!(
                "span must satisfy 0 < start < end, got {span:?}"
            )));
        }
        Ok(SivConfig { t0, span })
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        positive_time(t)?;
        Ok(self.t0 / t)
    }
}

fn positive_time(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::domain("kappa_0", format!("t = {t} is not positive")));
    }
    Ok(())
}

/// `kappa_0 = -lambda'/lambda = 1/t`.
pub fn siv_kappa(_cfg: &SivConfig, t: f64) -> Result<f64> {
    positive_time(t)?;
    Ok(1.0 / t)
}

/// `lambda(tau)^{-2} L` with `lambda = t0 / tau`: the model Lagrangian
/// seen through the scale factor, with the parameter as cosmic time.
#[derive(Debug, Clone)]
pub struct TimeScaled<L> {
    pub inner: L,
    pub siv: SivConfig,
}

impl<L: Lagrangian> Lagrangian for TimeScaled<L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval<S: Scalar>(&self, tau: &S, x: &[S], v: &[S]) -> Result<S> {
        positive_time(tau.value())?;
        let factor = tau.mul(tau).scale(1.0 / (self.siv.t0 * self.siv.t0));
        Ok(self.inner.eval(tau, x, v)?.mul(&factor))
    }
    fn is_autonomous(&self) -> bool {
        false
    }
}

/// Acceleration of a regular `L` under `dp/dt = dL/dx + kappa p`.
pub fn driven_acceleration<L: Lagrangian>(lag: &L, kappa: f64, t: f64, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    let sys = assemble(lag, t, x, v)?;
    if sys.degeneracy_rank > 0 {
        return Err(Error::UnderDetermined {
            rank: lag.dim() - sys.degeneracy_rank,
            dim: lag.dim(),
        });
    }
    let rhs = &sys.rhs + &sys.momentum * kappa;
    sys.mass_matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("mass matrix".into()))
}

/// Integrates `dp/dt = dL/dx + kappa(t) p` in the evolution parameter
/// `t`. Diagnostics are those of `lag` itself.
pub fn integrate_driven<L: Lagrangian>(
    lag: &L,
    kappa: impl Fn(f64) -> Result<f64>,
    s0: &State,
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> std::result::Result<Trajectory, IntegrationFailure<Trajectory>> {
    let d = lag.dim();
    let wrap = |ode: OdeSolution| Trajectory {
        dim: d,
        ode,
        diagnostics: Vec::new(),
    };
    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let a = driven_acceleration(lag, kappa(t)?, t, &y[..d], &y[d..])?;
        let mut out = y[d..].to_vec();
        out.extend(a.iter());
        Ok(out)
    };
    let mut y0 = s0.x.clone();
    y0.extend_from_slice(&s0.v);
    let ode = integrate_ode(rhs, |_, _| Ok(()), span.0, &y0, span.1, cfg, &[]).map_err(|f| f.map(wrap))?;
    let traj = wrap(ode);
    match traj.clone().with_diagnostics(lag, &Gauge::affine()) {
        Ok(t) => Ok(t),
        Err(error) => Err(IntegrationFailure { error, partial: traj }),
    }
}

/// SIV run: `kappa = 1/t` over the configured span.
pub fn integrate_siv<L: Lagrangian>(
    lag: &L,
    siv: &SivConfig,
    s0: &State,
    cfg: &IntegratorConfig,
) -> std::result::Result<Trajectory, IntegrationFailure<Trajectory>> {
    integrate_driven(lag, |t| siv_kappa(siv, t), s0, siv.span, cfg)
}

/// Logarithmic derivatives at the interior samples of a trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriftSeries {
    pub t: Vec<f64>,
    pub hdot_over_h: Vec<f64>,
    pub jdot_over_j: Vec<f64>,
}

/// Angular momentum `x^a p_b - x^b p_a` in the plane `(a, b)`.
pub fn angular_momentum(x: &[f64], p: &[f64], plane: (usize, usize)) -> f64 {
    let (a, b) = plane;
    x[a] * p[b] - x[b] * p[a]
}

/// Second-order derivative on a non-uniform three-point stencil.
fn three_point(t: [f64; 3], f: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

/// `d ln h / dt` and `d ln J / dt` from the diagnostics of `traj`, where
/// `h` is the Hamiltonian `p.v - L` (equal to `g(v, v)` for a quadratic
/// `L`) and `J` the angular momentum in `plane`. The series stops before
/// the first sign change of either quantity.
pub fn drift_rates(traj: &Trajectory, plane: (usize, usize)) -> Result<DriftSeries> {
    if traj.diagnostics.len() != traj.len() {
        return Err(Error::InvalidArgument("trajectory has no diagnostics".into()));
    }
    let n = traj.len();
    let h: Vec<f64> = traj.diagnostics.iter().map(|d| d.hamiltonian).collect();
    let j: Vec<f64> = (0..n)
        .map(|k| angular_momentum(&traj.ode.y[k][..traj.dim], &traj.diagnostics[k].momentum, plane))
        .collect();
    let usable = (0..n)
        .take_while(|&k| h[k] * h[0] > 0.0 && j[k] * j[0] > 0.0)
        .count();
    let mut out = DriftSeries::default();
    for k in 1..usable.saturating_sub(1) {
        let t = [traj.ode.tau[k - 1], traj.ode.tau[k], traj.ode.tau[k + 1]];
        let lh = [h[k - 1].abs().ln(), h[k].abs().ln(), h[k + 1].abs().ln()];
        let lj = [j[k - 1].abs().ln(), j[k].abs().ln(), j[k + 1].abs().ln()];
        out.t.push(t[1]);
        out.hdot_over_h.push(three_point(t, lh));
        out.jdot_over_j.push(three_point(t, lj));
    }
    Ok(out)
}

/// A point mass in the static limit: its velocity is carried but unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSource {
    pub mass: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

impl PointSource {
    pub fn at_rest(mass: f64, position: [f64; 3]) -> Self {
        PointSource {
            mass,
            position,
            velocity: [0.0; 3],
        }
    }
}

fn check_sources(sources: &[PointSource]) -> Result<()> {
    for (i, s) in sources.iter().enumerate() {
        if !(s.mass > 0.0) || s.position.iter().chain(&s.velocity).any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("source {i} must have positive mass and finite state")));
        }
    }
    Ok(())
}

/// `sigma = (r, x - x_i)` and `r` for one source, failing at the source.
fn displacement<S: Scalar>(x: &[S], s: &PointSource, index: usize) -> Result<(S, [S; 3])> {
    let dx = [
        x[1].add_const(-s.position[0]),
        x[2].add_const(-s.position[1]),
        x[3].add_const(-s.position[2]),
    ];
    let r2 = dx[0].mul(&dx[0]).add(&dx[1].mul(&dx[1])).add(&dx[2].mul(&dx[2]));
    if r2.value() == 0.0 {
        return Err(Error::Singular(format!("field point coincides with source {index}")));
    }
    Ok((r2.sqrt()?, dx))
}

/// Contravariant metric `eta + sum 2 G m_i / r_i^3 sigma_i sigma_i` at
/// `x0 = (t, x, y, z)`.
pub fn superposed_metric(sources: &[PointSource], x0: &[f64], g: f64) -> Result<DMatrix<f64>> {
    if x0.len() != 4 {
        return Err(Error::Shape(format!("field point must have 4 components, got {}", x0.len())));
    }
    check_sources(sources)?;
    let mut out = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, -1.0, -1.0]));
    for (i, s) in sources.iter().enumerate() {
        let (r, dx) = displacement(x0, s, i)?;
        let sigma = [r, dx[0], dx[1], dx[2]];
        let c = 2.0 * g * s.mass / (r * r * r);
        for a in 0..4 {
            for b in a..4 {
                let h = c * sigma[a] * sigma[b];
                out[(a, b)] += h;
                if a != b {
                    out[(b, a)] += h;
                }
            }
        }
    }
    Ok(out)
}

/// `L = g_ab v^a v^b` with the superposed metric lowered to first order,
/// `g_ab = eta_ab - eta_ac h^cd eta_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperposedField {
    pub sources: Vec<PointSource>,
    pub g: f64,
}

impl SuperposedField {
    pub fn new(sources: Vec<PointSource>, g: f64) -> Result<Self> {
        check_sources(&sources)?;
        Ok(SuperposedField { sources, g })
    }
}

impl Lagrangian for SuperposedField {
    fn dim(&self) -> usize {
        4
    }

    fn eval<S: Scalar>(&self, _tau: &S, x: &[S], v: &[S]) -> Result<S> {
        if x.len() != 4 || v.len() != 4 {
            return Err(Error::Shape("superposed field needs 4 components".into()));
        }
        let mut acc = v[0].mul(&v[0]);
        for c in &v[1..] {
            acc = acc.sub(&c.mul(c));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let (r, dx) = displacement(x, s, i)?;
            // (eta v) . sigma
            let mut proj = v[0].mul(&r);
            for k in 0..3 {
                proj = proj.sub(&dx[k].mul(&v[k + 1]));
            }
            let c = r.mul(&r).mul(&r).recip()?.scale(2.0 * self.g * s.mass);
            acc = acc.sub(&c.mul(&proj.mul(&proj)));
        }
        Ok(acc)
    }
}

/// Tangential speed giving a circular orbit of radius `radius` in the
/// x-y plane about the single source at the origin, with `v^0 = 1`.
pub fn circular_speed(field: &SuperposedField, radius: f64) -> Result<f64> {
    let accel = |speed: f64| -> Result<f64> {
        let a = driven_acceleration(field, 0.0, 0.0, &[0.0, radius, 0.0, 0.0], &[1.0, 0.0, speed, 0.0])?;
        Ok(a[1] + speed * speed / radius)
    };
    let gm: f64 = field.sources.iter().map(|s| s.mass).sum::<f64>() * field.g;
    let mut s0 = (gm / radius).sqrt();
    let mut s1 = 1.01 * s0;
    let (mut f0, mut f1) = (accel(s0)?, accel(s1)?);
    for _ in 0..60 {
        if f1 == f0 {
            break;
        }
        let s2 = s1 - f1 * (s1 - s0) / (f1 - f0);
        (s0, f0) = (s1, f1);
        s1 = s2;
        f1 = accel(s1)?;
        if (s1 - s0).abs() <= 1e-15 * s1.abs() {
            return Ok(s1);
        }
    }
    if f1.abs() <= 1e-12 {
        Ok(s1)
    } else {
        Err(Error::NoConvergence(format!("circular speed residual {f1:e}")))
    }
}
