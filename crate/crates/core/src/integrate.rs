//! Explicit Runge-Kutta integration with per-step gauge projection, event
//! location on the cubic Hermite dense output, and reparametrization of
//! finished trajectories.

use std::fmt;
use std::sync::Arc;

use crate::eom::{acceleration, Gauge};
use crate::error::{Error, Result};
use crate::lagrangian::Lagrangian;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical fixed-step fourth-order Runge-Kutta with step `h0`.
    Rk4,
    /// Runge-Kutta-Fehlberg 4(5) with PI step control.
    Rkf45,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub h0: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on the adaptive step, if any.
    pub h_max: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rkf45,
            h0: 1e-3,
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 1_000_000,
            h_max: None,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(h: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4,
            h0: h,
            ..Default::default()
        }
    }

    pub fn tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

const SAFETY: f64 = 0.9;
const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.2;
/// Steps below this fraction of the span count as underflow.
const H_MIN_REL: f64 = 1e-14;
/// Event location tolerance in the parameter.
pub const EVENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

/// A zero crossing of `g(tau, y)` to be located during integration.
#[derive(Clone)]
pub struct Event {
    pub name: String,
    pub terminal: bool,
    pub direction: Direction,
    func: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Event")
            .field("name", &self.name)
            .field("terminal", &self.terminal)
            .field("direction", &self.direction)
            .finish()
    }
}

impl Event {
    pub fn new(name: impl Into<String>, func: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Event {
            name: name.into(),
            terminal: false,
            direction: Direction::Either,
            func: Arc::new(func),
        }
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn eval(&self, tau: f64, y: &[f64]) -> f64 {
        (self.func)(tau, y)
    }

    fn crosses(&self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self.direction {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Either => rising || falling,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub name: String,
    pub tau: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    SpanEnd,
    Event(String),
    MaxSteps,
}

/// Accepted steps of a first-order system with their derivatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdeSolution {
    pub tau: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub events: Vec<EventHit>,
    pub termination: Option<Termination>,
}

impl OdeSolution {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.tau.last()?, self.y.last()?.as_slice()))
    }

    fn push(&mut self, tau: f64, y: Vec<f64>, dy: Vec<f64>) {
        self.tau.push(tau);
        self.y.push(y);
        self.dy.push(dy);
    }

    /// Index `k` with `tau[k] <= t <= tau[k+1]`, clamped to the range.
    fn segment(&self, t: f64) -> usize {
        let n = self.tau.len();
        if n < 2 {
            return 0;
        }
        let k = self.tau.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(n - 2)
    }

    /// Cubic Hermite interpolation of state and derivative.
    pub fn interpolate(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        if self.tau.len() == 1 {
            return (self.y[0].clone(), self.dy[0].clone());
        }
        let k = self.segment(t);
        hermite(
            self.tau[k],
            &self.y[k],
            &self.dy[k],
            self.tau[k + 1],
            &self.y[k + 1],
            &self.dy[k + 1],
            t,
        )
    }
}

fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let d00 = 6.0 * s2 - 6.0 * s;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = -d00;
    let d11 = 3.0 * s2 - 2.0 * s;
    let mut y = Vec::with_capacity(y0.len());
    let mut dy = Vec::with_capacity(y0.len());
    for i in 0..y0.len() {
        y.push(h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]);
        dy.push((d00 * y0[i] + d01 * y1[i]) / h + d10 * f0[i] + d11 * f1[i]);
    }
    (y, dy)
}

/// An error together with everything integrated before it.
#[derive(Debug, Clone)]
pub struct IntegrationFailure<T> {
    pub error: Error,
    pub partial: T,
}

impl<T> fmt::Display for IntegrationFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: fmt::Debug> std::error::Error for IntegrationFailure<T> {}

impl<T> IntegrationFailure<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> IntegrationFailure<U> {
        IntegrationFailure {
            error: self.error,
            partial: f(self.partial),
        }
    }
}

type StepResult = Result<(Vec<f64>, f64)>;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, ki) in out.iter_mut().zip(k.iter()) {
                *o += h * c * ki;
            }
        }
    }
    out
}

fn rk4_step<F: FnMut(f64, &[f64]) -> Result<Vec<f64>>>(f: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64) -> StepResult {
    let k2 = f(t + 0.5 * h, &axpy(y, h, &[(0.5, k1)]))?;
    let k3 = f(t + 0.5 * h, &axpy(y, h, &[(0.5, &k2)]))?;
    let k4 = f(t + h, &axpy(y, h, &[(1.0, &k3)]))?;
    let y1 = axpy(y, h, &[(1.0 / 6.0, k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]);
    Ok((y1, 0.0))
}

fn rkf45_step<F: FnMut(f64, &[f64]) -> Result<Vec<f64>>>(
    f: &mut F,
    t: f64,
    y: &[f64],
    k1: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
) -> StepResult {
    let k2 = f(t + h / 4.0, &axpy(y, h, &[(1.0 / 4.0, k1)]))?;
    let k3 = f(t + 3.0 * h / 8.0, &axpy(y, h, &[(3.0 / 32.0, k1), (9.0 / 32.0, &k2)]))?;
    let k4 = f(
        t + 12.0 * h / 13.0,
        &axpy(y, h, &[(1932.0 / 2197.0, k1), (-7200.0 / 2197.0, &k2), (7296.0 / 2197.0, &k3)]),
    )?;
    let k5 = f(
        t + h,
        &axpy(
            y,
            h,
            &[(439.0 / 216.0, k1), (-8.0, &k2), (3680.0 / 513.0, &k3), (-845.0 / 4104.0, &k4)],
        ),
    )?;
    let k6 = f(
        t + h / 2.0,
        &axpy(
            y,
            h,
            &[
                (-8.0 / 27.0, k1),
                (2.0, &k2),
                (-3544.0 / 2565.0, &k3),
                (1859.0 / 4104.0, &k4),
                (-11.0 / 40.0, &k5),
            ],
        ),
    )?;
    // propagate the fifth-order solution, estimate with the fourth
    let y5 = axpy(
        y,
        h,
        &[
            (16.0 / 135.0, k1),
            (6656.0 / 12825.0, &k3),
            (28561.0 / 56430.0, &k4),
            (-9.0 / 50.0, &k5),
            (2.0 / 55.0, &k6),
        ],
    );
    let y4 = axpy(
        y,
        h,
        &[(25.0 / 216.0, k1), (1408.0 / 2565.0, &k3), (2197.0 / 4104.0, &k4), (-1.0 / 5.0, &k5)],
    );
    let mut sum = 0.0;
    for i in 0..y.len() {
        let sc = atol + rtol * y[i].abs().max(y5[i].abs());
        sum += ((y5[i] - y4[i]) / sc).powi(2);
    }
    let err = (sum / y.len().max(1) as f64).sqrt();
    Ok((y5, err))
}

/// Locates a sign change of `event` inside one step by bisection on the
/// Hermite interpolant.
fn locate(event: &Event, t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64]) -> (f64, Vec<f64>) {
    let (mut a, mut b) = (t0, t1);
    let mut ga = event.eval(t0, y0);
    while b - a > EVENT_TOL {
        let m = 0.5 * (a + b);
        let (ym, _) = hermite(t0, y0, f0, t1, y1, f1, m);
        let gm = event.eval(m, &ym);
        if (ga < 0.0) == (gm < 0.0) && gm != 0.0 {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    let (y, _) = hermite(t0, y0, f0, t1, y1, f1, b);
    (b, y)
}

/// Integrates `y' = f(tau, y)` from `t0` to `t1`, calling `project` on every
/// accepted state (including the initial one).
pub fn integrate_ode<F, P>(
    mut f: F,
    mut project: P,
    t0: f64,
    y0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
    events: &[Event],
) -> std::result::Result<OdeSolution, IntegrationFailure<OdeSolution>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    P: FnMut(f64, &mut [f64]) -> Result<()>,
{
    let mut sol = OdeSolution::default();
    macro_rules! fail {
        ($e:expr) => {
            return Err(IntegrationFailure { error: $e, partial: sol })
        };
    }
    if !(t1 > t0) {
        fail!(Error::InvalidArgument(format!("empty span [{t0}, {t1}]")));
    }
    if !(cfg.h0 > 0.0) || !(cfg.rtol > 0.0 || cfg.atol > 0.0) {
        fail!(Error::InvalidArgument("step and tolerances must be positive".into()));
    }
    let span = t1 - t0;
    let h_min = H_MIN_REL * span;
    let mut t = t0;
    let mut y = y0.to_vec();
    if let Err(e) = project(t, &mut y) {
        fail!(e);
    }
    let mut dy = match f(t, &y) {
        Ok(d) => d,
        Err(e) => fail!(e),
    };
    let mut gvals: Vec<f64> = events.iter().map(|e| e.eval(t, &y)).collect();
    sol.push(t, y.clone(), dy.clone());

    let mut h = cfg.h0.min(span);
    if let Some(hm) = cfg.h_max {
        h = h.min(hm);
    }
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;
    while t1 - t > h_min {
        if steps >= cfg.max_steps {
            log::warn!("integration stopped at tau = {t} after {steps} steps");
            sol.termination = Some(Termination::MaxSteps);
            return Ok(sol);
        }
        h = h.min(t1 - t);
        if h < h_min {
            fail!(Error::StepUnderflow { tau: t, h });
        }
        let attempt = match cfg.method {
            Method::Rk4 => rk4_step(&mut f, t, &y, &dy, h),
            Method::Rkf45 => rkf45_step(&mut f, t, &y, &dy, h, cfg.rtol, cfg.atol),
        };
        let (mut y_new, err) = match attempt {
            Ok((yn, e)) if yn.iter().all(|c| c.is_finite()) && e.is_finite() => (yn, e),
            Ok(_) if cfg.method == Method::Rkf45 => {
                h *= 0.25;
                continue;
            }
            Ok(_) => fail!(Error::BlowUp(format!("non-finite state at tau = {}", t + h))),
            Err(e) if e.is_runtime() && cfg.method == Method::Rkf45 => {
                // trial stages left the domain; retry smaller
                if h * 0.25 < h_min {
                    fail!(e);
                }
                h *= 0.25;
                continue;
            }
            Err(e) => fail!(e),
        };
        if cfg.method == Method::Rkf45 && err > 1.0 {
            h *= (SAFETY * err.powf(-0.2)).max(SHRINK_MIN);
            continue;
        }
        let t_new = if t1 - (t + h) <= h_min { t1 } else { t + h };
        if let Err(e) = project(t_new, &mut y_new) {
            fail!(e);
        }
        let dy_new = match f(t_new, &y_new) {
            Ok(d) => d,
            Err(e) => fail!(e),
        };
        steps += 1;

        let mut first: Option<(usize, f64, Vec<f64>)> = None;
        for (k, ev) in events.iter().enumerate() {
            let g_new = ev.eval(t_new, &y_new);
            if ev.crosses(gvals[k], g_new) {
                let (te, ye) = locate(ev, t, &y, &dy, t_new, &y_new, &dy_new);
                sol.events.push(EventHit {
                    name: ev.name.clone(),
                    tau: te,
                    y: ye.clone(),
                });
                if ev.terminal && first.as_ref().is_none_or(|(_, tf, _)| te < *tf) {
                    first = Some((k, te, ye));
                }
            }
            gvals[k] = g_new;
        }
        if let Some((k, te, ye)) = first {
            let (_, de) = hermite(t, &y, &dy, t_new, &y_new, &dy_new, te);
            let de = f(te, &ye).unwrap_or(de);
            sol.events.retain(|hit| hit.tau <= te);
            sol.push(te, ye, de);
            log::debug!("terminal event `{}` at tau = {te}", events[k].name);
            sol.termination = Some(Termination::Event(events[k].name.clone()));
            return Ok(sol);
        }

        t = t_new;
        y = y_new;
        dy = dy_new;
        sol.push(t, y.clone(), dy.clone());

        if cfg.method == Method::Rkf45 {
            let e = err.max(1e-10);
            let fac = SAFETY * e.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= fac.clamp(SHRINK_MIN, GROW_MAX);
            if let Some(hm) = cfg.h_max {
                h = h.min(hm);
            }
            err_prev = e;
        }
    }
    log::debug!("reached tau = {t} in {steps} steps");
    sol.termination = Some(Termination::SpanEnd);
    Ok(sol)
}

/// A point `(tau, x, v)` of a particle trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub tau: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(tau: f64, x: Vec<f64>, v: Vec<f64>) -> Self {
        State { tau, x, v }
    }

    fn packed(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.v);
        y
    }
}

/// Quantities recomputed at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub lagrangian: f64,
    pub hamiltonian: f64,
    pub momentum: Vec<f64>,
    /// Gauge quantity minus its target; zero without a gauge.
    pub gauge_residual: f64,
}

/// A particle trajectory with per-sample diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub ode: OdeSolution,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.ode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ode.is_empty()
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.ode.termination.as_ref()
    }

    pub fn state(&self, k: usize) -> State {
        let y = &self.ode.y[k];
        State::new(self.ode.tau[k], y[..self.dim].to_vec(), y[self.dim..].to_vec())
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|k| self.state(k))
    }

    pub fn last(&self) -> Option<State> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn acceleration(&self, k: usize) -> &[f64] {
        &self.ode.dy[k][self.dim..]
    }

    /// Interpolated state at `tau`.
    pub fn at(&self, tau: f64) -> State {
        let (y, _) = self.ode.interpolate(tau);
        State::new(tau, y[..self.dim].to_vec(), y[self.dim..].to_vec())
    }

    /// Interpolated position at `tau`.
    pub fn position(&self, tau: f64) -> Vec<f64> {
        let (y, _) = self.ode.interpolate(tau);
        y[..self.dim].to_vec()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.ode.tau[0], *self.ode.tau.last().expect("non-empty"))
    }

    /// Recomputes diagnostics for `lag` at every sample.
    pub fn with_diagnostics<L: Lagrangian>(mut self, lag: &L, gauge: &Gauge) -> Result<Self> {
        self.diagnostics = (0..self.len())
            .map(|k| diagnostics(lag, gauge, &self.state(k)))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    /// Interpolates onto `n` uniformly spaced parameter values.
    pub fn resampled(&self, n: usize) -> Trajectory {
        let (a, b) = self.span();
        let mut ode = OdeSolution {
            events: self.ode.events.clone(),
            termination: self.ode.termination.clone(),
            ..Default::default()
        };
        for k in 0..n {
            let t = if n == 1 { a } else { a + (b - a) * k as f64 / (n - 1) as f64 };
            let (y, dy) = self.ode.interpolate(t);
            ode.push(t, y, dy);
        }
        Trajectory {
            dim: self.dim,
            ode,
            diagnostics: Vec::new(),
        }
    }
}

pub fn diagnostics<L: Lagrangian>(lag: &L, gauge: &Gauge, s: &State) -> Result<Diagnostics> {
    let j = crate::eom::phase_jet(lag, s.tau, &s.x, &s.v)?;
    let d = lag.dim();
    let momentum: Vec<f64> = (0..d).map(|a| j.d(d + a)).collect();
    let hamiltonian = momentum.iter().zip(&s.v).map(|(p, v)| p * v).sum::<f64>() - j.value();
    let gauge_residual = match (gauge.value(lag, s.tau, &s.x, &s.v)?, gauge.target.at(s.tau)) {
        (Some(q), Some((target, _))) => q - target,
        _ => 0.0,
    };
    Ok(Diagnostics {
        lagrangian: j.value(),
        hamiltonian,
        momentum,
        gauge_residual,
    })
}

/// Rescales `v` by a positive factor so the gauge quantity hits its target
/// at `s.tau`. `x` is untouched.
pub fn gauge_project<L: Lagrangian>(s: &State, gauge: &Gauge, lag: &L) -> Result<State> {
    let Some((target, _)) = gauge.target.at(s.tau) else {
        return Ok(s.clone());
    };
    let q0 = match gauge.value(lag, s.tau, &s.x, &s.v) {
        Ok(Some(q)) => q,
        Ok(None) => return Ok(s.clone()),
        Err(e) => return Err(Error::CannotProject(e.to_string())),
    };
    if !(q0 / target > 0.0) {
        return Err(Error::CannotProject(format!(
            "gauge quantity {q0} has the wrong sign for target {target}"
        )));
    }
    // Newton in log scale: exact in one step for homogeneous quantities
    let mut ln_s = 0.0f64;
    let mut v = s.v.clone();
    let mut q = q0;
    for _ in 0..30 {
        let r = (q / target).ln();
        if r.abs() <= 1e-15 {
            break;
        }
        let vj = crate::jets::seed_variables(&v, &(0..v.len()).collect::<Vec<_>>())?;
        let xj: Vec<crate::jets::Jet2> = s.x.iter().map(|&c| crate::jets::Jet2::constant(c)).collect();
        let qj = gauge
            .choice
            .quantity(lag, &crate::jets::Jet2::constant(s.tau), &xj, &vj)?
            .expect("gauge present");
        // d ln q / d ln s
        let order: f64 = v.iter().zip(qj.grad()).map(|(a, b)| a * b).sum::<f64>() / q;
        if !(order.abs() > 1e-12) {
            return Err(Error::CannotProject("gauge quantity is scale invariant".into()));
        }
        ln_s -= r / order;
        v = s.v.iter().map(|c| c * ln_s.exp()).collect();
        q = gauge
            .value(lag, s.tau, &s.x, &v)?
            .ok_or_else(|| Error::CannotProject("gauge vanished".into()))?;
        if !(q / target > 0.0) {
            return Err(Error::CannotProject(format!("gauge quantity became {q}")));
        }
    }
    Ok(State::new(s.tau, s.x.clone(), v))
}

/// Integrates the Euler-Lagrange equations of `lag` under `gauge`.
pub fn integrate<L: Lagrangian>(
    lag: &L,
    gauge: &Gauge,
    s0: &State,
    span: (f64, f64),
    cfg: &IntegratorConfig,
    events: &[Event],
) -> std::result::Result<Trajectory, IntegrationFailure<Trajectory>> {
    let d = lag.dim();
    let wrap = |ode: OdeSolution| Trajectory {
        dim: d,
        ode,
        diagnostics: Vec::new(),
    };
    let early = |e: Error| IntegrationFailure {
        error: e,
        partial: wrap(OdeSolution::default()),
    };
    if s0.x.len() != d || s0.v.len() != d {
        return Err(early(Error::Shape(format!("initial state must have {d} components"))));
    }
    let gauge = match gauge.target {
        crate::eom::GaugeTarget::Initial => gauge.resolved(lag, s0.tau, &s0.x, &s0.v).map_err(early)?,
        _ => gauge.clone(),
    };
    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let acc = acceleration(lag, &gauge, t, &y[..d], &y[d..])?;
        let mut out = y[d..].to_vec();
        out.extend(acc.a.iter());
        Ok(out)
    };
    let project = |t: f64, y: &mut [f64]| -> Result<()> {
        let s = State::new(t, y[..d].to_vec(), y[d..].to_vec());
        let p = gauge_project(&s, &gauge, lag)?;
        y[d..].copy_from_slice(&p.v);
        Ok(())
    };
    let mut y0 = s0.clone();
    y0.tau = span.0;
    let ode = integrate_ode(rhs, project, span.0, &y0.packed(), span.1, cfg, events).map_err(|f| f.map(wrap))?;
    let traj = wrap(ode);
    match traj.clone().with_diagnostics(lag, &gauge) {
        Ok(t) => Ok(t),
        Err(error) => Err(IntegrationFailure { error, partial: traj }),
    }
}

fn derivative(f: &impl Fn(f64) -> f64, t: f64) -> (f64, f64) {
    let h = 1e-3 * t.abs().max(1.0);
    let (fm2, fm1, f0, fp1, fp2) = (f(t - 2.0 * h), f(t - h), f(t), f(t + h), f(t + 2.0 * h));
    let d1 = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
    let d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h);
    (d1, d2)
}

/// Re-expresses a trajectory in the parameter `lambda = map(tau)`.
/// Positions are unchanged; velocities pick up `dtau/dlambda`.
/// Diagnostics are dropped since they depend on the parametrization.
pub fn reparametrize(traj: &Trajectory, map: impl Fn(f64) -> f64) -> Result<Trajectory> {
    let d = traj.dim;
    let lam: Vec<f64> = traj.ode.tau.iter().map(|&t| map(t)).collect();
    let increasing = lam.windows(2).all(|w| w[1] > w[0]);
    let decreasing = lam.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::NonMonotone("parameter map reverses direction".into()));
    }
    let mut ode = OdeSolution {
        events: Vec::new(),
        termination: traj.ode.termination.clone(),
        ..Default::default()
    };
    for k in 0..traj.len() {
        let (d1, d2) = derivative(&map, traj.ode.tau[k]);
        if d1 == 0.0 || (d1 > 0.0) != increasing {
            return Err(Error::NonMonotone(format!("d lambda / d tau = {d1} at tau = {}", traj.ode.tau[k])));
        }
        let y = &traj.ode.y[k];
        let a = &traj.ode.dy[k][d..];
        let s = 1.0 / d1;
        // d2 tau / d lambda2 = -lambda'' / lambda'^3
        let s2 = -d2 * s * s * s;
        let mut ny = y[..d].to_vec();
        ny.extend(y[d..].iter().map(|v| v * s));
        let mut ndy: Vec<f64> = y[d..].iter().map(|v| v * s).collect();
        ndy.extend(a.iter().zip(&y[d..]).map(|(ai, vi)| ai * s * s + vi * s2));
        ode.push(lam[k], ny, ndy);
    }
    for hit in &traj.ode.events {
        let mut y = hit.y.clone();
        let (d1, _) = derivative(&map, hit.tau);
        y[d..].iter_mut().for_each(|v| *v /= d1);
        ode.events.push(EventHit {
            name: hit.name.clone(),
            tau: map(hit.tau),
            y,
        });
    }
    if decreasing {
        ode.tau.reverse();
        ode.y.reverse();
        ode.dy.reverse();
    }
    Ok(Trajectory {
        dim: d,
        ode,
        diagnostics: Vec::new(),
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

/// Distance from `p` to the Hermite-interpolated path of `traj`.
fn distance_to_path(p: &[f64], traj: &Trajectory) -> f64 {
    let d = traj.dim;
    let n = traj.len();
    let (mut best_k, mut best) = (0, f64::INFINITY);
    for k in 0..n {
        let dd = dist2(p, &traj.ode.y[k][..d]);
        if dd < best {
            best = dd;
            best_k = k;
        }
    }
    let lo = best_k.saturating_sub(1);
    let hi = (best_k + 1).min(n - 1);
    for k in lo..hi {
        // golden-section search on the segment [tau_k, tau_{k+1}]
        let (mut a, mut b) = (traj.ode.tau[k], traj.ode.tau[k + 1]);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let f = |t: f64| dist2(p, &traj.position(t));
        let mut c = b - g * (b - a);
        let mut e = a + g * (b - a);
        let (mut fc, mut fe) = (f(c), f(e));
        for _ in 0..60 {
            if fc < fe {
                b = e;
                e = c;
                fe = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + g * (b - a);
                fe = f(e);
            }
        }
        best = best.min(fc).min(fe);
    }
    best.sqrt()
}

/// Symmetric Hausdorff distance between the position paths of two
/// trajectories, measured at the samples of each against the interpolated
/// path of the other.
pub fn hausdorff_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let directed = |p: &Trajectory, q: &Trajectory| {
        (0..p.len())
            .map(|k| distance_to_path(&p.ode.y[k][..p.dim], q))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eom::{geodesic_rhs, GaugeChoice, GaugeTarget};
    use crate::expr::Expr;
    use crate::lagrangian::{CanonicalTerm, LagrangianSpec};
    use crate::tensors::SymTensorField;
    use approx::assert_relative_eq;

    fn eta() -> SymTensorField {
        SymTensorField::minkowski(4)
    }

    fn l2(g: SymTensorField) -> LagrangianSpec {
        LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, g)], None).unwrap()
    }

    #[test]
    fn free_particle_moves_uniformly() {
        let s0 = State::new(0.0, vec![0.0, 1.0, 2.0, 0.0], vec![1.0, 0.3, 0.0, 0.0]);
        for cfg in [IntegratorConfig::default(), IntegratorConfig::rk4(0.1)] {
            let tr = integrate(&l2(eta()), &Gauge::affine(), &s0, (0.0, 10.0), &cfg, &[]).unwrap();
            let end = tr.last().unwrap();
            assert_eq!(end.tau, 10.0);
            let expect = [10.0, 4.0, 2.0, 0.0];
            for k in 0..4 {
                assert!((end.x[k] - expect[k]).abs() <= 1e-9);
            }
            assert_eq!(tr.termination(), Some(&Termination::SpanEnd));
            assert_eq!(tr.diagnostics.len(), tr.len());
        }
    }

    #[test]
    fn exponential_decay_accuracy() {
        let sol = integrate_ode(
            |_, y| Ok(vec![-y[0]]),
            |_, _| Ok(()),
            0.0,
            &[1.0],
            5.0,
            &IntegratorConfig::default(),
            &[],
        )
        .unwrap();
        let (_, y) = sol.last().unwrap();
        assert_relative_eq!(y[0], (-5.0f64).exp(), max_relative = 1e-8);
        // dense output between steps
        let (y, dy) = sol.interpolate(2.345);
        assert_relative_eq!(y[0], (-2.345f64).exp(), max_relative = 1e-6);
        assert_relative_eq!(dy[0], -(-2.345f64).exp(), max_relative = 1e-5);
    }

    #[test]
    fn events_are_located_precisely() {
        // harmonic oscillator, x = cos t crosses zero at pi/2
        let ev = Event::new("zero", |_, y| y[0]).direction(Direction::Falling).terminal();
        let sol = integrate_ode(
            |_, y| Ok(vec![y[1], -y[0]]),
            |_, _| Ok(()),
            0.0,
            &[1.0, 0.0],
            10.0,
            &IntegratorConfig::default(),
            &[ev],
        )
        .unwrap();
        assert_eq!(sol.termination, Some(Termination::Event("zero".into())));
        let (t, _) = sol.last().unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-9);

        let rising = Event::new("up", |_, y| y[0]).direction(Direction::Rising);
        let sol = integrate_ode(
            |_, y| Ok(vec![y[1], -y[0]]),
            |_, _| Ok(()),
            0.0,
            &[1.0, 0.0],
            10.0,
            &IntegratorConfig::default(),
            &[rising],
        )
        .unwrap();
        let taus: Vec<f64> = sol.events.iter().map(|h| h.tau).collect();
        assert_eq!(taus.len(), 1);
        assert!((taus[0] - 1.5 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn stiff_blow_up_underflows() {
        // y' = y^2 blows up at t = 1
        let res = integrate_ode(
            |_, y| Ok(vec![y[0] * y[0]]),
            |_, _| Ok(()),
            0.0,
            &[1.0],
            2.0,
            &IntegratorConfig::default(),
            &[],
        );
        let failure = res.unwrap_err();
        assert!(matches!(failure.error, Error::StepUnderflow { .. } | Error::BlowUp(_)));
        let (t, _) = failure.partial.last().unwrap();
        assert!(t < 1.0 && t > 0.99);
    }

    #[test]
    fn max_steps_stops_early() {
        let cfg = IntegratorConfig {
            max_steps: 3,
            ..IntegratorConfig::rk4(0.1)
        };
        let sol = integrate_ode(|_, _| Ok(vec![1.0]), |_, _| Ok(()), 0.0, &[0.0], 1.0, &cfg, &[]).unwrap();
        assert_eq!(sol.termination, Some(Termination::MaxSteps));
        assert_eq!(sol.len(), 4);
    }

    #[test]
    fn straight_geodesic_in_polar_coordinates() {
        let g = SymTensorField::diagonal(&[Expr::Num(1.0), Expr::parse("x0^2").unwrap()]).unwrap();
        let s0 = [2.0, 0.0, 0.0, 0.5];
        // flat-plane geodesics in polar coordinates are straight lines:
        // r(t)^2 = r0^2 + (r0 theta0' t)^2
        let sol = integrate_ode(
            |_, y| {
                let a = geodesic_rhs(&g, &y[..2], &y[2..])?;
                Ok(vec![y[2], y[3], a[0], a[1]])
            },
            |_, _| Ok(()),
            0.0,
            &s0,
            4.0,
            &IntegratorConfig::default(),
            &[],
        )
        .unwrap();
        let (t, y) = sol.last().unwrap();
        let expect = (4.0 + (2.0 * 0.5 * t).powi(2)).sqrt();
        assert_relative_eq!(y[0], expect, max_relative = 1e-9);
        let l = Lagrangian::eval(&l2(g.clone()), &0.0, &y[..2], &y[2..]).unwrap();
        assert_relative_eq!(l, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn projection_examples() {
        let l1 = LagrangianSpec::metric(1.0, eta()).unwrap();
        let gauge = Gauge::new(GaugeChoice::MetricNormConst(eta()));
        let s = State::new(0.0, vec![0.0; 4], vec![2.0, 0.0, 0.0, 0.0]);
        let p = gauge_project(&s, &gauge, &l1).unwrap();
        assert_eq!(p.v, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(gauge_project(&p, &gauge, &l1).unwrap(), p);

        let gauge = Gauge::new(GaugeChoice::LagrangianConst).with_target(GaugeTarget::Value(3.0));
        let s = State::new(0.0, vec![0.0; 4], vec![1.2, 0.3, 0.0, 0.1]);
        let p = gauge_project(&s, &gauge, &l1).unwrap();
        let l = crate::lagrangian::eval_f64(&l1, &p.x, &p.v).unwrap();
        assert_relative_eq!(l, 3.0, max_relative = 1e-15);
        assert_relative_eq!(p.v[1] / p.v[0], 0.25, max_relative = 1e-14);

        let spacelike = State::new(0.0, vec![0.0; 4], vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            gauge_project(&spacelike, &Gauge::new(GaugeChoice::MetricNormConst(eta())), &l1),
            Err(Error::CannotProject(_))
        ));
    }

    fn orbit_metric() -> SymTensorField {
        SymTensorField::diagonal(&[
            Expr::parse("1 - 0.2/r").unwrap(),
            Expr::parse("-(1 + 0.2/r)").unwrap(),
            Expr::parse("-(1 + 0.2/r)").unwrap(),
            Expr::Num(-1.0),
        ])
        .unwrap()
    }

    fn orbit_start() -> State {
        State::new(0.0, vec![0.0, 3.0, 0.0, 0.0], vec![1.0, 0.02, 0.15, 0.0])
    }

    #[test]
    fn homogeneous_dynamics_conserve_gauge_and_energy() {
        let g = orbit_metric();
        let l1 = LagrangianSpec::metric(1.0, g.clone()).unwrap();
        let gauge = Gauge::new(GaugeChoice::LagrangianConst);
        let tr = integrate(&l1, &gauge, &orbit_start(), (0.0, 10.0), &IntegratorConfig::default(), &[]).unwrap();
        for d in &tr.diagnostics {
            assert!(d.gauge_residual.abs() <= 1e-9);
            assert!(d.hamiltonian.abs() <= 1e-12);
        }
        let lq = l2(g);
        let tr = integrate(&lq, &Gauge::affine(), &orbit_start(), (0.0, 10.0), &IntegratorConfig::default(), &[])
            .unwrap();
        let h0 = tr.diagnostics[0].hamiltonian;
        for d in &tr.diagnostics {
            assert!((d.hamiltonian - h0).abs() <= 1e-8 * h0.abs());
        }
    }

    #[test]
    fn reparametrization_examples() {
        let l1 = LagrangianSpec::metric(1.0, orbit_metric()).unwrap();
        let gauge = Gauge::new(GaugeChoice::LagrangianConst);
        // short steps keep the cubic interpolant well below the tolerance
        let cfg = IntegratorConfig {
            h_max: Some(0.05),
            ..Default::default()
        };
        let tr = integrate(&l1, &gauge, &orbit_start(), (0.0, 5.0), &cfg, &[]).unwrap();

        let same = reparametrize(&tr, |t| t).unwrap();
        for k in 0..tr.len() {
            assert_eq!(same.ode.tau[k], tr.ode.tau[k]);
            for (a, b) in same.ode.y[k].iter().zip(&tr.ode.y[k]) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        let half = reparametrize(&tr, |t| 2.0 * t).unwrap();
        for k in 0..tr.len() {
            let (a, b) = (half.state(k), tr.state(k));
            assert_eq!(a.x, b.x);
            for i in 0..4 {
                assert_relative_eq!(a.v[i], 0.5 * b.v[i], max_relative = 1e-12);
            }
        }

        assert!(matches!(
            reparametrize(&tr, |t| (t - 2.0).powi(2)),
            Err(Error::NonMonotone(_))
        ));

        // integrate directly in lambda = tau + 0.1 sin(tau): the gauge target
        // becomes L0 / (1 + 0.1 cos(tau(lambda)))
        let l0 = crate::lagrangian::eval_f64(&l1, &orbit_start().x, &orbit_start().v).unwrap();
        let map = |t: f64| t + 0.1 * t.sin();
        let inverse = move |lam: f64| {
            let mut t = lam;
            for _ in 0..50 {
                t -= (map(t) - lam) / (1.0 + 0.1 * t.cos());
            }
            t
        };
        let schedule = move |lam: f64| {
            let t = inverse(lam);
            let dl = 1.0 + 0.1 * t.cos();
            let target = l0 / dl;
            // d target / d lambda = -l0 dl' / dl^2 * dtau/dlambda
            let rate = l0 * 0.1 * t.sin() / (dl * dl) / dl;
            (target, rate)
        };
        let g2 = Gauge::new(GaugeChoice::LagrangianConst).with_target(GaugeTarget::Schedule(Arc::new(schedule)));
        let mut s0 = orbit_start();
        s0.v.iter_mut().for_each(|c| *c /= 1.1);
        let direct = integrate(&l1, &g2, &s0, (0.0, map(5.0)), &cfg, &[]).unwrap();
        let mapped = reparametrize(&tr, map).unwrap();
        let (d1, d2) = (hausdorff_distance(&direct, &mapped), hausdorff_distance(&direct, &tr));
        assert!(d1 < 1e-8 && d2 < 1e-8, "{d1:e} {d2:e}");
        // same parameter values give the same points
        let p = direct.position(3.0);
        let q = mapped.position(3.0);
        assert!(dist2(&p, &q).sqrt() < 1e-7);
    }
}
