//! The static isotropic rank-n system `S_n(r, w, u) = psi(r) w^n + phi(r) u^n`
//! with `w = dt/dtau` and `u = dr/dtau`: closed-form equations of motion,
//! conserved quantities, zero-acceleration speed and the small-`u`
//! divergence of the radial acceleration for `n > 2`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::integrate::{integrate_ode, Direction, Event, IntegrationFailure, IntegratorConfig, OdeSolution, Termination};
use crate::jets::{seed_all, Scalar};
use crate::lagrangian::{CanonicalTerm, LagrangianSpec};
use crate::tensors::SymTensorField;

/// Coefficient of the `u^2 phi'/phi` term in the radial equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiTerm {
    /// `-u^2 phi' / ((n-1) phi)`. Its zero-acceleration speed is
    /// `(psi' / (n phi'))^{1/n}`; it conserves `S_n` only where `phi' = 0`.
    #[default]
    OverNMinusOne,
    /// `-u^2 phi' / (n phi)`: the exact Euler-Lagrange equation of
    /// `L = S_n`, which conserves `S_n` for any profiles.
    OverN,
}

/// Profile shapes for `psi` and `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `1`
    Unit,
    /// `1 + a r`
    Affine(f64),
    /// `exp(a r)`
    Exponential(f64),
    /// `b r`
    Proportional(f64),
}

impl Profile {
    pub fn expr(self) -> Expr {
        let text = match self {
            Profile::Unit => "1".to_string(),
            Profile::Affine(a) => format!("1 + ({a:e})*r"),
            Profile::Exponential(a) => format!("exp(({a:e})*r)"),
            Profile::Proportional(b) => format!("({b:e})*r"),
        };
        Expr::parse(&text).expect("catalog profiles parse")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnRadialSystem {
    pub n: u32,
    pub psi: Expr,
    pub phi: Expr,
    pub phi_term: PhiTerm,
}

/// `(tau, r, w, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialState {
    pub tau: f64,
    pub r: f64,
    pub w: f64,
    pub u: f64,
}

impl RadialState {
    pub fn new(tau: f64, r: f64, w: f64, u: f64) -> Self {
        RadialState { tau, r, w, u }
    }
}

/// Value and first derivative of a profile at `r`.
#[derive(Debug, Clone, Copy)]
struct Profiled {
    value: f64,
    slope: f64,
}

impl SnRadialSystem {
    pub fn new(n: u32, psi: Expr, phi: Expr) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {n}")));
        }
        for (name, e) in [("psi", &psi), ("phi", &phi)] {
            if let Some(v) = e.variables().into_iter().find(|v| v != "r") {
                return Err(Error::InvalidArgument(format!("{name} may only depend on r, found `{v}`")));
            }
            if let Some(p) = e.params().into_iter().next() {
                return Err(Error::UnboundName(p));
            }
        }
        Ok(SnRadialSystem {
            n,
            psi,
            phi,
            phi_term: PhiTerm::default(),
        })
    }

    pub fn from_profiles(n: u32, psi: Profile, phi: Profile) -> Result<Self> {
        Self::new(n, psi.expr(), phi.expr())
    }

    /// Parses profile strings and substitutes parameters.
    pub fn parse(n: u32, psi: &str, phi: &str, params: &HashMap<String, f64>) -> Result<Self> {
        Self::new(n, Expr::parse(psi)?.resolve(params)?, Expr::parse(phi)?.resolve(params)?)
    }

    pub fn with_phi_term(mut self, term: PhiTerm) -> Self {
        self.phi_term = term;
        self
    }

    fn profile(&self, e: &Expr, name: &str, r: f64) -> Result<Profiled> {
        let rj = seed_all(&[r]).remove(0);
        let j = e
            .eval(&rj, &[("r", rj.clone())][..])
            .map_err(|err| err.in_context(name))?;
        Ok(Profiled {
            value: j.value(),
            slope: j.d(0),
        })
    }

    pub fn psi_at(&self, r: f64) -> Result<(f64, f64)> {
        let p = self.profile(&self.psi, "psi", r)?;
        Ok((p.value, p.slope))
    }

    pub fn phi_at(&self, r: f64) -> Result<(f64, f64)> {
        let p = self.profile(&self.phi, "phi", r)?;
        Ok((p.value, p.slope))
    }

    fn nonzero(&self, r: f64) -> Result<(Profiled, Profiled)> {
        let psi = self.profile(&self.psi, "psi", r)?;
        let phi = self.profile(&self.phi, "phi", r)?;
        if psi.value == 0.0 {
            return Err(Error::domain("psi", format!("vanishes at r = {r}")));
        }
        if phi.value == 0.0 {
            return Err(Error::domain("phi", format!("vanishes at r = {r}")));
        }
        Ok((psi, phi))
    }

    /// `S_n(r, w, u)`.
    pub fn value(&self, s: &RadialState) -> Result<f64> {
        let (psi, phi) = self.nonzero(s.r)?;
        let n = self.n as i32;
        Ok(psi.value * s.w.powi(n) + phi.value * s.u.powi(n))
    }

    /// `(du/dtau, dw/dtau)`.
    pub fn rhs(&self, s: &RadialState) -> Result<(f64, f64)> {
        let (psi, phi) = self.nonzero(s.r)?;
        let n = self.n as f64;
        let ni = self.n as i32;
        let damping = match self.phi_term {
            PhiTerm::OverNMinusOne => n - 1.0,
            PhiTerm::OverN => n,
        };
        let mut du = -s.u * s.u * phi.slope / (damping * phi.value);
        if psi.slope != 0.0 {
            if self.n > 2 && s.u == 0.0 {
                return Err(Error::BlowUp(format!(
                    "infinite radial acceleration at r = {}, u = 0",
                    s.r
                )));
            }
            du += s.w.powi(ni) * psi.slope / (n * (n - 1.0) * phi.value * s.u.powi(ni - 2));
        }
        let dw = -s.w * s.u * psi.slope / ((n - 1.0) * psi.value);
        Ok((du, dw))
    }

    /// `p_0 = n psi(r) w^{n-1}`.
    pub fn conserved_p0(&self, s: &RadialState) -> Result<f64> {
        let (psi, _) = self.psi_at(s.r)?;
        Ok(self.n as f64 * psi * s.w.powi(self.n as i32 - 1))
    }

    /// Inverse of [`Self::conserved_p0`] for `w`.
    pub fn w_from_p0(&self, r: f64, p0: f64) -> Result<f64> {
        let (psi, _) = self.psi_at(r)?;
        let ratio = p0 / (self.n as f64 * psi);
        ratio.real_root(self.n - 1).map_err(|e| e.in_context("w from p0"))
    }

    /// `p_r = n phi(r) u^{n-1}`.
    pub fn radial_momentum(&self, s: &RadialState) -> Result<f64> {
        let (phi, _) = self.phi_at(s.r)?;
        Ok(self.n as f64 * phi * s.u.powi(self.n as i32 - 1))
    }

    /// The same momentum written as `(phi/psi) p_0 (u/w)^{n-1}`.
    pub fn radial_momentum_from_p0(&self, s: &RadialState) -> Result<f64> {
        let (psi, phi) = self.nonzero(s.r)?;
        let p0 = self.conserved_p0(s)?;
        Ok(phi.value / psi.value * p0 * (s.u / s.w).powi(self.n as i32 - 1))
    }

    /// Speed `u/w` at which the radial acceleration vanishes, if real.
    pub fn zero_accel_speed(&self, r: f64) -> Result<Option<f64>> {
        let (psi, phi) = self.nonzero(r)?;
        if phi.slope == 0.0 {
            return Err(Error::Indeterminate(format!("phi' = 0 at r = {r}")));
        }
        if psi.slope == 0.0 {
            return Ok(Some(0.0));
        }
        let n = self.n as f64;
        let k = match self.phi_term {
            PhiTerm::OverNMinusOne => n,
            PhiTerm::OverN => n - 1.0,
        };
        let radicand = psi.slope / (k * phi.slope);
        Ok((radicand > 0.0).then(|| radicand.powf(1.0 / n)))
    }

    /// Rank-n tensor on `(t, r)` with `S_{0..0} = psi(r)` and
    /// `S_{1..1} = phi(r)`, with `r` read from `x1`.
    pub fn tensor(&self) -> SymTensorField {
        let n = self.n as usize;
        let rename = |e: &Expr| substitute_r(e);
        SymTensorField::new(n, 2)
            .and_then(|s| s.with(&vec![0; n], rename(&self.psi)))
            .and_then(|s| s.with(&vec![1; n], rename(&self.phi)))
            .expect("rank and dimension are valid")
    }

    /// `L = S_n(v, .., v)` on `(x0, x1) = (t, r)`.
    pub fn lagrangian(&self) -> LagrangianSpec {
        LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, self.tensor())], None)
            .expect("single term")
    }

    /// Integrates `y = (t, r, w, u)` in the affine parameter. For `n > 2` a
    /// terminal event stops the run when `|u|` falls below `u_floor` while
    /// `psi' != 0`, reported as a blow-up failure.
    pub fn integrate(
        &self,
        s0: &RadialState,
        t0: f64,
        span: (f64, f64),
        cfg: &IntegratorConfig,
        u_floor: f64,
    ) -> std::result::Result<OdeSolution, IntegrationFailure<OdeSolution>> {
        let rhs = |_: f64, y: &[f64]| -> Result<Vec<f64>> {
            let s = RadialState::new(0.0, y[1], y[2], y[3]);
            let (du, dw) = self.rhs(&s)?;
            Ok(vec![y[2], y[3], dw, du])
        };
        let mut events = Vec::new();
        if self.n > 2 {
            let sys = self.clone();
            events.push(
                Event::new(BLOW_UP, move |_, y: &[f64]| {
                    let forced = sys.psi_at(y[1]).map_or(true, |(_, d)| d != 0.0);
                    if forced {
                        y[3].abs() - u_floor
                    } else {
                        1.0
                    }
                })
                .direction(Direction::Falling)
                .terminal(),
            );
        }
        let y0 = [t0, s0.r, s0.w, s0.u];
        let sol = integrate_ode(rhs, |_, _| Ok(()), span.0, &y0, span.1, cfg, &events)?;
        if sol.termination == Some(Termination::Event(BLOW_UP.into())) {
            let (tau, y) = sol.last().expect("event sample");
            let error = Error::BlowUp(format!(
                "|u| fell below {u_floor:e} at tau = {tau}, r = {}: radial acceleration diverges",
                y[1]
            ));
            return Err(IntegrationFailure { error, partial: sol });
        }
        Ok(sol)
    }
}

/// Event name used for the small-`u` stop.
pub const BLOW_UP: &str = "blow-up";

fn substitute_r(e: &Expr) -> Expr {
    match e {
        Expr::Var(v) if v == "r" => Expr::Var("x1".into()),
        Expr::Neg(a) => Expr::Neg(Box::new(substitute_r(a))),
        Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(substitute_r(a)), Box::new(substitute_r(b))),
        Expr::Call(f, args) => Expr::Call(*f, args.iter().map(substitute_r).collect()),
        other => other.clone(),
    }
}

/// Least-squares slope of `log|du/dtau|` against `log u`, with its
/// standard error.
pub fn blowup_exponent(sys: &SnRadialSystem, states: &[RadialState]) -> Result<(f64, f64)> {
    if states.len() < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 states, got {}", states.len())));
    }
    if states.iter().any(|s| !(s.u > 0.0)) {
        return Err(Error::InvalidArgument("all u must be positive".into()));
    }
    let (lo, hi) = states
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.u), hi.max(s.u)));
    if hi / lo < 100.0 {
        return Err(Error::InvalidArgument(format!(
            "u spans {:.2} decades, need at least 2",
            (hi / lo).log10()
        )));
    }
    let mut pts = Vec::with_capacity(states.len());
    for s in states {
        let (_, dpsi) = sys.psi_at(s.r)?;
        if dpsi == 0.0 {
            return Err(Error::InvalidArgument(format!("psi' vanishes at r = {}", s.r)));
        }
        let (du, _) = sys.rhs(s)?;
        if du == 0.0 {
            return Err(Error::Indeterminate("zero acceleration in fit".into()));
        }
        pts.push((s.u.ln(), du.abs().ln()));
    }
    Ok(linear_fit(&pts))
}

/// Slope and its standard error for `y ~ a + b x`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - icept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 {
        (ss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}

/// States at fixed `(r, w)` with `u` log-spaced over `[u_min, u_max]`.
pub fn log_spaced_states(r: f64, w: f64, u_min: f64, u_max: f64, count: usize) -> Vec<RadialState> {
    (0..count)
        .map(|k| {
            let f = k as f64 / (count - 1).max(1) as f64;
            RadialState::new(0.0, r, w, u_min * (u_max / u_min).powf(f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eom::{acceleration, Gauge, GaugeChoice};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sys(n: u32, psi: &str, phi: &str) -> SnRadialSystem {
        SnRadialSystem::parse(n, psi, phi, &HashMap::new()).unwrap()
    }

    #[test]
    fn free_motion_without_gradients() {
        let s = sys(3, "2", "1.5");
        assert_eq!(s.rhs(&RadialState::new(0.0, 1.0, 1.0, 0.3)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn centripetal_form_for_linear_phi() {
        let s = sys(2, "1", "0.7*r");
        let st = RadialState::new(0.0, 2.0, 1.0, 0.4);
        let (du, _) = s.rhs(&st).unwrap();
        assert_relative_eq!(du, -0.16 / 2.0, max_relative = 1e-14);
        let el = s.clone().with_phi_term(PhiTerm::OverN);
        assert_relative_eq!(el.rhs(&st).unwrap().0, -0.16 / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn cubic_example_value() {
        let s = sys(3, "1 + 0.1*r", "1");
        let (du, _) = s.rhs(&RadialState::new(0.0, 1.0, 1.0, 0.01)).unwrap();
        assert_relative_eq!(du, 100.0 * 0.1 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn blow_up_at_rest() {
        let s = sys(3, "1 + 0.1*r", "1");
        assert!(matches!(
            s.rhs(&RadialState::new(0.0, 1.0, 1.0, 0.0)),
            Err(Error::BlowUp(_))
        ));
        // no gradient, no divergence
        let flat = sys(3, "1", "1");
        assert_eq!(flat.rhs(&RadialState::new(0.0, 1.0, 1.0, 0.0)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn vanishing_profiles_are_domain_errors() {
        let s = sys(2, "r - 1", "1");
        assert!(matches!(
            s.rhs(&RadialState::new(0.0, 1.0, 1.0, 0.1)),
            Err(Error::Domain { .. })
        ));
        assert!(SnRadialSystem::new(1, Expr::Num(1.0), Expr::Num(1.0)).is_err());
        assert!(matches!(
            SnRadialSystem::new(2, Expr::parse("a*r").unwrap(), Expr::Num(1.0)),
            Err(Error::UnboundName(_))
        ));
        assert!(SnRadialSystem::new(2, Expr::parse("t").unwrap(), Expr::Num(1.0)).is_err());
    }

    #[test]
    fn momenta() {
        let s = sys(2, "1", "1");
        let st = RadialState::new(0.0, 1.0, 1.0, 0.5);
        assert_eq!(s.conserved_p0(&st).unwrap(), 2.0);
        assert_eq!(s.radial_momentum(&st).unwrap(), 1.0);
        let rest = RadialState::new(0.0, 1.0, 1.0, 0.0);
        assert_eq!(s.radial_momentum(&rest).unwrap(), 0.0);

        let s = sys(4, "exp(0.3*r)", "1 + 0.2*r");
        let st = RadialState::new(0.0, 1.3, 1.7, 0.4);
        let p0 = s.conserved_p0(&st).unwrap();
        assert_relative_eq!(s.w_from_p0(1.3, p0).unwrap(), 1.7, max_relative = 1e-12);
    }

    #[test]
    fn zero_acceleration_speed() {
        assert_eq!(sys(3, "1", "1 + r").zero_accel_speed(1.0).unwrap(), Some(0.0));
        let s = sys(3, "3*r", "r");
        let v = s.zero_accel_speed(1.0).unwrap().unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-15);
        assert!(matches!(sys(3, "r", "1").zero_accel_speed(1.0), Err(Error::Indeterminate(_))));
        assert_eq!(sys(3, "-r", "2 + r").zero_accel_speed(1.0).unwrap(), None);

        for (n, psi, phi) in [(3, "1 + 0.5*r", "1 + 0.2*r"), (4, "exp(0.2*r)", "0.5*r"), (2, "1 + r", "1 + 3*r")] {
            for term in [PhiTerm::OverNMinusOne, PhiTerm::OverN] {
                let s = sys(n, psi, phi).with_phi_term(term);
                let r = 1.4;
                let v = s.zero_accel_speed(r).unwrap().unwrap();
                let (du, _) = s.rhs(&RadialState::new(0.0, r, 1.0, v)).unwrap();
                assert!(du.abs() <= 1e-10, "n={n} {term:?}: {du}");
            }
        }
    }

    #[test]
    fn blow_up_slopes() {
        for n in [3u32, 4] {
            let s = sys(n, "1 + 0.1*r", "1");
            let states = log_spaced_states(1.0, 1.0, 1e-4, 1e-1, 16);
            let (slope, err) = blowup_exponent(&s, &states).unwrap();
            assert!((slope - (2.0 - n as f64)).abs() < 0.05, "n={n}: {slope}");
            assert!(err < 0.05);
        }
        // for n = 2 the u^2 term alone scales with slope 2
        let s = sys(2, "1", "1 + 0.5*r");
        let pts: Vec<(f64, f64)> = log_spaced_states(1.0, 1.0, 1e-3, 1.0, 12)
            .iter()
            .map(|st| (st.u.ln(), s.rhs(st).unwrap().0.abs().ln()))
            .collect();
        assert_relative_eq!(linear_fit(&pts).0, 2.0, max_relative = 1e-12);

        let s = sys(3, "1 + 0.1*r", "1");
        assert!(blowup_exponent(&s, &log_spaced_states(1.0, 1.0, 0.01, 0.05, 10)).is_err());
        assert!(blowup_exponent(&s, &log_spaced_states(1.0, 1.0, 0.001, 1.0, 5)).is_err());
    }

    #[test]
    fn conserved_along_trajectories() {
        let cfg = IntegratorConfig::default();
        for n in [2u32, 3, 4] {
            for (psi, phi, term) in [
                ("1 + 0.1*r", "1", PhiTerm::OverNMinusOne),
                ("exp(0.2*r)", "1 + 0.3*r", PhiTerm::OverN),
            ] {
                let s = sys(n, psi, phi).with_phi_term(term);
                let s0 = RadialState::new(0.0, 1.0, 1.0, 0.5);
                let sol = s.integrate(&s0, 0.0, (0.0, 10.0), &cfg, 1e-6).unwrap();
                let base = (s.value(&s0).unwrap(), s.conserved_p0(&s0).unwrap());
                for y in &sol.y {
                    let st = RadialState::new(0.0, y[1], y[2], y[3]);
                    assert!((s.value(&st).unwrap() / base.0 - 1.0).abs() <= 1e-8);
                    assert!((s.conserved_p0(&st).unwrap() / base.1 - 1.0).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn default_form_drifts_when_phi_varies() {
        let s = sys(3, "1", "1 + 0.5*r");
        let s0 = RadialState::new(0.0, 1.0, 1.0, 0.5);
        let sol = s.integrate(&s0, 0.0, (0.0, 10.0), &IntegratorConfig::default(), 1e-6).unwrap();
        let (_, y) = sol.last().unwrap();
        let end = RadialState::new(0.0, y[1], y[2], y[3]);
        let drift = (s.value(&end).unwrap() / s.value(&s0).unwrap() - 1.0).abs();
        assert!(drift > 1e-3, "drift {drift}");
    }

    #[test]
    fn blow_up_event_fires() {
        let s = sys(3, "1 - 0.1*r", "1");
        let s0 = RadialState::new(0.0, 1.0, 1.0, 0.2);
        let failure = s
            .integrate(&s0, 0.0, (0.0, 10.0), &IntegratorConfig::default(), 1e-6)
            .unwrap_err();
        assert!(matches!(failure.error, Error::BlowUp(_)));
        let (tau, y) = failure.partial.last().unwrap();
        assert!(y[3].abs() <= 1.01e-6);
        // u^2 decreases linearly: tau* = u0^2 / (2 |C|), C = w^3 psi' / (6 phi)
        let c = 0.1 / 6.0;
        assert!((tau - 0.04 / (2.0 * c)).abs() < 0.05, "tau {tau}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn agrees_with_generic_equations(
            n in 2u32..5,
            r in 0.5f64..3.0,
            w in 0.5f64..2.0,
            u in 0.1f64..1.0,
            a in -0.3f64..0.3,
            b in 0.05f64..0.5,
        ) {
            let s = sys(n, &format!("exp({a}*r)"), &format!("1 + {b}*r")).with_phi_term(PhiTerm::OverN);
            let lag = s.lagrangian();
            let gauge = Gauge::new(GaugeChoice::LagrangianConst);
            let acc = acceleration(&lag, &gauge, 0.0, &[0.0, r], &[w, u]).unwrap();
            let (du, dw) = s.rhs(&RadialState::new(0.0, r, w, u)).unwrap();
            prop_assert!((acc.a[1] - du).abs() <= 1e-8 * du.abs().max(1e-8), "du {} vs {}", acc.a[1], du);
            prop_assert!((acc.a[0] - dw).abs() <= 1e-8 * dw.abs().max(1e-8), "dw {} vs {}", acc.a[0], dw);

            // the default form coincides with it when phi is constant
            let flat_phi = sys(n, &format!("exp({a}*r)"), "1.3");
            let acc = acceleration(&flat_phi.lagrangian(), &gauge, 0.0, &[0.0, r], &[w, u]).unwrap();
            let (du, _) = flat_phi.rhs(&RadialState::new(0.0, r, w, u)).unwrap();
            prop_assert!((acc.a[1] - du).abs() <= 1e-8 * du.abs().max(1e-8));
        }

        #[test]
        fn momentum_forms_agree(
            n in 2u32..5,
            r in 0.5f64..3.0,
            w in 0.5f64..2.0,
            u in -1.0f64..1.0,
        ) {
            let s = sys(n, "1 + 0.2*r", "exp(0.1*r)");
            let st = RadialState::new(0.0, r, w, u);
            let a = s.radial_momentum(&st).unwrap();
            let b = s.radial_momentum_from_p0(&st).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }
}
