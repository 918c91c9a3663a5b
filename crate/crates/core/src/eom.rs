//! Euler-Lagrange equations `M a = b` with
//! `M_ab = d2L/dv^a dv^b` and `b_a = dL/dx^a - d2L/dv^a dx^b v^b - d2L/dv^a dtau`,
//! solved with one appended gauge row when `M` is degenerate, plus metric
//! geometry: Christoffel symbols, geodesics, curvature and deviation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jets::{seed_variables, Jet2, Scalar};
use crate::lagrangian::Lagrangian;
use crate::tensors::SymTensorField;

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Relative residual above which the augmented solve is inconsistent.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// The linear system for the acceleration at one phase-space point.
#[derive(Debug, Clone)]
pub struct EomSystem {
    pub mass_matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Number of singular values of `M` below `RANK_TOL * sigma_max`.
    pub degeneracy_rank: usize,
    pub lagrangian: f64,
    /// `dL/dv`.
    pub momentum: DVector<f64>,
    /// `dL/dx`.
    pub force: DVector<f64>,
}

fn phase_jets(tau: f64, x: &[f64], v: &[f64], with_tau: bool) -> Result<(Jet2, Vec<Jet2>, Vec<Jet2>)> {
    let d = x.len();
    let mut point = x.to_vec();
    point.extend_from_slice(v);
    if with_tau {
        point.push(tau);
    }
    let active: Vec<usize> = (0..point.len()).collect();
    let mut jets = seed_variables(&point, &active)?;
    let t = if with_tau {
        jets.pop().expect("tau seeded")
    } else {
        Jet2::constant(tau)
    };
    let vj = jets.split_off(d);
    Ok((t, jets, vj))
}

fn check_point(d: usize, x: &[f64], v: &[f64]) -> Result<()> {
    if x.len() != d || v.len() != d {
        return Err(Error::Shape(format!(
            "expected {d} components, got |x| = {}, |v| = {}",
            x.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Second-order jet of `L` in `(x, v[, tau])`.
pub fn phase_jet<L: Lagrangian>(lag: &L, tau: f64, x: &[f64], v: &[f64]) -> Result<Jet2> {
    check_point(lag.dim(), x, v)?;
    let (t, xj, vj) = phase_jets(tau, x, v, !lag.is_autonomous())?;
    lag.eval(&t, &xj, &vj)
}

fn degeneracy(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return m.nrows();
    }
    sv.iter().filter(|&&s| s < RANK_TOL * smax).count()
}

/// Builds `M` and `b` from one mixed second-order jet evaluation.
pub fn assemble<L: Lagrangian>(lag: &L, tau: f64, x: &[f64], v: &[f64]) -> Result<EomSystem> {
    let d = lag.dim();
    let j = phase_jet(lag, tau, x, v)?;
    let has_tau = !lag.is_autonomous();
    let m = DMatrix::from_fn(d, d, |a, b| j.dd(d + a, d + b));
    let rhs = DVector::from_fn(d, |a, _| {
        let mut acc = j.d(a);
        for (b, vb) in v.iter().enumerate() {
            acc -= j.dd(d + a, b) * vb;
        }
        if has_tau {
            acc -= j.dd(d + a, 2 * d);
        }
        acc
    });
    Ok(EomSystem {
        degeneracy_rank: degeneracy(&m),
        mass_matrix: m,
        rhs,
        lagrangian: j.value(),
        momentum: DVector::from_fn(d, |a, _| j.d(d + a)),
        force: DVector::from_fn(d, |a, _| j.d(a)),
    })
}

/// `M a - b`: the Euler-Lagrange residual of a candidate acceleration.
pub fn el_residual<L: Lagrangian>(lag: &L, tau: f64, x: &[f64], v: &[f64], a: &[f64]) -> Result<DVector<f64>> {
    let sys = assemble(lag, tau, x, v)?;
    Ok(&sys.mass_matrix * DVector::from_column_slice(a) - &sys.rhs)
}

/// Which scalar the evolution parameter keeps fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum GaugeChoice {
    /// `L = const`.
    LagrangianConst,
    /// `sqrt(g(v, v)) = const` for the given metric.
    MetricNormConst(SymTensorField),
    /// `L - q A.v = const`.
    ResidualConst { charge: f64, potential: SymTensorField },
    /// `v^0 = 1`.
    CoordinateTime,
    /// No constraint; only valid for regular systems.
    Affine,
}

impl GaugeChoice {
    /// The constrained quantity, or `None` for [`GaugeChoice::Affine`].
    pub fn quantity<L: Lagrangian, S: Scalar>(&self, lag: &L, tau: &S, x: &[S], v: &[S]) -> Result<Option<S>> {
        Ok(Some(match self {
            GaugeChoice::LagrangianConst => lag.eval(tau, x, v)?,
            GaugeChoice::MetricNormConst(g) => g
                .contract_full(x, v)?
                .sqrt()
                .map_err(|e| e.in_context("gauge metric norm"))?,
            GaugeChoice::ResidualConst { charge, potential } => {
                lag.eval(tau, x, v)?.sub(&potential.contract_full(x, v)?.scale(*charge))
            }
            GaugeChoice::CoordinateTime => v[0].clone(),
            GaugeChoice::Affine => return Ok(None),
        }))
    }

    /// The fixed target of the gauge, or `None` if it is the initial value.
    pub fn fixed_target(&self) -> Option<f64> {
        match self {
            GaugeChoice::MetricNormConst(_) | GaugeChoice::CoordinateTime => Some(1.0),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GaugeChoice::LagrangianConst => "lagrangian_const",
            GaugeChoice::MetricNormConst(_) => "metric_norm_const",
            GaugeChoice::ResidualConst { .. } => "residual_const",
            GaugeChoice::CoordinateTime => "coordinate_time",
            GaugeChoice::Affine => "affine",
        }
    }
}

/// Target value of the gauge quantity as a function of the parameter.
#[derive(Clone)]
pub enum GaugeTarget {
    /// Whatever the initial state has.
    Initial,
    Value(f64),
    /// `tau -> (target, d target / d tau)`.
    Schedule(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for GaugeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaugeTarget::Initial => f.write_str("Initial"),
            GaugeTarget::Value(v) => write!(f, "Value({v})"),
            GaugeTarget::Schedule(_) => f.write_str("Schedule(..)"),
        }
    }
}

impl GaugeTarget {
    /// `(target, rate)` at `tau`, once `Initial` has been resolved.
    pub fn at(&self, tau: f64) -> Option<(f64, f64)> {
        match self {
            GaugeTarget::Initial => None,
            GaugeTarget::Value(v) => Some((*v, 0.0)),
            GaugeTarget::Schedule(f) => Some(f(tau)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gauge {
    pub choice: GaugeChoice,
    pub target: GaugeTarget,
}

impl Gauge {
    /// The choice with its natural target.
    pub fn new(choice: GaugeChoice) -> Self {
        let target = choice
            .fixed_target()
            .map_or(GaugeTarget::Initial, GaugeTarget::Value);
        Gauge { choice, target }
    }

    pub fn affine() -> Self {
        Gauge::new(GaugeChoice::Affine)
    }

    pub fn with_target(mut self, target: GaugeTarget) -> Self {
        self.target = target;
        self
    }

    pub fn value<L: Lagrangian>(&self, lag: &L, tau: f64, x: &[f64], v: &[f64]) -> Result<Option<f64>> {
        self.choice.quantity(lag, &tau, x, v)
    }

    /// Replaces an `Initial` target by the value at the given state.
    pub fn resolved<L: Lagrangian>(&self, lag: &L, tau: f64, x: &[f64], v: &[f64]) -> Result<Gauge> {
        match (&self.target, self.value(lag, tau, x, v)?) {
            (GaugeTarget::Initial, Some(q)) => Ok(self.clone().with_target(GaugeTarget::Value(q))),
            _ => Ok(self.clone()),
        }
    }

    /// The row `dQ/dv` and right-hand side `rate - dQ/dx . v - dQ/dtau` for
    /// the constraint `dQ/dtau = rate`.
    pub fn row<L: Lagrangian>(
        &self,
        lag: &L,
        tau: f64,
        x: &[f64],
        v: &[f64],
        rate: f64,
    ) -> Result<Option<(DVector<f64>, f64)>> {
        let d = lag.dim();
        let with_tau = !lag.is_autonomous() && matches!(
            self.choice,
            GaugeChoice::LagrangianConst | GaugeChoice::ResidualConst { .. }
        );
        let (t, xj, vj) = phase_jets(tau, x, v, with_tau)?;
        let Some(q) = self.choice.quantity(lag, &t, &xj, &vj)? else {
            return Ok(None);
        };
        let row = DVector::from_fn(d, |a, _| q.d(d + a));
        let mut rhs = rate;
        for (b, vb) in v.iter().enumerate() {
            rhs -= q.d(b) * vb;
        }
        if with_tau {
            rhs -= q.d(2 * d);
        }
        Ok(Some((row, rhs)))
    }
}

/// Solution of the (possibly augmented) acceleration system.
#[derive(Debug, Clone)]
pub struct Acceleration {
    pub a: DVector<f64>,
    /// `|| [M; row] a - [b; rhs] ||`.
    pub residual: f64,
    pub degeneracy_rank: usize,
}

/// Minimum-norm least-squares solve of `[M; row] a = [b; rhs]`.
pub fn solve_acceleration(sys: &EomSystem, gauge_row: Option<&(DVector<f64>, f64)>) -> Result<Acceleration> {
    let d = sys.mass_matrix.nrows();
    let rows = d + usize::from(gauge_row.is_some());
    let mut aug = DMatrix::zeros(rows, d);
    let mut rhs = DVector::zeros(rows);
    aug.rows_mut(0, d).copy_from(&sys.mass_matrix);
    rhs.rows_mut(0, d).copy_from(&sys.rhs);
    if let Some((row, r)) = gauge_row {
        aug.row_mut(d).copy_from(&row.transpose());
        rhs[d] = *r;
    }
    if sys.degeneracy_rank > usize::from(gauge_row.is_some()) {
        return Err(Error::UnderDetermined {
            rank: d - sys.degeneracy_rank,
            dim: d,
        });
    }
    let svd = aug.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(Error::UnderDetermined { rank: 0, dim: d });
    }
    let cutoff = RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s >= cutoff).count();
    if rank < d {
        return Err(Error::UnderDetermined { rank, dim: d });
    }
    let a = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let residual = (&aug * &a - &rhs).norm();
    let tolerance = RESIDUAL_TOL * rhs.norm().max(aug.norm() * a.norm()).max(f64::MIN_POSITIVE);
    if residual > tolerance {
        return Err(Error::InconsistentGauge { residual, tolerance });
    }
    Ok(Acceleration {
        a,
        residual,
        degeneracy_rank: sys.degeneracy_rank,
    })
}

/// Assembles and solves at one point, appending the gauge row only when it
/// is needed or requested.
pub fn acceleration<L: Lagrangian>(
    lag: &L,
    gauge: &Gauge,
    tau: f64,
    x: &[f64],
    v: &[f64],
) -> Result<Acceleration> {
    let sys = assemble(lag, tau, x, v)?;
    let rate = gauge.target.at(tau).map_or(0.0, |(_, r)| r);
    let row = gauge.row(lag, tau, x, v, rate)?;
    solve_acceleration(&sys, row.as_ref())
}

/// `Gamma^a_bc`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Levi-Civita connection of `g` at `x`, with metric derivatives from jets.
pub fn christoffel(g: &SymTensorField, x: &[f64]) -> Result<Christoffel> {
    let d = g.dim();
    if g.rank() != 2 || x.len() != d {
        return Err(Error::Shape(format!(
            "metric of rank {} and dimension {d} at point of length {}",
            g.rank(),
            x.len()
        )));
    }
    let xj = seed_variables(x, &(0..d).collect::<Vec<_>>())?;
    let gj = g.matrix_at(&xj)?;
    let gm = DMatrix::from_fn(d, d, |i, j| gj[i][j].value());
    let inv = gm
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("metric at {x:?}")))?;
    let mut data = vec![0.0; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in b..d {
                let mut s = 0.0;
                for r in 0..d {
                    s += inv[(a, r)] * (gj[r][b].d(c) + gj[r][c].d(b) - gj[b][c].d(r));
                }
                data[(a * d + b) * d + c] = 0.5 * s;
                data[(a * d + c) * d + b] = 0.5 * s;
            }
        }
    }
    Ok(Christoffel { dim: d, data })
}

/// `a^a = -Gamma^a_bc v^b v^c`.
pub fn geodesic_rhs(g: &SymTensorField, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let gamma = christoffel(g, x)?;
    let d = gamma.dim;
    if v.len() != d {
        return Err(Error::Shape(format!("velocity of length {} for dimension {d}", v.len())));
    }
    Ok((0..d)
        .map(|a| {
            let mut s = 0.0;
            for b in 0..d {
                for c in 0..d {
                    s -= gamma.get(a, b, c) * v[b] * v[c];
                }
            }
            s
        })
        .collect())
}

fn fd_step(x: &[f64]) -> f64 {
    1e-5 * x.iter().fold(1.0f64, |m, c| m.max(c.abs()))
}

/// `dGamma^a_bc / dx^e` by central differences, indexed `[e][(a, b, c)]`.
fn christoffel_derivatives(g: &SymTensorField, x: &[f64]) -> Result<Vec<Christoffel>> {
    let h = fd_step(x);
    (0..x.len())
        .map(|e| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[e] += h;
            xm[e] -= h;
            let gp = christoffel(g, &xp)?;
            let gm = christoffel(g, &xm)?;
            Ok(Christoffel {
                dim: gp.dim,
                data: gp
                    .data
                    .iter()
                    .zip(&gm.data)
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect(),
            })
        })
        .collect()
}

/// Riemann tensor `R^a_bcd = d_c Gamma^a_db - d_d Gamma^a_cb
/// + Gamma^a_ce Gamma^e_db - Gamma^a_de Gamma^e_cb`, indexed
/// `[((a * D + b) * D + c) * D + d]`.
pub fn riemann(g: &SymTensorField, x: &[f64]) -> Result<Vec<f64>> {
    let gamma = christoffel(g, x)?;
    let dg = christoffel_derivatives(g, x)?;
    let n = gamma.dim;
    let mut r = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = dg[c].get(a, d, b) - dg[d].get(a, c, b);
                    for e in 0..n {
                        s += gamma.get(a, c, e) * gamma.get(e, d, b) - gamma.get(a, d, e) * gamma.get(e, c, b);
                    }
                    r[((a * n + b) * n + c) * n + d] = s;
                }
            }
        }
    }
    Ok(r)
}

/// Covariant relative acceleration `-R^a_bcd v^b xi^c v^d`.
pub fn tidal_acceleration(g: &SymTensorField, x: &[f64], v: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let r = riemann(g, x)?;
    let n = g.dim();
    Ok((0..n)
        .map(|a| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        s -= r[((a * n + b) * n + c) * n + d] * v[b] * xi[c] * v[d];
                    }
                }
            }
            s
        })
        .collect())
}

/// Second derivative of the coordinate separation `xi` between neighbouring
/// geodesics: the linearization of the geodesic equation,
/// `-d_e Gamma^a_bc xi^e v^b v^c - 2 Gamma^a_bc v^b dxi^c`.
/// In a frame where `Gamma` vanishes this is [`tidal_acceleration`].
pub fn geodesic_deviation_rhs(
    g: &SymTensorField,
    x: &[f64],
    v: &[f64],
    xi: &[f64],
    dxi: &[f64],
) -> Result<Vec<f64>> {
    let n = g.dim();
    for (name, w) in [("v", v), ("xi", xi), ("dxi", dxi)] {
        if w.len() != n {
            return Err(Error::Shape(format!("{name} has length {}, expected {n}", w.len())));
        }
    }
    let gamma = christoffel(g, x)?;
    let dg = christoffel_derivatives(g, x)?;
    Ok((0..n)
        .map(|a| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    let mut dgam = 0.0;
                    for (e, de) in dg.iter().enumerate() {
                        dgam += de.get(a, b, c) * xi[e];
                    }
                    s -= dgam * v[b] * v[c] + 2.0 * gamma.get(a, b, c) * v[b] * dxi[c];
                }
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::lagrangian::{CanonicalTerm, LagrangianSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const X: [f64; 4] = [0.0, 1.0, 0.5, -0.2];

    fn eta() -> SymTensorField {
        SymTensorField::minkowski(4)
    }

    fn l2(g: SymTensorField) -> LagrangianSpec {
        LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, g)], None).unwrap()
    }

    fn weak_field() -> SymTensorField {
        SymTensorField::diagonal(&[
            Expr::parse("1 - 2*gm/r").unwrap(),
            Expr::parse("-(1 + 2*gm/r)").unwrap(),
            Expr::parse("-(1 + 2*gm/r)").unwrap(),
            Expr::parse("-(1 + 2*gm/r)").unwrap(),
        ])
        .unwrap()
        .resolve(&[("gm".to_string(), 0.01)].into_iter().collect())
        .unwrap()
    }

    #[test]
    fn flat_quadratic_system() {
        let sys = assemble(&l2(eta()), 0.0, &X, &[1.0, 0.2, 0.0, 0.1]).unwrap();
        assert_eq!(sys.mass_matrix, eta().matrix_f64(&X).unwrap() * 2.0);
        assert!(sys.rhs.iter().all(|c| *c == 0.0));
        assert_eq!(sys.degeneracy_rank, 0);
        let acc = solve_acceleration(&sys, None).unwrap();
        assert!(acc.a.norm() == 0.0);
    }

    #[test]
    fn root_lagrangian_is_degenerate() {
        let l1 = LagrangianSpec::metric(1.0, eta()).unwrap();
        let v = [1.3, 0.2, -0.4, 0.1];
        let sys = assemble(&l1, 0.0, &X, &v).unwrap();
        let mv = &sys.mass_matrix * DVector::from_column_slice(&v);
        assert!(mv.norm() <= 1e-10 * sys.mass_matrix.norm() * 1.4);
        assert!(sys.degeneracy_rank >= 1);
        assert!(matches!(
            solve_acceleration(&sys, None),
            Err(Error::UnderDetermined { .. })
        ));
        let gauge = Gauge::new(GaugeChoice::LagrangianConst);
        let rest = [1.0, 0.0, 0.0, 0.0];
        let acc = acceleration(&l1, &gauge, 0.0, &X, &rest).unwrap();
        assert!(acc.a.norm() < 1e-14);
    }

    #[test]
    fn constant_potential_drops_out() {
        let m = 2.0;
        let a = SymTensorField::constant(1, 4, &[(&[0], 0.3), (&[2], -0.1)]).unwrap();
        let l = LagrangianSpec::new(
            vec![CanonicalTerm::new(0.7, a), CanonicalTerm::polynomial(m / 2.0, eta())],
            None,
        )
        .unwrap();
        let sys = assemble(&l, 0.0, &X, &[1.0, 0.3, 0.1, 0.0]).unwrap();
        assert!(sys.rhs.norm() == 0.0);
        assert_eq!(sys.mass_matrix, eta().matrix_f64(&X).unwrap() * m);
    }

    #[test]
    fn orbit_acceleration_matches_geodesic() {
        let g = weak_field();
        let x = [0.0, 10.0, 0.0, 0.0];
        let g0 = g.matrix_f64(&x).unwrap();
        // circular speed in coordinates, then normalized to g(v,v) = 1
        let w = (0.01f64 / 10.0).sqrt() / 10.0;
        let mut v = [1.0, 0.0, 10.0 * w, 0.0];
        let n = (g0[(0, 0)] + g0[(2, 2)] * v[2] * v[2]).sqrt();
        v.iter_mut().for_each(|c| *c /= n);

        let geo = geodesic_rhs(&g, &x, &v).unwrap();
        let l1 = LagrangianSpec::metric(1.0, g.clone()).unwrap();
        let gauge = Gauge::new(GaugeChoice::MetricNormConst(g.clone()));
        let acc = acceleration(&l1, &gauge, 0.0, &x, &v).unwrap();
        for k in 0..4 {
            assert!((acc.a[k] - geo[k]).abs() <= 1e-8, "{k}: {} vs {}", acc.a[k], geo[k]);
        }
        let acc2 = solve_acceleration(&assemble(&l2(g.clone()), 0.0, &x, &v).unwrap(), None).unwrap();
        for k in 0..4 {
            assert!((acc2.a[k] - geo[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn inconsistent_gauge_is_reported() {
        let l2 = l2(eta());
        let sys = assemble(&l2, 0.0, &X, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        // a = 0 is forced by M; ask for dv0/dtau = 1
        let row = (DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]), 1.0);
        assert!(matches!(
            solve_acceleration(&sys, Some(&row)),
            Err(Error::InconsistentGauge { .. })
        ));
    }

    #[test]
    fn time_dependent_lagrangian_contributes_to_rhs() {
        struct Scaled;
        impl Lagrangian for Scaled {
            fn dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, tau: &S, _x: &[S], v: &[S]) -> Result<S> {
                // exp(tau) v^2 / 2: EL gives a = -v
                Ok(tau.exp().mul(&v[0]).mul(&v[0]).scale(0.5))
            }
            fn is_autonomous(&self) -> bool {
                false
            }
        }
        let acc = acceleration(&Scaled, &Gauge::affine(), 0.3, &[0.0], &[2.0]).unwrap();
        assert_relative_eq!(acc.a[0], -2.0, max_relative = 1e-14);
    }

    fn polar() -> SymTensorField {
        SymTensorField::diagonal(&[Expr::Num(1.0), Expr::parse("x0^2").unwrap()]).unwrap()
    }

    #[test]
    fn flat_and_conformal_connections_vanish() {
        assert_eq!(christoffel(&eta(), &X).unwrap().max_abs(), 0.0);
        let mut g = SymTensorField::new(2, 4).unwrap();
        for a in 0..4 {
            g.set(&[a, a], Expr::Num(if a == 0 { 4.0 } else { -4.0 })).unwrap();
        }
        assert_eq!(christoffel(&g, &X).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn polar_connection_against_differences() {
        let g = polar();
        let x = [1.7, 0.4];
        let gamma = christoffel(&g, &x).unwrap();
        assert_relative_eq!(gamma.get(0, 1, 1), -1.7, max_relative = 1e-14);
        assert_relative_eq!(gamma.get(1, 0, 1), 1.0 / 1.7, max_relative = 1e-14);

        // difference oracle on the metric, then the textbook formula
        let h = 1e-6;
        let dg = |r: usize, b: usize, c: usize| {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            (g.matrix_f64(&xp).unwrap()[(r, b)] - g.matrix_f64(&xm).unwrap()[(r, b)]) / (2.0 * h)
        };
        let inv = g.matrix_f64(&x).unwrap().try_inverse().unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let fd: f64 = (0..2)
                        .map(|r| 0.5 * inv[(a, r)] * (dg(r, b, c) + dg(r, c, b) - dg(b, c, r)))
                        .sum();
                    assert!((gamma.get(a, b, c) - fd).abs() < 1e-8);
                }
            }
        }

        let acc = geodesic_rhs(&g, &x, &[0.0, 1.0]).unwrap();
        assert_relative_eq!(acc[0], 1.7, max_relative = 1e-14);
        assert_eq!(acc[1], 0.0);
    }

    #[test]
    fn singular_metric() {
        let g = SymTensorField::diagonal(&[Expr::Num(1.0), Expr::parse("x0^2").unwrap()]).unwrap();
        assert!(matches!(christoffel(&g, &[0.0, 1.0]), Err(Error::Singular(_))));
    }

    fn sphere() -> SymTensorField {
        SymTensorField::diagonal(&[Expr::Num(1.0), Expr::parse("sin(x0)^2").unwrap()]).unwrap()
    }

    #[test]
    fn sphere_curvature() {
        let x = [1.1, 0.3];
        let r = riemann(&sphere(), &x).unwrap();
        // R^theta_{phi theta phi} = sin^2(theta) on the unit sphere
        let idx = |a: usize, b: usize, c: usize, d: usize| ((a * 2 + b) * 2 + c) * 2 + d;
        assert!((r[idx(0, 1, 0, 1)] - x[0].sin().powi(2)).abs() < 1e-8);
        assert!((r[idx(0, 1, 1, 0)] + x[0].sin().powi(2)).abs() < 1e-8);
        assert!(riemann(&eta(), &X).unwrap().iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn deviation_on_equator_is_harmonic() {
        let x = [std::f64::consts::FRAC_PI_2, 0.0];
        let v = [0.0, 1.0];
        let xi = [0.01, 0.0];
        let acc = geodesic_deviation_rhs(&sphere(), &x, &v, &xi, &[0.0, 0.0]).unwrap();
        assert!((acc[0] + 0.01).abs() < 1e-8, "{acc:?}");
        let tidal = tidal_acceleration(&sphere(), &x, &v, &xi).unwrap();
        assert!((tidal[0] + 0.01).abs() < 1e-8);
        let flat = geodesic_deviation_rhs(&eta(), &X, &[1.0, 0.2, 0.0, 0.0], &[0.1, 0.0, 0.2, 0.0], &[0.0; 4])
            .unwrap();
        assert!(flat.iter().all(|c| c.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn homogeneous_mass_matrix_annihilates_velocity(
            v in prop::array::uniform3(-0.6f64..0.6),
            q in -1.0f64..1.0,
            k in 0.0f64..0.3,
        ) {
            let vel = [1.0, v[0], v[1], v[2]];
            let a = SymTensorField::covector(&[
                Expr::parse("0.1*x1").unwrap(), Expr::Num(0.2), Expr::Num(0.0), Expr::parse("x2*x3").unwrap(),
            ]).unwrap();
            let s3 = SymTensorField::constant(3, 4, &[(&[0, 0, 0], 1.0), (&[0, 1, 1], -0.3)]).unwrap();
            let l = LagrangianSpec::new(vec![
                CanonicalTerm::new(q, a),
                CanonicalTerm::new(1.0, weak_field()),
                CanonicalTerm::new(k, s3),
            ], None).unwrap();
            let sys = assemble(&l, 0.0, &X, &vel).unwrap();
            let vv = DVector::from_column_slice(&vel);
            prop_assert!((&sys.mass_matrix * &vv).norm() <= 1e-10 * sys.mass_matrix.norm() * vv.norm());
            prop_assert_eq!(&sys.mass_matrix, &sys.mass_matrix.transpose());
        }

        #[test]
        fn deviation_is_quadratic_in_velocity(
            v in prop::array::uniform2(-1.0f64..1.0),
            s in 0.2f64..4.0,
        ) {
            let x = [1.0, 0.2];
            let xi = [0.01, 0.02];
            let base = geodesic_deviation_rhs(&sphere(), &x, &v, &xi, &[0.0, 0.0]).unwrap();
            let vs = [v[0] * s, v[1] * s];
            let scaled = geodesic_deviation_rhs(&sphere(), &x, &vs, &xi, &[0.0, 0.0]).unwrap();
            for k in 0..2 {
                prop_assert!((scaled[k] - s * s * base[k]).abs() <= 1e-12 * (1.0 + scaled[k].abs()));
            }
        }
    }
}
