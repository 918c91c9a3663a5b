//! Lagrangians built from symmetric tensor fields, and the algebra on them:
//! homogeneity diagnosis, Hamiltonian and momenta, even/odd split, field
//! extraction, velocity-dependent induced metrics and string densities.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::jets::{seed_variables, Jet2, Scalar};
use crate::tensors::{Coordinates, SymTensorField};

/// A point-particle Lagrangian `L(tau, x, v)` that can be evaluated on
/// plain numbers or on jets.
pub trait Lagrangian {
    fn dim(&self) -> usize;

    fn eval<S: Scalar>(&self, tau: &S, x: &[S], v: &[S]) -> Result<S>;

    /// Whether `L` is independent of the evolution parameter.
    fn is_autonomous(&self) -> bool {
        true
    }
}

impl<L: Lagrangian> Lagrangian for &L {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval<S: Scalar>(&self, tau: &S, x: &[S], v: &[S]) -> Result<S> {
        (**self).eval(tau, x, v)
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

/// One term `coupling * S_n(v, .., v)^{1/n}` of the canonical form. With
/// `root` off the contraction enters without the root, which gives the
/// order-n Lagrangians `L_n = S_n(v, .., v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTerm {
    pub coupling: f64,
    pub field: SymTensorField,
    pub root: bool,
}

impl CanonicalTerm {
    pub fn new(coupling: f64, field: SymTensorField) -> Self {
        CanonicalTerm {
            coupling,
            field,
            root: true,
        }
    }

    /// The term without the n-th root.
    pub fn polynomial(coupling: f64, field: SymTensorField) -> Self {
        CanonicalTerm {
            coupling,
            field,
            root: false,
        }
    }

    /// Homogeneity order of the term in the velocity.
    pub fn order(&self) -> usize {
        if self.root {
            1
        } else {
            self.field.rank()
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<S> {
        let n = self.field.rank();
        let sn = self.field.contract_full(x, v)?;
        let label = || format!("rank-{n} term");
        let value = if !self.root || n == 1 {
            sn
        } else {
            if n.is_multiple_of(2) && sn.value() <= 0.0 {
                return Err(Error::domain(
                    label(),
                    format!("even root of non-positive contraction {}", sn.value()),
                ));
            }
            sn.real_root(n as u32).map_err(|e| e.in_context(label()))?
        };
        Ok(value.scale(self.coupling))
    }
}

/// `L = sum_k coupling_k * S_k(v..v)^{1/n_k} + custom(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianSpec {
    dim: usize,
    terms: Vec<CanonicalTerm>,
    custom: Option<Expr>,
}

impl LagrangianSpec {
    pub fn new(terms: Vec<CanonicalTerm>, custom: Option<Expr>) -> Result<Self> {
        let dim = match terms.first() {
            Some(t) => t.field.dim(),
            None if custom.is_some() => 4,
            None => {
                return Err(Error::InvalidArgument(
                    "a Lagrangian needs at least one term or a custom expression".into(),
                ))
            }
        };
        Self::with_dim(dim, terms, custom)
    }

    pub fn with_dim(dim: usize, terms: Vec<CanonicalTerm>, custom: Option<Expr>) -> Result<Self> {
        if terms.is_empty() && custom.is_none() {
            return Err(Error::InvalidArgument(
                "a Lagrangian needs at least one term or a custom expression".into(),
            ));
        }
        for (k, t) in terms.iter().enumerate() {
            if t.field.dim() != dim {
                return Err(Error::Shape(format!(
                    "term {k} has dimension {}, expected {dim}",
                    t.field.dim()
                )));
            }
            if !t.coupling.is_finite() {
                return Err(Error::InvalidArgument(format!("term {k} has non-finite coupling")));
            }
        }
        if let Some(c) = &custom {
            for name in c.variables() {
                let bad = match name.strip_prefix('x').or_else(|| name.strip_prefix('v')) {
                    Some(i) => i.parse::<usize>().map_or(true, |i| i >= dim),
                    None => !matches!(name.as_str(), "t" | "r"),
                };
                if bad {
                    return Err(Error::UnboundName(name));
                }
            }
        }
        Ok(LagrangianSpec { dim, terms, custom })
    }

    /// `m * sqrt(g(v, v))`.
    pub fn metric(mass: f64, g: SymTensorField) -> Result<Self> {
        Self::new(vec![CanonicalTerm::new(mass, g)], None)
    }

    /// `q A.v + m sqrt(g(v, v))`.
    pub fn randers(q: f64, a: SymTensorField, m: f64, g: SymTensorField) -> Result<Self> {
        Self::new(vec![CanonicalTerm::new(q, a), CanonicalTerm::new(m, g)], None)
    }

    pub fn terms(&self) -> &[CanonicalTerm] {
        &self.terms
    }

    pub fn custom(&self) -> Option<&Expr> {
        self.custom.as_ref()
    }

    pub fn push(&mut self, term: CanonicalTerm) -> Result<()> {
        if term.field.dim() != self.dim {
            return Err(Error::Shape("term dimension mismatch".into()));
        }
        self.terms.push(term);
        Ok(())
    }

    /// Substitutes scenario parameters everywhere.
    pub fn resolve(&self, params: &HashMap<String, f64>) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                Ok(CanonicalTerm {
                    field: t.field.resolve(params)?,
                    ..t.clone()
                })
            })
            .collect::<Result<_>>()?;
        let custom = self.custom.as_ref().map(|c| c.resolve(params)).transpose()?;
        Ok(LagrangianSpec {
            dim: self.dim,
            terms,
            custom,
        })
    }
}

struct PhasePoint<'a, S> {
    coords: Coordinates<'a, S>,
    v: &'a [S],
}

impl<S: Scalar> Bindings<S> for PhasePoint<'_, S> {
    fn lookup(&self, name: &str) -> Option<S> {
        if let Some(i) = name.strip_prefix('v').and_then(|i| i.parse::<usize>().ok()) {
            return self.v.get(i).cloned();
        }
        self.coords.lookup(name)
    }
}

impl Lagrangian for LagrangianSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval<S: Scalar>(&self, _tau: &S, x: &[S], v: &[S]) -> Result<S> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::Shape(format!(
                "Lagrangian of dimension {} given |x| = {}, |v| = {}",
                self.dim,
                x.len(),
                v.len()
            )));
        }
        let mut acc = v[0].lift(0.0);
        for t in &self.terms {
            acc = acc.add(&t.eval(x, v)?);
        }
        if let Some(c) = &self.custom {
            let point = PhasePoint {
                coords: Coordinates::new(x, c.uses("r"))?,
                v,
            };
            acc = acc.add(&c.eval(&v[0], &point)?);
        }
        Ok(acc)
    }
}

/// `L = v^a A_a(x, v)` for a velocity-dependent covector field.
pub trait CovectorField {
    fn dim(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<Vec<S>>;
}

/// The Lagrangian `v . A(x, v)`.
#[derive(Debug, Clone)]
pub struct Contracted<A>(pub A);

impl<A: CovectorField> Lagrangian for Contracted<A> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval<S: Scalar>(&self, _tau: &S, x: &[S], v: &[S]) -> Result<S> {
        let a = self.0.eval(x, v)?;
        let mut acc = v[0].lift(0.0);
        for (ai, vi) in a.iter().zip(v) {
            acc = acc.add(&ai.mul(vi));
        }
        Ok(acc)
    }
}

/// `A_a = g_ab(x) v^b + q B_a(x) + kappa S_abc(x) v^b v^c / sqrt(eta(v, v))`.
/// Each optional piece keeps `v . A` homogeneous within that piece.
#[derive(Debug, Clone)]
pub struct PolynomialCovector {
    pub metric: SymTensorField,
    pub potential: Option<(f64, SymTensorField)>,
    pub cubic: Option<(f64, SymTensorField)>,
}

impl CovectorField for PolynomialCovector {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn eval<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<Vec<S>> {
        // gradient of g(v,v) is 2 g v
        let mut a: Vec<S> = self
            .metric
            .contract_gradient(x, v)?
            .into_iter()
            .map(|c| c.scale(0.5))
            .collect();
        if let Some((q, b)) = &self.potential {
            let ones: Vec<S> = v.iter().map(|c| c.lift(1.0)).collect();
            for (ai, bi) in a.iter_mut().zip(b.contract_gradient(x, &ones)?) {
                *ai = ai.add(&bi.scale(*q));
            }
        }
        if let Some((kappa, s)) = &self.cubic {
            let eta = SymTensorField::minkowski(self.metric.dim());
            let norm = eta.contract_full(x, v)?.sqrt()?;
            let grad = s.contract_gradient(x, v)?;
            for (ai, gi) in a.iter_mut().zip(grad) {
                *ai = ai.add(&gi.scale(kappa / 3.0).div(&norm)?);
            }
        }
        Ok(a)
    }
}

/// `A_a = eta_ab v^b / sqrt(eta(v, v))`, the momentum of `sqrt(eta(v, v))`.
#[derive(Debug, Clone)]
pub struct UnitVelocity {
    pub metric: SymTensorField,
}

impl CovectorField for UnitVelocity {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn eval<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<Vec<S>> {
        let norm = self.metric.contract_full(x, v)?.sqrt()?;
        self.metric
            .contract_gradient(x, v)?
            .into_iter()
            .map(|c| c.scale(0.5).div(&norm))
            .collect()
    }
}

/// `L` seeded in the velocity only, at fixed `x` and `tau = 0`.
pub fn velocity_jet<L: Lagrangian>(lag: &L, x: &[f64], v: &[f64]) -> Result<Jet2> {
    check_dim(lag.dim(), x, v)?;
    let vj = seed_variables(v, &(0..v.len()).collect::<Vec<_>>())?;
    let xj: Vec<Jet2> = x.iter().map(|&c| Jet2::constant(c)).collect();
    lag.eval(&Jet2::constant(0.0), &xj, &vj)
}

fn check_dim(dim: usize, x: &[f64], v: &[f64]) -> Result<()> {
    if x.len() != dim || v.len() != dim {
        return Err(Error::Shape(format!(
            "expected {dim} components, got |x| = {}, |v| = {}",
            x.len(),
            v.len()
        )));
    }
    Ok(())
}

pub fn eval_f64<L: Lagrangian>(lag: &L, x: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(lag.dim(), x, v)?;
    lag.eval(&0.0, x, v)
}

/// Fits `L(x, a v) ~ c a^n` over `a` log-uniform in `[0.1, 10]`. Returns the
/// fitted order and the largest relative deviation from the fit.
pub fn homogeneity_order<L: Lagrangian>(
    lag: &L,
    x: &[f64],
    v: &[f64],
    samples: usize,
) -> Result<(f64, f64)> {
    if samples < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 samples, got {samples}")));
    }
    let mut pts = Vec::with_capacity(samples);
    for k in 0..samples {
        let a = 0.1 * 100f64.powf(k as f64 / (samples - 1) as f64);
        let scaled: Vec<f64> = v.iter().map(|c| a * c).collect();
        let l = eval_f64(lag, x, &scaled)?;
        if l == 0.0 || !l.is_finite() {
            return Err(Error::Indeterminate(format!("L = {l} at scale {a}")));
        }
        pts.push((a.ln(), l));
    }
    let n = samples as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.abs().ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.abs().ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let order = sxy / sxx;
    let c = my - order * mx;
    let sign = pts[samples / 2].1.signum();
    let residual = pts
        .iter()
        .map(|&(la, l)| ((l - sign * (c + order * la).exp()) / l).abs())
        .fold(0.0, f64::max);
    Ok((order, residual))
}

/// `h = v . dL/dv - L`.
pub fn hamiltonian<L: Lagrangian>(lag: &L, x: &[f64], v: &[f64]) -> Result<f64> {
    let j = velocity_jet(lag, x, v)?;
    Ok(v.iter().zip(j.grad()).map(|(a, b)| a * b).sum::<f64>() - j.value())
}

/// `p_a = dL/dv^a`.
pub fn generalized_momentum<L: Lagrangian>(lag: &L, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    Ok(velocity_jet(lag, x, v)?.grad().to_vec())
}

/// `(L-, L+) = ((L(v) - L(-v))/2, (L(v) + L(-v))/2)`.
pub fn even_odd_split<L: Lagrangian>(lag: &L, x: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    let l = eval_f64(lag, x, v)?;
    let neg: Vec<f64> = v.iter().map(|c| -c).collect();
    let lm = eval_f64(lag, x, &neg)?;
    let minus = 0.5 * (l - lm);
    // reconstructs l exactly in floating point
    Ok((minus, l - minus))
}

/// Reads the electromagnetic potential and metric back out of a first-order
/// homogeneous Lagrangian at the rest velocity `v = (1, 0, .., 0)`:
/// `A = grad_v L-` and `g = 1/2 Hess_v (L+)^2`, with `L+-` the odd and even
/// parts. For `q A.v + m sqrt(g v v)` this returns `(q A, m^2 g)`.
pub fn extract_em_and_metric<L: Lagrangian>(lag: &L, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = lag.dim();
    let mut rest = vec![0.0; d];
    rest[0] = 1.0;
    let active: Vec<usize> = (0..d).collect();
    let vj = seed_variables(&rest, &active)?;
    let neg: Vec<Jet2> = vj.iter().map(|j| -j).collect();
    let xj: Vec<Jet2> = x.iter().map(|&c| Jet2::constant(c)).collect();
    let tau = Jet2::constant(0.0);
    let lp = lag.eval(&tau, &xj, &vj)?;
    let lm = lag.eval(&tau, &xj, &neg)?;
    let odd = (&lp - &lm) * 0.5;
    let even = (&lp + &lm) * 0.5;
    let sq = &even * &even;
    let a = odd.grad().to_vec();
    let g = DMatrix::from_fn(d, d, |i, j| 0.5 * sq.dd(i, j));
    Ok((a, g))
}

/// `A(x).v + sqrt(g(x)(v, v))` with `A` and `g` read off another Lagrangian
/// by [`extract_em_and_metric`] at every point.
///
/// Coordinate dependence enters through a first-order Taylor expansion of
/// the extracted fields around the evaluation point (central differences
/// with step `h`), which is exact for everything the Euler-Lagrange
/// equations consume: they need no second coordinate derivatives.
pub struct Extracted<'a, L> {
    pub source: &'a L,
    pub h: f64,
}

impl<'a, L: Lagrangian> Extracted<'a, L> {
    pub fn new(source: &'a L) -> Self {
        Extracted { source, h: 1e-5 }
    }

    fn fields(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        extract_em_and_metric(self.source, x)
    }
}

impl<L: Lagrangian> Lagrangian for Extracted<'_, L> {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn eval<S: Scalar>(&self, _tau: &S, x: &[S], v: &[S]) -> Result<S> {
        let d = self.dim();
        let x0: Vec<f64> = x.iter().map(|c| c.value()).collect();
        let (a0, g0) = self.fields(&x0)?;
        let mut a: Vec<S> = a0.iter().map(|&c| v[0].lift(c)).collect();
        let mut g: Vec<S> = g0.iter().map(|&c| v[0].lift(c)).collect();
        if !x.iter().all(|c| c.is_constant()) {
            for k in 0..d {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[k] += self.h;
                xm[k] -= self.h;
                let (ap, gp) = self.fields(&xp)?;
                let (am, gm) = self.fields(&xm)?;
                let dx = x[k].add_const(-x0[k]);
                for i in 0..d {
                    a[i] = a[i].add(&dx.scale((ap[i] - am[i]) / (2.0 * self.h)));
                }
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = gi.add(&dx.scale((gp[i] - gm[i]) / (2.0 * self.h)));
                }
            }
        }
        let mut av = v[0].lift(0.0);
        let mut gvv = v[0].lift(0.0);
        for i in 0..d {
            av = av.add(&a[i].mul(&v[i]));
            for j in 0..d {
                // column-major storage, symmetric anyway
                gvv = gvv.add(&g[i + d * j].mul(&v[i]).mul(&v[j]));
            }
        }
        Ok(av.add(&gvv.sqrt().map_err(|e| e.in_context("extracted metric norm"))?))
    }
}

/// `g_ab(x, v) = (dA_a/dv^b + dA_b/dv^a) / 2`.
pub fn induced_metric_from_a<A: CovectorField>(a: &A, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    let d = a.dim();
    check_dim(d, x, v)?;
    let vj = seed_variables(v, &(0..d).collect::<Vec<_>>())?;
    let xj: Vec<Jet2> = x.iter().map(|&c| Jet2::constant(c)).collect();
    let comps = a.eval(&xj, &vj)?;
    Ok(DMatrix::from_fn(d, d, |i, j| 0.5 * (comps[i].d(j) + comps[j].d(i))))
}

/// Pairs `(a, b)` with `a < b` in lexicographic order.
pub fn index_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim)
        .flat_map(|a| (a + 1..dim).map(move |b| (a, b)))
        .collect()
}

/// `Y^{ab} = dx^a/dtau dx^b/dsigma - dx^a/dsigma dx^b/dtau` for `a < b`.
pub fn string_generalized_velocity(dtau_x: &[f64], dsig_x: &[f64]) -> Result<Vec<f64>> {
    if dtau_x.len() != dsig_x.len() {
        return Err(Error::Shape(format!(
            "tangent lengths differ: {} vs {}",
            dtau_x.len(),
            dsig_x.len()
        )));
    }
    Ok(index_pairs(dtau_x.len())
        .into_iter()
        .map(|(a, b)| dtau_x[a] * dsig_x[b] - dsig_x[a] * dtau_x[b])
        .collect())
}

/// The metric induced on bivectors by `g`:
/// `G_{(ab)(cd)} = g_ac g_bd - g_ad g_bc`.
pub fn wedge_metric(g: &DMatrix<f64>) -> DMatrix<f64> {
    let pairs = index_pairs(g.nrows());
    DMatrix::from_fn(pairs.len(), pairs.len(), |i, j| {
        let (a, b) = pairs[i];
        let (c, d) = pairs[j];
        g[(a, c)] * g[(b, d)] - g[(a, d)] * g[(b, c)]
    })
}

/// `sqrt(Y . G . Y)`.
pub fn dng_lagrangian(y: &[f64], g: &DMatrix<f64>) -> Result<f64> {
    if g.nrows() != y.len() || g.ncols() != y.len() {
        return Err(Error::Shape(format!(
            "bivector metric is {}x{}, Y has {} components",
            g.nrows(),
            g.ncols(),
            y.len()
        )));
    }
    let yv = nalgebra::DVector::from_column_slice(y);
    let q = yv.dot(&(g * &yv));
    if q < 0.0 {
        return Err(Error::domain("sqrt(Y.G.Y)", format!("negative radicand {q}")));
    }
    Ok(q.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const X: [f64; 4] = [0.0, 0.5, -0.3, 0.2];
    const REST: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    fn eta() -> SymTensorField {
        SymTensorField::minkowski(4)
    }

    fn a_const(c: [f64; 4]) -> SymTensorField {
        SymTensorField::covector(&c.map(Expr::Num)).unwrap()
    }

    #[test]
    fn randers_at_rest() {
        let l = LagrangianSpec::randers(1.0, a_const([1.0, 0.0, 0.0, 0.0]), 1.0, eta()).unwrap();
        assert_eq!(eval_f64(&l, &X, &REST).unwrap(), 2.0);
        let l = LagrangianSpec::metric(1.0, eta()).unwrap();
        assert_eq!(eval_f64(&l, &X, &[2.0, 0.0, 0.0, 0.0]).unwrap(), 2.0);
        match eval_f64(&l, &X, &[0.0, 1.0, 0.0, 0.0]) {
            Err(Error::Domain { context, .. }) => assert!(context.contains("rank-2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn needs_some_content() {
        assert!(LagrangianSpec::new(vec![], None).is_err());
        let bad = LagrangianSpec::new(vec![], Some(Expr::parse("v7 * w").unwrap()));
        assert!(matches!(bad, Err(Error::UnboundName(_))));
    }

    #[test]
    fn custom_expression_sees_velocity() {
        let l = LagrangianSpec::new(vec![], Some(Expr::parse("sqrt(v0^2 - v1^2) + x1*v0").unwrap()))
            .unwrap();
        let v = [1.25, 0.75, 0.0, 0.0];
        assert_relative_eq!(eval_f64(&l, &X, &v).unwrap(), 1.0 + 0.5 * 1.25);
        let (n, res) = homogeneity_order(&l, &X, &v, 12).unwrap();
        assert_relative_eq!(n, 1.0, epsilon = 1e-10);
        assert!(res < 1e-10);
    }

    #[test]
    fn homogeneity_orders() {
        let v = [1.2, 0.3, -0.1, 0.4];
        let root = LagrangianSpec::metric(1.0, eta()).unwrap();
        let (n, res) = homogeneity_order(&root, &X, &v, 8).unwrap();
        assert!((n - 1.0).abs() < 1e-10 && res < 1e-10);

        let quad = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, eta())], None).unwrap();
        let (n, res) = homogeneity_order(&quad, &X, &v, 8).unwrap();
        assert!((n - 2.0).abs() < 1e-10 && res < 1e-10);

        let mixed = LagrangianSpec::new(
            vec![CanonicalTerm::polynomial(1.0, eta()), CanonicalTerm::new(1.0, eta())],
            None,
        )
        .unwrap();
        let (_, res) = homogeneity_order(&mixed, &X, &v, 8).unwrap();
        assert!(res > 0.01, "residual {res}");

        assert!(homogeneity_order(&root, &X, &v, 4).is_err());
        let zero = LagrangianSpec::new(vec![CanonicalTerm::new(1.0, a_const([0.0; 4]))], None).unwrap();
        assert!(matches!(
            homogeneity_order(&zero, &X, &v, 8),
            Err(Error::Indeterminate(_))
        ));
    }

    #[test]
    fn hamiltonian_by_order() {
        let v = [1.1, 0.2, 0.3, -0.1];
        let l1 = LagrangianSpec::randers(0.3, a_const([1.0, 0.2, 0.0, 0.0]), 2.0, eta()).unwrap();
        let h = hamiltonian(&l1, &X, &v).unwrap();
        assert!(h.abs() <= 1e-12 * eval_f64(&l1, &X, &v).unwrap().abs());

        let l2 = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, eta())], None).unwrap();
        assert_relative_eq!(
            hamiltonian(&l2, &X, &v).unwrap(),
            eval_f64(&l2, &X, &v).unwrap(),
            max_relative = 1e-14
        );

        let s3 = SymTensorField::constant(3, 4, &[(&[0, 0, 0], 1.0), (&[0, 1, 1], -0.5)]).unwrap();
        let l3 = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, s3)], None).unwrap();
        assert_relative_eq!(
            hamiltonian(&l3, &X, &v).unwrap(),
            2.0 * eval_f64(&l3, &X, &v).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn momenta() {
        let l2 = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, eta())], None).unwrap();
        assert_eq!(generalized_momentum(&l2, &X, &REST).unwrap(), vec![2.0, 0.0, 0.0, 0.0]);

        let m = 3.0;
        let l1 = LagrangianSpec::metric(m, eta()).unwrap();
        let p = generalized_momentum(&l1, &X, &REST).unwrap();
        assert_relative_eq!(p[0], m);

        let a = [0.4, -0.2, 0.1, 0.0];
        let la = LagrangianSpec::new(vec![CanonicalTerm::new(1.0, a_const(a))], None).unwrap();
        for v in [REST, [2.0, 0.5, 0.1, -0.3]] {
            assert_eq!(generalized_momentum(&la, &X, &v).unwrap(), a.to_vec());
        }
    }

    #[test]
    fn split_into_parts() {
        let v = [1.3, 0.2, -0.4, 0.1];
        let a = [0.5, 0.1, 0.0, -0.2];
        let l = LagrangianSpec::randers(1.0, a_const(a), 1.0, eta()).unwrap();
        let (minus, plus) = even_odd_split(&l, &X, &v).unwrap();
        let av: f64 = a.iter().zip(&v).map(|(p, q)| p * q).sum();
        assert_relative_eq!(minus, av, max_relative = 1e-14);
        let norm = eta().contract_full(&X, &v).unwrap().sqrt();
        assert_relative_eq!(plus, norm, max_relative = 1e-14);

        let even = LagrangianSpec::metric(1.0, eta()).unwrap();
        assert_eq!(even_odd_split(&even, &X, &v).unwrap().0, 0.0);
        let odd = LagrangianSpec::new(vec![CanonicalTerm::new(1.0, a_const(a))], None).unwrap();
        assert_eq!(even_odd_split(&odd, &X, &v).unwrap().1, 0.0);
    }

    #[test]
    fn extraction_recovers_fields() {
        let (q, m) = (0.7, 1.5);
        let a = [0.3, -0.1, 0.2, 0.05];
        let g = SymTensorField::minkowski(4)
            .with(&[0, 0], Expr::Num(1.2))
            .unwrap()
            .with(&[0, 1], Expr::Num(0.1))
            .unwrap();
        let l = LagrangianSpec::randers(q, a_const(a), m, g.clone()).unwrap();
        let (ax, gx) = extract_em_and_metric(&l, &X).unwrap();
        let g0 = g.matrix_f64(&X).unwrap();
        for i in 0..4 {
            assert!((ax[i] - q * a[i]).abs() <= 1e-12);
            for j in 0..4 {
                assert!((gx[(i, j)] - m * m * g0[(i, j)]).abs() <= 1e-12);
            }
        }

        let pure = LagrangianSpec::metric(1.0, eta()).unwrap();
        let (ax, gx) = extract_em_and_metric(&pure, &X).unwrap();
        assert!(ax.iter().all(|c| *c == 0.0));
        assert_eq!(gx, eta().matrix_f64(&X).unwrap());
    }

    #[test]
    fn extracted_lagrangian_reproduces_canonical_one() {
        let a = SymTensorField::covector(&[
            Expr::parse("0.1*x1").unwrap(),
            Expr::Num(0.0),
            Expr::parse("0.2*x1").unwrap(),
            Expr::Num(0.0),
        ])
        .unwrap();
        let l = LagrangianSpec::randers(1.0, a, 1.0, eta()).unwrap();
        let ext = Extracted::new(&l);
        let v = [1.2, 0.1, 0.3, 0.0];
        assert_relative_eq!(
            eval_f64(&ext, &X, &v).unwrap(),
            eval_f64(&l, &X, &v).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn induced_metrics() {
        let g = eta().with(&[1, 2], Expr::Num(0.2)).unwrap();
        let lin = PolynomialCovector {
            metric: g.clone(),
            potential: None,
            cubic: None,
        };
        let v = [1.4, 0.2, 0.1, -0.3];
        let m = induced_metric_from_a(&lin, &X, &v).unwrap();
        assert!((m - g.matrix_f64(&X).unwrap()).abs().max() < 1e-14);

        struct Fixed;
        impl CovectorField for Fixed {
            fn dim(&self) -> usize {
                4
            }
            fn eval<S: Scalar>(&self, x: &[S], _v: &[S]) -> Result<Vec<S>> {
                Ok(x.to_vec())
            }
        }
        assert_eq!(induced_metric_from_a(&Fixed, &X, &v).unwrap(), DMatrix::zeros(4, 4));

        let unit = UnitVelocity { metric: eta() };
        let m = induced_metric_from_a(&unit, &X, &v).unwrap();
        let vv = nalgebra::DVector::from_column_slice(&v);
        assert!(vv.dot(&(&m * &vv)).abs() < 1e-13);
    }

    #[test]
    fn induced_quadratic_form_is_hamiltonian() {
        let a = PolynomialCovector {
            metric: eta(),
            potential: Some((0.3, a_const([0.2, 0.1, 0.0, 0.0]))),
            cubic: Some((0.05, SymTensorField::constant(3, 4, &[(&[0, 1, 1], 1.0)]).unwrap())),
        };
        let v = [1.3, 0.2, -0.1, 0.25];
        let m = induced_metric_from_a(&a, &X, &v).unwrap();
        let vv = nalgebra::DVector::from_column_slice(&v);
        let h = hamiltonian(&Contracted(a), &X, &v).unwrap();
        assert_relative_eq!(vv.dot(&(&m * &vv)), h, max_relative = 1e-12);
    }

    #[test]
    fn string_velocity_components() {
        let e = |k: usize| {
            let mut v = vec![0.0; 4];
            v[k] = 1.0;
            v
        };
        let y = string_generalized_velocity(&e(0), &e(1)).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t = [0.3, 1.0, -2.0, 0.5];
        let par: Vec<f64> = t.iter().map(|c| 2.5 * c).collect();
        assert!(string_generalized_velocity(&t, &par).unwrap().iter().all(|c| *c == 0.0));
        assert!(string_generalized_velocity(&t, &[1.0]).is_err());
        assert_eq!(index_pairs(4).len(), 6);
    }

    #[test]
    fn dng_values() {
        let id = DMatrix::identity(6, 6);
        assert_eq!(dng_lagrangian(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &id).unwrap(), 1.0);
        let y = [0.3, 0.1, -0.2, 0.5, 0.0, 0.4];
        let y2: Vec<f64> = y.iter().map(|c| 3.0 * c).collect();
        assert_relative_eq!(
            dng_lagrangian(&y2, &id).unwrap(),
            3.0 * dng_lagrangian(&y, &id).unwrap(),
            max_relative = 1e-15
        );
        // timelike worldsheet: the bivector norm is negative under eta, so
        // the Lorentzian density uses -G
        let g = wedge_metric(&eta().matrix_f64(&X).unwrap());
        let y01 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(dng_lagrangian(&y01, &g), Err(Error::Domain { .. })));
        assert_eq!(dng_lagrangian(&y01, &(-g)).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn canonical_forms_are_first_order(
            q in -1.0f64..1.0,
            a in prop::array::uniform4(-0.3f64..0.3),
            v in prop::array::uniform3(-0.5f64..0.5),
            s3 in -0.2f64..0.2,
        ) {
            let vel = [1.0, v[0], v[1], v[2]];
            let cubic = SymTensorField::constant(3, 4, &[(&[0, 0, 0], 1.0), (&[0, 1, 2], s3)]).unwrap();
            let l = LagrangianSpec::new(vec![
                CanonicalTerm::new(q, a_const(a)),
                CanonicalTerm::new(1.0, eta()),
                CanonicalTerm::new(0.1, cubic),
            ], None).unwrap();
            let (n, _) = homogeneity_order(&l, &X, &vel, 10).unwrap();
            prop_assert!((n - 1.0).abs() < 1e-8);
            let h = hamiltonian(&l, &X, &vel).unwrap();
            prop_assert!(h.abs() <= 1e-10 * eval_f64(&l, &X, &vel).unwrap().abs().max(1.0));
        }

        #[test]
        fn order_n_hamiltonian(
            rank in 1usize..5,
            v in prop::array::uniform3(-0.5f64..0.5),
            c in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let vel = [1.0, v[0], v[1], v[2]];
            let mut s = SymTensorField::new(rank, 4).unwrap();
            s.set(&vec![0; rank], Expr::Num(1.0)).unwrap();
            let mut idx = vec![0; rank];
            for (k, ck) in c.iter().enumerate() {
                idx[rank - 1] = k + 1;
                s.set(&idx, Expr::Num(*ck)).unwrap();
            }
            let l = LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, s)], None).unwrap();
            let lv = eval_f64(&l, &X, &vel).unwrap();
            let h = hamiltonian(&l, &X, &vel).unwrap();
            prop_assert!((h - (rank as f64 - 1.0) * lv).abs() <= 1e-10 * lv.abs().max(1.0));
        }

        #[test]
        fn split_reconstructs(
            a in prop::array::uniform4(-1.0f64..1.0),
            v in prop::array::uniform3(-0.5f64..0.5),
            scale in 0.1f64..10.0,
        ) {
            let vel = [scale, v[0] * scale, v[1] * scale, v[2] * scale];
            let l = LagrangianSpec::randers(1.0, a_const(a), 1.0, eta()).unwrap();
            let (minus, plus) = even_odd_split(&l, &X, &vel).unwrap();
            let lv = eval_f64(&l, &X, &vel).unwrap();
            prop_assert!((minus + plus - lv).abs() <= 1e-14 * lv.abs());
        }
    }
}
