//! Second-order forward-mode automatic differentiation.
//!
//! A [`Jet2`] carries a value together with its gradient and Hessian with
//! respect to a small block of "active" variables. Every derivative used by
//! the engine (momenta, mass matrices, mixed position/velocity partials,
//! Christoffel symbols) comes from propagating jets through ordinary
//! arithmetic.
//!
//! Jets with an empty gradient (`n == 0`) act as plain constants and
//! broadcast against jets of any size.
//!
//! Code that should run on both plain numbers and jets is written against
//! the [`Scalar`] trait.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smallest magnitude accepted as a divisor.
pub const MIN_DIVISOR: f64 = 1e-300;

/// Value, gradient and (symmetric, dense row-major) Hessian.
#[derive(Clone, PartialEq)]
pub struct Jet2 {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet2")
            .field("value", &self.value)
            .field("grad", &self.grad)
            .field("hess", &self.hess)
            .finish()
    }
}

impl Jet2 {
    /// A constant that broadcasts against jets of any size.
    pub fn constant(value: f64) -> Self {
        Jet2 {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// A constant with an explicit (zero) gradient of length `n`.
    pub fn constant_n(value: f64, n: usize) -> Self {
        Jet2 {
            value,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        }
    }

    /// The `k`-th of `n` active variables.
    pub fn variable(value: f64, n: usize, k: usize) -> Self {
        assert!(k < n, "variable index {k} out of range for {n} active variables");
        let mut jet = Self::constant_n(value, n);
        jet.grad[k] = 1.0;
        jet
    }

    /// Builds a jet from raw parts; the Hessian is symmetrized on write.
    pub fn from_parts(value: f64, grad: Vec<f64>, hess: Vec<f64>) -> Result<Self> {
        let n = grad.len();
        if hess.len() != n * n {
            return Err(Error::Shape(format!(
                "hessian has {} entries, expected {}",
                hess.len(),
                n * n
            )));
        }
        let mut jet = Jet2 { value, grad, hess };
        jet.symmetrize();
        Ok(jet)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of active variables (0 for broadcast constants).
    pub fn n(&self) -> usize {
        self.grad.len()
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// Gradient entry, treating broadcast constants as zero.
    pub fn d(&self, i: usize) -> f64 {
        self.grad.get(i).copied().unwrap_or(0.0)
    }

    /// Hessian entry, treating broadcast constants as zero.
    pub fn dd(&self, i: usize, j: usize) -> f64 {
        let n = self.n();
        if n == 0 {
            0.0
        } else {
            self.hess[i * n + j]
        }
    }

    /// Row-major Hessian.
    pub fn hess(&self) -> &[f64] {
        &self.hess
    }

    fn symmetrize(&mut self) {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.hess[i * n + j] + self.hess[j * n + i]);
                self.hess[i * n + j] = m;
                self.hess[j * n + i] = m;
            }
        }
    }

    fn size_of(a: &Jet2, b: &Jet2) -> usize {
        match (a.n(), b.n()) {
            (0, m) => m,
            (n, 0) => n,
            (n, m) => {
                assert_eq!(n, m, "jets with different active blocks combined");
                n
            }
        }
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value`.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet2 {
        let n = self.n();
        let grad = self.grad.iter().map(|g| f1 * g).collect();
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let h = f2 * self.grad[i] * self.grad[j] + f1 * self.hess[i * n + j];
                hess[i * n + j] = h;
                hess[j * n + i] = h;
            }
        }
        Jet2 {
            value: f0,
            grad,
            hess,
        }
    }

    fn add_jet(&self, other: &Jet2, sign: f64) -> Jet2 {
        let n = Self::size_of(self, other);
        let mut out = Jet2::constant_n(self.value + sign * other.value, n);
        for i in 0..n {
            out.grad[i] = self.d(i) + sign * other.d(i);
        }
        for i in 0..n * n {
            let a = if self.n() == 0 { 0.0 } else { self.hess[i] };
            let b = if other.n() == 0 { 0.0 } else { other.hess[i] };
            out.hess[i] = a + sign * b;
        }
        out
    }

    fn mul_jet(&self, other: &Jet2) -> Jet2 {
        if other.n() == 0 {
            return self.scale(other.value);
        }
        if self.n() == 0 {
            return other.scale(self.value);
        }
        let n = Self::size_of(self, other);
        let (a, b) = (self.value, other.value);
        let mut out = Jet2::constant_n(a * b, n);
        for i in 0..n {
            out.grad[i] = self.grad[i] * b + a * other.grad[i];
        }
        for i in 0..n {
            for j in i..n {
                let h = self.hess[i * n + j] * b
                    + a * other.hess[i * n + j]
                    + self.grad[i] * other.grad[j]
                    + other.grad[i] * self.grad[j];
                out.hess[i * n + j] = h;
                out.hess[j * n + i] = h;
            }
        }
        out
    }

    fn scale(&self, c: f64) -> Jet2 {
        Jet2 {
            value: self.value * c,
            grad: self.grad.iter().map(|g| g * c).collect(),
            hess: self.hess.iter().map(|h| h * c).collect(),
        }
    }
}

/// Seeds jets at `point`; entries listed in `active` become independent
/// variables (in the order given), the rest are constants.
pub fn seed_variables(point: &[f64], active: &[usize]) -> Result<Vec<Jet2>> {
    if active.is_empty() {
        return Err(Error::InvalidArgument("empty active set".into()));
    }
    let n = active.len();
    let mut jets: Vec<Jet2> = point.iter().map(|&p| Jet2::constant_n(p, n)).collect();
    for (k, &idx) in active.iter().enumerate() {
        if idx >= point.len() {
            return Err(Error::InvalidArgument(format!(
                "active index {idx} out of range for point of length {}",
                point.len()
            )));
        }
        if active[..k].contains(&idx) {
            return Err(Error::InvalidArgument(format!("active index {idx} repeated")));
        }
        jets[idx] = Jet2::variable(point[idx], n, k);
    }
    Ok(jets)
}

/// Seeds every entry of `point` as active.
pub fn seed_all(point: &[f64]) -> Vec<Jet2> {
    let n = point.len();
    point
        .iter()
        .enumerate()
        .map(|(k, &p)| Jet2::variable(p, n, k))
        .collect()
}

/// Evaluates `f` on jet arguments.
pub fn evaluate<F>(f: F, args: &[Jet2]) -> Result<Jet2>
where
    F: FnOnce(&[Jet2]) -> Result<Jet2>,
{
    f(args)
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        self.add_jet(&rhs, 1.0)
    }
}

impl Add for &Jet2 {
    type Output = Jet2;
    fn add(self, rhs: &Jet2) -> Jet2 {
        self.add_jet(rhs, 1.0)
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: f64) -> Jet2 {
        self.value += rhs;
        self
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self.add_jet(&rhs, -1.0)
    }
}

impl Sub for &Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: &Jet2) -> Jet2 {
        self.add_jet(rhs, -1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        self.mul_jet(&rhs)
    }
}

impl Mul for &Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: &Jet2) -> Jet2 {
        self.mul_jet(rhs)
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: f64) -> Jet2 {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: f64) -> Jet2 {
        self.scale(rhs)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Neg for &Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

/// Arithmetic shared by `f64` and [`Jet2`].
///
/// Operations that can leave their domain return `Result`; the context
/// string of a domain error names the failing operation and can be
/// re-labelled by the caller with [`Error::in_context`].
pub trait Scalar: Clone + fmt::Debug {
    fn value(&self) -> f64;
    /// A constant compatible with `self` (same active block for jets).
    fn lift(&self, c: f64) -> Self;
    /// True when no derivative information is carried.
    fn is_constant(&self) -> bool;
    /// Applies a scalar map given `f(x), f'(x), f''(x)` at `x = self.value()`.
    fn map(&self, f0: f64, f1: f64, f2: f64) -> Self;

    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;

    fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    fn add_const(&self, c: f64) -> Self {
        self.add(&self.lift(c))
    }

    fn recip(&self) -> Result<Self> {
        let x = self.value();
        if !(x.abs() >= MIN_DIVISOR) {
            return Err(Error::domain("1/x", format!("division by {x:e}")));
        }
        Ok(self.map(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)))
    }

    fn div(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(&other.recip()?))
    }

    fn sqrt(&self) -> Result<Self> {
        let x = self.value();
        if x < 0.0 || x.is_nan() {
            return Err(Error::domain("sqrt", format!("negative argument {x:e}")));
        }
        if x == 0.0 {
            if self.is_constant() {
                return Ok(self.lift(0.0));
            }
            return Err(Error::domain("sqrt", "derivative undefined at 0"));
        }
        let s = x.sqrt();
        Ok(self.map(s, 0.5 / s, -0.25 / (s * x)))
    }

    fn exp(&self) -> Self {
        let e = self.value().exp();
        self.map(e, e, e)
    }

    fn ln(&self) -> Result<Self> {
        let x = self.value();
        if !(x > 0.0) {
            return Err(Error::domain("ln", format!("non-positive argument {x:e}")));
        }
        Ok(self.map(x.ln(), 1.0 / x, -1.0 / (x * x)))
    }

    fn sin(&self) -> Self {
        let x = self.value();
        self.map(x.sin(), x.cos(), -x.sin())
    }

    fn cos(&self) -> Self {
        let x = self.value();
        self.map(x.cos(), -x.sin(), -x.cos())
    }

    fn abs(&self) -> Self {
        let x = self.value();
        let s = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.map(x.abs(), s, 0.0)
    }

    /// Integer power by repeated squaring; negative powers go through
    /// [`Scalar::recip`].
    fn powi(&self, p: i32) -> Result<Self> {
        let mut base = if p < 0 { self.recip()? } else { self.clone() };
        let mut e = p.unsigned_abs();
        let mut acc = self.lift(1.0);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        Ok(acc)
    }

    /// Real power. Integer exponents use [`Scalar::powi`]; otherwise the
    /// base must be positive.
    fn powf(&self, p: f64) -> Result<Self> {
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            return self.powi(p as i32);
        }
        let x = self.value();
        if !(x > 0.0) {
            return Err(Error::domain(
                "pow",
                format!("non-integer power {p} of non-positive base {x:e}"),
            ));
        }
        let f0 = x.powf(p);
        Ok(self.map(f0, p * f0 / x, p * (p - 1.0) * f0 / (x * x)))
    }

    /// `self^exponent`; a varying exponent goes through `exp(e·ln x)`.
    fn pow(&self, exponent: &Self) -> Result<Self> {
        if exponent.is_constant() {
            return self.powf(exponent.value());
        }
        Ok(exponent.mul(&self.ln()?).exp())
    }

    /// Real n-th root: principal branch (positive radicand) for even `n`,
    /// sign-preserving for odd `n`.
    fn real_root(&self, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("zeroth root".into()));
        }
        if n == 1 {
            return Ok(self.clone());
        }
        let x = self.value();
        if n.is_multiple_of(2) {
            if !(x > 0.0) {
                return Err(Error::domain(
                    format!("root{n}"),
                    format!("even root of non-positive radicand {x:e}"),
                ));
            }
        } else if x == 0.0 || x.is_nan() {
            return Err(Error::domain(format!("root{n}"), "root singular at 0"));
        }
        let inv = 1.0 / n as f64;
        let r = x.signum() * x.abs().powf(inv);
        Ok(self.map(r, inv * r / x, inv * (inv - 1.0) * r / (x * x)))
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn map(&self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn sqrt(&self) -> Result<Self> {
        if *self < 0.0 || self.is_nan() {
            return Err(Error::domain("sqrt", format!("negative argument {self:e}")));
        }
        Ok(f64::sqrt(*self))
    }
}

impl Scalar for Jet2 {
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, c: f64) -> Self {
        Jet2::constant(c)
    }
    fn is_constant(&self) -> bool {
        self.grad.iter().all(|g| *g == 0.0) && self.hess.iter().all(|h| *h == 0.0)
    }
    fn map(&self, f0: f64, f1: f64, f2: f64) -> Self {
        self.chain(f0, f1, f2)
    }
    fn add(&self, other: &Self) -> Self {
        self.add_jet(other, 1.0)
    }
    fn sub(&self, other: &Self) -> Self {
        self.add_jet(other, -1.0)
    }
    fn mul(&self, other: &Self) -> Self {
        self.mul_jet(other)
    }
    fn scale(&self, c: f64) -> Self {
        Jet2::scale(self, c)
    }
}

/// Sum of a slice of scalars (`zero` supplies the shape).
pub fn sum<S: Scalar>(zero: S, items: impl IntoIterator<Item = S>) -> S {
    items.into_iter().fold(zero, |acc, s| acc.add(&s))
}
