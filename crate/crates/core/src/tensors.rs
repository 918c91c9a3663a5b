//! Totally symmetric tensor fields and their velocity contractions.
//!
//! Only sorted multi-indices are stored. The permutation multiplicity
//! `n! / prod(counts!)` is applied when contracting, so each stored
//! coefficient is the value of every component it stands for.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::jets::Scalar;

/// Coordinate names visible to coefficient expressions: `x0..x{D-1}`, the
/// time `t = x0`, and the spatial radius `r`.
pub struct Coordinates<'a, S> {
    x: &'a [S],
    r: Option<S>,
}

const COORD_NAMES: [&str; 4] = ["x0", "x1", "x2", "x3"];

impl<'a, S: Scalar> Coordinates<'a, S> {
    /// `with_r` computes the spatial radius; leave it off when no
    /// expression needs it, since `r` is not differentiable at the origin.
    pub fn new(x: &'a [S], with_r: bool) -> Result<Self> {
        let r = if with_r && x.len() > 1 {
            let mut acc = x[1].mul(&x[1]);
            for xi in &x[2..] {
                acc = acc.add(&xi.mul(xi));
            }
            Some(acc.sqrt().map_err(|e| e.in_context("r"))?)
        } else {
            None
        };
        Ok(Coordinates { x, r })
    }
}

impl<S: Scalar> Bindings<S> for Coordinates<'_, S> {
    fn lookup(&self, name: &str) -> Option<S> {
        match name {
            "t" => self.x.first().cloned(),
            "r" => self.r.clone(),
            _ => COORD_NAMES
                .iter()
                .position(|n| *n == name)
                .and_then(|i| self.x.get(i).cloned()),
        }
    }
}

/// All sorted multi-indices `a1 <= ... <= an` over `0..dim`.
pub fn multi_indices(dim: usize, rank: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; rank];
    if dim == 0 {
        return out;
    }
    loop {
        out.push(cur.clone());
        // odometer increment keeping the sequence non-decreasing
        let mut k = rank;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] + 1 < dim {
                let next = cur[k] + 1;
                for c in &mut cur[k..] {
                    *c = next;
                }
                break;
            }
        }
    }
}

/// Number of distinct orderings of a sorted multi-index.
pub fn multiplicity(sorted: &[usize]) -> f64 {
    let mut m = factorial(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&a| a == sorted[i]).count();
        m /= factorial(j);
        i += j;
    }
    m
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    coeff: Expr,
    mult: f64,
}

/// A totally symmetric rank-n field `S_{a1..an}(x)` on a D-dimensional
/// spacetime with coefficients given as expressions of the coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    rank: usize,
    dim: usize,
    coeffs: BTreeMap<Vec<usize>, Entry>,
    uses_r: bool,
}

impl SymTensorField {
    pub fn new(rank: usize, dim: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("tensor rank must be at least 1".into()));
        }
        if dim == 0 || dim > COORD_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "dimension must be between 1 and {}, got {dim}",
                COORD_NAMES.len()
            )));
        }
        Ok(SymTensorField {
            rank,
            dim,
            coeffs: BTreeMap::new(),
            uses_r: false,
        })
    }

    /// The flat metric `diag(1, -1, ..., -1)`.
    pub fn minkowski(dim: usize) -> Self {
        let mut g = Self::new(2, dim).expect("valid dimension");
        for a in 0..dim {
            g.set(&[a, a], Expr::Num(if a == 0 { 1.0 } else { -1.0 }))
                .expect("in range");
        }
        g
    }

    /// Builds a field with constant coefficients.
    pub fn constant(rank: usize, dim: usize, entries: &[(&[usize], f64)]) -> Result<Self> {
        let mut s = Self::new(rank, dim)?;
        for (idx, c) in entries {
            s.set(idx, Expr::Num(*c))?;
        }
        Ok(s)
    }

    /// A rank-1 field with the given components.
    pub fn covector(components: &[Expr]) -> Result<Self> {
        let mut s = Self::new(1, components.len())?;
        for (a, c) in components.iter().enumerate() {
            s.set(&[a], c.clone())?;
        }
        Ok(s)
    }

    /// A diagonal rank-2 field.
    pub fn diagonal(components: &[Expr]) -> Result<Self> {
        let mut s = Self::new(2, components.len())?;
        for (a, c) in components.iter().enumerate() {
            s.set(&[a, a], c.clone())?;
        }
        Ok(s)
    }

    /// Parses the `"i,j,..."` keyed coefficient table used in scenario files.
    pub fn from_strings(rank: usize, dim: usize, coeffs: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Self::new(rank, dim)?;
        for (key, text) in coeffs {
            let idx = key
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidArgument(format!("bad index key `{key}`")))?;
            s.set(&idx, Expr::parse(text)?)?;
        }
        Ok(s)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored independent components.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Stores a coefficient under any ordering of `indices`.
    pub fn set(&mut self, indices: &[usize], coeff: Expr) -> Result<()> {
        let key = self.key(indices)?;
        self.uses_r |= coeff.uses("r");
        let mult = multiplicity(&key);
        self.coeffs.insert(key, Entry { coeff, mult });
        Ok(())
    }

    pub fn with(mut self, indices: &[usize], coeff: Expr) -> Result<Self> {
        self.set(indices, coeff)?;
        Ok(self)
    }

    /// Coefficient under any ordering of `indices`; `None` means zero.
    pub fn get(&self, indices: &[usize]) -> Option<&Expr> {
        let key = self.key(indices).ok()?;
        self.coeffs.get(&key).map(|e| &e.coeff)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], &Expr)> {
        self.coeffs.iter().map(|(k, e)| (k.as_slice(), &e.coeff))
    }

    /// Substitutes scenario parameters into every coefficient.
    pub fn resolve(&self, params: &std::collections::HashMap<String, f64>) -> Result<Self> {
        let mut out = self.clone();
        for e in out.coeffs.values_mut() {
            e.coeff = e.coeff.resolve(params)?;
        }
        Ok(out)
    }

    pub fn uses_radius(&self) -> bool {
        self.uses_r
    }

    fn key(&self, indices: &[usize]) -> Result<Vec<usize>> {
        if indices.len() != self.rank {
            return Err(Error::Shape(format!(
                "expected {} indices, got {}",
                self.rank,
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&a| a >= self.dim) {
            return Err(Error::Shape(format!("index {bad} out of range for dimension {}", self.dim)));
        }
        let mut key = indices.to_vec();
        key.sort_unstable();
        Ok(key)
    }

    fn check_args<S>(&self, x: &[S], v: &[S]) -> Result<()> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::Shape(format!(
                "tensor of dimension {} given |x| = {}, |v| = {}",
                self.dim,
                x.len(),
                v.len()
            )));
        }
        Ok(())
    }

    /// Evaluated stored coefficients at `x`, with multiplicities.
    pub fn coefficients_at<S: Scalar>(&self, x: &[S]) -> Result<Vec<(&[usize], f64, S)>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "tensor of dimension {} given |x| = {}",
                self.dim,
                x.len()
            )));
        }
        let like = &x[0];
        let coords = Coordinates::new(x, self.uses_r)?;
        self.coeffs
            .iter()
            .map(|(k, e)| Ok((k.as_slice(), e.mult, e.coeff.eval(like, &coords)?)))
            .collect()
    }

    /// `S(v, ..., v)`, summed over all index orderings.
    pub fn contract_full<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<S> {
        self.check_args(x, v)?;
        let mut acc = v[0].lift(0.0);
        for (idx, mult, c) in self.coefficients_at(x)? {
            let mut term = c.scale(mult);
            for &a in idx {
                term = term.mul(&v[a]);
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    /// `n S_{a b..} v^b ...`, the velocity gradient of [`Self::contract_full`].
    pub fn contract_gradient<S: Scalar>(&self, x: &[S], v: &[S]) -> Result<Vec<S>> {
        self.check_args(x, v)?;
        let mut grad = vec![v[0].lift(0.0); self.dim];
        for (idx, mult, c) in self.coefficients_at(x)? {
            let base = c.scale(mult);
            // differentiate the monomial once per distinct index
            let mut i = 0;
            while i < idx.len() {
                let a = idx[i];
                let count = idx[i..].iter().take_while(|&&b| b == a).count();
                let mut term = base.scale(count as f64);
                for (k, &b) in idx.iter().enumerate() {
                    if k != i {
                        term = term.mul(&v[b]);
                    }
                }
                grad[a] = grad[a].add(&term);
                i += count;
            }
        }
        Ok(grad)
    }

    /// The rank-2 field as a dense symmetric matrix at `x`.
    pub fn matrix_at<S: Scalar>(&self, x: &[S]) -> Result<Vec<Vec<S>>> {
        if self.rank != 2 {
            return Err(Error::Shape(format!("matrix view needs rank 2, got {}", self.rank)));
        }
        let zero = x
            .first()
            .ok_or_else(|| Error::Shape("empty point".into()))?
            .lift(0.0);
        let mut m = vec![vec![zero; self.dim]; self.dim];
        for (idx, _, c) in self.coefficients_at(x)? {
            m[idx[0]][idx[1]] = c.clone();
            m[idx[1]][idx[0]] = c;
        }
        Ok(m)
    }

    pub fn matrix_f64(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.matrix_at(x)?;
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| m[i][j]))
    }

    /// `d L / d S_{a1..an}` for the term `L = S(v..v)^{1/n}`: the velocity
    /// monomial scaled by `(1/n) S_n^{(1-n)/n}`. Values are per component;
    /// the derivative with respect to a stored coefficient is the value
    /// times its multiplicity.
    pub fn source_monomial(&self, x: &[f64], v: &[f64]) -> Result<SymTensor> {
        let sn = self.contract_full(x, v)?;
        if sn == 0.0 {
            return Err(Error::domain("S_n", "contraction vanishes, root is singular"));
        }
        let n = self.rank;
        let root = sn.real_root(n as u32)?;
        let prefactor = root.powi(1 - n as i32) / n as f64;
        let mut entries = BTreeMap::new();
        for idx in multi_indices(self.dim, n) {
            let mono: f64 = idx.iter().map(|&a| v[a]).product();
            entries.insert(idx, prefactor * mono);
        }
        Ok(SymTensor {
            rank: n,
            dim: self.dim,
            entries,
        })
    }
}

/// A numeric symmetric tensor, stored by sorted multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    pub rank: usize,
    pub dim: usize,
    pub entries: BTreeMap<Vec<usize>, f64>,
}

impl SymTensor {
    pub fn get(&self, indices: &[usize]) -> f64 {
        let mut key = indices.to_vec();
        key.sort_unstable();
        self.entries.get(&key).copied().unwrap_or(0.0)
    }
}
