//! A small arithmetic language for field profiles in scenario files.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-r^2` is `-(r^2)`. There is no
//! implicit multiplication. Names from [`VARIABLES`] are coordinates; any
//! other bare name is a parameter, resolved from the scenario's parameter
//! table before evaluation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::jets::Scalar;

/// Names parsed as coordinates rather than parameters. `v0..v3` are the
/// velocity components, available to custom Lagrangian terms.
pub const VARIABLES: &[&str] = &[
    "t", "r", "x0", "x1", "x2", "x3", "w", "u", "v0", "v1", "v2", "v3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Abs,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Name lookup used during evaluation.
pub trait Bindings<S> {
    fn lookup(&self, name: &str) -> Option<S>;
}

impl<S: Clone> Bindings<S> for HashMap<String, S> {
    fn lookup(&self, name: &str) -> Option<S> {
        self.get(name).cloned()
    }
}

impl<S: Clone> Bindings<S> for [(&str, S)] {
    fn lookup(&self, name: &str) -> Option<S> {
        self.iter().find(|(n, _)| *n == name).map(|(_, s)| s.clone())
    }
}

impl<S, F: Fn(&str) -> Option<S>> Bindings<S> for F {
    fn lookup(&self, name: &str) -> Option<S> {
        self(name)
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        parse(text)
    }

    pub fn num(x: f64) -> Expr {
        Expr::Num(x)
    }

    /// Evaluates on plain numbers or jets. Domain errors carry the printed
    /// sub-expression that failed.
    pub fn eval<S: Scalar, B: Bindings<S> + ?Sized>(&self, like: &S, bindings: &B) -> Result<S> {
        match self {
            Expr::Num(x) => Ok(like.lift(*x)),
            Expr::Var(name) | Expr::Param(name) => bindings
                .lookup(name)
                .ok_or_else(|| Error::UnboundName(name.clone())),
            Expr::Neg(e) => Ok(e.eval(like, bindings)?.neg()),
            Expr::Bin(op, a, b) => {
                let a = a.eval(like, bindings)?;
                let b = b.eval(like, bindings)?;
                match op {
                    BinOp::Add => Ok(a.add(&b)),
                    BinOp::Sub => Ok(a.sub(&b)),
                    BinOp::Mul => Ok(a.mul(&b)),
                    BinOp::Div => a.div(&b),
                    BinOp::Pow => a.pow(&b),
                }
                .map_err(|e| e.in_context(self.to_string()))
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(like, bindings)?;
                match f {
                    Func::Sqrt => a.sqrt(),
                    Func::Exp => Ok(a.exp()),
                    Func::Ln => a.ln(),
                    Func::Sin => Ok(a.sin()),
                    Func::Cos => Ok(a.cos()),
                    Func::Abs => Ok(a.abs()),
                    Func::Pow => a.pow(&args[1].eval(like, bindings)?),
                }
                .map_err(|e| e.in_context(self.to_string()))
            }
        }
    }

    /// Plain numeric evaluation.
    pub fn eval_f64<B: Bindings<f64> + ?Sized>(&self, bindings: &B) -> Result<f64> {
        self.eval(&0.0, bindings)
    }

    /// Replaces parameters by their values. Unknown parameters are an error.
    pub fn resolve(&self, params: &HashMap<String, f64>) -> Result<Expr> {
        Ok(match self {
            Expr::Param(name) => Expr::Num(
                *params
                    .get(name)
                    .ok_or_else(|| Error::UnboundName(name.clone()))?,
            ),
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.resolve(params)?)),
            Expr::Bin(op, a, b) => {
                Expr::Bin(*op, Box::new(a.resolve(params)?), Box::new(b.resolve(params)?))
            }
            Expr::Call(f, args) => Expr::Call(
                *f,
                args.iter().map(|a| a.resolve(params)).collect::<Result<_>>()?,
            ),
        })
    }

    pub fn params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.clone());
            }
        });
        out
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Var(p) = e {
                out.insert(p.clone());
            }
        });
        out
    }

    pub fn uses(&self, name: &str) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let Expr::Var(v) | Expr::Param(v) = e {
                found |= v == name;
            }
        });
        found
    }

    fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.walk(f),
            Expr::Bin(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
            _ => {}
        }
    }

    fn is_atom(&self) -> bool {
        match self {
            Expr::Num(x) => *x >= 0.0,
            Expr::Var(_) | Expr::Param(_) | Expr::Call(..) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrapped(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            if e.is_atom() {
                write!(f, "{e}")
            } else {
                write!(f, "({e})")
            }
        }
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Var(n) | Expr::Param(n) => f.write_str(n),
            Expr::Neg(e) => {
                f.write_str("-")?;
                wrapped(e, f)
            }
            Expr::Bin(op, a, b) => {
                wrapped(a, f)?;
                write!(f, " {} ", op.symbol())?;
                wrapped(b, f)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Op(c as char), start));
        }
        Err(Error::Syntax {
            offset: start,
            expected: vec!["number".into(), "name".into(), "operator".into()],
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize)> {
        let digits = |lx: &mut Lexer| {
            let s = lx.pos;
            while matches!(lx.peek(), Some(c) if c.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(Error::Syntax {
                offset: start,
                expected: vec!["digit".into()],
            });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2e` followed by a name: leave the `e` for the next token
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let value = text.parse::<f64>().map_err(|_| Error::Syntax {
            offset: start,
            expected: vec!["number".into()],
        })?;
        Ok((Tok::Num(value), start))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

const OPERAND: &[&str] = &["number", "name", "(", "-"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::End {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if *self.peek() == Tok::Op(c) {
            self.bump();
            Ok(())
        } else {
            self.fail(&[&c.to_string()])
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(x) => Ok(Expr::Num(x)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Op('(') {
                    let func = Func::from_name(&name).ok_or(Error::UnknownFunction(name))?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Op(',') {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if args.len() != func.arity() {
                        return Err(Error::Syntax {
                            offset,
                            expected: vec![format!("{} argument(s) to {}", func.arity(), func.name())],
                        });
                    }
                    self.expect(')')?;
                    Ok(Expr::Call(func, args))
                } else if VARIABLES.contains(&name.as_str()) {
                    Ok(Expr::Var(name))
                } else {
                    Ok(Expr::Param(name))
                }
            }
            _ => Err(Error::Syntax {
                offset,
                expected: OPERAND.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }
}

/// Parses an expression; errors carry the byte offset of the failure.
pub fn parse(text: &str) -> Result<Expr> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, at: 0 };
    if *p.peek() == Tok::End {
        return p.fail(OPERAND);
    }
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::{seed_all, Jet2};
    use proptest::prelude::*;

    fn var(n: &str) -> Box<Expr> {
        Box::new(Expr::Var(n.into()))
    }

    #[test]
    fn parses_parameter_times_power() {
        let e = parse("psi0 * r^2").unwrap();
        assert_eq!(
            e,
            Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Param("psi0".into())),
                Box::new(Expr::Bin(BinOp::Pow, var("r"), Box::new(Expr::Num(2.0))))
            )
        );
    }

    #[test]
    fn unary_minus_then_division() {
        let e = parse("-b/(r+eps)").unwrap();
        let Expr::Bin(BinOp::Div, lhs, rhs) = e else {
            panic!("expected division")
        };
        assert_eq!(*lhs, Expr::Neg(Box::new(Expr::Param("b".into()))));
        assert!(matches!(*rhs, Expr::Bin(BinOp::Add, _, _)));
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        assert_eq!(
            parse("-r^2").unwrap(),
            Expr::Neg(Box::new(Expr::Bin(BinOp::Pow, var("r"), Box::new(Expr::Num(2.0)))))
        );
        // right associative
        let e = parse("2^3^2").unwrap();
        assert_eq!(e.eval_f64(&HashMap::new()).unwrap(), 512.0);
        assert_eq!(parse("2^-1").unwrap().eval_f64(&HashMap::new()).unwrap(), 0.5);
    }

    #[test]
    fn incomplete_input_reports_offset() {
        match parse("r +") {
            Err(Error::Syntax { offset, expected }) => {
                assert_eq!(offset, 3);
                assert!(expected.contains(&"number".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_implicit_multiplication_and_unknown_functions() {
        assert!(matches!(parse("2r"), Err(Error::Syntax { offset: 1, .. })));
        assert!(matches!(parse("foo(r)"), Err(Error::UnknownFunction(n)) if n == "foo"));
        assert!(matches!(parse(""), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(parse("(r"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse("pow(r)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("r $ 2"), Err(Error::Syntax { offset: 2, .. })));
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Num(1.5e-3));
        assert_eq!(parse(".25").unwrap(), Expr::Num(0.25));
    }

    #[test]
    fn plain_evaluation() {
        let e = parse("2*r").unwrap();
        assert_eq!(e.eval_f64(&[("r", 3.0)][..]).unwrap(), 6.0);
        assert!(matches!(
            e.eval_f64(&HashMap::new()),
            Err(Error::UnboundName(n)) if n == "r"
        ));
    }

    #[test]
    fn jet_evaluation_of_sqrt() {
        let r = seed_all(&[4.0]).remove(0);
        let e = parse("sqrt(r)").unwrap();
        let j = e.eval(&r, &[("r", r.clone())][..]).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.d(0), 0.25);
        assert_eq!(j.dd(0, 0), -1.0 / 32.0);
    }

    #[test]
    fn domain_error_names_subexpression() {
        let e = parse("1 + 1/r").unwrap();
        match e.eval_f64(&[("r", 0.0)][..]) {
            Err(Error::Domain { context, .. }) => assert_eq!(context, "1 / r"),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse("ln(r - 2)").unwrap();
        match e.eval(&Jet2::constant(0.0), &[("r", Jet2::constant(1.0))][..]) {
            Err(Error::Domain { context, .. }) => assert_eq!(context, "ln(r - 2)"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolve_substitutes_parameters() {
        let e = parse("a*r + b").unwrap();
        assert_eq!(
            e.params().into_iter().collect::<Vec<_>>(),
            vec!["a".to_string(), "b".to_string()]
        );
        let params = HashMap::from([("a".to_string(), 2.0), ("b".to_string(), 1.0)]);
        let r = e.resolve(&params).unwrap();
        assert!(r.params().is_empty());
        assert_eq!(r.eval_f64(&[("r", 3.0)][..]).unwrap(), 7.0);
        assert!(matches!(
            e.resolve(&HashMap::new()),
            Err(Error::UnboundName(_))
        ));
    }

    #[test]
    fn integer_power_of_negative_base() {
        let e = parse("r^3").unwrap();
        assert_eq!(e.eval_f64(&[("r", -2.0)][..]).unwrap(), -8.0);
        assert!(parse("r^0.5").unwrap().eval_f64(&[("r", -2.0)][..]).is_err());
    }

    fn ast() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(|x| Expr::Num((x * 100.0).round() / 100.0)),
            prop::sample::select(vec!["r", "t", "x1", "w", "u"]).prop_map(|v| Expr::Var(v.into())),
            prop::sample::select(vec!["a", "b", "kappa"]).prop_map(|v| Expr::Param(v.into())),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]),
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (
                    prop::sample::select(vec![Func::Sqrt, Func::Exp, Func::Sin, Func::Abs]),
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call(f, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
            ]
        })
    }

    /// Trees that are smooth everywhere: sums, products, sin, cos, exp of
    /// scaled arguments and divisions by `2 + (.)^2`.
    fn smooth_ast() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-2.0f64..2.0).prop_map(Expr::Num),
            prop::sample::select(vec!["x1", "x2", "w"]).prop_map(|v| Expr::Var(v.into())),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Cos, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(
                    Func::Exp,
                    vec![Expr::Bin(BinOp::Mul, Box::new(Expr::Num(0.2)), Box::new(a))]
                )),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Bin(
                    BinOp::Div,
                    Box::new(a),
                    Box::new(Expr::Bin(
                        BinOp::Add,
                        Box::new(Expr::Num(2.0)),
                        Box::new(Expr::Bin(BinOp::Pow, Box::new(b), Box::new(Expr::Num(2.0))))
                    ))
                )),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in ast()) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e, "printed as {}", printed);
            prop_assert_eq!(parse(&reparsed.to_string()).unwrap(), reparsed);
        }

        #[test]
        fn jet_evaluation_matches_differences(e in smooth_ast(), p in prop::array::uniform3(-1.0f64..1.0)) {
            let names = ["x1", "x2", "w"];
            let plain = |q: &[f64]| {
                let b: Vec<(&str, f64)> = names.iter().copied().zip(q.iter().copied()).collect();
                e.eval_f64(&b[..]).unwrap()
            };
            let jets = seed_all(&p);
            let b: Vec<(&str, Jet2)> = names.iter().copied().zip(jets.iter().cloned()).collect();
            let j = e.eval(&jets[0], &b[..]).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut a = p; a[i] += h;
                let mut c = p; c[i] -= h;
                let fd = (plain(&a) - plain(&c)) / (2.0 * h);
                let tol = 1e-6 * (1.0 + j.value().abs() + fd.abs());
                prop_assert!((j.d(i) - fd).abs() <= tol, "d{}: {} vs {}", i, j.d(i), fd);
            }
        }
    }
}
