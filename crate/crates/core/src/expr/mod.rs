//! Scalar expressions over the base coordinates `x1..xn`, the fiber
//! coordinates `y1..ym` and named parameters.
//!
//! Trees are immutable and shared through `Arc`, so cloning an [`Expr`] is
//! cheap and evaluation may run concurrently. All constructors go through the
//! folding helpers in this module: constants are folded when the result is
//! finite, and additive zeros / multiplicative ones are absorbed. No other
//! simplification is attempted.

mod diff;
mod eval;
mod parse;

use std::fmt;
use std::sync::Arc;

pub use eval::ExprScalar;
pub use parse::parse;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    /// Index into the owning [`VarSet`].
    Var(usize),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
}

/// Immutable, structurally comparable expression tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Self {
        Expr(Arc::new(Node::Const(c)))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn var(index: usize) -> Self {
        Expr(Arc::new(Node::Var(index)))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn neg(&self) -> Self {
        match self.node() {
            Node::Const(c) => Self::constant(-c),
            Node::Unary(UnaryOp::Neg, inner) => inner.clone(),
            _ => Self::raw_unary(UnaryOp::Neg, self.clone()),
        }
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Self {
        if op == UnaryOp::Neg {
            return arg.neg();
        }
        if let Some(c) = arg.as_const() {
            let v = match op {
                UnaryOp::Sin => Some(c.sin()),
                UnaryOp::Cos => Some(c.cos()),
                UnaryOp::Exp => Some(c.exp()),
                UnaryOp::Log if c > 0.0 => Some(c.ln()),
                UnaryOp::Sqrt if c >= 0.0 => Some(c.sqrt()),
                _ => None,
            };
            if let Some(v) = v.filter(|v| v.is_finite()) {
                return Self::constant(v);
            }
        }
        Self::raw_unary(op, arg)
    }

    pub fn add(&self, rhs: &Expr) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if (a + b).is_finite() => Self::constant(a + b),
            (Some(a), _) if a == 0.0 => rhs.clone(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Self::raw_binary(BinaryOp::Add, self.clone(), rhs.clone()),
        }
    }

    pub fn sub(&self, rhs: &Expr) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if (a - b).is_finite() => Self::constant(a - b),
            (_, Some(b)) if b == 0.0 => self.clone(),
            (Some(a), _) if a == 0.0 => rhs.neg(),
            _ => Self::raw_binary(BinaryOp::Sub, self.clone(), rhs.clone()),
        }
    }

    pub fn mul(&self, rhs: &Expr) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if (a * b).is_finite() => return Self::constant(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => return Self::zero(),
            (Some(a), _) if a == 1.0 => return rhs.clone(),
            (_, Some(b)) if b == 1.0 => return self.clone(),
            _ => {}
        }
        // c1 * (c2 * e) -> (c1 c2) * e
        if let (Some(a), Node::Binary(BinaryOp::Mul, l, r)) = (self.as_const(), rhs.node()) {
            if let Some(b) = l.as_const() {
                if (a * b).is_finite() {
                    return Self::constant(a * b).mul(r);
                }
            }
        }
        Self::raw_binary(BinaryOp::Mul, self.clone(), rhs.clone())
    }

    pub fn div(&self, rhs: &Expr) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 && (a / b).is_finite() => return Self::constant(a / b),
            (_, Some(b)) if b == 1.0 => return self.clone(),
            (Some(a), _) if a == 0.0 => return Self::zero(),
            _ => {}
        }
        // (c1 * e) / c2 -> (c1 / c2) * e
        if let (Node::Binary(BinaryOp::Mul, l, r), Some(b)) = (self.node(), rhs.as_const()) {
            if let Some(a) = l.as_const() {
                if b != 0.0 && (a / b).is_finite() {
                    return Self::constant(a / b).mul(r);
                }
            }
        }
        Self::raw_binary(BinaryOp::Div, self.clone(), rhs.clone())
    }

    pub fn pow(&self, rhs: &Expr) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => {
                let v = eval::pow_f64(a, b);
                if let Ok(v) = v {
                    return Self::constant(v);
                }
            }
            (_, Some(b)) if b == 1.0 => return self.clone(),
            (_, Some(b)) if b == 0.0 => return Self::one(),
            _ => {}
        }
        Self::raw_binary(BinaryOp::Pow, self.clone(), rhs.clone())
    }

    pub fn binary(op: BinaryOp, lhs: &Expr, rhs: &Expr) -> Self {
        match op {
            BinaryOp::Add => lhs.add(rhs),
            BinaryOp::Sub => lhs.sub(rhs),
            BinaryOp::Mul => lhs.mul(rhs),
            BinaryOp::Div => lhs.div(rhs),
            BinaryOp::Pow => lhs.pow(rhs),
        }
    }

    fn raw_unary(op: UnaryOp, arg: Expr) -> Self {
        Expr(Arc::new(Node::Unary(op, arg)))
    }

    fn raw_binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr(Arc::new(Node::Binary(op, lhs, rhs)))
    }

    /// Sum of a sequence, folding as it goes.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Self {
        terms.into_iter().fold(Self::zero(), |acc, t| acc.add(t))
    }

    /// True if every variable in the tree satisfies `pred`.
    pub fn vars_all(&self, pred: &impl Fn(usize) -> bool) -> bool {
        match self.node() {
            Node::Const(_) => true,
            Node::Var(v) => pred(*v),
            Node::Unary(_, a) => a.vars_all(pred),
            Node::Binary(_, a, b) => a.vars_all(pred) && b.vars_all(pred),
        }
    }

    /// Depth of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, a) => 1 + a.depth(),
            Node::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn display<'a>(&'a self, vars: &'a VarSet) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }
}

/// Variable table shared by every expression of a model: `x1..xn`, then
/// `y1..ym`, then parameters (bound to fixed values).
#[derive(Clone, Debug, PartialEq)]
pub struct VarSet {
    n: usize,
    m: usize,
    params: Vec<(String, f64)>,
}

impl VarSet {
    pub fn new(n: usize, m: usize) -> Self {
        VarSet {
            n,
            m,
            params: Vec::new(),
        }
    }

    pub fn with_params(n: usize, m: usize, params: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut vs = Self::new(n, m);
        for (name, value) in params {
            vs.add_param(&name, value)?;
        }
        Ok(vs)
    }

    pub fn add_param(&mut self, name: &str, value: f64) -> Result<()> {
        let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid || UnaryOp::from_function_name(name).is_some() {
            return Err(Error::invalid(format!("invalid parameter name `{name}`")));
        }
        if self.lookup(name).is_some() {
            return Err(Error::invalid(format!("parameter `{name}` shadows an existing variable")));
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("parameter `{name}` is not finite")));
        }
        self.params.push((name.to_string(), value));
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of coordinates (`n + m`).
    pub fn coords(&self) -> usize {
        self.n + self.m
    }

    pub fn len(&self) -> usize {
        self.n + self.m + self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> usize {
        debug_assert!(i < self.n);
        i
    }

    pub fn y(&self, a: usize) -> usize {
        debug_assert!(a < self.m);
        self.n + a
    }

    pub fn is_base(&self, v: usize) -> bool {
        v < self.n || v >= self.n + self.m
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        if let Some(rest) = name.strip_prefix('x') {
            if let Some(k) = parse_index(rest) {
                return (k >= 1 && k <= self.n).then(|| k - 1);
            }
        }
        if let Some(rest) = name.strip_prefix('y') {
            if let Some(k) = parse_index(rest) {
                return (k >= 1 && k <= self.m).then(|| self.n + k - 1);
            }
        }
        self.params
            .iter()
            .position(|(p, _)| p == name)
            .map(|k| self.n + self.m + k)
    }

    pub fn name(&self, v: usize) -> String {
        if v < self.n {
            format!("x{}", v + 1)
        } else if v < self.n + self.m {
            format!("y{}", v - self.n + 1)
        } else {
            self.params[v - self.n - self.m].0.clone()
        }
    }

    /// Full value vector for evaluation: coordinates followed by parameters.
    pub fn values(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n || y.len() != self.m {
            return Err(Error::Dimension(format!(
                "point has ({}, {}) coordinates, expected ({}, {})",
                x.len(),
                y.len(),
                self.n,
                self.m
            )));
        }
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(x);
        v.extend_from_slice(y);
        v.extend(self.params.iter().map(|(_, p)| *p));
        Ok(v)
    }
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || s.starts_with('0') {
        return None;
    }
    s.parse().ok()
}

/// A point `(x, y)` of the total space.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EvalPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        EvalPoint { x, y }
    }

    pub fn coords(&self) -> Vec<f64> {
        self.x.iter().chain(self.y.iter()).copied().collect()
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a VarSet,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.vars)
    }
}

// Atoms, function calls and negations bind tighter than any binary operator.
const ATOM: u8 = 4;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => ATOM,
        Node::Const(_) | Node::Var(_) | Node::Unary(..) => ATOM,
        Node::Binary(op, ..) => op.precedence(),
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, vars: &VarSet, wrap: bool) -> fmt::Result {
    if wrap {
        f.write_str("(")?;
        write_expr(f, e, vars)?;
        f.write_str(")")
    } else {
        write_expr(f, e, vars)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, vars: &VarSet) -> fmt::Result {
    match e.node() {
        Node::Const(c) => {
            if c.is_sign_negative() {
                write!(f, "(-{:?})", -c)
            } else {
                write!(f, "{c:?}")
            }
        }
        Node::Var(v) => f.write_str(&vars.name(*v)),
        Node::Unary(UnaryOp::Neg, a) => {
            f.write_str("-")?;
            // `'-' atom`: anything that is not a plain atom needs parentheses.
            let wrap = !matches!(a.node(), Node::Var(_) | Node::Const(_))
                && !matches!(a.node(), Node::Unary(op, _) if *op != UnaryOp::Neg);
            write_wrapped(f, a, vars, wrap)
        }
        Node::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a, vars)?;
            f.write_str(")")
        }
        Node::Binary(BinaryOp::Pow, a, b) => {
            let base_wrap = !matches!(a.node(), Node::Var(_))
                && !matches!(a.node(), Node::Const(c) if !c.is_sign_negative())
                && !matches!(a.node(), Node::Unary(op, _) if *op != UnaryOp::Neg);
            write_wrapped(f, a, vars, base_wrap)?;
            f.write_str("^")?;
            write_wrapped(f, b, vars, precedence(b) < BinaryOp::Pow.precedence())
        }
        Node::Binary(op, a, b) => {
            let p = op.precedence();
            write_wrapped(f, a, vars, precedence(a) < p)?;
            write!(f, " {} ", op.symbol())?;
            write_wrapped(f, b, vars, precedence(b) <= p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs() -> VarSet {
        VarSet::new(2, 2)
    }

    #[test]
    fn folding_rules() {
        let x = Expr::var(0);
        assert_eq!(x.mul(&Expr::one()), x);
        assert_eq!(Expr::zero().mul(&x), Expr::zero());
        assert_eq!(x.add(&Expr::zero()), x);
        assert_eq!(Expr::constant(2.0).mul(&Expr::constant(3.0)), Expr::constant(6.0));
        assert_eq!(x.neg().neg(), x);
        assert_eq!(Expr::constant(2.0).mul(&x).div(&Expr::constant(2.0)), x);
        // 1/0 stays symbolic so evaluation reports a domain error
        assert!(Expr::one().div(&Expr::zero()).as_const().is_none());
    }

    #[test]
    fn printing_parenthesizes_by_precedence() {
        let v = vs();
        let e = parse("(x1 + y1) * (x2 - y2)", &v).unwrap();
        assert_eq!(e.display(&v).to_string(), "(x1 + y1) * (x2 - y2)");
        let e = parse("x1 - (y1 - y2)", &v).unwrap();
        assert_eq!(e.display(&v).to_string(), "x1 - (y1 - y2)");
        let e = parse("(-3)^2 + -x1", &v).unwrap();
        assert_eq!(e.display(&v).to_string(), "9.0 + -x1");
    }

    #[test]
    fn lookup_names() {
        let mut v = VarSet::new(2, 3);
        v.add_param("I1", 1.5).unwrap();
        assert_eq!(v.lookup("x2"), Some(1));
        assert_eq!(v.lookup("y3"), Some(4));
        assert_eq!(v.lookup("y4"), None);
        assert_eq!(v.lookup("x01"), None);
        assert_eq!(v.lookup("I1"), Some(5));
        assert!(v.add_param("sin", 1.0).is_err());
        assert!(v.add_param("I1", 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const N: usize = 2;
        const M: usize = 2;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0..N + M).prop_map(Expr::var),
                (-3.0..3.0f64).prop_map(|c| Expr::constant((c * 8.0).round() / 8.0)),
            ]
        }

        // Denominators, log and sqrt arguments are kept positive by shifting a
        // square; exponentials see a bounded argument.
        fn tree() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(5, 48, 2, |inner| {
                let shift = |e: &Expr, c: f64| Expr::constant(c).add(&e.mul(e));
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(&b)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(&b)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(&b)),
                    (inner.clone(), inner.clone()).prop_map(move |(a, b)| a.div(&shift(&b, 0.5))),
                    (inner.clone(), -2i32..4).prop_map(move |(a, k)| {
                        let base = if k < 0 { shift(&a, 0.5) } else { a };
                        base.pow(&Expr::constant(k as f64))
                    }),
                    inner.clone().prop_map(|a| a.neg()),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Sin, a)),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Cos, a)),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Exp, Expr::unary(UnaryOp::Sin, a))),
                    inner.clone().prop_map(move |a| Expr::unary(UnaryOp::Log, shift(&a, 0.5))),
                    inner.clone().prop_map(move |a| Expr::unary(UnaryOp::Sqrt, shift(&a, 0.5))),
                ]
            })
        }

        fn point() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-1.5..1.5f64, N + M)
        }

        proptest! {
            #[test]
            fn print_parse_round_trip(e in tree()) {
                let v = VarSet::new(N, M);
                let printed = e.display(&v).to_string();
                let back = parse(&printed, &v).unwrap();
                prop_assert_eq!(back, e, "{}", printed);
            }

            #[test]
            fn derivative_matches_central_difference(e in tree(), p in point(), var in 0..N + M) {
                let d = e.differentiate(var);
                let exact = d.eval(&p).unwrap();
                let h = 1e-5;
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[var] += h;
                pm[var] -= h;
                let fd = (e.eval(&pp).unwrap() - e.eval(&pm).unwrap()) / (2.0 * h);
                prop_assert!((exact - fd).abs() / (1.0 + exact.abs()) < 1e-6, "{exact} vs {fd}");
            }

            #[test]
            fn derivative_is_linear(a in tree(), b in tree(), s in -3.0..3.0f64, p in point(), var in 0..N + M) {
                let lhs = Expr::constant(s).mul(&a).add(&b).differentiate(var).eval(&p).unwrap();
                let rhs = s * a.differentiate(var).eval(&p).unwrap() + b.differentiate(var).eval(&p).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn eval_examples() {
        let v = VarSet::new(1, 1);
        let at = |src: &str, x: f64, y: f64| parse(src, &v).unwrap().eval(&v.values(&[x], &[y]).unwrap());
        assert_eq!(at("y1^2/2", 0.0, 2.0).unwrap(), 2.0);
        assert_eq!(at("sin(x1)", 0.0, 0.0).unwrap(), 0.0);
        for bad in ["1/x1", "log(x1)", "sqrt(x1 - 1)", "x1^(-1)", "(x1 - 1)^0.5", "exp(exp(y1))"] {
            assert!(matches!(at(bad, 0.0, 10.0), Err(Error::Domain(_))), "{bad}");
        }
        assert_eq!(at("(x1 - 2)^3", 0.0, 0.0).unwrap(), -8.0);
        assert_eq!(at("x1^0.5", 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn differentiate_examples() {
        let v = VarSet::new(2, 2);
        let e = parse("sin(x1)*y2", &v).unwrap();
        assert_eq!(e.differentiate(0), parse("cos(x1)*y2", &v).unwrap());
        let e = parse("y1*y2", &v).unwrap();
        assert_eq!(e.differentiate(2).differentiate(3), Expr::one());
        // fourth order nesting stays exact
        let e = parse("exp(2*x1)", &v).unwrap();
        let d4 = (0..4).fold(e, |acc, _| acc.differentiate(0));
        let val = d4.eval(&[0.3, 0.0, 0.0, 0.0]).unwrap();
        assert!((val - 16.0 * 0.6f64.exp()).abs() < 1e-12);
    }
}
