use super::{BinaryOp, Expr, Node, UnaryOp};
use crate::error::{Error, Result};

/// Scalar types expressions can be evaluated over: plain `f64` and jets.
///
/// Domain checks are done on the value part (`re`), so a jet evaluation fails
/// exactly where the `f64` evaluation would.
pub trait ExprScalar: Clone + Sized {
    fn from_const(c: f64, like: &Self) -> Self;
    fn re(&self) -> f64;
    fn neg(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, k: i32) -> Self;
    /// `self^o` for a positive base.
    fn powf(&self, o: &Self) -> Self;
    fn is_finite(&self) -> bool;
    /// True when every derivative part vanishes.
    fn is_constant(&self) -> bool;
}

impl ExprScalar for f64 {
    fn from_const(c: f64, _: &Self) -> Self {
        c
    }
    fn re(&self) -> f64 {
        *self
    }
    fn neg(&self) -> Self {
        -self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powi(&self, k: i32) -> Self {
        f64::powi(*self, k)
    }
    fn powf(&self, o: &Self) -> Self {
        f64::powf(*self, *o)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn is_constant(&self) -> bool {
        true
    }
}

fn domain(what: &str, at: f64) -> Error {
    Error::Domain(format!("{what} at {at}"))
}

pub(crate) fn pow_f64(a: f64, b: f64) -> Result<f64> {
    pow_generic(&a, &b)
}

fn pow_generic<S: ExprScalar>(a: &S, b: &S) -> Result<S> {
    if b.is_constant() {
        return pow_const(a, b.re());
    }
    let av = a.re();
    if av > 0.0 {
        Ok(a.powf(b))
    } else if av == 0.0 {
        Err(domain("zero base with a varying exponent", av))
    } else {
        Err(domain("negative base with a varying exponent", av))
    }
}

impl Expr {
    /// Evaluate with all variables bound by `values` (indexed as in the
    /// owning [`super::VarSet`]).
    pub fn eval<S: ExprScalar>(&self, values: &[S]) -> Result<S> {
        let like = values
            .first()
            .ok_or_else(|| Error::Dimension("no variables supplied".into()))?;
        self.eval_with(values, like)
    }

    fn eval_with<S: ExprScalar>(&self, values: &[S], like: &S) -> Result<S> {
        let out = match self.node() {
            Node::Const(c) => S::from_const(*c, like),
            Node::Var(v) => values
                .get(*v)
                .cloned()
                .ok_or_else(|| Error::Dimension(format!("variable index {v} out of range")))?,
            Node::Unary(op, a) => {
                let a = a.eval_with(values, like)?;
                match op {
                    UnaryOp::Neg => a.neg(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => {
                        if a.re() <= 0.0 {
                            return Err(domain("log of a non-positive value", a.re()));
                        }
                        a.ln()
                    }
                    UnaryOp::Sqrt => {
                        if a.re() < 0.0 {
                            return Err(domain("sqrt of a negative value", a.re()));
                        }
                        a.sqrt()
                    }
                }
            }
            Node::Binary(op, a, b) => {
                let av = a.eval_with(values, like)?;
                let bv = b.eval_with(values, like)?;
                match op {
                    BinaryOp::Add => av.add(&bv),
                    BinaryOp::Sub => av.sub(&bv),
                    BinaryOp::Mul => av.mul(&bv),
                    BinaryOp::Div => {
                        if bv.re() == 0.0 {
                            return Err(domain("division by zero", 0.0));
                        }
                        av.div(&bv)
                    }
                    BinaryOp::Pow => pow_generic(&av, &bv)?,
                }
            }
        };
        if !out.is_finite() {
            return Err(Error::Domain("non-finite value".into()));
        }
        Ok(out)
    }
}

fn pow_const<S: ExprScalar>(a: &S, c: f64) -> Result<S> {
    let av = a.re();
    if av == 0.0 && c < 0.0 {
        return Err(domain("zero raised to a negative power", c));
    }
    if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
        return Ok(a.powi(c as i32));
    }
    if av < 0.0 {
        return Err(domain("negative base with a non-integer exponent", av));
    }
    // 0^c for positive non-integer c has value 0; for jets the derivative
    // parts blow up and are caught by the finiteness check.
    Ok(a.powf(&S::from_const(c, a)))
}
