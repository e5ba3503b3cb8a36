use super::{BinaryOp, Expr, Node, UnaryOp};

impl Expr {
    /// Symbolic partial derivative with respect to variable `v`.
    pub fn differentiate(&self, v: usize) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Unary(op, a) => {
                let da = a.differentiate(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match op {
                    UnaryOp::Neg => return da.neg(),
                    UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a.clone()),
                    UnaryOp::Cos => Expr::unary(UnaryOp::Sin, a.clone()).neg(),
                    UnaryOp::Exp => self.clone(),
                    UnaryOp::Log => return da.div(a),
                    UnaryOp::Sqrt => return da.div(&Expr::constant(2.0).mul(self)),
                };
                outer.mul(&da)
            }
            Node::Binary(op, a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                match op {
                    BinaryOp::Add => da.add(&db),
                    BinaryOp::Sub => da.sub(&db),
                    BinaryOp::Mul => da.mul(b).add(&a.mul(&db)),
                    BinaryOp::Div => {
                        // (a' b - a b') / b^2
                        if db.is_zero() {
                            da.div(b)
                        } else {
                            da.mul(b).sub(&a.mul(&db)).div(&b.pow(&Expr::constant(2.0)))
                        }
                    }
                    BinaryOp::Pow => {
                        let mut out = Expr::zero();
                        if !da.is_zero() {
                            // b a^(b-1) a'
                            let bm1 = b.sub(&Expr::one());
                            out = b.mul(&a.pow(&bm1)).mul(&da);
                        }
                        if !db.is_zero() {
                            // a^b log(a) b'
                            let t = self.mul(&Expr::unary(UnaryOp::Log, a.clone())).mul(&db);
                            out = out.add(&t);
                        }
                        out
                    }
                }
            }
        }
    }
}
