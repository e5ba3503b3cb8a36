use super::{BinaryOp, Expr, UnaryOp, VarSet};
use crate::error::{Error, Result};

/// Parse an expression against a variable table.
///
/// Grammar (`^` is right-associative and binds tighter than unary minus on
/// its right operand only):
///
/// ```text
/// expr   := term (('+' | '-') term)*
/// term   := factor (('*' | '/') factor)*
/// factor := atom ('^' factor)?
/// atom   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' atom
/// ```
pub fn parse(src: &str, vars: &VarSet) -> Result<Expr> {
    let mut p = Parser { src, pos: 0, vars };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    vars: &'a VarSet,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinaryOp::Add
            } else if self.eat(b'-') {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, &lhs, &rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat(b'*') {
                BinaryOp::Mul
            } else if self.eat(b'/') {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.factor()?;
            lhs = Expr::binary(op, &lhs, &rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.factor()?;
            Ok(base.pow(&exp))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                Ok(self.atom()?.neg())
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = &self.src[start..end];
        let value: f64 = text.parse().map_err(|_| self.error(format!("invalid number `{text}`")))?;
        if !value.is_finite() {
            return Err(self.error(format!("number `{text}` is out of range")));
        }
        self.pos = end;
        Ok(Expr::constant(value))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
            end += 1;
        }
        let name = &self.src[start..end];
        self.pos = end;
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let Some(op) = UnaryOp::from_function_name(name) else {
                self.pos = start;
                return Err(self.error(format!("unknown function `{name}`")));
            };
            self.pos += 1;
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Expr::unary(op, arg));
        }
        match self.vars.lookup(name) {
            Some(v) => Ok(Expr::var(v)),
            None => {
                self.pos = start;
                Err(self.error(format!("unknown variable `{name}`")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;

    fn vs() -> VarSet {
        VarSet::with_params(2, 2, [("a".to_string(), 0.5)]).unwrap()
    }

    fn offset(src: &str) -> usize {
        match parse(src, &vs()) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn error_offsets() {
        assert_eq!(offset("x1 + * y1"), 5);
        assert_eq!(offset("x1 + z"), 5);
        assert_eq!(offset("tan(x1)"), 0);
        assert_eq!(offset("(x1"), 3);
        assert_eq!(offset("x1 y1"), 3);
        assert_eq!(offset(""), 0);
        assert_eq!(offset("y3"), 0);
    }

    #[test]
    fn precedence_and_associativity() {
        let v = vs();
        let e = parse("x1 - y1 - y2", &v).unwrap();
        let Node::Binary(BinaryOp::Sub, l, _) = e.node() else { panic!() };
        assert!(matches!(l.node(), Node::Binary(BinaryOp::Sub, ..)));
        let e = parse("x1 ^ y1 ^ y2", &v).unwrap();
        let Node::Binary(BinaryOp::Pow, _, r) = e.node() else { panic!() };
        assert!(matches!(r.node(), Node::Binary(BinaryOp::Pow, ..)));
        let e = parse("2e-1 * a", &v).unwrap();
        assert!(matches!(e.node(), Node::Binary(BinaryOp::Mul, ..)));
    }

    #[test]
    fn function_calls() {
        let v = vs();
        let e = parse("sin (x1) * sqrt(4)", &v).unwrap();
        assert_eq!(e.display(&v).to_string(), "sin(x1) * 2.0");
    }
}
