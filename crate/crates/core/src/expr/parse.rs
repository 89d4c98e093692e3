//! Recursive descent parser for the expression DSL. Every input either
//! parses or yields a positioned error; nesting depth is bounded so
//! adversarial inputs cannot overflow the stack.

use super::{BinOp, Expr, ExprError, Func, NamedConst};

const MAX_DEPTH: u32 = 256;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    let e = p.expr(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax { offset: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self, depth: u32) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        let mut lhs = self.term(depth + 1)?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term(depth + 1)?;
                lhs = Expr::bin(BinOp::Add, lhs, rhs);
            } else if self.eat(b'-') {
                let rhs = self.term(depth + 1)?;
                lhs = Expr::bin(BinOp::Sub, lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self, depth: u32) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        let mut lhs = self.factor(depth + 1)?;
        loop {
            if self.eat(b'*') {
                let rhs = self.factor(depth + 1)?;
                lhs = Expr::bin(BinOp::Mul, lhs, rhs);
            } else if self.eat(b'/') {
                let rhs = self.factor(depth + 1)?;
                lhs = Expr::bin(BinOp::Div, lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self, depth: u32) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        if self.eat(b'-') {
            let inner = self.factor(depth + 1)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power(depth + 1)
    }

    fn power(&mut self, depth: u32) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        let base = self.atom(depth + 1)?;
        if self.eat(b'^') {
            // Right-associative; the exponent may carry a unary minus.
            let exp = self.factor(depth + 1)?;
            return Ok(Expr::bin(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self, depth: u32) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr(depth + 1)?;
                if !self.eat(b')') {
                    return Err(self.err("expected closing parenthesis"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(depth),
            Some(_) => Err(self.err("expected a number, name or parenthesized expression")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_digit() || c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        // Exponent part: e/E [+-] digits. Only consume when digits follow,
        // so "2*e" keeps `e` as the constant.
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            msg: format!("invalid number literal `{text}`"),
        })?;
        self.skip_ws();
        Ok(Expr::Lit(value))
    }

    fn name(&mut self, depth: u32) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_alphanumeric() || c == b'_')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| ExprError::Syntax { offset: start, msg: "invalid identifier".into() })?
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name)
                .ok_or(ExprError::UnknownFunction { name: name.clone(), offset: start })?;
            self.pos += 1;
            self.skip_ws();
            let arg = self.expr(depth + 1)?;
            self.skip_ws();
            if self.peek() == Some(b',') {
                return Err(ExprError::Arity { name, offset: start });
            }
            if !self.eat(b')') {
                return Err(self.err("expected closing parenthesis"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        match name.as_str() {
            "pi" => Ok(Expr::Const(NamedConst::Pi)),
            "e" => Ok(Expr::Const(NamedConst::E)),
            _ => Ok(Expr::Var(name)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_shape() {
        let e = parse("1 - x0^2 - x1^2").unwrap();
        // ((1 - x0^2) - x1^2)
        assert_eq!(
            e,
            Expr::bin(
                BinOp::Sub,
                Expr::bin(
                    BinOp::Sub,
                    Expr::Lit(1.0),
                    Expr::bin(BinOp::Pow, Expr::var("x0"), Expr::Lit(2.0)),
                ),
                Expr::bin(BinOp::Pow, Expr::var("x1"), Expr::Lit(2.0)),
            )
        );
        let e = parse("0.2*sin(x0)").unwrap();
        assert_eq!(
            e,
            Expr::bin(BinOp::Mul, Expr::Lit(0.2), Expr::Call(Func::Sin, Box::new(Expr::var("x0"))))
        );
    }

    #[test]
    fn unary_minus_binds_looser_than_pow() {
        assert_eq!(
            parse("-x0^2").unwrap(),
            Expr::Neg(Box::new(Expr::bin(BinOp::Pow, Expr::var("x0"), Expr::Lit(2.0))))
        );
    }

    #[test]
    fn pow_is_right_associative() {
        assert_eq!(
            parse("x0^2^3").unwrap(),
            Expr::bin(
                BinOp::Pow,
                Expr::var("x0"),
                Expr::bin(BinOp::Pow, Expr::Lit(2.0), Expr::Lit(3.0)),
            )
        );
    }

    #[test]
    fn positioned_errors() {
        match parse("1 + (2 *") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("foo(1)") {
            Err(ExprError::UnknownFunction { name, offset }) => {
                assert_eq!(name, "foo");
                assert_eq!(offset, 0);
            }
            other => panic!("expected unknown function, got {other:?}"),
        }
        match parse("sin(1, 2)") {
            Err(ExprError::Arity { name, .. }) => assert_eq!(name, "sin"),
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn scientific_notation_vs_euler_constant() {
        assert_eq!(parse("1e3").unwrap(), Expr::Lit(1000.0));
        assert_eq!(
            parse("2*e").unwrap(),
            Expr::bin(BinOp::Mul, Expr::Lit(2.0), Expr::Const(NamedConst::E))
        );
        assert_eq!(parse("1e-3").unwrap(), Expr::Lit(1e-3));
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashed() {
        let mut s = String::new();
        for _ in 0..5000 {
            s.push('(');
        }
        s.push('1');
        assert!(parse(&s).is_err());
    }
}
