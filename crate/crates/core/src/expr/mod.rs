//! Scalar expression DSL used for vector-field components, chart maps and
//! domain predicates, with forward-mode automatic differentiation.
//!
//! Grammar (EBNF, whitespace-insensitive):
//!
//! ```text
//! expr    := term  { ("+" | "-") term }
//! term    := factor { ("*" | "/") factor }
//! factor  := "-" factor | power
//! power   := atom [ "^" factor ]            (right-associative)
//! atom    := number | name | name "(" expr ")" | "(" expr ")"
//! name    := ident; "pi" and "e" are constants, sin cos tan atan exp log
//!            sqrt abs tanh are functions, anything else is a variable
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`.

mod dual;
mod parse;

pub use dual::{eval_dual, gradient, DualValue};
pub use parse::parse;

use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} takes exactly one argument")]
    Arity { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" => Func::Atan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedConst {
    Pi,
    E,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(String),
    Const(NamedConst),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// The set of free variables, in sorted order.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Lit(_) | Expr::Const(_) => {}
        }
    }

    /// True when the tree contains `abs` (derivatives not guaranteed there).
    pub fn contains_abs(&self) -> bool {
        match self {
            Expr::Call(Func::Abs, _) => true,
            Expr::Call(_, a) | Expr::Neg(a) => a.contains_abs(),
            Expr::Bin(_, a, b) => a.contains_abs() || b.contains_abs(),
            _ => false,
        }
    }

    /// Replace every occurrence of the named variables with the paired
    /// expressions. Used to compose predicates with chart maps.
    pub fn substitute(&self, subs: &[(&str, &Expr)]) -> Expr {
        match self {
            Expr::Var(v) => {
                for (name, e) in subs {
                    if v == name {
                        return (*e).clone();
                    }
                }
                self.clone()
            }
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(subs))),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(subs))),
            Expr::Bin(op, a, b) => {
                Expr::Bin(*op, Box::new(a.substitute(subs)), Box::new(b.substitute(subs)))
            }
            _ => self.clone(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Expr::Lit(v) => {
                if *v == f64::INFINITY {
                    out.push_str("1e400");
                } else if *v == f64::NEG_INFINITY || v.is_nan() {
                    // Not producible by the parser; render something parseable.
                    out.push_str("0");
                } else {
                    out.push_str(&format!("{v}"));
                }
            }
            Expr::Var(v) => out.push_str(v),
            Expr::Const(NamedConst::Pi) => out.push_str("pi"),
            Expr::Const(NamedConst::E) => out.push_str("e"),
            Expr::Neg(a) => {
                out.push('-');
                self.render_child(a, 3, true, out);
            }
            Expr::Bin(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    // Left side of ^ must be an atom-level item; right side
                    // re-parses as a factor.
                    self.render_child(a, 5, false, out);
                    out.push('^');
                    self.render_child(b, 3, true, out);
                } else {
                    self.render_child(a, prec, false, out);
                    out.push_str(sym);
                    // Left associativity: the right child needs parens at
                    // equal precedence for - and /.
                    let min = if matches!(op, BinOp::Sub | BinOp::Div) { prec + 1 } else { prec };
                    self.render_child(b, min, false, out);
                }
            }
            Expr::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.render_into(out);
                out.push(')');
            }
        }
    }

    fn render_child(&self, child: &Expr, min_prec: u8, allow_equal: bool, out: &mut String) {
        let p = child.precedence();
        let need = if allow_equal { p < min_prec } else { p < min_prec };
        let _ = allow_equal;
        if need {
            out.push('(');
            child.render_into(out);
            out.push(')');
        } else {
            child.render_into(out);
        }
    }

    /// Render to a string that parses back to a structurally equal tree.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Evaluate with the given variable names/values. Non-finite intermediate
/// results are an error rather than silent NaN propagation.
pub fn eval_real(e: &Expr, names: &[String], vals: &[f64]) -> Result<f64, ExprError> {
    let v = eval_rec(e, names, vals)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite(e.render()))
    }
}

fn eval_rec(e: &Expr, names: &[String], vals: &[f64]) -> Result<f64, ExprError> {
    let v = match e {
        Expr::Lit(v) => *v,
        Expr::Const(NamedConst::Pi) => std::f64::consts::PI,
        Expr::Const(NamedConst::E) => std::f64::consts::E,
        Expr::Var(name) => {
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ExprError::UnboundVariable(name.clone()))?;
            vals[idx]
        }
        Expr::Neg(a) => -eval_rec(a, names, vals)?,
        Expr::Bin(op, a, b) => {
            let x = eval_rec(a, names, vals)?;
            let y = eval_rec(b, names, vals)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => pow_value(x, y),
            }
        }
        Expr::Call(f, a) => {
            let x = eval_rec(a, names, vals)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Atan => x.atan(),
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Abs => x.abs(),
                Func::Tanh => x.tanh(),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite(e.render()))
    }
}

pub(crate) fn pow_value(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= 512.0 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

/// Convenience wrapper: coordinate variable names x0..x(dim-1).
pub fn coord_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names2() -> Vec<String> {
        coord_names(2)
    }

    #[test]
    fn eval_basics() {
        let e = parse("x0 + 1").unwrap();
        assert_eq!(eval_real(&e, &names2(), &[2.0, 0.0]).unwrap(), 3.0);
        let e = parse("sqrt(1+x1^2)").unwrap();
        let v = eval_real(&e, &names2(), &[0.0, 1.0]).unwrap();
        assert!((v - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse("1/x0").unwrap();
        assert!(matches!(
            eval_real(&e, &names2(), &[0.0, 0.0]),
            Err(ExprError::NonFinite(_))
        ));
    }

    #[test]
    fn unbound_variable_reported() {
        let e = parse("x2").unwrap();
        assert_eq!(
            eval_real(&e, &names2(), &[0.0, 0.0]),
            Err(ExprError::UnboundVariable("x2".into()))
        );
    }

    #[test]
    fn free_vars_and_substitution() {
        let e = parse("x0*sin(x1) + c").unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, ["c", "x0", "x1"]);
        let sub = parse("x0 + 1").unwrap();
        let e2 = e.substitute(&[("x1", &sub)]);
        assert_eq!(e2.render(), "x0*sin(x0+1)+c");
    }

    #[test]
    fn render_parses_back() {
        for src in [
            "1 - x0^2 - x1^2",
            "0.2*sin(x0)",
            "-x0^2",
            "(x0+1)/(x1-2)",
            "2^-3",
            "x0^2^3",
            "1 - (x0 - x1)*(x0 + x1)",
        ] {
            let e = parse(src).unwrap();
            let round = parse(&e.render()).unwrap();
            assert_eq!(e, round, "source {src} rendered {}", e.render());
        }
    }
}
