//! Forward-mode dual numbers carrying one partial per requested variable.
//! Variable counts stay at N+2 or below, so forward mode is the right shape.

use super::{BinOp, Expr, ExprError, Func, NamedConst};

/// Value plus partial derivatives with respect to an ordered variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub primal: f64,
    pub partials: Vec<f64>,
}

impl DualValue {
    fn constant(v: f64, n: usize) -> DualValue {
        DualValue { primal: v, partials: vec![0.0; n] }
    }

    fn seed(v: f64, n: usize, k: usize) -> DualValue {
        let mut partials = vec![0.0; n];
        partials[k] = 1.0;
        DualValue { primal: v, partials }
    }

    fn map<F: Fn(f64) -> f64>(&self, value: f64, dfdx: F) -> DualValue {
        DualValue {
            primal: value,
            partials: self.partials.iter().map(|p| dfdx(*p)).collect(),
        }
    }

    fn is_finite(&self) -> bool {
        self.primal.is_finite() && self.partials.iter().all(|p| p.is_finite())
    }
}

/// Evaluate `e` and its partials with respect to `wrt` (an ordered subset of
/// the bound variables). Variables outside `wrt` are treated as constants.
pub fn eval_dual(
    e: &Expr,
    names: &[String],
    vals: &[f64],
    wrt: &[String],
) -> Result<DualValue, ExprError> {
    let v = dual_rec(e, names, vals, wrt)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite(e.render()))
    }
}

fn dual_rec(
    e: &Expr,
    names: &[String],
    vals: &[f64],
    wrt: &[String],
) -> Result<DualValue, ExprError> {
    let n = wrt.len();
    let out = match e {
        Expr::Lit(v) => DualValue::constant(*v, n),
        Expr::Const(NamedConst::Pi) => DualValue::constant(std::f64::consts::PI, n),
        Expr::Const(NamedConst::E) => DualValue::constant(std::f64::consts::E, n),
        Expr::Var(name) => {
            let idx = names
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| ExprError::UnboundVariable(name.clone()))?;
            match wrt.iter().position(|v| v == name) {
                Some(k) => DualValue::seed(vals[idx], n, k),
                None => DualValue::constant(vals[idx], n),
            }
        }
        Expr::Neg(a) => {
            let a = dual_rec(a, names, vals, wrt)?;
            DualValue {
                primal: -a.primal,
                partials: a.partials.iter().map(|p| -p).collect(),
            }
        }
        Expr::Bin(op, a, b) => {
            let a = dual_rec(a, names, vals, wrt)?;
            let b = dual_rec(b, names, vals, wrt)?;
            match op {
                BinOp::Add => DualValue {
                    primal: a.primal + b.primal,
                    partials: zip(&a, &b, |x, y| x + y),
                },
                BinOp::Sub => DualValue {
                    primal: a.primal - b.primal,
                    partials: zip(&a, &b, |x, y| x - y),
                },
                BinOp::Mul => DualValue {
                    primal: a.primal * b.primal,
                    partials: a
                        .partials
                        .iter()
                        .zip(&b.partials)
                        .map(|(da, db)| da * b.primal + a.primal * db)
                        .collect(),
                },
                BinOp::Div => {
                    let inv = 1.0 / b.primal;
                    DualValue {
                        primal: a.primal * inv,
                        partials: a
                            .partials
                            .iter()
                            .zip(&b.partials)
                            .map(|(da, db)| (da - a.primal * inv * db) * inv)
                            .collect(),
                    }
                }
                BinOp::Pow => pow_dual(&a, &b),
            }
        }
        Expr::Call(f, a) => {
            let a = dual_rec(a, names, vals, wrt)?;
            let x = a.primal;
            match f {
                Func::Sin => a.map(x.sin(), |p| p * x.cos()),
                Func::Cos => a.map(x.cos(), |p| -p * x.sin()),
                Func::Tan => {
                    let c = x.cos();
                    a.map(x.tan(), |p| p / (c * c))
                }
                Func::Atan => a.map(x.atan(), |p| p / (1.0 + x * x)),
                Func::Exp => {
                    let v = x.exp();
                    a.map(v, |p| p * v)
                }
                Func::Log => a.map(x.ln(), |p| p / x),
                Func::Sqrt => {
                    let v = x.sqrt();
                    a.map(v, |p| p * 0.5 / v)
                }
                // abs is admitted but non-smooth; the derivative at 0 is
                // defined as 0 and callers flag reduced accuracy.
                Func::Abs => {
                    let s = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    a.map(x.abs(), |p| p * s)
                }
                Func::Tanh => {
                    let v = x.tanh();
                    a.map(v, |p| p * (1.0 - v * v))
                }
            }
        }
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(ExprError::NonFinite(e.render()))
    }
}

fn zip(a: &DualValue, b: &DualValue, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.partials.iter().zip(&b.partials).map(|(x, y)| f(*x, *y)).collect()
}

fn pow_dual(a: &DualValue, b: &DualValue) -> DualValue {
    let exponent_const = b.partials.iter().all(|p| *p == 0.0);
    let value = super::pow_value(a.primal, b.primal);
    if exponent_const {
        // d(x^c) = c x^(c-1) dx, valid for integer c at any x and real c for x>0.
        let slope = b.primal * super::pow_value(a.primal, b.primal - 1.0);
        return DualValue {
            primal: value,
            partials: a.partials.iter().map(|p| p * slope).collect(),
        };
    }
    // General a^b = exp(b ln a) needs a > 0.
    let ln_a = a.primal.ln();
    DualValue {
        primal: value,
        partials: a
            .partials
            .iter()
            .zip(&b.partials)
            .map(|(da, db)| value * (db * ln_a + b.primal * da / a.primal))
            .collect(),
    }
}

/// Gradient of `e` with respect to the coordinate variables `names`.
pub fn gradient(e: &Expr, names: &[String], vals: &[f64]) -> Result<Vec<f64>, ExprError> {
    Ok(eval_dual(e, names, vals, names)?.partials)
}

#[cfg(test)]
mod tests {
    use super::super::{coord_names, parse};
    use super::*;

    #[test]
    fn power_rule() {
        let e = parse("x0^2").unwrap();
        let d = eval_dual(&e, &coord_names(1), &[3.0], &coord_names(1)).unwrap();
        assert_eq!(d.primal, 9.0);
        assert_eq!(d.partials, vec![6.0]);
    }

    #[test]
    fn chain_rule_sqrt() {
        let e = parse("sqrt(1+x1^2)").unwrap();
        let names = coord_names(2);
        let d = eval_dual(&e, &names, &[0.0, 1.0], &names).unwrap();
        assert!((d.partials[1] - 1.0 / 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.partials[0], 0.0);
    }

    #[test]
    fn product_rule_gradient() {
        let e = parse("x0*x1").unwrap();
        let names = coord_names(2);
        let g = gradient(&e, &names, &[2.0, 5.0]).unwrap();
        assert_eq!(g, vec![5.0, 2.0]);
    }

    #[test]
    fn abs_derivative_at_zero_is_zero() {
        let e = parse("abs(x0)").unwrap();
        let names = coord_names(1);
        let d = eval_dual(&e, &names, &[0.0], &names).unwrap();
        assert_eq!(d.partials, vec![0.0]);
    }

    #[test]
    fn variable_exponent() {
        let e = parse("x0^x1").unwrap();
        let names = coord_names(2);
        let d = eval_dual(&e, &names, &[2.0, 3.0], &names).unwrap();
        assert!((d.primal - 8.0).abs() < 1e-12);
        assert!((d.partials[0] - 12.0).abs() < 1e-12);
        assert!((d.partials[1] - 8.0 * 2.0_f64.ln()).abs() < 1e-12);
    }
}
