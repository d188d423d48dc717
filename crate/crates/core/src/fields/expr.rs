//! Scalar expression trees over `x1..xn`: evaluation, symbolic
//! differentiation with constant folding, and a re-parseable printer.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 0-based variable index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainErrorKind {
    LogNonPositive,
    SqrtNegative,
    DivisionByZero,
    NegativeBaseRealExponent,
    NonFinite,
}

impl fmt::Display for DomainErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainErrorKind::LogNonPositive => "log of a nonpositive value",
            DomainErrorKind::SqrtNegative => "sqrt of a negative value",
            DomainErrorKind::DivisionByZero => "division by zero",
            DomainErrorKind::NegativeBaseRealExponent => "negative base with non-integer exponent",
            DomainErrorKind::NonFinite => "non-finite result",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{kind} at point {point:?}")]
pub struct EvalError {
    pub kind: DomainErrorKind,
    pub point: Vec<f64>,
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl Expr {
    /// `x1^2 + … + xn^2`, the expansion of the `abs2` shorthand.
    pub fn abs2(n: usize) -> Expr {
        let sq = |i| Expr::Pow(b(Expr::Var(i)), b(Expr::Const(2.0)));
        (1..n).fold(sq(0), |acc, i| Expr::Add(b(acc), b(sq(i))))
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) | Expr::Pow(a, c) => {
                a.arity().max(c.arity())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_inner(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError {
                kind: DomainErrorKind::NonFinite,
                point: x.to_vec(),
            })
        }
    }

    fn eval_inner(&self, x: &[f64]) -> Result<f64, EvalError> {
        let fail = |kind| EvalError {
            kind,
            point: x.to_vec(),
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval_inner(x)?,
            Expr::Add(a, c) => a.eval_inner(x)? + c.eval_inner(x)?,
            Expr::Sub(a, c) => a.eval_inner(x)? - c.eval_inner(x)?,
            Expr::Mul(a, c) => a.eval_inner(x)? * c.eval_inner(x)?,
            Expr::Div(a, c) => {
                let den = c.eval_inner(x)?;
                if den == 0.0 {
                    return Err(fail(DomainErrorKind::DivisionByZero));
                }
                a.eval_inner(x)? / den
            }
            Expr::Pow(base, exp) => {
                let bv = base.eval_inner(x)?;
                let ev = exp.eval_inner(x)?;
                if ev.fract() == 0.0 && ev.abs() < 2f64.powi(31) {
                    if bv == 0.0 && ev < 0.0 {
                        return Err(fail(DomainErrorKind::DivisionByZero));
                    }
                    bv.powi(ev as i32)
                } else {
                    if bv < 0.0 {
                        return Err(fail(DomainErrorKind::NegativeBaseRealExponent));
                    }
                    bv.powf(ev)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval_inner(x)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(fail(DomainErrorKind::LogNonPositive));
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(fail(DomainErrorKind::SqrtNegative));
                        }
                        v.sqrt()
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
        })
    }

    /// Partial derivative with respect to variable `var` (0-based).
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(a, c) => add(a.derivative(var), c.derivative(var)),
            Sub(a, c) => sub(a.derivative(var), c.derivative(var)),
            Mul(a, c) => add(
                mul(a.derivative(var), (**c).clone()),
                mul((**a).clone(), c.derivative(var)),
            ),
            Div(a, c) => div(
                sub(
                    mul(a.derivative(var), (**c).clone()),
                    mul((**a).clone(), c.derivative(var)),
                ),
                pow((**c).clone(), Const(2.0)),
            ),
            Pow(base, exp) => {
                let db = base.derivative(var);
                if let Const(e) = **exp {
                    // c * f^(c-1) * f'
                    mul(mul(Const(e), pow((**base).clone(), Const(e - 1.0))), db)
                } else {
                    // f^g * (g' log f + g f' / f)
                    let de = exp.derivative(var);
                    mul(
                        self.clone(),
                        add(
                            mul(de, call(Func::Log, (**base).clone())),
                            div(mul((**exp).clone(), db), (**base).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let da = a.derivative(var);
                let inner = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Log => div(Const(1.0), inner),
                    Func::Sqrt => div(Const(0.5), call(Func::Sqrt, inner)),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                };
                mul(outer, da)
            }
        }
    }
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

// Smart constructors doing constant folding and trivial identities only.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(b(a)),
    }
}

fn add(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (a, c) if is_const(&a, 0.0) => c,
        (a, c) if is_const(&c, 0.0) => a,
        (a, c) => Expr::Add(b(a), b(c)),
    }
}

fn sub(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, c) if is_const(&c, 0.0) => a,
        (a, c) if is_const(&a, 0.0) => neg(c),
        (a, c) => Expr::Sub(b(a), b(c)),
    }
}

fn mul(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (a, c) if is_const(&a, 0.0) || is_const(&c, 0.0) => Expr::Const(0.0),
        (a, c) if is_const(&a, 1.0) => c,
        (a, c) if is_const(&c, 1.0) => a,
        (a, c) => Expr::Mul(b(a), b(c)),
    }
}

fn div(a: Expr, c: Expr) -> Expr {
    match (a, c) {
        (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
        (a, _) if is_const(&a, 0.0) => Expr::Const(0.0),
        (a, c) if is_const(&c, 1.0) => a,
        (a, c) => Expr::Div(b(a), b(c)),
    }
}

fn pow(a: Expr, e: Expr) -> Expr {
    match (a, e) {
        (a, e) if is_const(&e, 1.0) => a,
        (_, e) if is_const(&e, 0.0) => Expr::Const(1.0),
        (a, e) => Expr::Pow(b(a), b(e)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, b(a))
}

impl fmt::Display for Expr {
    /// Fully parenthesized output that re-parses to the same tree shape.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, c) => write!(f, "({a} + {c})"),
            Expr::Sub(a, c) => write!(f, "({a} - {c})"),
            Expr::Mul(a, c) => write!(f, "({a} * {c})"),
            Expr::Div(a, c) => write!(f, "({a} / {c})"),
            Expr::Pow(a, c) => write!(f, "({a} ^ {c})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
