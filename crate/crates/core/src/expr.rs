//! Expression trees for time-dependent model coefficients.
//!
//! The grammar knows two variables: `t` (time) and `x` (state, only permitted
//! where the caller says so), the functions `abs`, `sin`, `cos`, `exp`,
//! `sqrt`, binary `+ - * / ^` and unary minus. `^` binds tighter than unary
//! minus and is right-associative; the other binary operators are
//! left-associative with the usual precedence.

use std::fmt;
use thiserror::Error;

/// Which variables a parse site accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSet {
    /// Only `t` may appear.
    TimeOnly,
    /// Both `t` and `x` may appear.
    TimeAndState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Time,
    State,
    Unary(UnaryOp, Box<Expression>),
    Binary(BinOp, Box<Expression>, Box<Expression>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdent { pos: usize, name: String },
    #[error("variable `x` is not allowed in this field (offset {pos})")]
    StateNotAllowed { pos: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sqrt of negative value {0}")]
    SqrtNegative(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("{base}^{exponent} is not a finite real")]
    PowDomain { base: f64, exponent: f64 },
    #[error("expression overflowed to a non-finite value")]
    NonFinite,
    #[error("expression uses `x` but no state value was supplied")]
    MissingState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("sample window must be positive, got {0}")]
    BadWindow(f64),
    #[error("sample count must be positive")]
    BadSamples,
    #[error("evaluation failed at t={t}: {source}")]
    Eval { t: f64, source: EvalError },
}

/// Parse `source` into an expression tree, rejecting `x` unless `vars`
/// permits the state variable.
pub fn parse(source: &str, vars: VarSet) -> Result<Expression, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0, vars };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some((pos, tok)) => Err(ParseError::Syntax {
            pos: *pos,
            msg: format!("unexpected {}", tok.describe()),
        }),
    }
}

/// `base^exp` with the same domain rules as the `^` operator.
pub(crate) fn pow_checked(base: f64, exp: f64) -> Result<f64, EvalError> {
    let v = base.powf(exp);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::PowDomain { base, exponent: exp })
    }
}

/// Evaluate at time `t` with optional state `x`.
pub fn evaluate(e: &Expression, t: f64, x: Option<f64>) -> Result<f64, EvalError> {
    let v = match e {
        Expression::Num(v) => *v,
        Expression::Time => t,
        Expression::State => x.ok_or(EvalError::MissingState)?,
        Expression::Unary(op, c) => {
            let a = evaluate(c, t, x)?;
            match op {
                UnaryOp::Neg => -a,
                UnaryOp::Abs => a.abs(),
                UnaryOp::Sin => a.sin(),
                UnaryOp::Cos => a.cos(),
                UnaryOp::Exp => a.exp(),
                UnaryOp::Sqrt => {
                    if a < 0.0 {
                        return Err(EvalError::SqrtNegative(a));
                    }
                    a.sqrt()
                }
            }
        }
        Expression::Binary(op, l, r) => {
            let a = evaluate(l, t, x)?;
            let b = evaluate(r, t, x)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Pow => pow_checked(a, b)?,
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

/// Sampled bounds of `e` over `t ∈ [0, t_window]`, crossed with a fixed
/// 101-point grid on `x_range` when the expression uses the state variable.
///
/// The time grid is `j·t_window/samples` for `j = 0..=samples`, so doubling
/// `samples` refines the grid to a superset: the reported infimum can only
/// decrease and the supremum only increase under refinement.
pub fn estimate_bounds(
    e: &Expression,
    t_window: f64,
    samples: usize,
    x_range: Option<(f64, f64)>,
) -> Result<(f64, f64), BoundsError> {
    if !(t_window > 0.0) || !t_window.is_finite() {
        return Err(BoundsError::BadWindow(t_window));
    }
    if samples == 0 {
        return Err(BoundsError::BadSamples);
    }
    let xs: Vec<Option<f64>> = match x_range {
        Some((lo, hi)) if uses_state(e) => {
            (0..=100).map(|i| Some(lo + (hi - lo) * i as f64 / 100.0)).collect()
        }
        Some((lo, _)) => vec![Some(lo)],
        None => vec![None],
    };
    let mut inf = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    for j in 0..=samples {
        let t = t_window * j as f64 / samples as f64;
        for &x in &xs {
            let v = evaluate(e, t, x).map_err(|source| BoundsError::Eval { t, source })?;
            inf = inf.min(v);
            sup = sup.max(v);
        }
    }
    Ok((inf, sup))
}

/// True when the tree contains the state variable `x`.
pub fn uses_state(e: &Expression) -> bool {
    match e {
        Expression::State => true,
        Expression::Num(_) | Expression::Time => false,
        Expression::Unary(_, c) => uses_state(c),
        Expression::Binary(_, l, r) => uses_state(l) || uses_state(r),
    }
}

impl Expression {
    pub fn constant(v: f64) -> Self {
        Expression::Num(v)
    }

    pub fn eval(&self, t: f64, x: Option<f64>) -> Result<f64, EvalError> {
        evaluate(self, t, x)
    }

    pub fn uses_state(&self) -> bool {
        uses_state(self)
    }

    /// True for the literal 0, used to skip terms that contribute nothing.
    pub fn is_zero(&self) -> bool {
        matches!(self, Expression::Num(v) if *v == 0.0)
    }
}

// Precedence levels used by both the parser and the printer: 1 additive,
// 2 multiplicative, 3 unary minus, 4 power, 5 atoms.
fn prec(e: &Expression) -> u8 {
    match e {
        Expression::Num(_) | Expression::Time | Expression::State => 5,
        Expression::Unary(UnaryOp::Neg, _) => 3,
        Expression::Unary(_, _) => 5,
        Expression::Binary(BinOp::Pow, _, _) => 4,
        Expression::Binary(BinOp::Mul, _, _) | Expression::Binary(BinOp::Div, _, _) => 2,
        Expression::Binary(_, _, _) => 1,
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, c: &Expression, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        match self {
            Expression::Num(v) => write!(f, "{v}"),
            Expression::Time => write!(f, "t"),
            Expression::State => write!(f, "x"),
            Expression::Unary(UnaryOp::Neg, c) => {
                write!(f, "-")?;
                child(f, c, prec(c) < 3)
            }
            Expression::Unary(op, c) => {
                let name = match op {
                    UnaryOp::Abs => "abs",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({c})")
            }
            Expression::Binary(op, l, r) => {
                let p = prec(self);
                let (sym, lp, rp) = match op {
                    BinOp::Add => ("+", prec(l) < p, prec(r) <= p),
                    BinOp::Sub => ("-", prec(l) < p, prec(r) <= p),
                    BinOp::Mul => ("*", prec(l) < p, prec(r) <= p),
                    BinOp::Div => ("/", prec(l) < p, prec(r) <= p),
                    // `^` is right-associative and binds tighter than unary
                    // minus, so the left side needs parens even at equal
                    // precedence while a unary-minus or power exponent is fine.
                    BinOp::Pow => ("^", prec(l) <= p, prec(r) <= 2),
                };
                child(f, l, lp)?;
                write!(f, "{sym}")?;
                child(f, r, rp)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Num(v) => format!("number {v}"),
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::Caret => "`^`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
        }
    }
}

fn lex(source: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((i, Token::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Token::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Token::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Token::Slash));
                i += 1;
            }
            '^' => {
                out.push((i, Token::Caret));
                i += 1;
            }
            '(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &source[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("invalid number literal `{text}`"),
                })?;
                out.push((start, Token::Num(v)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Token::Ident(source[start..i].to_string())));
            }
            _ => {
                return Err(ParseError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    vars: VarSet,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Token)> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn end_pos(&self) -> usize {
        self.tokens.last().map_or(0, |(p, t)| p + t.describe().len())
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        while let Some((_, tok)) = self.peek() {
            let op = match tok {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((_, tok)) = self.peek() {
            let op = match tok {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if let Some((_, Token::Minus)) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expression::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if let Some((_, Token::Caret)) = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expression::Binary(
                BinOp::Pow,
                Box::new(base),
                Box::new(exponent),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        let Some((pos, tok)) = self.bump() else {
            return Err(ParseError::Syntax {
                pos: self.end_pos(),
                msg: "unexpected end of input".into(),
            });
        };
        match tok {
            Token::Num(v) => Ok(Expression::Num(v)),
            Token::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    Some((_, Token::RParen)) => Ok(inner),
                    Some((p, t)) => Err(ParseError::Syntax {
                        pos: p,
                        msg: format!("expected `)`, found {}", t.describe()),
                    }),
                    None => Err(ParseError::Syntax {
                        pos: self.end_pos(),
                        msg: "expected `)` before end of input".into(),
                    }),
                }
            }
            Token::Ident(name) => match name.as_str() {
                "t" => Ok(Expression::Time),
                "x" => {
                    if self.vars == VarSet::TimeAndState {
                        Ok(Expression::State)
                    } else {
                        Err(ParseError::StateNotAllowed { pos })
                    }
                }
                "abs" | "sin" | "cos" | "exp" | "sqrt" => {
                    let op = match name.as_str() {
                        "abs" => UnaryOp::Abs,
                        "sin" => UnaryOp::Sin,
                        "cos" => UnaryOp::Cos,
                        "exp" => UnaryOp::Exp,
                        _ => UnaryOp::Sqrt,
                    };
                    match self.bump() {
                        Some((_, Token::LParen)) => {}
                        Some((p, t)) => {
                            return Err(ParseError::Syntax {
                                pos: p,
                                msg: format!("expected `(` after `{name}`, found {}", t.describe()),
                            })
                        }
                        None => {
                            return Err(ParseError::Syntax {
                                pos: self.end_pos(),
                                msg: format!("expected `(` after `{name}`"),
                            })
                        }
                    }
                    let arg = self.expr()?;
                    match self.bump() {
                        Some((_, Token::RParen)) => Ok(Expression::Unary(op, Box::new(arg))),
                        Some((p, t)) => Err(ParseError::Syntax {
                            pos: p,
                            msg: format!("expected `)`, found {}", t.describe()),
                        }),
                        None => Err(ParseError::Syntax {
                            pos: self.end_pos(),
                            msg: "expected `)` before end of input".into(),
                        }),
                    }
                }
                _ => Err(ParseError::UnknownIdent { pos, name }),
            },
            other => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected {}", other.describe()),
            }),
        }
    }
}
