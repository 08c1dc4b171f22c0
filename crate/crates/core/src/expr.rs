//! A small arithmetic language for declaring coefficients in config files.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | 't' | 'x'<i> | 'pi' | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func    := sin | cos | exp | tanh | abs | sqrt | sign | min | max
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)` and `2^3^2`
//! is `2^(3^2)`. There is no implicit multiplication: `2x1` is rejected.

use std::fmt;

use thiserror::Error;

const MAX_DEPTH: usize = 200;

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
    Exp,
    Tanh,
    Abs,
    Sqrt,
    Sign,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

/// Parsed expression tree. `Var(i)` is the zero-based state component, so
/// the source name `x1` becomes `Var(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    InvalidNumber(String),
    UnknownIdentifier(String),
    Arity { func: &'static str, expected: usize, found: usize },
    TooDeep,
}

/// Syntax error with a 1-based character column.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {}", describe(.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub column: usize,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Empty => "empty expression".into(),
        ParseErrorKind::UnexpectedChar(c) => format!("unexpected character {c:?}"),
        ParseErrorKind::UnexpectedToken(t) => format!("unexpected token {t:?}"),
        ParseErrorKind::UnexpectedEnd => "unexpected end of input".into(),
        ParseErrorKind::InvalidNumber(s) => format!("invalid number {s:?}"),
        ParseErrorKind::UnknownIdentifier(s) => format!("unknown identifier {s}"),
        ParseErrorKind::Arity { func, expected, found } => {
            format!("{func} takes {expected} argument(s), found {found}")
        }
        ParseErrorKind::TooDeep => format!("nesting deeper than {MAX_DEPTH}"),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("square root of negative value in `{0}`")]
    NegativeSqrt(String),
    #[error("state has dimension {found}, expression expects at least {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => f.write_str(s),
            Tok::Op(c) => write!(f, "{c}"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Comma => f.write_str(","),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| ParseError {
                kind: ParseErrorKind::InvalidNumber(text.clone()),
                column,
            })?;
            if !value.is_finite() {
                return Err(ParseError { kind: ParseErrorKind::InvalidNumber(text), column });
            }
            // "2x1" would otherwise lex as 2 followed by x1
            if i < chars.len() && (chars[i].is_alphabetic() || chars[i] == '_') {
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedChar(chars[i]),
                    column: i + 1,
                });
            }
            out.push((Tok::Num(value), column));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), column));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return Err(ParseError { kind: ParseErrorKind::UnexpectedChar(c), column }),
        };
        out.push((tok, column));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_column: usize,
    dim: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_column, |(_, c)| *c)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { kind, column: self.column() }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(t.to_string())),
            None => self.err(ParseErrorKind::UnexpectedEnd),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err(ParseErrorKind::TooDeep));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            let op = if *op == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            let op = if *op == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            self.enter()?;
            let exponent = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let column = self.column();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected());
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if let Some(func) = Func::lookup(&name) {
                    return self.call(func);
                }
                self.variable(&name)
                    .ok_or(ParseError { kind: ParseErrorKind::UnknownIdentifier(name), column })
            }
            _ => Err(self.unexpected()),
        }
    }

    fn variable(&self, name: &str) -> Option<Expr> {
        match name {
            "t" => Some(Expr::Time),
            "pi" => Some(Expr::Num(std::f64::consts::PI)),
            _ => {
                let digits = name.strip_prefix('x')?;
                if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                let i: usize = digits.parse().ok()?;
                (1..=self.dim).contains(&i).then_some(Expr::Var(i - 1))
            }
        }
    }

    fn call(&mut self, func: Func) -> Result<Expr, ParseError> {
        let column = self.column();
        self.expect(Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while let Some(Tok::Comma) = self.peek() {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        if args.len() != func.arity() {
            return Err(ParseError {
                kind: ParseErrorKind::Arity { func: func.name(), expected: func.arity(), found: args.len() },
                column,
            });
        }
        Ok(Expr::Call(func, args))
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }
}

/// Parses `source` for a state of dimension `dim` (variables `x1..x{dim}`).
pub fn parse(source: &str, dim: usize) -> Result<Expr, ParseError> {
    let toks = tokenize(source)?;
    if toks.is_empty() {
        return Err(ParseError { kind: ParseErrorKind::Empty, column: 1 });
    }
    let mut p = Parser { toks, pos: 0, end_column: source.chars().count() + 1, dim, depth: 0 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.unexpected());
    }
    Ok(e)
}

impl Expr {
    /// Evaluates at time `t` and state `x`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::Dimension { expected: i + 1, found: x.len() })?,
            Expr::Neg(e) => -e.eval(t, x)?,
            Expr::Bin(op, a, b) => {
                let (u, v) = (a.eval(t, x)?, b.eval(t, x)?);
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => {
                        if v == 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        u / v
                    }
                    BinOp::Pow => pow(u, v),
                }
            }
            Expr::Call(func, args) => {
                let u = args[0].eval(t, x)?;
                match func {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Tanh => u.tanh(),
                    Func::Abs => u.abs(),
                    Func::Sqrt => {
                        if u < 0.0 {
                            return Err(EvalError::NegativeSqrt(self.to_string()));
                        }
                        u.sqrt()
                    }
                    Func::Sign => sign(u),
                    Func::Min => u.min(args[1].eval(t, x)?),
                    Func::Max => u.max(args[1].eval(t, x)?),
                }
            }
        })
    }

    /// Largest state index referenced plus one (0 when the expression is state-free).
    pub fn min_dim(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Time => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) => e.min_dim(),
            Expr::Bin(_, a, b) => a.min_dim().max(b.min_dim()),
            Expr::Call(_, args) => args.iter().map(Expr::min_dim).max().unwrap_or(0),
        }
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        u * 0.0
    }
}

fn pow(u: f64, v: f64) -> f64 {
    if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
        u.powi(v as i32)
    } else {
        u.powf(v)
    }
}

// Fully parenthesized so the output reparses to the same tree shape.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if v.is_sign_negative() => write!(f, "({v:?})"),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Time => f.write_str("t"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A list of expressions sharing one state dimension. Drift vectors have
/// `dim` rows; diffusion matrices have `dim * noise_dim` rows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr {
    pub rows: Vec<Expr>,
    pub dim: usize,
}

impl VectorExpr {
    /// Parses every row; on failure returns `(row index, error)` pairs for all
    /// rows that failed.
    pub fn parse<S: AsRef<str>>(sources: &[S], dim: usize) -> Result<Self, Vec<(usize, ParseError)>> {
        let mut rows = Vec::with_capacity(sources.len());
        let mut errors = Vec::new();
        for (i, s) in sources.iter().enumerate() {
            match parse(s.as_ref(), dim) {
                Ok(e) => rows.push(e),
                Err(e) => errors.push((i, e)),
            }
        }
        if errors.is_empty() {
            Ok(VectorExpr { rows, dim })
        } else {
            Err(errors)
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.rows) {
            *o = e.eval(t, x)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64, x: &[f64]) -> f64 {
        parse(src, x.len().max(1)).unwrap().eval(t, x).unwrap()
    }

    #[test]
    fn grammar_shape() {
        let e = parse("-x1^3 + sin(t)", 1).unwrap();
        let expected = Expr::Bin(
            BinOp::Add,
            Box::new(Expr::Neg(Box::new(Expr::Bin(BinOp::Pow, Box::new(Expr::Var(0)), Box::new(Expr::Num(3.0)))))),
            Box::new(Expr::Call(Func::Sin, vec![Expr::Time])),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn dimension_guard() {
        let err = parse("x1*x2 - 2", 1).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("x2".into()));
        assert_eq!(err.column, 4);
        assert!(parse("x0", 3).is_err());
        assert!(parse("x01", 3).is_err());
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(ev("2^3^2", 0.0, &[0.0]), 512.0);
        assert_eq!(ev("-2^2", 0.0, &[0.0]), -4.0);
        assert_eq!(ev("2^-1", 0.0, &[0.0]), 0.5);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 - 2 - 3", 0.0, &[0.0]), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, &[0.0]), 1.0);
        assert_eq!(ev("1 + 2 * 3", 0.0, &[0.0]), 7.0);
        assert_eq!(ev("max(1, min(5, 3)) * 2", 0.0, &[0.0]), 6.0);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(ev("-x1", 0.0, &[2.0]), -2.0);
        assert_eq!(ev("-x1^3 + sin(t)", std::f64::consts::FRAC_PI_2, &[1.0]), 0.0);
        assert_eq!(ev("sign(x1)", 0.0, &[-0.5]), -1.0);
        assert_eq!(ev("sign(x1)", 0.0, &[0.0]), 0.0);
    }

    #[test]
    fn domain_errors_name_subexpression() {
        let e = parse("1 + sqrt(x1)", 1).unwrap();
        match e.eval(0.0, &[-1.0]) {
            Err(EvalError::NegativeSqrt(s)) => assert_eq!(s, "sqrt(x1)"),
            other => panic!("{other:?}"),
        }
        let e = parse("x1 / (x1 - 1)", 1).unwrap();
        assert!(matches!(e.eval(0.0, &[1.0]), Err(EvalError::DivisionByZero(_))));
    }

    #[test]
    fn rejects_implicit_multiplication() {
        let err = parse("2x1", 1).unwrap_err();
        assert_eq!(err.column, 2);
    }

    #[test]
    fn syntax_errors_report_columns() {
        assert_eq!(parse("", 1).unwrap_err().kind, ParseErrorKind::Empty);
        assert_eq!(parse("1 +", 1).unwrap_err(), ParseError { kind: ParseErrorKind::UnexpectedEnd, column: 4 });
        assert_eq!(parse("1 $ 2", 1).unwrap_err().column, 3);
        let err = parse("min(1)", 1).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { func: "min", expected: 2, found: 1 }));
        assert!(parse("(1", 1).is_err());
        assert!(parse("1)", 1).is_err());
        assert!(parse("sin", 1).is_err());
    }

    #[test]
    fn nesting_limit_is_an_error_not_a_crash() {
        let deep = "(".repeat(10_000) + "1" + &")".repeat(10_000);
        assert_eq!(parse(&deep, 1).unwrap_err().kind, ParseErrorKind::TooDeep);
        let negs = "-".repeat(10_000) + "1";
        assert!(parse(&negs, 1).is_err());
    }

    #[test]
    fn display_reparses() {
        for src in ["-x1^3 + sin(t)", "2^3^2", "x1*x2 - 1e-3/x2", "max(abs(x1), 0.1) - -x2"] {
            let e = parse(src, 2).unwrap();
            assert_eq!(parse(&e.to_string(), 2).unwrap(), e, "{src}");
        }
    }
}
