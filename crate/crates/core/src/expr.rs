//! Scalar expressions in one variable `x`, used for drift and diffusion
//! coefficients.
//!
//! Grammar (no implicit multiplication, `^` binds tighter than unary minus
//! and is right-associative):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-"? power
//! power  := atom ("^" factor)?
//! atom   := number | "x" | ident "(" expr ")" | "(" expr ")"
//! ```
//!
//! Known functions: `exp log sqrt abs sin cos tanh`.

use std::fmt;

use thiserror::Error;

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
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
}

impl Func {
    const ALL: [Func; 7] = [
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Sin,
        Func::Cos,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Abstract syntax tree of a parsed expression.
///
/// Literals produced by [`parse`] are always nonnegative; a leading minus is
/// a [`Expr::Neg`] node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: found {found}, expected one of {}", expected.join(", "))]
    Syntax {
        offset: usize,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    LogNonPositive,
    SqrtNegative,
    DivisionByZero,
    PowDomain,
    NonFinite,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::LogNonPositive => "log of a nonpositive value",
            DomainKind::SqrtNegative => "sqrt of a negative value",
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::PowDomain => "power outside its real domain",
            DomainKind::NonFinite => "non-finite result (overflow)",
        })
    }
}

/// Failure to evaluate an expression at a point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{subexpr}` at x = {x}")]
pub struct EvalError {
    pub kind: DomainKind,
    pub subexpr: String,
    pub x: f64,
}

impl Expr {
    /// Evaluates at `x`. Every intermediate value must be finite.
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let fail = |kind| EvalError {
            kind,
            subexpr: self.to_string(),
            x,
        };
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var => x,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Binary(op, l, r) => {
                let l = l.eval(x)?;
                let r = r.eval(x)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(fail(DomainKind::DivisionByZero));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if l == 0.0 && r < 0.0 {
                            return Err(fail(DomainKind::DivisionByZero));
                        }
                        if l < 0.0 && r.fract() != 0.0 {
                            return Err(fail(DomainKind::PowDomain));
                        }
                        l.powf(r)
                    }
                }
            }
            Expr::Call(func, arg) => {
                let a = arg.eval(x)?;
                match func {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(fail(DomainKind::LogNonPositive));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail(DomainKind::SqrtNegative));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tanh => a.tanh(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail(DomainKind::NonFinite))
        }
    }

    /// The value of the expression if it does not depend on `x`.
    pub fn constant_value(&self) -> Option<f64> {
        if self.mentions_var() {
            None
        } else {
            self.eval(0.0).ok()
        }
    }

    fn mentions_var(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var => true,
            Expr::Neg(e) | Expr::Call(_, e) => e.mentions_var(),
            Expr::Binary(_, l, r) => l.mentions_var() || r.mentions_var(),
        }
    }

    // Binding strength used by the printer: sums 1, products 2, negation 3,
    // powers 4, atoms 5.
    fn level(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
            Expr::Num(_) | Expr::Var | Expr::Call(..) => 5,
        }
    }

    fn fmt_at(&self, min_level: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.level() < min_level {
            f.write_str("(")?;
            self.fmt_at(0, f)?;
            return f.write_str(")");
        }
        match self {
            Expr::Num(v) if v.is_sign_negative() => write!(f, "-{}", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var => f.write_str("x"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_at(4, f)
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                arg.fmt_at(0, f)?;
                f.write_str(")")
            }
            Expr::Binary(op, l, r) => {
                let (sym, lmin, rmin) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => (" * ", 2, 3),
                    BinOp::Div => (" / ", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                l.fmt_at(lmin, f)?;
                f.write_str(sym)?;
                r.fmt_at(rmin, f)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(0, f)
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    found: format!("malformed number `{lit}`"),
                    expected: vec!["number"],
                })?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    found: format!("character `{ch}`"),
                    expected: vec!["number", "`x`", "function", "`(`", "operator"],
                });
            }
        };
        i += 1;
        out.push((start, tok));
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

const ATOM_START: [&str; 5] = ["number", "`x`", "function", "`(`", "`-`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&'static str]) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            found: self.peek().describe(),
            expected: expected.to_vec(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.power()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.factor()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) if name == "x" => {
                self.bump();
                Ok(Expr::Var)
            }
            Tok::Ident(name) => {
                let func = Func::from_name(&name)
                    .ok_or(ParseError::UnknownIdentifier { name, offset })?;
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(self.error(&ATOM_START[..4])),
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }
}

/// Parses `text` into an expression tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error(&["`+`", "`-`", "`*`", "`/`", "`^`", "end of input"]));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn num(v: f64) -> Box<Expr> {
        Box::new(Expr::Num(v))
    }

    fn ev(s: &str, x: f64) -> f64 {
        parse(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn parses_identity() {
        assert_eq!(parse("x").unwrap(), Expr::Var);
    }

    #[test]
    fn negated_literal_times_group() {
        let e = parse("-2*(x - 1)").unwrap();
        assert_eq!(
            e,
            Expr::Binary(
                BinOp::Mul,
                Box::new(Expr::Neg(num(2.0))),
                Box::new(Expr::Binary(BinOp::Sub, Box::new(Expr::Var), num(1.0)))
            )
        );
        assert_eq!(e.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_bump_at_origin() {
        assert_eq!(ev("exp(-x^2/2)", 0.0), 1.0);
    }

    #[test]
    fn simple_evaluations() {
        assert_eq!(ev("x^2", 3.0), 9.0);
        assert_eq!(ev("sqrt(x)", 4.0), 2.0);
        assert_eq!(ev("2+3*4", 0.0), 14.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0), -4.0);
        assert_eq!(ev("1.5e1 + 2E-1", 0.0), 15.2);
        assert!((ev("tanh(x) + cos(0) - sin(0) + abs(-3) + log(exp(2))", 0.5) - (0.5f64.tanh() + 6.0)).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_reported() {
        let err = parse("1/x").unwrap().eval(0.0).unwrap_err();
        assert_eq!(err.kind, DomainKind::DivisionByZero);
        assert_eq!(err.subexpr, "1 / x");
        assert_eq!(err.x, 0.0);
    }

    #[test]
    fn domain_errors() {
        let kind = |s: &str, x: f64| parse(s).unwrap().eval(x).unwrap_err().kind;
        assert_eq!(kind("log(x)", 0.0), DomainKind::LogNonPositive);
        assert_eq!(kind("sqrt(x)", -1.0), DomainKind::SqrtNegative);
        assert_eq!(kind("exp(x)", 1000.0), DomainKind::NonFinite);
        assert_eq!(kind("x^0.5", -4.0), DomainKind::PowDomain);
        assert_eq!(kind("x^-1", 0.0), DomainKind::DivisionByZero);
    }

    #[test]
    fn rejects_implicit_multiplication() {
        match parse("2x").unwrap_err() {
            ParseError::Syntax { offset, .. } => assert_eq!(offset, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(
            parse("1 + foo(x)").unwrap_err(),
            ParseError::UnknownIdentifier {
                name: "foo".into(),
                offset: 4
            }
        );
        assert!(matches!(parse("y").unwrap_err(), ParseError::UnknownIdentifier { .. }));
    }

    #[test]
    fn syntax_errors_carry_offsets_and_expectations() {
        match parse("(x + 1").unwrap_err() {
            ParseError::Syntax { offset, expected, .. } => {
                assert_eq!(offset, 6);
                assert_eq!(expected, vec!["`)`"]);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse("exp x").unwrap_err(), ParseError::Syntax { offset: 4, .. }));
        assert!(matches!(parse("x +").unwrap_err(), ParseError::Syntax { offset: 3, .. }));
        assert!(matches!(parse("x $ 1").unwrap_err(), ParseError::Syntax { offset: 2, .. }));
        assert_eq!(parse("   ").unwrap_err(), ParseError::Empty);
    }

    #[test]
    fn constant_detection() {
        assert_eq!(parse("2*3 - 1").unwrap().constant_value(), Some(5.0));
        assert_eq!(parse("-x").unwrap().constant_value(), None);
    }

    #[test]
    fn printer_minimal_parentheses() {
        for (src, printed) in [
            ("-2*(x - 1)", "-2 * (x - 1)"),
            ("(2^3)^2", "(2^3)^2"),
            ("2^3^2", "2^3^2"),
            ("-(-x)", "-(-x)"),
            ("(-x)^2", "(-x)^2"),
            ("x - (1 - x)", "x - (1 - x)"),
            ("x / (2 * x)", "x / (2 * x)"),
        ] {
            assert_eq!(parse(src).unwrap().to_string(), printed);
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Num),
            (0u32..20).prop_map(|n| Expr::Num(n as f64)),
            Just(Expr::Var),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::Binary(op, Box::new(l), Box::new(r))),
                (0usize..Func::ALL.len(), inner)
                    .prop_map(|(i, e)| Expr::Call(Func::ALL[i], Box::new(e))),
            ]
        })
    }

    fn same_outcome(a: &Result<f64, EvalError>, b: &Result<f64, EvalError>) -> bool {
        match (a, b) {
            (Ok(x), Ok(y)) => x.to_bits() == y.to_bits(),
            (Err(x), Err(y)) => x.kind == y.kind,
            _ => false,
        }
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr(), xs in prop::collection::vec(-5.0f64..5.0, 100)) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(&back, &e, "printed as {}", printed);
            for x in xs {
                prop_assert!(same_outcome(&back.eval(x), &e.eval(x)));
            }
        }
    }
}
