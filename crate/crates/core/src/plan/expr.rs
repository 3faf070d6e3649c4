//! Predicate / projection expressions.
//!
//! Expressions travel inside plan documents as text, e.g.
//! `amount > 100 and card_scheme in ['visa', 'amex']`. The canonical printed
//! form fully parenthesizes every operator so that printing and re-parsing is
//! the identity on expression trees.

use std::fmt;

use chrono::NaiveDate;

use crate::plan::schema::{Schema, SemType};
use crate::table::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Date(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    In,
    And,
    Or,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Eq => "==",
            BinaryOp::NotEq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::In => "in",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::NotEq | BinaryOp::Lt | BinaryOp::LtEq | BinaryOp::Gt | BinaryOp::GtEq)
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq
            | BinaryOp::In => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Literal(Literal),
    /// Right-hand operand of `in`; elements are literals.
    List(Vec<Expr>),
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Column(name.into())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Literal(Literal::Int(v))
    }

    pub fn text(v: impl Into<String>) -> Expr {
        Expr::Literal(Literal::Text(v.into()))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn eq(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::Eq, left, right)
    }

    pub fn and(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::And, left, right)
    }

    pub fn not(expr: Expr) -> Expr {
        Expr::Unary { op: UnaryOp::Not, expr: Box::new(expr) }
    }

    /// Column names referenced anywhere in the expression, in first-seen order.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut Vec<String>) {
        match self {
            Expr::Column(c) => {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
            Expr::Literal(_) => {}
            Expr::List(items) => items.iter().for_each(|e| e.collect_columns(out)),
            Expr::Unary { expr, .. } => expr.collect_columns(out),
            Expr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
        }
    }

    /// Splits a predicate into its top-level `and` conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Binary { op: BinaryOp::And, left, right } => {
                let mut v = left.conjuncts();
                v.extend(right.conjuncts());
                v
            }
            other => vec![other],
        }
    }

    /// Rebuilds a left-deep conjunction; `None` for an empty slice.
    pub fn conjunction(parts: Vec<Expr>) -> Option<Expr> {
        parts.into_iter().reduce(Expr::and)
    }

    pub fn parse(text: &str) -> Result<Expr, ExprSyntaxError> {
        Parser::new(text)?.parse_complete()
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Null => f.write_str("null"),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Real(r) => f.write_str(&format_real(*r)),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Date(d) => write!(f, "date '{}'", d.format("%Y-%m-%d")),
        }
    }
}

/// Formats a real so that it re-parses as a real (always carries `.` or `e`).
pub fn format_real(r: f64) -> String {
    let s = format!("{r:?}");
    if s.contains(['.', 'e', 'E', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn is_plain_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') && keyword(name).is_none()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(name) => {
                if is_plain_identifier(name) {
                    f.write_str(name)
                } else {
                    write!(f, "`{}`", name.replace('`', "``"))
                }
            }
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::List(items) => {
                f.write_str("[")?;
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str("]")
            }
            Expr::Unary { op: UnaryOp::Not, expr } => write!(f, "(not {expr})"),
            Expr::Unary { op: UnaryOp::Neg, expr } => write!(f, "(- {expr})"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expression syntax error at offset {offset}: {message}")]
pub struct ExprSyntaxError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    Op(&'static str),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Keyword(Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Keyword {
    And,
    Or,
    Not,
    In,
    True,
    False,
    Null,
    Date,
}

fn keyword(word: &str) -> Option<Keyword> {
    Some(match word.to_ascii_lowercase().as_str() {
        "and" => Keyword::And,
        "or" => Keyword::Or,
        "not" => Keyword::Not,
        "in" => Keyword::In,
        "true" => Keyword::True,
        "false" => Keyword::False,
        "null" => Keyword::Null,
        "date" => Keyword::Date,
        _ => return None,
    })
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ExprSyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, message: &str| ExprSyntaxError { offset, message: message.to_string() };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((start, Token::LParen)),
            b')' => out.push((start, Token::RParen)),
            b'[' => out.push((start, Token::LBracket)),
            b']' => out.push((start, Token::RBracket)),
            b',' => out.push((start, Token::Comma)),
            b'+' => out.push((start, Token::Op("+"))),
            b'-' => out.push((start, Token::Op("-"))),
            b'*' => out.push((start, Token::Op("*"))),
            b'/' => out.push((start, Token::Op("/"))),
            b'=' => {
                // `=` is accepted as an alias of `==`
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                }
                out.push((start, Token::Op("==")));
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    out.push((start, Token::Op("!=")));
                } else {
                    return Err(err(start, "expected '=' after '!'"));
                }
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let tok = match (c, eq) {
                    (b'<', true) => "<=",
                    (b'<', false) => "<",
                    (_, true) => ">=",
                    _ => ">",
                };
                if eq {
                    i += 1;
                }
                out.push((start, Token::Op(tok)));
            }
            b'\'' | b'"' | b'`' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match text[i..].chars().next() {
                        None => return Err(err(start, "unterminated quoted string")),
                        Some(ch) if ch as u32 == quote as u32 => {
                            if bytes.get(i + 1) == Some(&quote) {
                                s.push(ch);
                                i += 2;
                            } else {
                                break;
                            }
                        }
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((start, if quote == b'`' { Token::Ident(s) } else { Token::Str(s) }));
            }
            b'0'..=b'9' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let mut real = false;
                if j < bytes.len() && bytes[j] == b'.' && bytes.get(j + 1).is_some_and(|b| b.is_ascii_digit()) {
                    real = true;
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        real = true;
                        j = k;
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                    }
                }
                let lexeme = &text[i..j];
                let tok = if real {
                    Token::Real(lexeme.parse().map_err(|_| err(start, "invalid number"))?)
                } else {
                    Token::Int(lexeme.parse().map_err(|_| err(start, "integer literal out of range"))?)
                };
                out.push((start, tok));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.') {
                    j += 1;
                }
                let word = &text[i..j];
                out.push((start, keyword(word).map(Token::Keyword).unwrap_or_else(|| Token::Ident(word.to_string()))));
                i = j;
                continue;
            }
            _ => return Err(err(start, &format!("unexpected character {:?}", text[i..].chars().next().unwrap()))),
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ExprSyntaxError> {
        Ok(Parser { tokens: tokenize(text)?, pos: 0, end: text.len() })
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ExprSyntaxError> {
        Err(ExprSyntaxError { offset: self.offset(), message: message.into() })
    }

    fn parse_complete(mut self) -> Result<Expr, ExprSyntaxError> {
        if self.tokens.is_empty() {
            return self.fail("empty expression");
        }
        let e = self.parse_binary(1)?;
        if self.pos < self.tokens.len() {
            return self.fail("unexpected trailing input");
        }
        Ok(e)
    }

    fn peek_binary(&self) -> Option<BinaryOp> {
        Some(match self.peek()? {
            Token::Keyword(Keyword::And) => BinaryOp::And,
            Token::Keyword(Keyword::Or) => BinaryOp::Or,
            Token::Keyword(Keyword::In) => BinaryOp::In,
            Token::Op(s) => match *s {
                "==" => BinaryOp::Eq,
                "!=" => BinaryOp::NotEq,
                "<" => BinaryOp::Lt,
                "<=" => BinaryOp::LtEq,
                ">" => BinaryOp::Gt,
                ">=" => BinaryOp::GtEq,
                "+" => BinaryOp::Add,
                "-" => BinaryOp::Sub,
                "*" => BinaryOp::Mul,
                "/" => BinaryOp::Div,
                _ => return None,
            },
            _ => return None,
        })
    }

    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, ExprSyntaxError> {
        let mut left = self.parse_prefix(min_prec)?;
        while let Some(op) = self.peek_binary() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            // comparisons are non-associative; everything else is left-associative
            let right = self.parse_binary(prec + 1)?;
            left = Expr::binary(op, left, right);
            if prec == 4 && self.peek_binary().is_some_and(|o| o.precedence() == 4) {
                return self.fail("comparison operators cannot be chained");
            }
        }
        Ok(left)
    }

    fn parse_prefix(&mut self, min_prec: u8) -> Result<Expr, ExprSyntaxError> {
        match self.peek() {
            Some(Token::Keyword(Keyword::Not)) if min_prec <= 3 => {
                self.pos += 1;
                let inner = self.parse_binary(3)?;
                Ok(Expr::not(inner))
            }
            Some(Token::Op("-")) => {
                self.pos += 1;
                let inner = self.parse_binary(7)?;
                Ok(match inner {
                    Expr::Literal(Literal::Int(i)) => Expr::Literal(Literal::Int(-i)),
                    Expr::Literal(Literal::Real(r)) => Expr::Literal(Literal::Real(-r)),
                    other => Expr::Unary { op: UnaryOp::Neg, expr: Box::new(other) },
                })
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ExprSyntaxError> {
        let offset = self.offset();
        match self.next() {
            Some(Token::Ident(name)) => Ok(Expr::Column(name)),
            Some(Token::Int(i)) => Ok(Expr::Literal(Literal::Int(i))),
            Some(Token::Real(r)) => Ok(Expr::Literal(Literal::Real(r))),
            Some(Token::Str(s)) => Ok(Expr::Literal(Literal::Text(s))),
            Some(Token::Keyword(Keyword::True)) => Ok(Expr::Literal(Literal::Bool(true))),
            Some(Token::Keyword(Keyword::False)) => Ok(Expr::Literal(Literal::Bool(false))),
            Some(Token::Keyword(Keyword::Null)) => Ok(Expr::Literal(Literal::Null)),
            Some(Token::Keyword(Keyword::Date)) => match self.next() {
                Some(Token::Str(s)) => NaiveDate::parse_from_str(&s, "%Y-%m-%d")
                    .map(|d| Expr::Literal(Literal::Date(d)))
                    .map_err(|_| ExprSyntaxError { offset, message: format!("invalid date literal '{s}'") }),
                _ => Err(ExprSyntaxError { offset, message: "expected quoted date after 'date'".into() }),
            },
            Some(Token::LParen) => {
                let e = self.parse_binary(1)?;
                match self.next() {
                    Some(Token::RParen) => Ok(e),
                    _ => {
                        self.pos -= 1;
                        self.fail("expected ')'")
                    }
                }
            }
            Some(Token::LBracket) => {
                let mut items = Vec::new();
                if self.peek() == Some(&Token::RBracket) {
                    self.pos += 1;
                    return Ok(Expr::List(items));
                }
                loop {
                    items.push(self.parse_binary(1)?);
                    match self.next() {
                        Some(Token::Comma) => continue,
                        Some(Token::RBracket) => return Ok(Expr::List(items)),
                        _ => {
                            self.pos -= 1;
                            return self.fail("expected ',' or ']' in list");
                        }
                    }
                }
            }
            Some(_) => {
                self.pos -= 1;
                self.fail("expected an operand")
            }
            None => self.fail("expected an operand, found end of expression"),
        }
    }
}

/// Static type of an expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprType {
    Null,
    Scalar(SemType),
    /// Element type of a literal list; `None` for the empty list.
    List(Option<SemType>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("UnknownColumn('{0}')")]
    UnknownColumn(String),
    #[error("TypeMismatch({expr}): {detail}")]
    Mismatch { expr: String, detail: String },
}

fn numeric(t: &SemType) -> bool {
    matches!(t, SemType::Integer | SemType::Real)
}

fn comparable(a: &SemType, b: &SemType) -> bool {
    a == b || (numeric(a) && numeric(b))
}

fn describe(t: &ExprType) -> String {
    match t {
        ExprType::Null => "null".into(),
        ExprType::Scalar(s) => s.name().into(),
        ExprType::List(None) => "empty list".into(),
        ExprType::List(Some(s)) => format!("list of {}", s.name()),
    }
}

impl Expr {
    /// Type-checks the expression against `schema`.
    pub fn check(&self, schema: &Schema) -> Result<ExprType, TypeError> {
        let mismatch = |detail: String| TypeError::Mismatch { expr: self.to_string(), detail };
        match self {
            Expr::Column(c) => {
                schema.column(c).map(|col| ExprType::Scalar(col.ty)).ok_or_else(|| TypeError::UnknownColumn(c.clone()))
            }
            Expr::Literal(l) => Ok(match l {
                Literal::Null => ExprType::Null,
                Literal::Bool(_) => ExprType::Scalar(SemType::Boolean),
                Literal::Int(_) => ExprType::Scalar(SemType::Integer),
                Literal::Real(_) => ExprType::Scalar(SemType::Real),
                Literal::Text(_) => ExprType::Scalar(SemType::Text),
                Literal::Date(_) => ExprType::Scalar(SemType::Date),
            }),
            Expr::List(items) => {
                let mut elem: Option<SemType> = None;
                for item in items {
                    if !matches!(item, Expr::Literal(_)) {
                        return Err(mismatch(format!("list elements must be literals, found {item}")));
                    }
                    match item.check(schema)? {
                        ExprType::Scalar(t) => match elem {
                            None => elem = Some(t),
                            Some(e) if comparable(&e, &t) => {
                                if e == SemType::Integer && t == SemType::Real {
                                    elem = Some(SemType::Real);
                                }
                            }
                            Some(e) => {
                                return Err(mismatch(format!("list mixes {} and {} elements", e.name(), t.name())))
                            }
                        },
                        _ => {}
                    }
                }
                Ok(ExprType::List(elem))
            }
            Expr::Unary { op, expr } => {
                let t = expr.check(schema)?;
                match (op, &t) {
                    (_, ExprType::Null) => Ok(ExprType::Null),
                    (UnaryOp::Not, ExprType::Scalar(SemType::Boolean)) => Ok(t),
                    (UnaryOp::Neg, ExprType::Scalar(s)) if numeric(s) => Ok(t),
                    (UnaryOp::Not, _) => {
                        Err(mismatch(format!("'not' needs a boolean operand, found {}", describe(&t))))
                    }
                    (UnaryOp::Neg, _) => Err(mismatch(format!("'-' needs a numeric operand, found {}", describe(&t)))),
                }
            }
            Expr::Binary { op, left, right } => {
                let lt = left.check(schema)?;
                let rt = right.check(schema)?;
                let operands = || format!("left operand is {}, right operand is {}", describe(&lt), describe(&rt));
                if *op == BinaryOp::In {
                    return match (&lt, &rt) {
                        (ExprType::List(_), _) => {
                            Err(mismatch(format!("'in' needs a scalar on the left; {}", operands())))
                        }
                        (_, ExprType::List(None)) | (ExprType::Null, ExprType::List(_)) => {
                            Ok(ExprType::Scalar(SemType::Boolean))
                        }
                        (ExprType::Scalar(a), ExprType::List(Some(b))) if comparable(a, b) => {
                            Ok(ExprType::Scalar(SemType::Boolean))
                        }
                        _ => Err(mismatch(format!(
                            "'in' needs a list of comparable literals on the right; {}",
                            operands()
                        ))),
                    };
                }
                if matches!(lt, ExprType::List(_)) || matches!(rt, ExprType::List(_)) {
                    return Err(mismatch(format!(
                        "operator '{}' cannot take a list operand; {}",
                        op.symbol(),
                        operands()
                    )));
                }
                match op {
                    BinaryOp::And | BinaryOp::Or => {
                        let ok = |t: &ExprType| matches!(t, ExprType::Null | ExprType::Scalar(SemType::Boolean));
                        if ok(&lt) && ok(&rt) {
                            Ok(ExprType::Scalar(SemType::Boolean))
                        } else {
                            Err(mismatch(format!("'{}' needs boolean operands; {}", op.symbol(), operands())))
                        }
                    }
                    o if o.is_comparison() => match (&lt, &rt) {
                        (ExprType::Scalar(a), ExprType::Scalar(b)) if !comparable(a, b) => {
                            Err(mismatch(format!("cannot compare; {}", operands())))
                        }
                        _ => Ok(ExprType::Scalar(SemType::Boolean)),
                    },
                    _ => {
                        let num = |t: &ExprType| match t {
                            ExprType::Null => true,
                            ExprType::Scalar(s) => numeric(s),
                            ExprType::List(_) => false,
                        };
                        if !num(&lt) || !num(&rt) {
                            return Err(mismatch(format!("'{}' needs numeric operands; {}", op.symbol(), operands())));
                        }
                        let int = |t: &ExprType| matches!(t, ExprType::Scalar(SemType::Integer));
                        if *op != BinaryOp::Div && int(&lt) && int(&rt) {
                            Ok(ExprType::Scalar(SemType::Integer))
                        } else if lt == ExprType::Null && rt == ExprType::Null {
                            Ok(ExprType::Null)
                        } else {
                            Ok(ExprType::Scalar(SemType::Real))
                        }
                    }
                }
            }
        }
    }

    /// Evaluates against one row laid out per `schema`.
    ///
    /// Null semantics are three-valued: comparisons and arithmetic with a null
    /// operand yield null; `and`/`or` follow Kleene logic. Integer overflow and
    /// division by zero yield null.
    pub fn eval(&self, schema: &Schema, row: &[Value]) -> Result<Value, EvalError> {
        match self {
            Expr::Column(c) => {
                schema.index_of(c).map(|i| row[i].clone()).ok_or_else(|| EvalError::UnknownColumn(c.clone()))
            }
            Expr::Literal(l) => Ok(Value::from_literal(l)),
            Expr::List(_) => Err(EvalError::Invalid(format!("list {self} used as a value"))),
            Expr::Unary { op, expr } => {
                let v = expr.eval(schema, row)?;
                Ok(match (op, v) {
                    (_, Value::Null) => Value::Null,
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (UnaryOp::Neg, Value::Int(i)) => i.checked_neg().map(Value::Int).unwrap_or(Value::Null),
                    (UnaryOp::Neg, Value::Real(r)) => Value::Real(-r),
                    (_, v) => return Err(EvalError::Invalid(format!("bad operand {v:?} for {self}"))),
                })
            }
            Expr::Binary { op: BinaryOp::And, left, right } => {
                let l = left.eval(schema, row)?;
                if l == Value::Bool(false) {
                    return Ok(l);
                }
                let r = right.eval(schema, row)?;
                Ok(match (l, r) {
                    (_, Value::Bool(false)) => Value::Bool(false),
                    (Value::Bool(true), Value::Bool(true)) => Value::Bool(true),
                    _ => Value::Null,
                })
            }
            Expr::Binary { op: BinaryOp::Or, left, right } => {
                let l = left.eval(schema, row)?;
                if l == Value::Bool(true) {
                    return Ok(l);
                }
                let r = right.eval(schema, row)?;
                Ok(match (l, r) {
                    (_, Value::Bool(true)) => Value::Bool(true),
                    (Value::Bool(false), Value::Bool(false)) => Value::Bool(false),
                    _ => Value::Null,
                })
            }
            Expr::Binary { op: BinaryOp::In, left, right } => {
                let l = left.eval(schema, row)?;
                if l.is_null() {
                    return Ok(Value::Null);
                }
                let Expr::List(items) = right.as_ref() else {
                    return Err(EvalError::Invalid(format!("right side of 'in' is not a list in {self}")));
                };
                let mut saw_null = false;
                for item in items {
                    let v = item.eval(schema, row)?;
                    match l.sql_cmp(&v) {
                        Some(std::cmp::Ordering::Equal) => return Ok(Value::Bool(true)),
                        None if v.is_null() => saw_null = true,
                        _ => {}
                    }
                }
                Ok(if saw_null { Value::Null } else { Value::Bool(false) })
            }
            Expr::Binary { op, left, right } => {
                let l = left.eval(schema, row)?;
                let r = right.eval(schema, row)?;
                if l.is_null() || r.is_null() {
                    return Ok(Value::Null);
                }
                if op.is_comparison() {
                    use std::cmp::Ordering::*;
                    let ord = l
                        .sql_cmp(&r)
                        .ok_or_else(|| EvalError::Invalid(format!("cannot compare {l:?} with {r:?} in {self}")))?;
                    let b = match op {
                        BinaryOp::Eq => ord == Equal,
                        BinaryOp::NotEq => ord != Equal,
                        BinaryOp::Lt => ord == Less,
                        BinaryOp::LtEq => ord != Greater,
                        BinaryOp::Gt => ord == Greater,
                        _ => ord != Less,
                    };
                    return Ok(Value::Bool(b));
                }
                arithmetic(*op, &l, &r)
                    .ok_or_else(|| EvalError::Invalid(format!("bad operands {l:?}, {r:?} for {self}")))
            }
        }
    }
}

fn arithmetic(op: BinaryOp, l: &Value, r: &Value) -> Option<Value> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) if op != BinaryOp::Div => {
            let v = match op {
                BinaryOp::Add => a.checked_add(*b),
                BinaryOp::Sub => a.checked_sub(*b),
                _ => a.checked_mul(*b),
            };
            Some(v.map(Value::Int).unwrap_or(Value::Null))
        }
        _ => {
            let a = l.as_f64()?;
            let b = r.as_f64()?;
            let v = match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                _ => {
                    if b == 0.0 {
                        return Some(Value::Null);
                    }
                    a / b
                }
            };
            Some(Value::Real(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("UnknownColumn('{0}')")]
    UnknownColumn(String),
    #[error("{0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::schema::Column;

    fn schema() -> Schema {
        Schema::new(vec![
            Column::new("a", SemType::Integer),
            Column::new("b", SemType::Text),
            Column::new("r", SemType::Real),
        ])
        .unwrap()
    }

    #[test]
    fn parses_with_precedence() {
        let e = Expr::parse("a > 1 and b == 'x' or not a < 3").unwrap();
        assert_eq!(e.to_string(), "(((a > 1) and (b == 'x')) or (not (a < 3)))");
        let e = Expr::parse("a + 2 * 3 - 1").unwrap();
        assert_eq!(e.to_string(), "((a + (2 * 3)) - 1)");
    }

    #[test]
    fn canonical_text_reparses() {
        for src in [
            "`weird name` in ['x', 'it''s']",
            "r >= -1.5e-7",
            "a == 3.0",
            "d == date '2024-02-29'",
            "not (a != 1) and null == a",
            "(- a) * 2 / 4",
        ] {
            let e = Expr::parse(src).unwrap();
            assert_eq!(Expr::parse(&e.to_string()).unwrap(), e, "{src}");
        }
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = Expr::parse("'H' in ").unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(Expr::parse("a == ").is_err());
        assert!(Expr::parse("a < b < c").is_err());
        assert_eq!(Expr::parse("a ? 1").unwrap_err().offset, 2);
    }

    #[test]
    fn empty_list_comparison_is_a_type_error() {
        let e = Expr::parse("a == []").unwrap();
        match e.check(&schema()) {
            Err(TypeError::Mismatch { detail, .. }) => {
                assert!(detail.contains("integer") && detail.contains("empty list"), "{detail}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_column_reported() {
        let e = Expr::parse("h in ['H']").unwrap();
        assert_eq!(e.check(&schema()), Err(TypeError::UnknownColumn("h".into())));
    }

    #[test]
    fn typing_rules() {
        let s = schema();
        let t = |src: &str| Expr::parse(src).unwrap().check(&s);
        assert_eq!(t("a + r"), Ok(ExprType::Scalar(SemType::Real)));
        assert_eq!(t("a * 2"), Ok(ExprType::Scalar(SemType::Integer)));
        assert_eq!(t("a / 2"), Ok(ExprType::Scalar(SemType::Real)));
        assert_eq!(t("a in [1, 2.5]"), Ok(ExprType::Scalar(SemType::Boolean)));
        assert!(t("b + 1").is_err());
        assert!(t("a == 'x'").is_err());
        assert!(t("a and true").is_err());
        assert!(t("b in [1]").is_err());
    }

    #[test]
    fn three_valued_logic() {
        let s = schema();
        let row = vec![Value::Null, Value::Text("x".into()), Value::Real(2.0)];
        let ev = |src: &str| Expr::parse(src).unwrap().eval(&s, &row).unwrap();
        assert_eq!(ev("a > 1"), Value::Null);
        assert_eq!(ev("a > 1 and false"), Value::Bool(false));
        assert_eq!(ev("a > 1 or b == 'x'"), Value::Bool(true));
        assert_eq!(ev("r / 0"), Value::Null);
        assert_eq!(ev("r in [1, 2]"), Value::Bool(true));
        assert_eq!(ev("b in ['y', null]"), Value::Null);
    }
}
