//! Lexer and recursive-descent parser for the match language.
//!
//! The grammar (EBNF in `docs/grammar.md`) binds, tightest first:
//! unary minus, `* / %`, `+ -`, comparisons, `!`, `&&`, `||`.

use std::fmt;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, Func, Scope, UnaryOp};
use super::value::Value;

const MAX_NESTING: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {column} near {token}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    /// The offending token as written, or `end of input`.
    pub token: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(String),
    Real(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Not,
    AndAnd,
    OrOr,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(s) | Tok::Int(s) | Tok::Real(s) => return write!(f, "'{s}'"),
            Tok::Str(s) => return write!(f, "'\"{s}\"'"),
            Tok::Eof => return f.write_str("end of input"),
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Not => "!",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
        };
        write!(f, "'{s}'")
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn error_at(line: usize, column: usize, token: impl Into<String>, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        token: token.into(),
        message: message.into(),
    }
}

fn lex(input: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let (start_line, start_col) = (line, col);
        let peek = chars.get(i + 1).copied();
        let mut push = |tok: Tok, width: usize, i: &mut usize, col: &mut usize| {
            out.push(Token {
                tok,
                line: start_line,
                column: start_col,
            });
            *i += width;
            *col += width;
        };
        match c {
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '.' => push(Tok::Dot, 1, &mut i, &mut col),
            '+' => push(Tok::Plus, 1, &mut i, &mut col),
            '-' => push(Tok::Minus, 1, &mut i, &mut col),
            '*' => push(Tok::Star, 1, &mut i, &mut col),
            '/' => push(Tok::Slash, 1, &mut i, &mut col),
            '%' => push(Tok::Percent, 1, &mut i, &mut col),
            '<' if peek == Some('=') => push(Tok::Le, 2, &mut i, &mut col),
            '<' => push(Tok::Lt, 1, &mut i, &mut col),
            '>' if peek == Some('=') => push(Tok::Ge, 2, &mut i, &mut col),
            '>' => push(Tok::Gt, 1, &mut i, &mut col),
            '=' if peek == Some('=') => push(Tok::EqEq, 2, &mut i, &mut col),
            '!' if peek == Some('=') => push(Tok::Ne, 2, &mut i, &mut col),
            '!' => push(Tok::Not, 1, &mut i, &mut col),
            '&' if peek == Some('&') => push(Tok::AndAnd, 2, &mut i, &mut col),
            '|' if peek == Some('|') => push(Tok::OrOr, 2, &mut i, &mut col),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut width = 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => {
                            return Err(error_at(start_line, start_col, "'\"'", "unterminated string"));
                        }
                        Some('"') => {
                            width += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(j + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                other => {
                                    let shown = other.map(|c| c.to_string()).unwrap_or_default();
                                    return Err(error_at(
                                        line,
                                        col + width,
                                        format!("'\\{shown}'"),
                                        "unknown escape sequence",
                                    ));
                                }
                            };
                            s.push(esc);
                            j += 2;
                            width += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                            width += 1;
                        }
                    }
                }
                push(Tok::Str(s), width, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let mut real = false;
                if chars.get(j) == Some(&'.') && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()) {
                    real = true;
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if matches!(chars.get(j), Some('e') | Some('E')) {
                    let mut k = j + 1;
                    if matches!(chars.get(k), Some('+') | Some('-')) {
                        k += 1;
                    }
                    if chars.get(k).is_some_and(|d| d.is_ascii_digit()) {
                        real = true;
                        j = k;
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let width = j - i;
                push(if real { Tok::Real(text) } else { Tok::Int(text) }, width, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let width = j - i;
                push(Tok::Ident(text), width, &mut i, &mut col);
            }
            other => {
                return Err(error_at(line, col, format!("'{other}'"), "unexpected character"));
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn fail(&self, message: impl Into<String>) -> ParseError {
        let t = &self.tokens[self.pos];
        error_at(t.line, t.column, t.tok.to_string(), message)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            Err(self.fail(format!("expected {what}")))
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.fail("expression nested too deeply"));
        }
        Ok(())
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_and()?;
        while *self.peek() == Tok::OrOr {
            self.advance();
            let rhs = self.parse_and()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_not()?;
        while *self.peek() == Tok::AndAnd {
            self.advance();
            let rhs = self.parse_not()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_not(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            self.advance();
            self.enter()?;
            let operand = self.parse_not()?;
            self.depth -= 1;
            return Ok(Expr::unary(UnaryOp::Not, operand));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_add()?;
        loop {
            let op = match self.peek() {
                Tok::Lt => BinaryOp::Lt,
                Tok::Le => BinaryOp::Le,
                Tok::Gt => BinaryOp::Gt,
                Tok::Ge => BinaryOp::Ge,
                Tok::EqEq => BinaryOp::Eq,
                Tok::Ne => BinaryOp::Ne,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.parse_add()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn parse_add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_mul()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.parse_mul()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn parse_mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                Tok::Percent => BinaryOp::Mod,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.parse_unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() != Tok::Minus {
            return self.parse_primary();
        }
        self.advance();
        // A minus directly before a numeric literal is part of the literal.
        match self.peek().clone() {
            Tok::Int(digits) => {
                let t = self.advance();
                let v: i64 = format!("-{digits}").parse().map_err(|_| {
                    error_at(t.line, t.column, t.tok.to_string(), "integer literal out of range")
                })?;
                Ok(Expr::lit(v))
            }
            Tok::Real(text) => {
                let t = self.advance();
                let v: f64 = format!("-{text}").parse().map_err(|_| {
                    error_at(t.line, t.column, t.tok.to_string(), "malformed real literal")
                })?;
                Ok(Expr::lit(v))
            }
            _ => {
                self.enter()?;
                let operand = self.parse_unary()?;
                self.depth -= 1;
                Ok(Expr::unary(UnaryOp::Neg, operand))
            }
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(digits) => {
                let t = self.advance();
                let v: i64 = digits.parse().map_err(|_| {
                    error_at(t.line, t.column, t.tok.to_string(), "integer literal out of range")
                })?;
                Ok(Expr::lit(v))
            }
            Tok::Real(text) => {
                let t = self.advance();
                let v: f64 = text.parse().map_err(|_| {
                    error_at(t.line, t.column, t.tok.to_string(), "malformed real literal")
                })?;
                Ok(Expr::lit(v))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(Expr::lit(s))
            }
            Tok::LParen => {
                self.advance();
                self.enter()?;
                let inner = self.parse_or()?;
                self.depth -= 1;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(word) => self.parse_word(&word),
            Tok::Eof => Err(self.fail("unexpected end of input")),
            _ => Err(self.fail("expected an operand")),
        }
    }

    fn parse_word(&mut self, word: &str) -> Result<Expr, ParseError> {
        let lower = word.to_ascii_lowercase();
        let next = self.peek_at(1).clone();
        match lower.as_str() {
            "true" => {
                self.advance();
                return Ok(Expr::lit(true));
            }
            "false" => {
                self.advance();
                return Ok(Expr::lit(false));
            }
            "undefined" => {
                self.advance();
                return Ok(Expr::Literal(Value::Undefined));
            }
            "error" => {
                self.advance();
                self.expect(Tok::LParen, "'(' after error")?;
                let msg = match self.peek().clone() {
                    Tok::Str(s) if !s.is_empty() => {
                        self.advance();
                        s
                    }
                    _ => return Err(self.fail("error(...) takes a non-empty string")),
                };
                self.expect(Tok::RParen, "')'")?;
                return Ok(Expr::Literal(Value::Error(msg)));
            }
            "my" | "self" | "target" if next == Tok::Dot => {
                let scope = if lower == "target" { Scope::Target } else { Scope::My };
                self.advance();
                self.advance();
                return match self.peek().clone() {
                    Tok::Ident(name) => {
                        self.advance();
                        Ok(Expr::attr(scope, &name))
                    }
                    _ => Err(self.fail("expected attribute name after scope")),
                };
            }
            _ => {}
        }
        if next == Tok::LParen {
            let Some(func) = Func::from_name(word) else {
                return Err(self.fail(format!("unknown function {word}")));
            };
            let call_tok = self.advance();
            self.advance();
            self.enter()?;
            let mut args = Vec::new();
            if *self.peek() != Tok::RParen {
                loop {
                    args.push(self.parse_or()?);
                    if *self.peek() == Tok::Comma {
                        self.advance();
                        continue;
                    }
                    break;
                }
            }
            self.depth -= 1;
            self.expect(Tok::RParen, "')' or ','")?;
            let (min, max) = func.arity();
            if args.len() < min || max.is_some_and(|m| args.len() > m) {
                return Err(error_at(
                    call_tok.line,
                    call_tok.column,
                    call_tok.tok.to_string(),
                    format!("wrong number of arguments to {}", func.name()),
                ));
            }
            return Ok(Expr::call(func, args));
        }
        self.advance();
        Ok(Expr::attr(Scope::Unscoped, word))
    }
}

/// Parses an expression from text.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let expr = p.parse_or()?;
    if *p.peek() != Tok::Eof {
        return Err(p.fail("unexpected trailing input"));
    }
    Ok(expr)
}
