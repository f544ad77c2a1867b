//! Recursive-descent parser for Diophantine equations.
//!
//! ```text
//! equation := expr ('=' expr)?
//! expr     := term (('+'|'-') term)*
//! term     := factor ('*'? factor)*
//! factor   := ('+'|'-') factor | primary ('^' INT)?
//! primary  := INT | VAR | '(' expr ')'
//! VAR      := [a-z][a-z0-9]*
//! INT      := [0-9]+
//! ```
//!
//! An identifier of several letters is a product of single-letter atoms and
//! only accepted when one of those atoms is a declared constant (`cxyz` with
//! `c` bound); digits attach to the preceding letter, so `x1` is one variable.
//!
//! Everything is expanded while parsing, so the result is already canonical.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::One;

use super::Polynomial;

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Named integer constants substituted for identifiers.
    pub constants: BTreeMap<String, BigInt>,
    pub max_vars: usize,
    pub max_degree: u32,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { constants: BTreeMap::new(), max_vars: 16, max_degree: 20 }
    }
}

impl ParseOptions {
    pub fn with_constant(mut self, name: &str, value: i64) -> Self {
        self.constants.insert(name.to_string(), BigInt::from(value));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    NonIntegerLiteral(String),
    TooManyVariables(usize),
    DegreeTooHigh(u32),
    ExponentTooLarge(String),
    AmbiguousIdentifier(String),
}

/// Parse failure with the 0-based character column it occurred at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => format!("unknown operator or character '{c}'"),
            ParseErrorKind::UnexpectedToken(t) => format!("unexpected '{t}'"),
            ParseErrorKind::UnexpectedEnd => "unexpected end of input".to_string(),
            ParseErrorKind::NonIntegerLiteral(s) => format!("non-integer literal '{s}'"),
            ParseErrorKind::TooManyVariables(cap) => format!("more than {cap} variables"),
            ParseErrorKind::DegreeTooHigh(cap) => format!("total degree exceeds the cap of {cap}"),
            ParseErrorKind::ExponentTooLarge(s) => format!("exponent '{s}' too large"),
            ParseErrorKind::AmbiguousIdentifier(s) => {
                format!("'{s}' juxtaposes several letters; bind a constant with --const or write the factors with '*'")
            }
        };
        write!(f, "syntax error at column {}: {}", self.position + 1, msg)
    }
}

/// Renders the source with a caret under the error column.
pub fn annotate(text: &str, err: &ParseError) -> String {
    format!("{text}\n{}^\n{err}", " ".repeat(err.position))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    Eq,
}

impl Tok {
    fn text(&self) -> String {
        match self {
            Tok::Int(s) | Tok::Ident(s) => s.clone(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::Caret => "^".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Eq => "=".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '0'..='9' => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                // 1.5, 2e3 and friends are rejected rather than truncated
                if i < chars.len() && (chars[i] == '.' || chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '.') {
                        j += 1;
                    }
                    let lit: String = chars[start..j].iter().collect();
                    return Err(ParseError { kind: ParseErrorKind::NonIntegerLiteral(lit), position: start });
                }
                out.push((Tok::Int(chars[start..i].iter().collect()), start));
                continue;
            }
            'a'..='z' => {
                while i < chars.len() && (chars[i].is_ascii_lowercase() || chars[i].is_ascii_digit()) {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            '.' => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let lit: String = chars[start..j].iter().collect();
                return Err(ParseError { kind: ParseErrorKind::NonIntegerLiteral(lit), position: start });
            }
            '+' => out.push((Tok::Plus, i)),
            '-' => out.push((Tok::Minus, i)),
            '*' => out.push((Tok::Star, i)),
            '^' => out.push((Tok::Caret, i)),
            '(' => out.push((Tok::LParen, i)),
            ')' => out.push((Tok::RParen, i)),
            '=' => out.push((Tok::Eq, i)),
            other => {
                return Err(ParseError { kind: ParseErrorKind::UnexpectedChar(other), position: i });
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Working representation: exponent vectors grow as variables appear.
#[derive(Clone, Default)]
struct Expr {
    terms: BTreeMap<Vec<u32>, BigInt>,
}

impl Expr {
    fn constant(c: BigInt) -> Self {
        let mut terms = BTreeMap::new();
        if c != BigInt::from(0) {
            terms.insert(Vec::new(), c);
        }
        Self { terms }
    }

    fn var(index: usize) -> Self {
        let mut e = vec![0; index + 1];
        e[index] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(e, BigInt::one());
        Self { terms }
    }

    fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    fn add(mut self, other: Expr, sign: i32) -> Expr {
        for (e, c) in other.terms {
            let e = trim(e);
            let entry = self.terms.entry(e).or_default();
            if sign >= 0 {
                *entry += c;
            } else {
                *entry -= c;
            }
        }
        self.terms.retain(|_, c| *c != BigInt::from(0));
        self
    }

    fn neg(self) -> Expr {
        Expr::default().add(self, -1)
    }

    fn mul(&self, other: &Expr) -> Expr {
        let mut out: BTreeMap<Vec<u32>, BigInt> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let n = ea.len().max(eb.len());
                let e: Vec<u32> = (0..n)
                    .map(|i| ea.get(i).copied().unwrap_or(0) + eb.get(i).copied().unwrap_or(0))
                    .collect();
                *out.entry(trim(e)).or_default() += ca * cb;
            }
        }
        out.retain(|_, c| *c != BigInt::from(0));
        Expr { terms: out }
    }
}

fn trim(mut e: Vec<u32>) -> Vec<u32> {
    while e.last() == Some(&0) {
        e.pop();
    }
    e
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    vars: Vec<String>,
    opts: &'a ParseOptions,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { kind, position: self.here() }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(t.text())),
            None => self.err(ParseErrorKind::UnexpectedEnd),
        }
    }

    fn check_degree(&self, e: &Expr, at: usize) -> Result<(), ParseError> {
        if e.degree() > self.opts.max_degree {
            return Err(ParseError { kind: ParseErrorKind::DegreeTooHigh(self.opts.max_degree), position: at });
        }
        Ok(())
    }

    fn equation(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.expr()?;
        if self.peek() == Some(&Tok::Eq) {
            self.pos += 1;
            let rhs = self.expr()?;
            let out = lhs.add(rhs, -1);
            if self.pos < self.toks.len() {
                return Err(self.unexpected());
            }
            return Ok(out);
        }
        if self.pos < self.toks.len() {
            return Err(self.unexpected());
        }
        Ok(lhs)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            let sign = match self.peek() {
                Some(Tok::Plus) => 1,
                Some(Tok::Minus) => -1,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.term()?;
            acc = acc.add(rhs, sign);
        }
    }

    fn starts_factor(&self) -> bool {
        matches!(self.peek(), Some(Tok::Int(_) | Tok::Ident(_) | Tok::LParen))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        let mut acc = self.factor()?;
        loop {
            if self.peek() == Some(&Tok::Star) {
                self.pos += 1;
            } else if !self.starts_factor() {
                return Ok(acc);
            }
            let rhs = self.factor()?;
            acc = acc.mul(&rhs);
            self.check_degree(&acc, start)?;
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(self.factor()?.neg())
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.factor()
            }
            _ => {
                let start = self.here();
                let base = self.primary()?;
                if self.peek() == Some(&Tok::Caret) {
                    self.pos += 1;
                    let exp_pos = self.here();
                    let exp = match self.peek() {
                        Some(Tok::Int(s)) => s.clone(),
                        _ => return Err(self.unexpected()),
                    };
                    self.pos += 1;
                    let n = exp
                        .parse::<u32>()
                        .ok()
                        .filter(|&n| n <= 4 * self.opts.max_degree.max(1))
                        .ok_or(ParseError { kind: ParseErrorKind::ExponentTooLarge(exp.clone()), position: exp_pos })?;
                    if u64::from(base.degree()) * u64::from(n) > u64::from(self.opts.max_degree) {
                        return Err(ParseError {
                            kind: ParseErrorKind::DegreeTooHigh(self.opts.max_degree),
                            position: start,
                        });
                    }
                    let mut out = Expr::constant(BigInt::one());
                    for _ in 0..n {
                        out = out.mul(&base);
                    }
                    return Ok(out);
                }
                Ok(base)
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Int(s)) => {
                self.pos += 1;
                let v: BigInt = s.parse().expect("digits only");
                Ok(Expr::constant(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                self.identifier(&name, at)
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => Err(self.unexpected()),
        }
    }

    /// A declared constant, a product of single-letter atoms when one of the
    /// atoms is a declared constant (`cxyz` with `c` bound), or a variable.
    fn identifier(&mut self, name: &str, at: usize) -> Result<Expr, ParseError> {
        if let Some(v) = self.opts.constants.get(name) {
            return Ok(Expr::constant(v.clone()));
        }
        let atoms = split_atoms(name);
        if atoms.len() > 1 && atoms.iter().any(|a| self.opts.constants.contains_key(a)) {
            let mut acc = Expr::constant(BigInt::one());
            for a in atoms {
                let f = match self.opts.constants.get(&a) {
                    Some(v) => Expr::constant(v.clone()),
                    None => self.variable(&a, at)?,
                };
                acc = acc.mul(&f);
            }
            self.check_degree(&acc, at)?;
            return Ok(acc);
        }
        if atoms.len() > 1 {
            return Err(ParseError { kind: ParseErrorKind::AmbiguousIdentifier(name.to_string()), position: at });
        }
        self.variable(name, at)
    }

    fn variable(&mut self, name: &str, at: usize) -> Result<Expr, ParseError> {
        let idx = match self.vars.iter().position(|v| v == name) {
            Some(i) => i,
            None => {
                if self.vars.len() >= self.opts.max_vars {
                    return Err(ParseError { kind: ParseErrorKind::TooManyVariables(self.opts.max_vars), position: at });
                }
                self.vars.push(name.to_string());
                self.vars.len() - 1
            }
        };
        Ok(Expr::var(idx))
    }
}

fn split_atoms(name: &str) -> Vec<String> {
    let mut atoms: Vec<String> = Vec::new();
    for c in name.chars() {
        if c.is_ascii_digit() {
            if let Some(last) = atoms.last_mut() {
                last.push(c);
            }
        } else {
            atoms.push(c.to_string());
        }
    }
    atoms
}

/// Parses `text` into canonical sparse form.
pub fn parse_equation(text: &str, opts: &ParseOptions) -> Result<Polynomial, ParseError> {
    let toks = tokenize(text)?;
    let end = text.chars().count();
    if toks.is_empty() {
        return Err(ParseError { kind: ParseErrorKind::UnexpectedEnd, position: end });
    }
    let mut parser = Parser { toks, pos: 0, end, vars: Vec::new(), opts };
    let expr = parser.equation()?;
    let k = parser.vars.len();
    let terms = expr.terms.into_iter().map(|(mut e, c)| {
        e.resize(k, 0);
        (e, c)
    });
    Ok(Polynomial::from_terms(parser.vars, terms).expect("exponents padded to K"))
}

/// Reads `name=VALUE` bindings as given on the command line.
pub fn parse_constant_binding(s: &str) -> Result<(String, BigInt), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let name = name.trim();
    if name.is_empty() || !name.chars().next().unwrap().is_ascii_lowercase() || !name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
        return Err(format!("invalid constant name '{name}'"));
    }
    let v: BigInt = value.trim().parse().map_err(|_| format!("constant '{name}' must be an integer, got '{value}'"))?;
    Ok((name.to_string(), v))
}
