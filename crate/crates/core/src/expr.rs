//! A small expression grammar for scalar functions of a few variables.
//!
//! Configuration files describe potentials, Grushin weights and growth bounds
//! as text like `x^2 + y^2` or `0.5 + r^2`.  The grammar is deliberately
//! tiny: numeric literals, named variables, `+ - * /`, integer powers `^`,
//! parentheses and unary minus.  Where an expression turns out to be an
//! actual polynomial it is compiled to a flat monomial table so that hot
//! loops (trajectory rollouts, per-node solver precomputation) evaluate it
//! with a few multiply-adds instead of a tree walk.

use crate::{Error, Result};

const MAX_VARS: usize = 4;
const MAX_POLY_TERMS: usize = 512;
const MAX_POW: i64 = 30;

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Num(f64),
    Var(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, u32),
}

/// A parsed scalar expression over a fixed set of variable names.
#[derive(Debug, Clone)]
pub struct Expr {
    ast: Ast,
    vars: Vec<String>,
    source: String,
}

/// A polynomial in expanded monomial form: a sum of `coeff * Π var_i^exp_i`.
#[derive(Debug, Clone)]
pub struct Polynomial {
    terms: Vec<(f64, [u8; MAX_VARS])>,
    nvars: usize,
}

/// A scalar function ready for evaluation, with a fast path for polynomials.
#[derive(Debug, Clone)]
pub enum Scalar {
    Poly(Polynomial),
    Tree(Expr),
}

impl Expr {
    /// Parses `source` over the given variable names.
    pub fn parse(source: &str, vars: &[&str]) -> Result<Expr> {
        if vars.len() > MAX_VARS {
            return Err(Error::Expr(format!(
                "at most {MAX_VARS} variables supported, got {}",
                vars.len()
            )));
        }
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            vars,
        };
        let ast = parser.expression()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in `{source}` at token {}",
                parser.pos
            )));
        }
        Ok(Expr {
            ast,
            vars: vars.iter().map(|s| s.to_string()).collect(),
            source: source.to_string(),
        })
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.vars.len());
        eval_ast(&self.ast, values)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    /// Expands into monomial form, if the expression is a genuine polynomial
    /// (no division by anything non-constant) of manageable size.
    pub fn to_polynomial(&self) -> Option<Polynomial> {
        let terms = expand(&self.ast)?;
        Some(Polynomial {
            terms,
            nvars: self.vars.len(),
        })
    }

    /// Compiles to a [`Scalar`], preferring the monomial fast path.
    pub fn compile(self) -> Scalar {
        match self.to_polynomial() {
            Some(p) => Scalar::Poly(p),
            None => Scalar::Tree(self),
        }
    }
}

impl Polynomial {
    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert!(values.len() >= self.nvars);
        let mut acc = 0.0;
        for (c, exps) in &self.terms {
            let mut term = *c;
            for (v, &e) in values.iter().zip(exps.iter()).take(self.nvars) {
                match e {
                    0 => {}
                    1 => term *= v,
                    2 => term *= v * v,
                    _ => term *= v.powi(e as i32),
                }
            }
            acc += term;
        }
        acc
    }

    /// Coefficients `[a_0, a_1, ...]` when the polynomial is univariate.
    pub fn univariate_coeffs(&self) -> Option<Vec<f64>> {
        if self.nvars > 1 {
            return None;
        }
        let deg = self
            .terms
            .iter()
            .map(|(_, e)| e[0] as usize)
            .max()
            .unwrap_or(0);
        let mut coeffs = vec![0.0; deg + 1];
        for (c, e) in &self.terms {
            coeffs[e[0] as usize] += c;
        }
        Some(coeffs)
    }
}

impl Scalar {
    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Scalar::Poly(p) => p.eval(values),
            Scalar::Tree(e) => e.eval(values),
        }
    }

    pub fn source(&self) -> Option<&str> {
        match self {
            Scalar::Tree(e) => Some(e.source()),
            Scalar::Poly(_) => None,
        }
    }
}

fn eval_ast(ast: &Ast, values: &[f64]) -> f64 {
    match ast {
        Ast::Num(c) => *c,
        Ast::Var(i) => values[*i],
        Ast::Neg(a) => -eval_ast(a, values),
        Ast::Add(a, b) => eval_ast(a, values) + eval_ast(b, values),
        Ast::Sub(a, b) => eval_ast(a, values) - eval_ast(b, values),
        Ast::Mul(a, b) => eval_ast(a, values) * eval_ast(b, values),
        Ast::Div(a, b) => eval_ast(a, values) / eval_ast(b, values),
        Ast::Pow(a, n) => eval_ast(a, values).powi(*n as i32),
    }
}

// --- monomial expansion -------------------------------------------------

type Terms = Vec<(f64, [u8; MAX_VARS])>;

fn expand(ast: &Ast) -> Option<Terms> {
    let terms = match ast {
        Ast::Num(c) => vec![(*c, [0u8; MAX_VARS])],
        Ast::Var(i) => {
            let mut e = [0u8; MAX_VARS];
            e[*i] = 1;
            vec![(1.0, e)]
        }
        Ast::Neg(a) => expand(a)?
            .into_iter()
            .map(|(c, e)| (-c, e))
            .collect(),
        Ast::Add(a, b) => merge(expand(a)?, expand(b)?, 1.0),
        Ast::Sub(a, b) => merge(expand(a)?, expand(b)?, -1.0),
        Ast::Mul(a, b) => multiply(&expand(a)?, &expand(b)?)?,
        Ast::Div(a, b) => {
            let den = expand(b)?;
            // Only division by a constant keeps us polynomial.
            let [(c, e)] = den.as_slice() else { return None };
            if *e != [0u8; MAX_VARS] || *c == 0.0 {
                return None;
            }
            expand(a)?.into_iter().map(|(k, m)| (k / c, m)).collect()
        }
        Ast::Pow(a, n) => {
            let base = expand(a)?;
            let mut acc = vec![(1.0, [0u8; MAX_VARS])];
            for _ in 0..*n {
                acc = multiply(&acc, &base)?;
            }
            acc
        }
    };
    (terms.len() <= MAX_POLY_TERMS).then_some(terms)
}

fn merge(mut a: Terms, b: Terms, sign: f64) -> Terms {
    for (c, e) in b {
        match a.iter_mut().find(|(_, ea)| *ea == e) {
            Some((ca, _)) => *ca += sign * c,
            None => a.push((sign * c, e)),
        }
    }
    // An empty term list is the zero polynomial and evaluates to 0.0.
    a.retain(|(c, _)| *c != 0.0);
    a
}

fn multiply(a: &Terms, b: &Terms) -> Option<Terms> {
    let mut out: Terms = Vec::with_capacity(a.len() * b.len());
    for (ca, ea) in a {
        for (cb, eb) in b {
            let mut e = [0u8; MAX_VARS];
            for k in 0..MAX_VARS {
                let s = ea[k] as u16 + eb[k] as u16;
                if s > u8::MAX as u16 {
                    return None;
                }
                e[k] = s as u8;
            }
            match out.iter_mut().find(|(_, eo)| *eo == e) {
                Some((co, _)) => *co += ca * cb,
                None => out.push((ca * cb, e)),
            }
        }
    }
    (out.len() <= MAX_POLY_TERMS).then_some(out)
}

// --- lexer / parser -----------------------------------------------------

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

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '^' => {
                tokens.push(Token::Caret);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len() {
                    let ch = bytes[i] as char;
                    if ch.is_ascii_digit() || ch == '.' {
                        i += 1;
                    } else if (ch == 'e' || ch == 'E')
                        && i + 1 < bytes.len()
                        && {
                            let nx = bytes[i + 1] as char;
                            nx.is_ascii_digit() || nx == '+' || nx == '-'
                        }
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Error::Expr(format!("bad numeric literal `{text}`")))?;
                tokens.push(Token::Num(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let ch = bytes[i] as char;
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::Expr(format!(
                    "unexpected character `{other}` in `{src}`"
                )))
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expression(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Plus => {
                    self.bump();
                    lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.bump();
                    lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.factor()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Star => {
                    self.bump();
                    lhs = Ast::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Token::Slash => {
                    self.bump();
                    lhs = Ast::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Ast> {
        if let Some(Token::Minus) = self.peek() {
            self.bump();
            return Ok(Ast::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.bump();
            let exp = self.exponent()?;
            return Ok(Ast::Pow(Box::new(base), exp));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32> {
        match self.bump() {
            Some(Token::Num(n)) => {
                if n.fract() == 0.0 && (0.0..=MAX_POW as f64).contains(&n) {
                    Ok(n as u32)
                } else {
                    Err(Error::Expr(format!(
                        "exponent must be an integer in 0..={MAX_POW}, got {n}"
                    )))
                }
            }
            other => Err(Error::Expr(format!(
                "expected integer exponent after `^`, got {other:?}"
            ))),
        }
    }

    fn atom(&mut self) -> Result<Ast> {
        match self.bump() {
            Some(Token::Num(n)) => Ok(Ast::Num(n)),
            Some(Token::Ident(name)) => match self.vars.iter().position(|v| *v == name) {
                Some(i) => Ok(Ast::Var(i)),
                None => Err(Error::Expr(format!(
                    "unknown variable `{name}` (expected one of {:?})",
                    self.vars
                ))),
            },
            Some(Token::LParen) => {
                let inner = self.expression()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    other => Err(Error::Expr(format!("expected `)`, got {other:?}"))),
                }
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}
