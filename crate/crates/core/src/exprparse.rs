//! Parser for fractional-power vector fields and problem files.
//!
//! Grammar (whitespace-insensitive, implicit multiplication rejected):
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := ('-' | '+') unary | power
//! power    := atom ('^' exponent)?
//! exponent := '-'? NUMBER | '(' '-'? NUMBER ('/' '-'? NUMBER)? ')'
//! atom     := NUMBER | IDENT | ('sign' | 'abs') '(' expr ')' | '(' expr ')'
//! ```
//!
//! `x^(a/b)` with odd `b` is the real odd root `sign(x)^a |x|^(a/b)`; an even
//! `b` is only accepted on nonnegative bases such as `abs(x)`.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Deserialize;

use crate::error::{Error, ParseError, Result};
use crate::polyalg::{Coeff, Polynomial, RationalExp, SignedPowerExpr, SignedPowerTerm};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigRational),
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

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> std::result::Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // Optional exponent: 1e-4, 2.5E3
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
            let lit: String = chars[start..i].iter().collect();
            let value = parse_decimal(&lit).ok_or_else(|| ParseError {
                line: tl,
                column: tc,
                message: format!("malformed number {lit:?}"),
            })?;
            col += i - start;
            out.push(Token {
                tok: Tok::Num(value),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                column: tc,
            });
            continue;
        }
        return Err(ParseError {
            line: tl,
            column: tc,
            message: format!("unexpected character {c:?}"),
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

/// Exact value of a decimal literal such as `7.10` or `1e-4`.
pub fn parse_decimal(lit: &str) -> Option<BigRational> {
    let (mantissa, exp) = match lit.find(['e', 'E']) {
        Some(k) => (&lit[..k], lit[k + 1..].parse::<i32>().ok()?),
        None => (lit, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if frac_part.contains('.') {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let n: BigInt = digits.parse().ok()?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    Some(if scale >= 0 {
        BigRational::from_integer(n * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(n, num_traits::pow(ten, (-scale) as usize))
    })
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    states: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, at: &Token, message: impl Into<String>) -> std::result::Result<T, ParseError> {
        Err(ParseError {
            line: at.line,
            column: at.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> std::result::Result<Token, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            self.err(&t, format!("expected {what}, found {}", describe(&t.tok)))
        }
    }

    fn nvars(&self) -> usize {
        self.states.len()
    }

    fn expr(&mut self) -> std::result::Result<SignedPowerExpr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    acc = &acc + &self.term()?;
                }
                Tok::Minus => {
                    self.next();
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> std::result::Result<SignedPowerExpr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.next();
                    acc = &acc * &self.unary()?;
                }
                Tok::Slash => {
                    let at = self.next();
                    let rhs = self.unary()?;
                    let inv = match power(&rhs, RationalExp::integer(-1)) {
                        Ok(inv) => inv,
                        Err(m) => return self.err(&at, format!("cannot divide: {m}")),
                    };
                    acc = &acc * &inv;
                }
                Tok::Num(_) | Tok::Ident(_) | Tok::LParen => {
                    let at = self.peek().clone();
                    return self.err(&at, "implicit multiplication is not allowed; write '*'");
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> std::result::Result<SignedPowerExpr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.next();
                Ok(-&self.unary()?)
            }
            Tok::Plus => {
                self.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> std::result::Result<SignedPowerExpr, ParseError> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        let at = self.next();
        let r = self.exponent()?;
        match power(&base, r) {
            Ok(v) => Ok(v),
            Err(m) => self.err(&at, m),
        }
    }

    fn exponent(&mut self) -> std::result::Result<RationalExp, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::LParen => {
                self.next();
                let num = self.signed_literal()?;
                let value = if self.peek().tok == Tok::Slash {
                    self.next();
                    let den = self.signed_literal()?;
                    if den.is_zero() {
                        return self.err(&t, "zero denominator in exponent");
                    }
                    num / den
                } else {
                    num
                };
                self.expect(Tok::RParen, "')'")?;
                to_exp(&value).map_or_else(|| self.err(&t, "exponent out of range"), Ok)
            }
            Tok::Minus | Tok::Num(_) => {
                let v = self.signed_literal()?;
                to_exp(&v).map_or_else(|| self.err(&t, "exponent out of range"), Ok)
            }
            _ => self.err(
                &t,
                format!(
                    "exponent must be a rational literal, found {}",
                    describe(&t.tok)
                ),
            ),
        }
    }

    fn signed_literal(&mut self) -> std::result::Result<BigRational, ParseError> {
        let neg = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        match &t.tok {
            Tok::Num(v) => Ok(if neg { -v.clone() } else { v.clone() }),
            other => self.err(
                &t,
                format!(
                    "exponent must be a rational literal, found {}",
                    describe(other)
                ),
            ),
        }
    }

    fn atom(&mut self) -> std::result::Result<SignedPowerExpr, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v) => Ok(SignedPowerExpr::constant(self.nvars(), v.clone())),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "sign" || name == "abs" => {
                self.expect(Tok::LParen, "'(' after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                let res = if name == "sign" {
                    sign_of(&arg)
                } else {
                    abs_of(&arg)
                };
                res.map_or_else(|m| self.err(&t, m), Ok)
            }
            Tok::Ident(name) => match self.states.iter().position(|s| s == name) {
                Some(i) => {
                    if self.peek().tok == Tok::LParen {
                        return self.err(&t, format!("{name} is a state, not a function"));
                    }
                    Ok(SignedPowerExpr::var(self.nvars(), i))
                }
                None if self.peek().tok == Tok::LParen => {
                    self.err(&t, format!("unknown function {name:?}"))
                }
                None => self.err(&t, format!("unknown identifier {name:?}")),
            },
            other => self.err(&t, format!("unexpected {}", describe(other))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier {s:?}"),
        Tok::Plus => "'+'".into(),
        Tok::Minus => "'-'".into(),
        Tok::Star => "'*'".into(),
        Tok::Slash => "'/'".into(),
        Tok::Caret => "'^'".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::End => "end of input".into(),
    }
}

fn to_exp(v: &BigRational) -> Option<RationalExp> {
    let n = v.numer().to_i64()?;
    let d = v.denom().to_i64()?;
    Some(RationalExp::new(n, d))
}

/// Exact `c^r` for a rational `c`, when it exists.
fn rational_power(c: &Coeff, r: RationalExp) -> Option<Coeff> {
    if c.is_zero() {
        return (!r.is_negative() && !r.is_zero()).then(Coeff::zero);
    }
    let (a, b) = (r.numer(), r.denom() as u32);
    let neg = c.is_negative();
    if neg && b % 2 == 0 {
        return None;
    }
    let mag = c.abs();
    let root = |n: &BigInt| -> Option<BigInt> {
        let k = n.nth_root(b);
        (num_traits::pow(k.clone(), b as usize) == *n).then_some(k)
    };
    let base = BigRational::new(root(mag.numer())?, root(mag.denom())?);
    let powed = if a >= 0 {
        num_traits::pow(base, a as usize)
    } else {
        num_traits::pow(base.recip(), (-a) as usize)
    };
    Some(if neg && a.rem_euclid(2) == 1 {
        -powed
    } else {
        powed
    })
}

/// Raises an expression to a rational power. Integer powers of sums
/// expand; anything else needs a single term.
pub fn power(base: &SignedPowerExpr, r: RationalExp) -> std::result::Result<SignedPowerExpr, String> {
    let n = base.nvars();
    if r.is_integer() && !r.is_negative() {
        let k = r.numer();
        return Ok((0..k).fold(SignedPowerExpr::constant(n, Coeff::one()), |acc, _| &acc * base));
    }
    let t = base
        .single_term()
        .ok_or_else(|| "only a single term can be raised to a fractional or negative power".to_string())?;
    let coeff = rational_power(&t.coeff, r)
        .ok_or_else(|| format!("coefficient {} has no exact power {r}", t.coeff))?;
    let mut sigma = Vec::with_capacity(n);
    let mut exps = Vec::with_capacity(n);
    for (s, e) in t.sigma.iter().zip(&t.exps) {
        if *s == 1 && r.denom() % 2 == 0 {
            return Err(format!(
                "even root (power {r}) of a signed quantity; wrap the base in abs(...)"
            ));
        }
        sigma.push(((*s as i64) * r.numer()).rem_euclid(2) as u8);
        exps.push(*e * r);
    }
    Ok(SignedPowerExpr::from_terms(
        n,
        [SignedPowerTerm {
            coeff,
            sigma,
            exps,
        }],
    ))
}

fn sign_of(e: &SignedPowerExpr) -> std::result::Result<SignedPowerExpr, String> {
    if e.is_zero() {
        return Ok(e.clone());
    }
    let t = e
        .single_term()
        .ok_or_else(|| "sign(...) of a sum is not representable".to_string())?;
    let coeff = if t.coeff.is_negative() {
        -Coeff::one()
    } else {
        Coeff::one()
    };
    let zero = vec![RationalExp::ZERO; e.nvars()];
    Ok(SignedPowerExpr::from_terms(
        e.nvars(),
        [SignedPowerTerm {
            coeff,
            sigma: t.sigma,
            exps: zero,
        }],
    ))
}

fn abs_of(e: &SignedPowerExpr) -> std::result::Result<SignedPowerExpr, String> {
    if e.is_zero() {
        return Ok(e.clone());
    }
    let t = e
        .single_term()
        .ok_or_else(|| "abs(...) of a sum is not representable".to_string())?;
    Ok(SignedPowerExpr::from_terms(
        e.nvars(),
        [SignedPowerTerm {
            coeff: t.coeff.abs(),
            sigma: vec![0; e.nvars()],
            exps: t.exps,
        }],
    ))
}

/// Parses one expression over the given state names.
pub fn parse_expression(text: &str, states: &[String]) -> Result<SignedPowerExpr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        states,
    };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return p.err(&t, format!("unexpected {}", describe(&t.tok)));
    }
    Ok(e)
}

/// Parses an expression that must be a polynomial.
pub fn parse_polynomial(text: &str, states: &[String]) -> Result<Polynomial> {
    let e = parse_expression(text, states)?;
    e.to_polynomial()
        .ok_or_else(|| Error::NotPolynomial(format!("{text:?} uses sign, abs or fractional powers")))
}

// ---------------------------------------------------------------------------
// Problem files
// ---------------------------------------------------------------------------

/// Tunables of a certification run. Unset entries fall back to the
/// documented defaults in [`ProblemSpec::resolved`].
#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub q: Option<Vec<u32>>,
    pub lambda: Option<Vec<u32>>,
    pub p: u32,
    pub d: u32,
    pub tau: u32,
    pub k: f64,
    pub epsilon: f64,
    pub mu_bracket: (f64, f64),
    pub deg_v: u32,
    /// Polynomial degree of every SoS multiplier; `None` picks it per slot.
    pub deg_mult: Option<u32>,
    pub lambda_cap: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub state_names: Vec<String>,
    pub f: Vec<SignedPowerExpr>,
    /// Inequalities `g_i(x) >= 0` describing the region.
    pub omega_ineqs: Vec<Polynomial>,
    pub options: Options,
}

impl ProblemSpec {
    pub fn nvars(&self) -> usize {
        self.state_names.len()
    }

    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.nvars();
        let o = &self.options;
        if n == 0 {
            return Err(Error::InvalidProblem("no states declared".into()));
        }
        if self.f.len() != n {
            return Err(Error::InvalidProblem(format!(
                "vector field has {} components but {} states are declared",
                self.f.len(),
                n
            )));
        }
        if let Some(q) = &o.q {
            if q.len() != n || q.contains(&0) {
                return Err(Error::Parameter(format!(
                    "q must hold {n} positive integers, got {q:?}"
                )));
            }
        }
        if let Some(l) = &o.lambda {
            if l.len() != n {
                return Err(Error::Parameter(format!(
                    "lambda must hold {n} integers, got {l:?}"
                )));
            }
        }
        if o.p == 0 || o.d == 0 || o.tau == 0 {
            return Err(Error::Parameter("p, d and tau must be positive".into()));
        }
        if !(o.k > 0.0 && o.k.is_finite()) {
            return Err(Error::Parameter(format!("k must be positive, got {}", o.k)));
        }
        if !(o.epsilon > 0.0 && o.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                o.epsilon
            )));
        }
        let (lo, hi) = o.mu_bracket;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Parameter(format!(
                "mu bracket must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
            )));
        }
        if o.deg_v < 2 {
            return Err(Error::Parameter("deg V must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    system: Option<RawSystem>,
    domain: Option<RawDomain>,
    params: Option<RawParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    states: Vec<String>,
    f: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    g: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    q: Option<Vec<u32>>,
    lambda: Option<Vec<u32>>,
    p: Option<u32>,
    d: Option<u32>,
    tau: Option<u32>,
    k: Option<f64>,
    epsilon: Option<f64>,
    mu_bracket: Option<[f64; 2]>,
    deg_v: Option<u32>,
    deg_mult: Option<u32>,
    lambda_cap: Option<u32>,
}

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_MU_BRACKET: (f64, f64) = (0.0, 100.0);
pub const DEFAULT_K: f64 = 1.0;
pub const DEFAULT_LAMBDA_CAP: u32 = 8;

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn locate(text: &str, needle: &str) -> (usize, usize) {
    text.find(needle).map_or((1, 1), |off| line_col(text, off))
}

/// Parses and validates a problem file (TOML syntax).
pub fn parse_problem(contents: &str) -> Result<ProblemSpec> {
    let raw: RawProblem = toml::from_str(contents).map_err(|e| {
        let (line, column) = e
            .span()
            .map_or((1, 1), |s| line_col(contents, s.start));
        Error::Parse(ParseError {
            line,
            column,
            message: e.message().to_string(),
        })
    })?;
    let system = raw
        .system
        .ok_or_else(|| Error::InvalidProblem("missing [system] section".into()))?;
    let domain = raw
        .domain
        .ok_or_else(|| Error::InvalidProblem("missing [domain] section".into()))?;
    let params = raw
        .params
        .ok_or_else(|| Error::InvalidProblem("missing [params] section".into()))?;

    let mut seen = BTreeSet::new();
    for s in &system.states {
        let valid = s
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_')
            && s.chars().all(|c| c.is_alphanumeric() || c == '_');
        if !valid || s == "sign" || s == "abs" {
            return Err(Error::InvalidProblem(format!("invalid state name {s:?}")));
        }
        if !seen.insert(s.clone()) {
            return Err(Error::InvalidProblem(format!("duplicate state name {s:?}")));
        }
    }
    let states = system.states;

    // Expression errors are reported relative to the expression, with the
    // field location attached.
    let in_field = |field: String, src: &str, e: ParseError| {
        let (line, column) = locate(contents, src);
        Error::Parse(ParseError {
            line: line + e.line - 1,
            column: if e.line == 1 { column + e.column } else { e.column },
            message: format!("in {field}: {}", e.message),
        })
    };
    let f = system
        .f
        .iter()
        .enumerate()
        .map(|(i, s)| parse_expression(s, &states).map_err(|e| in_field(format!("system.f[{i}]"), s, e)))
        .collect::<Result<Vec<_>>>()?;
    let omega_ineqs = domain
        .g
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let e = parse_expression(s, &states).map_err(|e| in_field(format!("domain.g[{i}]"), s, e))?;
            e.to_polynomial().ok_or_else(|| {
                Error::InvalidProblem(format!(
                    "domain.g[{i}] = {s:?} is not a polynomial; region constraints must be polynomial"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let p = params
        .p
        .ok_or_else(|| Error::InvalidProblem("missing params.p".into()))?;
    let d = params
        .d
        .ok_or_else(|| Error::InvalidProblem("missing params.d".into()))?;
    let deg_v = params.deg_v.unwrap_or(2 * d);
    let options = Options {
        q: params.q,
        lambda: params.lambda,
        p,
        d,
        tau: params.tau.unwrap_or(deg_v.div_ceil(2)),
        k: params.k.unwrap_or(DEFAULT_K),
        epsilon: params.epsilon.unwrap_or(DEFAULT_EPSILON),
        mu_bracket: params
            .mu_bracket
            .map_or(DEFAULT_MU_BRACKET, |[lo, hi]| (lo, hi)),
        deg_v,
        deg_mult: params.deg_mult,
        lambda_cap: params.lambda_cap.unwrap_or(DEFAULT_LAMBDA_CAP),
    };
    let spec = ProblemSpec {
        state_names: states,
        f,
        omega_ineqs,
        options,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{coeff_int, coeff_ratio};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn scalar_field() {
        let e = parse_expression("-sign(x)*abs(x)^(2/3)", &names(&["x"])).unwrap();
        let t = e.single_term().unwrap();
        assert_eq!(t.coeff, coeff_int(-1));
        assert_eq!(t.sigma, vec![1]);
        assert_eq!(t.exps, vec![RationalExp::new(2, 3)]);
    }

    #[test]
    fn odd_root_is_signed() {
        let e = parse_expression("x2^(1/3)", &names(&["x1", "x2"])).unwrap();
        let t = e.single_term().unwrap();
        assert_eq!(t.sigma, vec![0, 1]);
        assert_eq!(t.exps, vec![RationalExp::ZERO, RationalExp::new(1, 3)]);
        assert!((e.eval(&[0.0, -8.0]) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn even_root_of_signed_rejected() {
        let err = parse_expression("x^(1/2)", &names(&["x"])).unwrap_err();
        assert!(err.message.contains("even root"), "{err}");
        assert_eq!((err.line, err.column), (1, 2));
        assert!(parse_expression("abs(x)^(1/2)", &names(&["x"])).is_ok());
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_expression("x + y", &names(&["x"])).unwrap_err();
        assert_eq!((err.line, err.column), (1, 5));
        let err = parse_expression("2x", &names(&["x"])).unwrap_err();
        assert!(err.message.contains("implicit"));
        let err = parse_expression("x^y", &names(&["x", "y"])).unwrap_err();
        assert!(err.message.contains("rational literal"));
        let err = parse_expression("sin(x)", &names(&["x"])).unwrap_err();
        assert!(err.message.contains("unknown function"));
        let err = parse_expression("(x + 1", &names(&["x"])).unwrap_err();
        assert_eq!(err.column, 7);
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(parse_decimal("7.10").unwrap(), coeff_ratio(71, 10));
        assert_eq!(parse_decimal("1e-4").unwrap(), coeff_ratio(1, 10000));
        assert_eq!(parse_decimal("2.5E1").unwrap(), coeff_int(25));
    }

    #[test]
    fn division_by_variable_power() {
        let e = parse_expression("-1/3/x2", &names(&["x1", "x2"])).unwrap();
        let t = e.single_term().unwrap();
        assert_eq!(t.coeff, coeff_ratio(-1, 3));
        assert_eq!(t.sigma, vec![0, 1]);
        assert_eq!(t.exps, vec![RationalExp::ZERO, RationalExp::integer(-1)]);
        assert!(parse_expression("1/(x1+x2)", &names(&["x1", "x2"])).is_err());
    }

    #[test]
    fn polynomial_domain() {
        let g = parse_polynomial("3 - x1^2 - x2^2", &names(&["x1", "x2"])).unwrap();
        assert_eq!(g.coeff(&[0, 0]), coeff_int(3));
        assert!(parse_polynomial("1 - abs(x)", &names(&["x"])).is_err());
    }

    #[test]
    fn problem_with_wrong_dimension() {
        let text = r#"
[system]
states = ["x"]
f = ["-x", "-x"]
[domain]
g = ["1 - x^2"]
[params]
p = 2
d = 2
"#;
        assert!(matches!(parse_problem(text), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn problem_missing_section() {
        let text = "[system]\nstates = [\"x\"]\nf = [\"-x\"]\n[params]\np = 2\nd = 2\n";
        let err = parse_problem(text).unwrap_err();
        assert!(err.to_string().contains("[domain]"));
    }

    #[test]
    fn problem_nonpolynomial_domain() {
        let text = "[system]\nstates = [\"x\"]\nf = [\"-x\"]\n[domain]\ng = [\"1 - abs(x)\"]\n[params]\np = 2\nd = 2\n";
        assert!(matches!(parse_problem(text), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn problem_expression_error_located() {
        let text = "[system]\nstates = [\"x\"]\nf = [\"-x^(1/2)\"]\n[domain]\ng = [\"1 - x^2\"]\n[params]\np = 2\nd = 2\n";
        match parse_problem(text) {
            Err(Error::Parse(e)) => {
                assert_eq!(e.line, 3);
                assert!(e.message.contains("system.f[0]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_filled() {
        let text = "[system]\nstates = [\"x\"]\nf = [\"-x\"]\n[domain]\ng = [\"1 - x^2\"]\n[params]\np = 2\nd = 2\n";
        let spec = parse_problem(text).unwrap();
        assert_eq!(spec.options.deg_v, 4);
        assert_eq!(spec.options.tau, 2);
        assert_eq!(spec.options.epsilon, 1e-4);
        assert_eq!(spec.options.mu_bracket, (0.0, 100.0));
        assert_eq!(spec.options.deg_mult, None);
        assert_eq!(spec.options.lambda_cap, 8);
    }
}
