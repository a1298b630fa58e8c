//! Exact polynomial and signed-power algebra.
//!
//! Two value types live here. [`Polynomial`] is a sparse map from exponent
//! vectors to exact rational coefficients, the form the sum-of-squares layer
//! consumes. [`SignedPowerExpr`] is a finite sum of terms
//! `c * prod_i sign(x_i)^s_i * |x_i|^e_i` with rational `e_i`; it is closed
//! under products and under the power substitution `x_i -> sign(x_i)|x_i|^q_i`,
//! which is what makes fractional vector fields tractable.
//!
//! Evaluation uses `sign(0) = 0` and `0^0 = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational coefficient.
pub type Coeff = BigRational;

/// Exponent vector of a monomial.
pub type Monomial = Vec<u32>;

pub fn coeff_from_f64(x: f64) -> Coeff {
    BigRational::from_float(x).expect("finite coefficient")
}

pub fn coeff_to_f64(c: &Coeff) -> f64 {
    c.to_f64().unwrap_or(f64::NAN)
}

pub fn coeff_int(n: i64) -> Coeff {
    BigRational::from_integer(BigInt::from(n))
}

pub fn coeff_ratio(n: i64, d: i64) -> Coeff {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

// ---------------------------------------------------------------------------
// Rational exponents
// ---------------------------------------------------------------------------

/// Exponent of `|x_i|`, kept in lowest terms with a positive denominator.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct RationalExp(Ratio<i64>);

impl RationalExp {
    pub const ZERO: RationalExp = RationalExp(Ratio::new_raw(0, 1));
    pub const ONE: RationalExp = RationalExp(Ratio::new_raw(1, 1));

    /// Panics if `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        RationalExp(Ratio::new(num, den))
    }

    pub fn integer(n: i64) -> Self {
        RationalExp(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0 < Ratio::from_integer(0)
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn recip(&self) -> Self {
        RationalExp(self.0.recip())
    }

    /// Parity of an integer exponent; `None` for fractions.
    pub fn parity(&self) -> Option<u8> {
        self.is_integer().then(|| self.numer().rem_euclid(2) as u8)
    }
}

impl Add for RationalExp {
    type Output = RationalExp;
    fn add(self, rhs: Self) -> Self {
        RationalExp(self.0 + rhs.0)
    }
}

impl Sub for RationalExp {
    type Output = RationalExp;
    fn sub(self, rhs: Self) -> Self {
        RationalExp(self.0 - rhs.0)
    }
}

impl Mul for RationalExp {
    type Output = RationalExp;
    fn mul(self, rhs: Self) -> Self {
        RationalExp(self.0 * rhs.0)
    }
}

impl Neg for RationalExp {
    type Output = RationalExp;
    fn neg(self) -> Self {
        RationalExp(-self.0)
    }
}

impl fmt::Display for RationalExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for RationalExp {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let parse = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once('/') {
            Some((n, d)) => {
                let d = parse(d)?;
                if d == 0 {
                    return Err("zero denominator".into());
                }
                Ok(RationalExp::new(parse(n)?, d))
            }
            None => Ok(RationalExp::integer(parse(s)?)),
        }
    }
}

// ---------------------------------------------------------------------------
// Polynomials
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Polynomial {
    nvars: usize,
    coeffs: BTreeMap<Monomial, Coeff>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Coeff) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, Coeff::one())
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, Coeff::one())
    }

    pub fn monomial(nvars: usize, exps: Monomial, c: Coeff) -> Self {
        assert_eq!(exps.len(), nvars, "exponent vector length");
        let mut p = Self::zero(nvars);
        p.add_term(exps, c);
        p
    }

    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, Coeff)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars, "exponent vector length");
            p.add_term(e, c);
        }
        p
    }

    /// Sum of squares of the coordinates.
    pub fn norm_squared(nvars: usize) -> Self {
        (0..nvars).fold(Self::zero(nvars), |acc, i| {
            let xi = Self::var(nvars, i);
            &acc + &(&xi * &xi)
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_term(&mut self, exps: Monomial, c: Coeff) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.coeffs.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Coeff)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, exps: &[u32]) -> Coeff {
        self.coeffs.get(exps).cloned().unwrap_or_else(Coeff::zero)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<u32> {
        self.coeffs.keys().map(|e| e.iter().sum()).max()
    }

    pub fn min_degree(&self) -> Option<u32> {
        self.coeffs.keys().map(|e| e.iter().sum()).min()
    }

    pub fn scale(&self, c: &Coeff) -> Self {
        if c.is_zero() {
            return Self::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            coeffs: self.coeffs.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Self::one(self.nvars), |acc, _| &acc * self)
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.coeffs {
            if e[i] == 0 {
                continue;
            }
            let mut de = e.clone();
            de[i] -= 1;
            out.add_term(de, c * coeff_int(e[i] as i64));
        }
        out
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars).map(|i| self.derivative(i)).collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.coeffs
            .iter()
            .map(|(e, c)| {
                coeff_to_f64(c)
                    * e.iter()
                        .zip(x)
                        .map(|(&k, &xi)| xi.powi(k as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Coefficients rounded to `f64`, keyed like the exact map.
    pub fn to_f64_terms(&self) -> Vec<(Monomial, f64)> {
        self.coeffs
            .iter()
            .map(|(e, c)| (e.clone(), coeff_to_f64(c)))
            .collect()
    }

    pub fn from_f64_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        Self::from_terms(
            nvars,
            terms
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(e, c)| (e, coeff_from_f64(c))),
        )
    }

    /// Each monomial `x^a` becomes `sign(x)^(a mod 2) |x|^a`.
    pub fn to_spe(&self) -> SignedPowerExpr {
        SignedPowerExpr::from_terms(
            self.nvars,
            self.coeffs.iter().map(|(e, c)| SignedPowerTerm {
                coeff: c.clone(),
                sigma: e.iter().map(|&k| (k % 2) as u8).collect(),
                exps: e.iter().map(|&k| RationalExp::integer(k as i64)).collect(),
            }),
        )
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs
            .values()
            .map(|c| coeff_to_f64(c).abs())
            .fold(0.0, f64::max)
    }

    pub fn display_with(&self, names: &[String]) -> String {
        self.to_spe().display_with(names)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.coeffs {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        Polynomial {
            nvars: self.nvars,
            coeffs: self.coeffs.iter().map(|(e, c)| (e.clone(), -c)).collect(),
        }
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut acc: BTreeMap<Monomial, Coeff> = BTreeMap::new();
        for (ea, ca) in &self.coeffs {
            for (eb, cb) in &rhs.coeffs {
                let e: Monomial = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *acc.entry(e).or_insert_with(Coeff::zero) += ca * cb;
            }
        }
        acc.retain(|_, c| !c.is_zero());
        Polynomial {
            nvars: self.nvars,
            coeffs: acc,
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_spe())
    }
}

/// Degree of a monomial.
pub fn monomial_degree(m: &[u32]) -> u32 {
    m.iter().sum()
}

// ---------------------------------------------------------------------------
// Signed-power expressions
// ---------------------------------------------------------------------------

/// One term of a signed-power expression. `sigma` is the exponent of
/// `sign(x_i)`; values above one are allowed here and reduced mod 2 when the
/// term enters a [`SignedPowerExpr`].
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignedPowerTerm {
    pub coeff: Coeff,
    pub sigma: Vec<u8>,
    pub exps: Vec<RationalExp>,
}

impl SignedPowerTerm {
    /// True when the term is a plain monomial in `x`.
    pub fn is_monomial(&self) -> bool {
        self.sigma
            .iter()
            .zip(&self.exps)
            .all(|(&s, e)| !e.is_negative() && e.parity() == Some(s % 2))
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
struct TermKey {
    sigma: Vec<u8>,
    exps: Vec<RationalExp>,
}

/// Canonical sum of signed-power terms: like terms merged, zero terms
/// dropped, sign parities reduced mod 2.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignedPowerExpr {
    nvars: usize,
    terms: BTreeMap<TermKey, Coeff>,
}

impl SignedPowerExpr {
    pub fn zero(nvars: usize) -> Self {
        SignedPowerExpr {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Coeff) -> Self {
        Self::from_terms(
            nvars,
            [SignedPowerTerm {
                coeff: c,
                sigma: vec![0; nvars],
                exps: vec![RationalExp::ZERO; nvars],
            }],
        )
    }

    /// `x_i = sign(x_i)|x_i|`.
    pub fn var(nvars: usize, i: usize) -> Self {
        Self::factor(nvars, i, 1, RationalExp::ONE)
    }

    pub fn sign_of(nvars: usize, i: usize) -> Self {
        Self::factor(nvars, i, 1, RationalExp::ZERO)
    }

    pub fn abs_pow(nvars: usize, i: usize, e: RationalExp) -> Self {
        Self::factor(nvars, i, 0, e)
    }

    fn factor(nvars: usize, i: usize, sigma: u8, e: RationalExp) -> Self {
        let mut s = vec![0; nvars];
        let mut x = vec![RationalExp::ZERO; nvars];
        s[i] = sigma;
        x[i] = e;
        Self::from_terms(
            nvars,
            [SignedPowerTerm {
                coeff: Coeff::one(),
                sigma: s,
                exps: x,
            }],
        )
    }

    /// Builds the canonical form of an arbitrary list of terms.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = SignedPowerTerm>,
    {
        let mut out = Self::zero(nvars);
        for t in terms {
            assert_eq!(t.sigma.len(), nvars, "sigma length");
            assert_eq!(t.exps.len(), nvars, "exponent length");
            out.push(
                TermKey {
                    sigma: t.sigma.iter().map(|s| s % 2).collect(),
                    exps: t.exps,
                },
                t.coeff,
            );
        }
        out
    }

    fn push(&mut self, key: TermKey, c: Coeff) {
        use std::collections::btree_map::Entry;
        if c.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = SignedPowerTerm> + '_ {
        self.terms.iter().map(|(k, c)| SignedPowerTerm {
            coeff: c.clone(),
            sigma: k.sigma.clone(),
            exps: k.exps.clone(),
        })
    }

    /// Canonical form. Values of this type are always canonical, so this is
    /// a re-normalization of the term list and a fixpoint.
    pub fn normalize(&self) -> Self {
        Self::from_terms(self.nvars, self.terms())
    }

    pub fn scale(&self, c: &Coeff) -> Self {
        Self::from_terms(
            self.nvars,
            self.terms().map(|mut t| {
                t.coeff *= c;
                t
            }),
        )
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.nvars);
        self.terms
            .iter()
            .map(|(k, c)| coeff_to_f64(c) * eval_factors(&k.sigma, &k.exps, z))
            .sum()
    }

    /// Precomputed floating-point form for repeated evaluation.
    pub fn compile(&self) -> CompiledExpr {
        CompiledExpr {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(k, c)| {
                    let factors = k
                        .sigma
                        .iter()
                        .zip(&k.exps)
                        .enumerate()
                        .filter(|(_, (s, e))| **s != 0 || !e.is_zero())
                        .map(|(i, (s, e))| Factor {
                            var: i,
                            sign: *s == 1,
                            int_exp: e.is_integer().then(|| e.numer() as i32),
                            exp: e.to_f64(),
                        })
                        .collect();
                    (coeff_to_f64(c), factors)
                })
                .collect(),
        }
    }

    /// `x_i -> sign(x_i)|x_i|^{q_i}` (forward) or `|x_i|^{1/q_i}` (inverse).
    ///
    /// Rejects results carrying a negative exponent.
    pub fn substitute_power(&self, q: &[RationalExp], direction: Direction) -> Result<Self> {
        let out = self.substitute_power_unchecked(q, direction)?;
        for t in out.terms.keys() {
            if let Some(e) = t.exps.iter().find(|e| e.is_negative()) {
                return Err(Error::MalformedSubstitution(format!(
                    "negative exponent {e} after substitution"
                )));
            }
        }
        Ok(out)
    }

    /// Like [`substitute_power`](Self::substitute_power) but lets negative
    /// exponents through (rational intermediates).
    pub fn substitute_power_unchecked(
        &self,
        q: &[RationalExp],
        direction: Direction,
    ) -> Result<Self> {
        if q.len() != self.nvars {
            return Err(Error::MalformedSubstitution(format!(
                "power vector has length {}, expected {}",
                q.len(),
                self.nvars
            )));
        }
        if let Some(bad) = q.iter().find(|qi| qi.is_negative() || qi.is_zero()) {
            return Err(Error::MalformedSubstitution(format!(
                "power {bad} is not positive"
            )));
        }
        let factors: Vec<RationalExp> = match direction {
            Direction::Forward => q.to_vec(),
            Direction::Inverse => q.iter().map(|qi| qi.recip()).collect(),
        };
        // sign(sign(x)|x|^q) = sign(x) and |sign(x)|x|^q|^e = |x|^{qe}.
        Ok(Self::from_terms(
            self.nvars,
            self.terms().map(|mut t| {
                for (e, f) in t.exps.iter_mut().zip(&factors) {
                    *e = *e * *f;
                }
                t
            }),
        ))
    }

    /// Converts to a polynomial when every term is a monomial.
    pub fn to_polynomial(&self) -> Option<Polynomial> {
        let mut p = Polynomial::zero(self.nvars);
        for t in self.terms() {
            if !t.is_monomial() {
                return None;
            }
            p.add_term(t.exps.iter().map(|e| e.numer() as u32).collect(), t.coeff);
        }
        Some(p)
    }

    pub fn is_polynomial(&self) -> bool {
        self.terms().all(|t| t.is_monomial())
    }

    /// Resolves `|x_i|` and `sign(x_i)` on a sign sector. `pattern` maps a
    /// variable index to `+1` or `-1`; every other variable must already
    /// appear polynomially.
    pub fn resolve_sector(&self, pattern: &BTreeMap<usize, i8>) -> Result<Polynomial> {
        let mut p = Polynomial::zero(self.nvars);
        for t in self.terms() {
            let mut c = t.coeff.clone();
            let mut exps = Vec::with_capacity(self.nvars);
            for (i, (s, e)) in t.sigma.iter().zip(&t.exps).enumerate() {
                if e.is_negative() || !e.is_integer() {
                    return Err(Error::NotPolynomial(format!(
                        "exponent {e} of |x{}| cannot be resolved",
                        i + 1
                    )));
                }
                let k = e.numer() as u32;
                match pattern.get(&i) {
                    Some(&sgn) => {
                        // sign(x)^s |x|^k = sgn^(s+k) x^k on the sector.
                        if sgn < 0 && (*s as u32 + k) % 2 == 1 {
                            c = -c;
                        }
                    }
                    None if (*s as u32) % 2 != k % 2 => {
                        return Err(Error::NotPolynomial(format!(
                            "x{} needs a sign sector",
                            i + 1
                        )));
                    }
                    None => {}
                }
                exps.push(k);
            }
            p.add_term(exps, c);
        }
        Ok(p)
    }

    /// The only term, if there is exactly one.
    pub fn single_term(&self) -> Option<SignedPowerTerm> {
        (self.terms.len() == 1).then(|| self.terms().next().unwrap())
    }

    pub fn display_with(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (idx, t) in self.terms().enumerate() {
            let neg = t.coeff.is_negative();
            let mag = t.coeff.abs();
            if idx == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let mut factors: Vec<String> = Vec::new();
            for (i, (s, e)) in t.sigma.iter().zip(&t.exps).enumerate() {
                let name = &names[i];
                if !e.is_negative() && e.parity() == Some(*s) {
                    match e.numer() {
                        0 => {}
                        1 => factors.push(name.clone()),
                        k => factors.push(format!("{name}^{k}")),
                    }
                    continue;
                }
                if *s == 1 {
                    factors.push(format!("sign({name})"));
                }
                if !e.is_zero() {
                    if *e == RationalExp::ONE {
                        factors.push(format!("abs({name})"));
                    } else {
                        factors.push(format!("abs({name})^({e})"));
                    }
                }
            }
            let coeff = if mag.is_integer() {
                mag.numer().to_string()
            } else {
                format!("{}/{}", mag.numer(), mag.denom())
            };
            if factors.is_empty() {
                out.push_str(&coeff);
            } else {
                if !mag.is_one() {
                    out.push_str(&coeff);
                    out.push('*');
                }
                out.push_str(&factors.join("*"));
            }
        }
        out
    }
}

/// Default variable names: `x` for one state, `x1..xn` otherwise.
pub fn default_names(nvars: usize) -> Vec<String> {
    if nvars == 1 {
        vec!["x".to_string()]
    } else {
        (1..=nvars).map(|i| format!("x{i}")).collect()
    }
}

impl fmt::Display for SignedPowerExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_with(&default_names(self.nvars)))
    }
}

fn eval_factors(sigma: &[u8], exps: &[RationalExp], z: &[f64]) -> f64 {
    let mut v = 1.0;
    for ((s, e), &zi) in sigma.iter().zip(exps).zip(z) {
        if *s == 1 {
            if zi == 0.0 {
                return 0.0;
            }
            v *= zi.signum();
        }
        v *= abs_pow(zi.abs(), e.is_integer().then(|| e.numer() as i32), e.to_f64());
    }
    v
}

fn abs_pow(a: f64, int_exp: Option<i32>, exp: f64) -> f64 {
    match int_exp {
        Some(0) => 1.0,
        Some(k) => a.powi(k),
        None => a.powf(exp),
    }
}

/// Direction of the power substitution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Add for &SignedPowerExpr {
    type Output = SignedPowerExpr;
    fn add(self, rhs: &SignedPowerExpr) -> SignedPowerExpr {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.push(k.clone(), c.clone());
        }
        out
    }
}

impl Sub for &SignedPowerExpr {
    type Output = SignedPowerExpr;
    fn sub(self, rhs: &SignedPowerExpr) -> SignedPowerExpr {
        self + &(-rhs)
    }
}

impl Neg for &SignedPowerExpr {
    type Output = SignedPowerExpr;
    fn neg(self) -> SignedPowerExpr {
        self.scale(&-Coeff::one())
    }
}

impl Mul for &SignedPowerExpr {
    type Output = SignedPowerExpr;
    fn mul(self, rhs: &SignedPowerExpr) -> SignedPowerExpr {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = SignedPowerExpr::zero(self.nvars);
        for (ka, ca) in &self.terms {
            for (kb, cb) in &rhs.terms {
                let key = TermKey {
                    sigma: ka
                        .sigma
                        .iter()
                        .zip(&kb.sigma)
                        .map(|(a, b)| (a + b) % 2)
                        .collect(),
                    exps: ka.exps.iter().zip(&kb.exps).map(|(a, b)| *a + *b).collect(),
                };
                out.push(key, ca * cb);
            }
        }
        out
    }
}

/// Floating-point evaluator for a [`SignedPowerExpr`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    nvars: usize,
    terms: Vec<(f64, Vec<Factor>)>,
}

#[derive(Clone, Debug)]
struct Factor {
    var: usize,
    sign: bool,
    int_exp: Option<i32>,
    exp: f64,
}

impl CompiledExpr {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        'terms: for (c, factors) in &self.terms {
            let mut v = *c;
            for f in factors {
                let zi = z[f.var];
                if f.sign {
                    if zi == 0.0 {
                        continue 'terms;
                    }
                    v *= zi.signum();
                }
                v *= abs_pow(zi.abs(), f.int_exp, f.exp);
            }
            total += v;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> RationalExp {
        RationalExp::new(n, d)
    }

    fn term(c: Coeff, sigma: Vec<u8>, exps: Vec<RationalExp>) -> SignedPowerTerm {
        SignedPowerTerm {
            coeff: c,
            sigma,
            exps,
        }
    }

    #[test]
    fn sign_squared_reduces() {
        let e = SignedPowerExpr::from_terms(1, [term(coeff_int(1), vec![2], vec![r(2, 1)])]);
        let t = e.single_term().unwrap();
        assert_eq!(t.sigma, vec![0]);
        assert_eq!(t.exps, vec![r(2, 1)]);
        assert!(t.is_monomial());
    }

    #[test]
    fn odd_powers_cancel_to_monomial() {
        let a = SignedPowerExpr::from_terms(1, [term(coeff_int(1), vec![1], vec![r(3, 1)])]);
        let b = SignedPowerExpr::var(1, 0);
        let p = (&a * &b).to_polynomial().unwrap();
        assert_eq!(p, Polynomial::monomial(1, vec![4], coeff_int(1)));
    }

    #[test]
    fn cube_is_signed_abs_cube() {
        let x = SignedPowerExpr::var(1, 0);
        let x3 = &(&x * &x) * &x;
        let t = x3.single_term().unwrap();
        assert_eq!((t.sigma, t.exps), (vec![1], vec![r(3, 1)]));
    }

    #[test]
    fn eval_odd_root_of_negative() {
        let e = SignedPowerExpr::from_terms(1, [term(coeff_int(-1), vec![1], vec![r(2, 3)])]);
        assert!((e.eval(&[-8.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eval_scalar_vtilde() {
        let v = Polynomial::monomial(1, vec![4], coeff_ratio(542, 100)).to_spe();
        let vt = v.substitute_power(&[r(3, 1)], Direction::Inverse).unwrap();
        let expected = 5.42 * 1.2f64.powf(4.0 / 3.0);
        assert!((vt.eval(&[1.2]) - expected).abs() < 1e-12);
        assert!((vt.eval(&[1.2]) - 6.9115).abs() < 5e-4);
    }

    #[test]
    fn eval_conventions_at_origin() {
        let s = SignedPowerExpr::sign_of(1, 0);
        assert_eq!(s.eval(&[0.0]), 0.0);
        let one = SignedPowerExpr::abs_pow(1, 0, RationalExp::ZERO);
        assert_eq!(one.eval(&[0.0]), 1.0);
    }

    #[test]
    fn abs_times_abs_is_square() {
        let a = SignedPowerExpr::abs_pow(1, 0, RationalExp::ONE);
        let p = (&a * &a).to_polynomial().unwrap();
        assert_eq!(p, Polynomial::monomial(1, vec![2], coeff_int(1)));
    }

    #[test]
    fn mixed_product_key() {
        let a = SignedPowerExpr::from_terms(2, [term(coeff_int(1), vec![1, 0], vec![r(1, 1), r(0, 1)])]);
        let x2 = Polynomial::var(2, 1);
        let b = (&x2 * &x2).to_spe();
        let t = (&a * &b).single_term().unwrap();
        assert_eq!(t.sigma, vec![1, 0]);
        assert_eq!(t.exps, vec![r(1, 1), r(2, 1)]);
    }

    #[test]
    fn difference_times_abs() {
        let x1 = SignedPowerExpr::var(2, 0);
        let x2 = SignedPowerExpr::var(2, 1);
        let a1 = SignedPowerExpr::abs_pow(2, 0, RationalExp::ONE);
        let prod = &(&x1 - &x2) * &a1;
        assert_eq!(prod.len(), 2);
        for z in [[1.5, -0.3], [-2.0, 0.7], [0.25, 4.0], [-1.1, -1.3]] {
            let direct = (z[0] - z[1]) * z[0].abs();
            let expected = z[0].signum() * z[0] * z[0] - z[1] * z[0].abs();
            assert!((prod.eval(&z) - direct).abs() < 1e-12);
            assert!((prod.eval(&z) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rules() {
        let v = Polynomial::monomial(1, vec![4], coeff_ratio(542, 100));
        assert_eq!(v.gradient()[0], Polynomial::monomial(1, vec![3], coeff_ratio(2168, 100)));
        let c = Polynomial::constant(2, coeff_int(5));
        assert!(c.gradient().iter().all(Polynomial::is_zero));
        let m = Polynomial::monomial(2, vec![2, 1], coeff_int(1));
        let g = m.gradient();
        assert_eq!(g[0], Polynomial::monomial(2, vec![1, 1], coeff_int(2)));
        assert_eq!(g[1], Polynomial::monomial(2, vec![2, 0], coeff_int(1)));
    }

    #[test]
    fn forward_substitution_example_field() {
        let f = SignedPowerExpr::from_terms(1, [term(coeff_int(-1), vec![1], vec![r(2, 3)])]);
        let fq = f.substitute_power(&[r(3, 1)], Direction::Forward).unwrap();
        let t = fq.single_term().unwrap();
        assert_eq!(t.coeff, coeff_int(-1));
        assert_eq!((t.sigma, t.exps), (vec![1], vec![r(2, 1)]));
    }

    #[test]
    fn unit_power_is_identity() {
        let f = SignedPowerExpr::from_terms(
            2,
            [
                term(coeff_int(3), vec![1, 0], vec![r(1, 2), r(4, 3)]),
                term(coeff_ratio(-1, 7), vec![0, 1], vec![r(0, 1), r(5, 1)]),
            ],
        );
        let one = [RationalExp::ONE, RationalExp::ONE];
        assert_eq!(f.substitute_power(&one, Direction::Forward).unwrap(), f);
        assert_eq!(f.substitute_power(&one, Direction::Inverse).unwrap(), f);
    }

    #[test]
    fn inverse_of_quartic() {
        let v = Polynomial::monomial(1, vec![4], coeff_ratio(542, 100)).to_spe();
        let vt = v.substitute_power(&[r(3, 1)], Direction::Inverse).unwrap();
        let t = vt.single_term().unwrap();
        assert_eq!(t.coeff, coeff_ratio(542, 100));
        assert_eq!((t.sigma, t.exps), (vec![0], vec![r(4, 3)]));
    }

    #[test]
    fn negative_exponent_is_rejected() {
        let e = SignedPowerExpr::abs_pow(1, 0, r(-1, 3));
        assert!(matches!(
            e.substitute_power(&[r(3, 1)], Direction::Forward),
            Err(Error::MalformedSubstitution(_))
        ));
        assert!(e.substitute_power_unchecked(&[r(3, 1)], Direction::Forward).is_ok());
    }

    #[test]
    fn sector_resolution_signs() {
        // sign(x1)|x1| x2^2 - |x1| x2^3
        let e = SignedPowerExpr::from_terms(
            2,
            [
                term(coeff_int(1), vec![1, 0], vec![r(2, 1), r(2, 1)]),
                term(coeff_int(-1), vec![0, 1], vec![r(1, 1), r(3, 1)]),
            ],
        );
        assert!(e.to_polynomial().is_none());
        let pos = e.resolve_sector(&BTreeMap::from([(0, 1)])).unwrap();
        let neg = e.resolve_sector(&BTreeMap::from([(0, -1)])).unwrap();
        for z in [[0.7, -1.2], [2.0, 0.3]] {
            assert!((pos.eval(&z) - e.eval(&z)).abs() < 1e-12);
            let zn = [-z[0], z[1]];
            assert!((neg.eval(&zn) - e.eval(&zn)).abs() < 1e-12);
        }
        assert!(e.resolve_sector(&BTreeMap::new()).is_err());
    }

    #[test]
    fn display_is_readable() {
        let f = SignedPowerExpr::from_terms(1, [term(coeff_int(-1), vec![1], vec![r(2, 3)])]);
        assert_eq!(f.to_string(), "-sign(x)*abs(x)^(2/3)");
        let p = Polynomial::from_terms(
            2,
            [(vec![2, 0], coeff_int(-1)), (vec![0, 0], coeff_int(3))],
        );
        assert_eq!(p.to_string(), "3 - x1^2");
    }
}
