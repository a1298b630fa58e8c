//! Power-substitution pipeline: `f -> f~ -> f~(sign(x)|x|^q) * prod |x_i|^lambda_i`,
//! split into sign sectors so that every decrease-condition ingredient is a
//! polynomial.

use std::collections::BTreeMap;

use num_integer::Integer;
use num_traits::One;

use crate::error::{Error, Result};
use crate::exprparse::ProblemSpec;
use crate::polyalg::{
    coeff_ratio, Coeff, Direction, Polynomial, RationalExp, SignedPowerExpr,
};

/// One sign sector: `x_i >= 0` or `x_i <= 0` for each sectorized variable.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorConstraint {
    pub sign_pattern: BTreeMap<usize, i8>,
    /// `x_i` or `-x_i`, one per sectorized variable.
    pub extra_ineqs: Vec<Polynomial>,
    /// `f~_i(sign(x)|x|^q) * prod |x_j|^lambda_j` resolved on this sector.
    pub field_polys: Vec<Polynomial>,
    /// `||x||^p * prod |x_j|^lambda_j` resolved on this sector.
    pub norm_poly: Polynomial,
}

impl SectorConstraint {
    /// `-grad V . F - mu * N` for a concrete `V`.
    pub fn lhs_poly(&self, v: &Polynomial, mu: &Coeff) -> Polynomial {
        let mut acc = -&self.norm_poly.scale(mu);
        for (i, fi) in self.field_polys.iter().enumerate() {
            acc = &acc - &(&v.derivative(i) * fi);
        }
        acc
    }

    /// Whether `x` lies in the closed sector.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.sign_pattern
            .iter()
            .all(|(&i, &s)| f64::from(s) * x[i] >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformResult {
    pub q: Vec<u32>,
    pub lambda: Vec<u32>,
    /// `f~(z)`, rational in `|z_i|`.
    pub ftilde: Vec<SignedPowerExpr>,
    /// `f~(sign(x)|x|^q)`.
    pub composed: Vec<SignedPowerExpr>,
    /// `composed_i * prod |x_j|^lambda_j`.
    pub cleared: Vec<SignedPowerExpr>,
    /// `||x||^p * prod |x_j|^lambda_j`.
    pub norm_cleared: SignedPowerExpr,
    pub sectorized: Vec<usize>,
    pub sectors: Vec<SectorConstraint>,
}

impl TransformResult {
    pub fn nvars(&self) -> usize {
        self.q.len()
    }

    /// Sector polynomials of the decrease condition for every sector.
    pub fn lhs_polys(&self, v: &Polynomial, mu: &Coeff) -> Vec<Polynomial> {
        self.sectors.iter().map(|s| s.lhs_poly(v, mu)).collect()
    }

    /// `-grad V . cleared - mu * norm_cleared` evaluated directly on the
    /// signed-power form.
    pub fn lhs_direct(&self, v: &Polynomial, mu: f64, x: &[f64]) -> f64 {
        let mut acc = -mu * self.norm_cleared.eval(x);
        for (i, ci) in self.cleared.iter().enumerate() {
            acc -= v.derivative(i).eval(x) * ci.eval(x);
        }
        acc
    }
}

/// Least common multiple of the exponent denominators per variable.
pub fn infer_q(f: &[SignedPowerExpr]) -> Vec<u32> {
    let n = f.first().map_or(0, |e| e.nvars());
    let mut q = vec![1i64; n];
    for comp in f {
        for t in comp.terms() {
            for (qi, e) in q.iter_mut().zip(&t.exps) {
                *qi = qi.lcm(&e.denom());
            }
        }
    }
    q.into_iter().map(|v| v as u32).collect()
}

/// `f~_i(z) = (1/q_i) f_i(z) |z_i|^(1/q_i - 1)`.
pub fn build_ftilde(f: &[SignedPowerExpr], q: &[u32]) -> Vec<SignedPowerExpr> {
    f.iter()
        .enumerate()
        .map(|(i, fi)| {
            let n = fi.nvars();
            let qi = i64::from(q[i]);
            let factor = SignedPowerExpr::abs_pow(n, i, RationalExp::new(1 - qi, qi))
                .scale(&coeff_ratio(1, qi));
            fi * &factor
        })
        .collect()
}

/// `||x||^p` as a signed-power expression.
pub fn norm_power(n: usize, p: u32) -> Result<SignedPowerExpr> {
    if p.is_multiple_of(2) {
        Ok(Polynomial::norm_squared(n).pow(p / 2).to_spe())
    } else if n == 1 {
        Ok(SignedPowerExpr::abs_pow(1, 0, RationalExp::integer(i64::from(p))))
    } else {
        Err(Error::UnrepresentableNorm { p, n })
    }
}

fn lambda_factor(n: usize, lambda: &[u32]) -> SignedPowerExpr {
    (0..n).fold(SignedPowerExpr::constant(n, Coeff::one()), |acc, j| {
        &acc * &SignedPowerExpr::abs_pow(n, j, RationalExp::integer(i64::from(lambda[j])))
    })
}

/// Whether variable `j` still needs a sign sector once multiplied by
/// `|x_j|^l`.
fn has_mismatch(exprs: &[&SignedPowerExpr], j: usize, l: u32) -> bool {
    exprs.iter().any(|e| {
        e.terms().any(|t| {
            let total = t.exps[j] + RationalExp::integer(i64::from(l));
            total.parity() != Some(t.sigma[j])
        })
    })
}

/// Composes `f~` with the power substitution, picks `lambda`, and splits
/// into sign sectors.
pub fn compose_and_clear(
    ftilde: &[SignedPowerExpr],
    q: &[u32],
    lambda_override: Option<&[u32]>,
    p: u32,
    lambda_cap: u32,
) -> Result<TransformResult> {
    let n = q.len();
    if ftilde.len() != n {
        return Err(Error::InvalidProblem(format!(
            "{} field components for {} variables",
            ftilde.len(),
            n
        )));
    }
    let qexp: Vec<RationalExp> = q.iter().map(|&v| RationalExp::integer(i64::from(v))).collect();
    let composed = ftilde
        .iter()
        .map(|e| e.substitute_power_unchecked(&qexp, Direction::Forward))
        .collect::<Result<Vec<_>>>()?;
    let norm = norm_power(n, p)?;

    let mut all: Vec<&SignedPowerExpr> = composed.iter().collect();
    all.push(&norm);

    let mut lambda = Vec::with_capacity(n);
    for j in 0..n {
        let mut min_exp = RationalExp::ZERO;
        for e in &composed {
            for t in e.terms() {
                if !t.exps[j].is_integer() {
                    return Err(Error::ClearingFailure {
                        var: j + 1,
                        cap: lambda_cap,
                    });
                }
                if t.exps[j].numer() < min_exp.numer() {
                    min_exp = t.exps[j];
                }
            }
        }
        let needed = (-min_exp.numer()).max(0) as u32;
        let chosen = match lambda_override {
            Some(l) => {
                if l[j] < needed {
                    return Err(Error::Parameter(format!(
                        "lambda_{} = {} leaves |x{}|^{} in the decrease condition",
                        j + 1,
                        l[j],
                        j + 1,
                        i64::from(l[j]) + min_exp.numer()
                    )));
                }
                l[j]
            }
            None => {
                if needed > lambda_cap {
                    return Err(Error::ClearingFailure {
                        var: j + 1,
                        cap: lambda_cap,
                    });
                }
                if has_mismatch(&all, j, needed)
                    && needed < lambda_cap
                    && !has_mismatch(&all, j, needed + 1)
                {
                    needed + 1
                } else {
                    needed
                }
            }
        };
        lambda.push(chosen);
    }

    let lf = lambda_factor(n, &lambda);
    let cleared: Vec<SignedPowerExpr> = composed.iter().map(|e| e * &lf).collect();
    let norm_cleared = &norm * &lf;

    let mut cleared_all: Vec<&SignedPowerExpr> = cleared.iter().collect();
    cleared_all.push(&norm_cleared);
    let sectorized: Vec<usize> = (0..n)
        .filter(|&j| has_mismatch(&cleared_all, j, 0))
        .collect();

    let mut sectors = Vec::with_capacity(1 << sectorized.len());
    for mask in 0..(1usize << sectorized.len()) {
        let sign_pattern: BTreeMap<usize, i8> = sectorized
            .iter()
            .enumerate()
            .map(|(b, &j)| (j, if mask >> b & 1 == 0 { 1 } else { -1 }))
            .collect();
        let extra_ineqs = sign_pattern
            .iter()
            .map(|(&j, &s)| Polynomial::var(n, j).scale(&Coeff::from_integer(s.into())))
            .collect();
        let field_polys = cleared
            .iter()
            .map(|e| e.resolve_sector(&sign_pattern))
            .collect::<Result<Vec<_>>>()?;
        let norm_poly = norm_cleared.resolve_sector(&sign_pattern)?;
        sectors.push(SectorConstraint {
            sign_pattern,
            extra_ineqs,
            field_polys,
            norm_poly,
        });
    }

    Ok(TransformResult {
        q: q.to_vec(),
        lambda,
        ftilde: ftilde.to_vec(),
        composed,
        cleared,
        norm_cleared,
        sectorized,
        sectors,
    })
}

/// Runs the whole pipeline on a parsed problem.
pub fn transform(spec: &ProblemSpec) -> Result<TransformResult> {
    let q = spec.options.q.clone().unwrap_or_else(|| infer_q(&spec.f));
    let ftilde = build_ftilde(&spec.f, &q);
    compose_and_clear(
        &ftilde,
        &q,
        spec.options.lambda.as_deref(),
        spec.options.p,
        spec.options.lambda_cap,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprparse::parse_expression;
    use crate::polyalg::{coeff_int, default_names};

    fn field(src: &[&str]) -> Vec<SignedPowerExpr> {
        let names = default_names(src.len());
        src.iter()
            .map(|s| parse_expression(s, &names).unwrap())
            .collect()
    }

    #[test]
    fn infer_q_examples() {
        assert_eq!(infer_q(&field(&["-sign(x)*abs(x)^(2/3)"])), vec![3]);
        assert_eq!(infer_q(&field(&["-x1^3 + x2", "-x2"])), vec![1, 1]);
        let ex2 = field(&["-sign(x1)*abs(x1)^(1/2) + x2^(1/3)", "-x2^(1/3)"]);
        assert_eq!(infer_q(&ex2), vec![2, 3]);
    }

    #[test]
    fn ftilde_example_one() {
        let ft = build_ftilde(&field(&["-sign(x)*abs(x)^(2/3)"]), &[3]);
        let want = SignedPowerExpr::sign_of(1, 0).scale(&coeff_ratio(-1, 3));
        assert_eq!(ft[0], want);
    }

    #[test]
    fn ftilde_identity_for_unit_q() {
        let f = field(&["-x1^3 + x2", "-x2"]);
        assert_eq!(build_ftilde(&f, &[1, 1]), f);
    }

    #[test]
    fn example_one_single_sector() {
        let ft = build_ftilde(&field(&["-sign(x)*abs(x)^(2/3)"]), &[3]);
        let tr = compose_and_clear(&ft, &[3], Some(&[1]), 3, 8).unwrap();
        assert!(tr.sectorized.is_empty());
        assert_eq!(tr.sectors.len(), 1);
        let s = &tr.sectors[0];
        assert_eq!(s.field_polys[0], Polynomial::var(1, 0).scale(&coeff_ratio(-1, 3)));
        assert_eq!(s.norm_poly, Polynomial::monomial(1, vec![4], coeff_int(1)));
        // Auto choice agrees with the override.
        let auto = compose_and_clear(&ft, &[3], None, 3, 8).unwrap();
        assert_eq!(auto.lambda, vec![1]);
    }

    #[test]
    fn example_two_sectors() {
        let f = field(&["-sign(x1)*abs(x1)^(1/2) + x2^(1/3)", "-x2^(1/3)"]);
        let ft = build_ftilde(&f, &[2, 3]);
        let tr = compose_and_clear(&ft, &[2, 3], Some(&[2, 2]), 4, 8).unwrap();
        assert_eq!(tr.sectorized, vec![0]);
        assert_eq!(tr.sectors.len(), 2);
        let pos = &tr.sectors[0];
        assert_eq!(pos.sign_pattern.get(&0), Some(&1));
        assert_eq!(pos.extra_ineqs, vec![Polynomial::var(2, 0)]);
        let c1 = Polynomial::from_terms(
            2,
            [
                (vec![2, 2], coeff_ratio(-1, 2)),
                (vec![1, 3], coeff_ratio(1, 2)),
            ],
        );
        let c2 = Polynomial::monomial(2, vec![2, 1], coeff_ratio(-1, 3));
        assert_eq!(pos.field_polys, vec![c1, c2]);
        let neg = &tr.sectors[1];
        assert_eq!(neg.extra_ineqs, vec![-&Polynomial::var(2, 0)]);
        let auto = compose_and_clear(&ft, &[2, 3], None, 4, 8).unwrap();
        assert_eq!(auto.lambda, vec![1, 2]);
    }

    #[test]
    fn polynomial_field_is_trivial() {
        let f = field(&["-x1^3 + x2", "-x2"]);
        let ft = build_ftilde(&f, &[1, 1]);
        let tr = compose_and_clear(&ft, &[1, 1], None, 2, 8).unwrap();
        assert_eq!(tr.lambda, vec![0, 0]);
        assert_eq!(tr.sectors.len(), 1);
        assert_eq!(tr.composed, f);
    }

    #[test]
    fn odd_norm_power_rejected_in_two_dimensions() {
        let f = field(&["-x1", "-x2"]);
        let err = compose_and_clear(&f, &[1, 1], None, 3, 8).unwrap_err();
        assert!(matches!(err, Error::UnrepresentableNorm { p: 3, n: 2 }));
    }

    #[test]
    fn clearing_cap_enforced() {
        let f = field(&["-1/x^9"]);
        let err = compose_and_clear(&f, &[1], None, 2, 8).unwrap_err();
        assert!(matches!(err, Error::ClearingFailure { var: 1, cap: 8 }));
    }

    #[test]
    fn fractional_leftover_is_clearing_failure() {
        let f = field(&["-sign(x)*abs(x)^(2/3)"]);
        let ft = build_ftilde(&f, &[2]);
        assert!(matches!(
            compose_and_clear(&ft, &[2], None, 2, 8),
            Err(Error::ClearingFailure { .. })
        ));
    }
}
