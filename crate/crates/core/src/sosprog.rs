//! Sum-of-squares constraints, their Gram-matrix parameterization, and the
//! lowering to a semidefinite program by coefficient matching.
//!
//! Every constraint is an identity
//!
//! ```text
//! fixed + mu * mu_part + sum_k u_k P_k  =  sum_slots m_slot(x) * Z_slot' Q_slot Z_slot
//! ```
//!
//! where the `u_k` are the coefficients of the unknown `V`, slot 0 is the
//! free SoS term (multiplier 1) and the others pair an SoS multiplier with
//! an inequality of the region or a sign sector.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_traits::{One, Signed};

use crate::error::{Error, Result};
use crate::polyalg::{coeff_from_f64, coeff_to_f64, monomial_degree, Coeff, Monomial, Polynomial};
use crate::sdpsolve::{SdpProblem, SdpRow, SdpSolution};
use crate::transform::SectorConstraint;

/// Monomials with total degree in `lo..=hi`, graded, and within a degree
/// ordered with higher powers of earlier variables first.
pub fn monomial_basis(nvars: usize, lo: u32, hi: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in lo..=hi {
        let mut cur = vec![0u32; nvars];
        push_degree(&mut out, &mut cur, 0, deg);
    }
    out
}

fn push_degree(out: &mut Vec<Monomial>, cur: &mut Vec<u32>, i: usize, left: u32) {
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if i + 1 == cur.len() {
        cur[i] = left;
        out.push(cur.clone());
        cur[i] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[i] = e;
        push_degree(out, cur, i + 1, left - e);
    }
    cur[i] = 0;
}

fn add_mono(a: &[u32], b: &[u32]) -> Monomial {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Positivity,
    UpperBound,
    Decrease { sector: usize },
    Membership,
    Sublevel { ineq: usize },
}

/// An SoS unknown `m(x) * Z' Q Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SosSlot {
    pub name: String,
    pub multiplier: Polynomial,
    pub basis: Vec<Monomial>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosConstraint {
    pub kind: ConstraintKind,
    pub fixed: Polynomial,
    pub mu_part: Polynomial,
    /// `(free scalar id, polynomial it multiplies)`.
    pub free_terms: Vec<(usize, Polynomial)>,
    /// Slot 0 is the free SoS term with multiplier 1.
    pub slots: Vec<SosSlot>,
    /// Even degree bounding both sides of the identity.
    pub degree: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    pub nvars: usize,
    /// Monomials of the unknown `V`; free scalar `k` is the coefficient of
    /// `v_basis[k]`.
    pub v_basis: Vec<Monomial>,
    pub constraints: Vec<SosConstraint>,
}

/// Degree window of the unknown polynomials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegreeConfig {
    /// Multiplier degree; `None` uses constraint degree minus the
    /// inequality degree, rounded down to even.
    pub mult_degree: Option<u32>,
    /// Whether low-degree monomials may be dropped. Only lossless when the
    /// origin is interior to every region inequality.
    pub prune: bool,
}

fn min_max_degree<'a>(polys: impl IntoIterator<Item = &'a Polynomial>) -> Option<(u32, u32)> {
    polys
        .into_iter()
        .filter(|p| !p.is_zero())
        .map(|p| (p.min_degree().unwrap(), p.degree().unwrap()))
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
}

fn round_up_even(d: u32) -> u32 {
    d + d % 2
}

fn round_down_even(d: u32) -> u32 {
    d - d % 2
}

/// `(lo, hi)` of a Gram basis for an SoS polynomial whose degree lies in
/// `[min_deg, max_deg]`; `None` when no monomial fits.
fn gram_window(min_deg: u32, max_deg: u32) -> Option<(u32, u32)> {
    let lo = min_deg.div_ceil(2);
    let hi = max_deg / 2;
    (lo <= hi).then_some((lo, hi))
}

/// Builds slots and the degree bound for a constraint
/// `lhs - sum_i s_i g_i - sum_j v_j e_j in Sigma`.
#[allow(clippy::too_many_arguments)]
fn finish(
    nvars: usize,
    kind: ConstraintKind,
    fixed: Polynomial,
    mu_part: Polynomial,
    free_terms: Vec<(usize, Polynomial)>,
    ineqs: &[(String, Polynomial)],
    sector_ineqs: &[(String, Polynomial)],
    cfg: DegreeConfig,
) -> Result<SosConstraint> {
    let pieces: Vec<&Polynomial> = std::iter::once(&fixed)
        .chain(std::iter::once(&mu_part))
        .chain(free_terms.iter().map(|(_, p)| p))
        .collect();
    let (lhs_lo, lhs_hi) = min_max_degree(pieces).unwrap_or((0, 0));
    let low = if cfg.prune { lhs_lo } else { 0 };

    let mut degree = round_up_even(lhs_hi);
    if let Some(md) = cfg.mult_degree {
        for (_, g) in ineqs.iter().chain(sector_ineqs) {
            let dg = g.degree().unwrap_or(0);
            degree = degree.max(round_up_even(md + dg));
        }
    }

    let mut slots = Vec::new();
    if let Some((lo, hi)) = gram_window(low, degree) {
        slots.push(SosSlot {
            name: "s0".into(),
            multiplier: Polynomial::one(nvars),
            basis: monomial_basis(nvars, lo, hi),
        });
    } else {
        slots.push(SosSlot {
            name: "s0".into(),
            multiplier: Polynomial::one(nvars),
            basis: Vec::new(),
        });
    }
    for (is_sector, (name, g)) in ineqs
        .iter()
        .map(|x| (false, x))
        .chain(sector_ineqs.iter().map(|x| (true, x)))
    {
        let dg = g.degree().unwrap_or(0);
        let md = cfg
            .mult_degree
            .unwrap_or_else(|| round_down_even(degree.saturating_sub(dg)));
        let md = round_down_even(md);
        let mlow = match (cfg.prune, is_sector) {
            (false, _) => 0,
            (true, false) => round_up_even(low),
            (true, true) => round_up_even(low.saturating_sub(1)),
        };
        if md + dg > degree {
            return Err(Error::DegreeMismatch(format!(
                "multiplier of degree {md} times {name} exceeds constraint degree {degree}"
            )));
        }
        if let Some((lo, hi)) = gram_window(mlow, md) {
            slots.push(SosSlot {
                name: name.clone(),
                multiplier: g.clone(),
                basis: monomial_basis(nvars, lo, hi),
            });
        }
    }
    let mut c = SosConstraint {
        kind,
        fixed,
        mu_part,
        free_terms,
        slots,
        degree,
    };
    reduce_free_slot(&mut c);
    Ok(c)
}

/// Drops monomials `m` from the basis of slot 0 when `x^{2m}` appears
/// nowhere else in the identity: the diagonal entry `Q_mm` must then be
/// zero, and with it the whole row of a PSD `Q`. Repeats until stable.
fn reduce_free_slot(c: &mut SosConstraint) {
    let mut elsewhere: BTreeSet<Monomial> = BTreeSet::new();
    for p in std::iter::once(&c.fixed)
        .chain(std::iter::once(&c.mu_part))
        .chain(c.free_terms.iter().map(|(_, p)| p))
    {
        elsewhere.extend(p.terms().map(|(m, _)| m.clone()));
    }
    for slot in &c.slots[1..] {
        for (g, _) in slot.multiplier.terms() {
            for (i, a) in slot.basis.iter().enumerate() {
                for b in &slot.basis[i..] {
                    elsewhere.insert(add_mono(g, &add_mono(a, b)));
                }
            }
        }
    }
    let basis = &mut c.slots[0].basis;
    loop {
        let present: BTreeSet<&Monomial> = basis.iter().collect();
        let removable = basis.iter().position(|m| {
            let target = add_mono(m, m);
            !elsewhere.contains(&target)
                && !basis.iter().any(|a| {
                    a != m
                        && a.iter().zip(&target).all(|(x, t)| x <= t)
                        && present.contains(&target.iter().zip(a).map(|(t, x)| t - x).collect::<Monomial>())
                })
        });
        match removable {
            Some(i) => {
                basis.remove(i);
            }
            None => break,
        }
    }
}

/// Basis of `V`: degrees `2d..=deg_v` when pruning, `2..=deg_v` otherwise.
pub fn v_basis(nvars: usize, deg_v: u32, d: u32, prune: bool) -> Vec<Monomial> {
    let lo = if prune { (2 * d).min(deg_v) } else { 2 };
    monomial_basis(nvars, lo, deg_v)
}

fn v_terms(v_basis: &[Monomial], nvars: usize, sign: i64) -> Vec<(usize, Polynomial)> {
    v_basis
        .iter()
        .enumerate()
        .map(|(k, m)| (k, Polynomial::monomial(nvars, m.clone(), Coeff::from_integer(sign.into()))))
        .collect()
}

/// `V - eps ||x||^{2 tau} in Sigma`; `V(0) = 0` holds because the basis of
/// `V` has no constant term.
pub fn build_positivity(
    nvars: usize,
    v_basis: &[Monomial],
    epsilon: f64,
    tau: u32,
) -> Result<SosConstraint> {
    let fixed = Polynomial::norm_squared(nvars)
        .pow(tau)
        .scale(&-coeff_from_f64(epsilon));
    finish(
        nvars,
        ConstraintKind::Positivity,
        fixed,
        Polynomial::zero(nvars),
        v_terms(v_basis, nvars, 1),
        &[],
        &[],
        DegreeConfig {
            mult_degree: None,
            prune: true,
        },
    )
}

fn named_ineqs(omega: &[Polynomial], prefix: &str) -> Vec<(String, Polynomial)> {
    omega
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("{prefix}{}", i + 1), g.clone()))
        .collect()
}

/// `k ||x||^{2d} - V - sum_i s_i g_i in Sigma`.
pub fn build_upper_bound(
    nvars: usize,
    v_basis: &[Monomial],
    k: f64,
    d: u32,
    omega: &[Polynomial],
    cfg: DegreeConfig,
) -> Result<SosConstraint> {
    let fixed = Polynomial::norm_squared(nvars)
        .pow(d)
        .scale(&coeff_from_f64(k));
    finish(
        nvars,
        ConstraintKind::UpperBound,
        fixed,
        Polynomial::zero(nvars),
        v_terms(v_basis, nvars, -1),
        &named_ineqs(omega, "s"),
        &[],
        cfg,
    )
}

/// `-grad V . F - mu N - sum_i t_i g_i - sum_j v_j (+-x_j) in Sigma` on one
/// sector.
pub fn build_decrease(
    sector_index: usize,
    sector: &SectorConstraint,
    v_basis: &[Monomial],
    omega: &[Polynomial],
    cfg: DegreeConfig,
) -> Result<SosConstraint> {
    let nvars = sector.norm_poly.nvars();
    let free_terms = v_basis
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let vm = Polynomial::monomial(nvars, m.clone(), Coeff::one());
            let mut acc = Polynomial::zero(nvars);
            for (i, fi) in sector.field_polys.iter().enumerate() {
                acc = &acc - &(&vm.derivative(i) * fi);
            }
            (k, acc)
        })
        .collect();
    let sector_ineqs: Vec<(String, Polynomial)> = sector
        .extra_ineqs
        .iter()
        .enumerate()
        .map(|(j, e)| (format!("v{}", j + 1), e.clone()))
        .collect();
    finish(
        nvars,
        ConstraintKind::Decrease {
            sector: sector_index,
        },
        Polynomial::zero(nvars),
        -&sector.norm_poly,
        free_terms,
        &named_ineqs(omega, "t"),
        &sector_ineqs,
        cfg,
    )
}

/// `p in Sigma` on its own.
pub fn build_membership(p: &Polynomial) -> Result<SosConstraint> {
    finish(
        p.nvars(),
        ConstraintKind::Membership,
        p.clone(),
        Polynomial::zero(p.nvars()),
        Vec::new(),
        &[],
        &[],
        DegreeConfig {
            mult_degree: None,
            prune: true,
        },
    )
}

/// `g_i - sigma (c - V) in Sigma` for a fixed `V` and level `c`.
pub fn build_sublevel(
    ineq_index: usize,
    g: &Polynomial,
    v: &Polynomial,
    c: f64,
    sigma_degree: u32,
) -> Result<SosConstraint> {
    let n = g.nvars();
    let level = &Polynomial::constant(n, coeff_from_f64(c)) - v;
    finish(
        n,
        ConstraintKind::Sublevel { ineq: ineq_index },
        g.clone(),
        Polynomial::zero(n),
        Vec::new(),
        &[("sigma".into(), level)],
        &[],
        DegreeConfig {
            mult_degree: Some(sigma_degree),
            prune: false,
        },
    )
}

/// Map from `(constraint, slot)` to the SDP block holding its Gram matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub blocks: Vec<Vec<Option<usize>>>,
}

impl SosProgram {
    pub fn nfree(&self) -> usize {
        self.v_basis.len()
    }

    /// Lowers every identity to equality rows at the given `mu`.
    pub fn assemble_sdp(&self, mu: f64) -> Result<(SdpProblem, BlockLayout)> {
        let mut dims = Vec::new();
        let mut layout = Vec::new();
        for c in &self.constraints {
            let mut row = Vec::new();
            for s in &c.slots {
                if s.basis.is_empty() {
                    row.push(None);
                } else {
                    row.push(Some(dims.len()));
                    dims.push(s.basis.len());
                }
            }
            layout.push(row);
        }
        let mut sdp = SdpProblem::new(dims, self.nfree());
        for (ci, c) in self.constraints.iter().enumerate() {
            for r in constraint_rows(c, &layout[ci], mu)? {
                sdp.rows.push(r);
            }
        }
        Ok((sdp, BlockLayout { blocks: layout }))
    }

    /// `V` from the free scalars of a solution.
    pub fn extract_v(&self, scalars: &[f64]) -> Polynomial {
        Polynomial::from_f64_terms(
            self.nvars,
            self.v_basis.iter().cloned().zip(scalars.iter().copied()),
        )
    }
}

fn constraint_rows(c: &SosConstraint, blocks: &[Option<usize>], mu: f64) -> Result<Vec<SdpRow>> {
    let mut rows: BTreeMap<Monomial, SdpRow> = BTreeMap::new();
    let mut touch = |m: &Monomial| -> Result<()> {
        if monomial_degree(m) > c.degree {
            return Err(Error::DegreeMismatch(format!(
                "monomial {m:?} above constraint degree {}",
                c.degree
            )));
        }
        rows.entry(m.clone()).or_default();
        Ok(())
    };
    for (m, _) in c.fixed.terms().chain(c.mu_part.terms()) {
        touch(m)?;
    }
    for (_, p) in &c.free_terms {
        for (m, _) in p.terms() {
            touch(m)?;
        }
    }
    for s in &c.slots {
        for (i, bi) in s.basis.iter().enumerate() {
            for bj in &s.basis[i..] {
                let bb = add_mono(bi, bj);
                for (gm, _) in s.multiplier.terms() {
                    touch(&add_mono(&bb, gm))?;
                }
            }
        }
    }
    for (m, r) in rows.iter_mut() {
        r.rhs = coeff_to_f64(&c.fixed.coeff(m)) + mu * coeff_to_f64(&c.mu_part.coeff(m));
    }
    for (k, p) in &c.free_terms {
        for (m, v) in p.terms() {
            rows.get_mut(m).unwrap().free.push((*k, -coeff_to_f64(v)));
        }
    }
    for (s, blk) in c.slots.iter().zip(blocks) {
        let Some(blk) = *blk else { continue };
        for (i, bi) in s.basis.iter().enumerate() {
            for (j, bj) in s.basis.iter().enumerate().skip(i) {
                let bb = add_mono(bi, bj);
                for (gm, gv) in s.multiplier.terms() {
                    let m = add_mono(&bb, gm);
                    rows.get_mut(&m)
                        .unwrap()
                        .entries
                        .push((blk, i, j, coeff_to_f64(gv)));
                }
            }
        }
    }
    Ok(rows.into_values().collect())
}

/// Outcome of checking one Gram identity.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SosCheck {
    pub ok: bool,
    pub min_eigenvalue: f64,
    pub max_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyTolerances {
    pub eig_tol: f64,
    pub match_tol: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            eig_tol: 1e-7,
            match_tol: 1e-7,
        }
    }
}

/// `Z' Q Z` as a polynomial with floating coefficients.
pub fn gram_polynomial(q: &DMatrix<f64>, basis: &[Monomial]) -> Vec<(Monomial, f64)> {
    let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
    for (i, bi) in basis.iter().enumerate() {
        for (j, bj) in basis.iter().enumerate() {
            *acc.entry(add_mono(bi, bj)).or_insert(0.0) += q[(i, j)];
        }
    }
    acc.into_iter().collect()
}

fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 0 {
        return f64::INFINITY;
    }
    let s = (q + q.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// `p == Z' Q Z` with `Q >= 0`, up to the tolerances.
pub fn verify_sos(p: &Polynomial, q: &DMatrix<f64>, basis: &[Monomial], tol: &VerifyTolerances) -> SosCheck {
    if q.nrows() != basis.len() || q.ncols() != basis.len() {
        return SosCheck {
            ok: false,
            min_eigenvalue: f64::NAN,
            max_residual: f64::INFINITY,
        };
    }
    let mut diff: BTreeMap<Monomial, f64> = p
        .terms()
        .map(|(m, c)| (m.clone(), coeff_to_f64(c)))
        .collect();
    for (m, v) in gram_polynomial(q, basis) {
        *diff.entry(m).or_insert(0.0) -= v;
    }
    let max_residual = diff.values().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_eigenvalue = min_eigenvalue(q);
    SosCheck {
        ok: min_eigenvalue >= -tol.eig_tol && max_residual <= tol.match_tol,
        min_eigenvalue,
        max_residual,
    }
}

/// Checks a whole identity given the free scalars and one Gram matrix per
/// slot (`None` for empty slots).
pub fn verify_constraint(
    c: &SosConstraint,
    mu: f64,
    scalars: &[f64],
    grams: &[Option<DMatrix<f64>>],
    tol: &VerifyTolerances,
) -> SosCheck {
    let n = c.fixed.nvars();
    let mut diff: BTreeMap<Monomial, f64> = BTreeMap::new();
    let mut add = |p: &Polynomial, w: f64| {
        for (m, v) in p.terms() {
            *diff.entry(m.clone()).or_insert(0.0) += w * coeff_to_f64(v);
        }
    };
    add(&c.fixed, 1.0);
    add(&c.mu_part, mu);
    for (k, p) in &c.free_terms {
        add(p, scalars[*k]);
    }
    let mut min_eig = f64::INFINITY;
    for (s, g) in c.slots.iter().zip(grams) {
        let Some(q) = g else { continue };
        if q.nrows() != s.basis.len() {
            return SosCheck {
                ok: false,
                min_eigenvalue: f64::NAN,
                max_residual: f64::INFINITY,
            };
        }
        min_eig = min_eig.min(min_eigenvalue(q));
        let sq = Polynomial::from_f64_terms(n, gram_polynomial(q, &s.basis));
        let prod = &sq * &s.multiplier;
        for (m, v) in prod.terms() {
            *diff.entry(m.clone()).or_insert(0.0) -= coeff_to_f64(v);
        }
    }
    let max_residual = diff.values().fold(0.0f64, |a, v| a.max(v.abs()));
    SosCheck {
        ok: min_eig >= -tol.eig_tol && max_residual <= tol.match_tol,
        min_eigenvalue: min_eig,
        max_residual,
    }
}

/// Gram matrices of a solution arranged per constraint and slot.
pub fn split_grams(layout: &BlockLayout, sol: &SdpSolution) -> Vec<Vec<Option<DMatrix<f64>>>> {
    layout
        .blocks
        .iter()
        .map(|row| row.iter().map(|b| b.map(|k| sol.blocks[k].clone())).collect())
        .collect()
}

/// Whether every region inequality is strictly positive at the origin.
pub fn origin_interior(omega: &[Polynomial]) -> bool {
    let zero = Monomial::from(vec![0u32; omega.first().map_or(0, |g| g.nvars())]);
    omega.iter().all(|g| g.coeff(&zero).is_positive())
}
