//! Dense primal-dual interior-point solver for small semidefinite programs
//! with free variables, plus the outer bisection on the decay rate.
//!
//! Problem form:
//!
//! ```text
//! minimize   <C, X> + c_u' u
//! subject to <A_i, X> + F_i' u = b_i,   X = diag(X_1, ..., X_k) >= 0
//! ```
//!
//! The solver runs on the homogeneous self-dual embedding with the HKM
//! search direction and a Mehrotra predictor-corrector step, so an
//! infeasible problem converges to a Farkas ray rather than stalling.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entry `(i, j, v)` with `i <= j` stands for `A_ij = A_ji = v`.
pub type SymEntry = (usize, usize, f64);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpRow {
    /// `(block, i, j, v)` with `i <= j`.
    pub entries: Vec<(usize, usize, usize, f64)>,
    /// `(free variable, coefficient)`.
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub nfree: usize,
    pub rows: Vec<SdpRow>,
    /// Objective matrix per block; empty means zero.
    pub c_blocks: Vec<Vec<SymEntry>>,
    /// Objective on free variables; empty means zero.
    pub c_free: Vec<f64>,
}

impl SdpProblem {
    pub fn new(block_dims: Vec<usize>, nfree: usize) -> Self {
        Self {
            c_blocks: vec![Vec::new(); block_dims.len()],
            block_dims,
            nfree,
            rows: Vec::new(),
            c_free: Vec::new(),
        }
    }

    /// Number of scalar unknowns (upper triangles plus free variables).
    pub fn size(&self) -> usize {
        self.block_dims.iter().map(|n| n * (n + 1) / 2).sum::<usize>() + self.nfree
    }

    pub fn has_objective(&self) -> bool {
        self.c_blocks.iter().any(|b| b.iter().any(|e| e.2 != 0.0))
            || self.c_free.iter().any(|&c| c != 0.0)
    }

    /// Plain-text dump: `nblocks k`, one `dim n` line per block, `nfree m`,
    /// then one line per equality of `coef block i j` groups (free
    /// variables written as `coef u idx`) followed by the right-hand side.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nblocks {}", self.block_dims.len());
        for n in &self.block_dims {
            let _ = writeln!(s, "dim {n}");
        }
        let _ = writeln!(s, "nfree {}", self.nfree);
        for r in &self.rows {
            for &(b, i, j, v) in &r.entries {
                let _ = write!(s, "{v:e} {b} {i} {j} ");
            }
            for &(k, v) in &r.free {
                let _ = write!(s, "{v:e} u {k} ");
            }
            let _ = writeln!(s, "{:e}", r.rhs);
        }
        s
    }

    /// `A_i . X + F_i . u - b_i` for every row.
    pub fn residuals(&self, blocks: &[DMatrix<f64>], scalars: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let mut acc = -r.rhs;
                for &(b, i, j, v) in &r.entries {
                    acc += if i == j {
                        v * blocks[b][(i, i)]
                    } else {
                        v * (blocks[b][(i, j)] + blocks[b][(j, i)])
                    };
                }
                for &(k, v) in &r.free {
                    acc += v * scalars[k];
                }
                acc
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Indeterminate,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverMetrics {
    pub iterations: usize,
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    pub objective: f64,
    pub diagnostic: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<DMatrix<f64>>,
    pub scalars: Vec<f64>,
    pub metrics: SolverMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverTolerances {
    pub feas_tol: f64,
    pub eig_tol: f64,
    pub gap_tol: f64,
    pub infeas_tol: f64,
    pub max_iter: usize,
    pub dim_cap: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            eig_tol: 1e-7,
            gap_tol: 1e-8,
            infeas_tol: 1e-8,
            max_iter: 200,
            dim_cap: 2000,
        }
    }
}

/// Internal row-scaled copy of the constraint data with dense per-block
/// matrices for rows touching a block.
struct Scaled {
    dims: Vec<usize>,
    nfree: usize,
    /// Per block, the rows that touch it with their dense matrix.
    a: Vec<Vec<(usize, DMatrix<f64>)>>,
    f: DMatrix<f64>,
    b: DVector<f64>,
    c: Vec<DMatrix<f64>>,
    cu: DVector<f64>,
    m: usize,
}

impl Scaled {
    fn apply_a(&self, xs: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, rows) in self.a.iter().enumerate() {
            for (r, a) in rows {
                out[*r] += a.dot(&xs[blk]);
            }
        }
        out
    }

    fn apply_at(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.dims
            .iter()
            .enumerate()
            .map(|(blk, &n)| {
                let mut s = DMatrix::zeros(n, n);
                for (r, a) in &self.a[blk] {
                    if y[*r] != 0.0 {
                        s += a * y[*r];
                    }
                }
                s
            })
            .collect()
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = m.clone().cholesky()?;
    Some(sym(&ch.inverse()))
}

/// Largest `alpha` (capped at `cap`) with `x + alpha dx` positive semidefinite.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>, cap: f64) -> Option<f64> {
    if x.nrows() == 0 {
        return Some(cap);
    }
    let ch = x.clone().cholesky()?;
    let l = ch.l();
    let t = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&t.transpose())?;
    let lmin = sym(&w).symmetric_eigenvalues().min();
    Some(if lmin >= 0.0 { cap } else { cap.min(-1.0 / lmin) })
}

/// Least-norm correction of `(X, u)` onto the affine constraints, accepted
/// when the result is feasible and positive semidefinite within tolerance.
fn project(
    p: &SdpProblem,
    xs: &[DMatrix<f64>],
    us: &[f64],
    tol: &SolverTolerances,
    iter: usize,
    diag: &str,
) -> Option<SdpSolution> {
    let m = p.rows.len();
    let mut by_key: std::collections::BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> =
        std::collections::BTreeMap::new();
    let mut by_free: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.nfree];
    for (r, row) in p.rows.iter().enumerate() {
        for &(b, i, j, v) in &row.entries {
            by_key.entry((b, i, j)).or_default().push((r, v));
        }
        for &(k, v) in &row.free {
            by_free[k].push((r, v));
        }
    }
    let mut g = DMatrix::<f64>::zeros(m, m);
    for ((_, i, j), list) in &by_key {
        let w = if i == j { 1.0 } else { 2.0 };
        for &(r, v) in list {
            for &(s, v2) in list {
                g[(r, s)] += w * v * v2;
            }
        }
    }
    for list in &by_free {
        for &(r, v) in list {
            for &(s, v2) in list {
                g[(r, s)] += v * v2;
            }
        }
    }
    let svd = g.svd(true, true);
    let mut x: Vec<DMatrix<f64>> = xs.to_vec();
    let mut u: Vec<f64> = us.to_vec();
    for _ in 0..3 {
        let r = DVector::from_vec(p.residuals(&x, &u));
        let w = svd.solve(&r, 1e-12 * svd.singular_values.max()).ok()?;
        for ((b, i, j), list) in &by_key {
            let delta: f64 = list.iter().map(|&(r, v)| w[r] * v).sum();
            x[*b][(*i, *j)] -= delta;
            if i != j {
                x[*b][(*j, *i)] -= delta;
            }
        }
        for (k, list) in by_free.iter().enumerate() {
            u[k] -= list.iter().map(|&(r, v)| w[r] * v).sum::<f64>();
        }
    }
    let max_res = p.residuals(&x, &u).iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let min_eigenvalue = min_eig(&x);
    (max_res <= tol.feas_tol && min_eigenvalue >= -tol.eig_tol).then(|| SdpSolution {
        status: SdpStatus::Feasible,
        blocks: x,
        scalars: u,
        metrics: SolverMetrics {
            iterations: iter,
            max_residual: max_res,
            min_eigenvalue,
            objective: 0.0,
            diagnostic: format!("projected after: {diag}"),
        },
    })
}

fn min_eig(blocks: &[DMatrix<f64>]) -> f64 {
    blocks
        .iter()
        .filter(|b| b.nrows() > 0)
        .map(|b| sym(b).symmetric_eigenvalues().min())
        .fold(f64::INFINITY, f64::min)
}

fn indeterminate(diag: impl Into<String>, p: &SdpProblem, iterations: usize) -> SdpSolution {
    SdpSolution {
        status: SdpStatus::Indeterminate,
        blocks: p.block_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
        scalars: vec![0.0; p.nfree],
        metrics: SolverMetrics {
            iterations,
            max_residual: f64::NAN,
            min_eigenvalue: f64::NAN,
            objective: f64::NAN,
            diagnostic: diag.into(),
        },
    }
}

/// Solves the SDP. Errors only on a dimension-cap violation or malformed
/// indices; numerical trouble yields an indeterminate status.
pub fn solve(p: &SdpProblem, tol: &SolverTolerances) -> Result<SdpSolution> {
    if p.size() > tol.dim_cap {
        return Err(Error::DimensionCap {
            size: p.size(),
            cap: tol.dim_cap,
        });
    }
    for r in &p.rows {
        for &(b, i, j, _) in &r.entries {
            if b >= p.block_dims.len() || i > j || j >= p.block_dims[b] {
                return Err(Error::InvalidProblem(format!(
                    "SDP entry ({b}, {i}, {j}) outside the block layout"
                )));
            }
        }
        if r.free.iter().any(|&(k, _)| k >= p.nfree) {
            return Err(Error::InvalidProblem("free-variable index out of range".into()));
        }
    }

    // Drop empty rows; a nonzero right-hand side on one is infeasible.
    let mut kept = Vec::new();
    for r in &p.rows {
        let empty = r.entries.iter().all(|e| e.3 == 0.0) && r.free.iter().all(|e| e.1 == 0.0);
        if empty {
            if r.rhs != 0.0 {
                let mut sol = indeterminate("structurally infeasible row", p, 0);
                sol.status = SdpStatus::Infeasible;
                return Ok(sol);
            }
        } else {
            kept.push(r);
        }
    }

    let m = kept.len();
    let nb = p.block_dims.len();
    let mut a: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); nb];
    let mut f = DMatrix::zeros(m, p.nfree);
    let mut b = DVector::zeros(m);
    for (ri, r) in kept.iter().enumerate() {
        let mut norm2 = r.free.iter().map(|e| e.1 * e.1).sum::<f64>();
        for &(_, i, j, v) in &r.entries {
            norm2 += if i == j { v * v } else { 2.0 * v * v };
        }
        let scale = 1.0 / norm2.sqrt();
        let mut per_block: Vec<Option<DMatrix<f64>>> = vec![None; nb];
        for &(blk, i, j, v) in &r.entries {
            let n = p.block_dims[blk];
            let mat = per_block[blk].get_or_insert_with(|| DMatrix::zeros(n, n));
            mat[(i, j)] += v * scale;
            if i != j {
                mat[(j, i)] += v * scale;
            }
        }
        for (blk, mat) in per_block.into_iter().enumerate() {
            if let Some(mat) = mat {
                a[blk].push((ri, mat));
            }
        }
        for &(k, v) in &r.free {
            f[(ri, k)] += v * scale;
        }
        b[ri] = r.rhs * scale;
    }
    let mut c: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for (blk, entries) in p.c_blocks.iter().enumerate() {
        for &(i, j, v) in entries {
            c[blk][(i, j)] += v;
            if i != j {
                c[blk][(j, i)] += v;
            }
        }
    }
    let mut cu = DVector::zeros(p.nfree);
    for (k, &v) in p.c_free.iter().enumerate() {
        cu[k] = v;
    }
    let data = Scaled {
        dims: p.block_dims.clone(),
        nfree: p.nfree,
        a,
        f,
        b,
        c,
        cu,
        m,
    };
    Ok(run(&data, p, tol))
}

/// Best iterate so far: max residual, primal blocks, free variables.
type Iterate = (f64, Vec<DMatrix<f64>>, Vec<f64>);

fn run(d: &Scaled, p: &SdpProblem, tol: &SolverTolerances) -> SdpSolution {
    let has_obj = p.has_objective();
    let ntot: usize = d.dims.iter().sum();
    let mut x: Vec<DMatrix<f64>> = d.dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
    let mut z = x.clone();
    let mut y = DVector::zeros(d.m);
    let mut u = DVector::zeros(d.nfree);
    let (mut tau, mut kappa) = (1.0f64, 1.0f64);

    let mut best_res = f64::INFINITY;
    let mut since_improve = 0usize;
    let mut best: Option<Iterate> = None;
    let give_up = |diag: String, iter: usize, best: &Option<Iterate>| {
        if !has_obj {
            if let Some((_, xs, us)) = best {
                if let Some(sol) = project(p, xs, us, tol, iter, &diag) {
                    return sol;
                }
            }
        }
        indeterminate(diag, p, iter)
    };

    for iter in 0..=tol.max_iter {
        // Residuals.
        let ax = d.apply_a(&x);
        let fu = &d.f * &u;
        let rp = &d.b * tau - &ax - &fu;
        let aty = d.apply_at(&y);
        let rd: Vec<DMatrix<f64>> = (0..x.len())
            .map(|k| &d.c[k] * tau - &aty[k] - &z[k])
            .collect();
        let rf = &d.cu * tau - d.f.transpose() * &y;
        let cx = inner(&d.c, &x) + d.cu.dot(&u);
        let by = d.b.dot(&y);
        let rg = kappa + cx - by;
        let mu = (inner(&x, &z) + tau * kappa) / (ntot as f64 + 1.0);

        if !mu.is_finite() || !tau.is_finite() || !kappa.is_finite() {
            return give_up("non-finite iterate".into(), iter, &best);
        }

        // Termination tests in the original units.
        let xs: Vec<DMatrix<f64>> = x.iter().map(|m| m / tau).collect();
        let us: Vec<f64> = u.iter().map(|v| v / tau).collect();
        let res = p.residuals(&xs, &us);
        let max_res = res.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        if max_res.is_finite() && best.as_ref().is_none_or(|b| max_res < b.0) {
            best = Some((max_res, xs.clone(), us.clone()));
        }
        let primal_ok = max_res <= tol.feas_tol;
        let optimal_ok = if has_obj {
            let dres = rd.iter().map(|m| m.norm()).sum::<f64>() / tau + rf.norm() / tau;
            let gap = (cx - by).abs() / tau / (1.0 + cx.abs() / tau + by.abs() / tau);
            dres <= tol.gap_tol * 10.0 && gap <= tol.gap_tol
        } else {
            true
        };
        if primal_ok && optimal_ok {
            let min_eigenvalue = min_eig(&xs);
            return SdpSolution {
                status: SdpStatus::Feasible,
                metrics: SolverMetrics {
                    iterations: iter,
                    max_residual: max_res,
                    min_eigenvalue,
                    objective: cx / tau,
                    diagnostic: String::new(),
                },
                blocks: xs,
                scalars: us,
            };
        }
        if by > 0.0 {
            let ray: f64 = (0..x.len()).map(|k| (&aty[k] + &z[k]).norm()).sum::<f64>() / by;
            let free_ray = (d.f.transpose() * &y).norm() / by;
            if ray <= tol.infeas_tol && free_ray <= tol.infeas_tol {
                return SdpSolution {
                    status: SdpStatus::Infeasible,
                    blocks: xs,
                    scalars: us,
                    metrics: SolverMetrics {
                        iterations: iter,
                        max_residual: max_res,
                        min_eigenvalue: f64::NAN,
                        objective: f64::NAN,
                        diagnostic: format!("dual ray b'y = {by:e}"),
                    },
                };
            }
        }
        if iter == tol.max_iter {
            return give_up(format!("iteration cap reached (residual {max_res:e})"), iter, &best);
        }
        let progress = max_res.min(mu);
        if progress < 0.5 * best_res {
            best_res = progress;
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve > 40 {
                return give_up(format!("stalled (residual {max_res:e})"), iter, &best);
            }
        }

        // Shared pieces of the Newton system.
        let zinv: Option<Vec<DMatrix<f64>>> = z.iter().map(spd_inverse).collect();
        let Some(zinv) = zinv else {
            return give_up("dual slack lost definiteness".into(), iter, &best);
        };
        let s_op = |w: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            (0..x.len()).map(|k| sym(&(&x[k] * &w[k] * &zinv[k]))).collect()
        };

        // Schur complement M_ij = tr(A_i X A_j Z^{-1}).
        let mut kmat = DMatrix::zeros(d.m + d.nfree, d.m + d.nfree);
        for (blk, rows) in d.a.iter().enumerate() {
            for (rj, aj) in rows {
                let w = &x[blk] * aj * &zinv[blk];
                for (ri, ai) in rows {
                    if ri <= rj {
                        let v = ai.dot(&w);
                        kmat[(*ri, *rj)] += v;
                        if ri != rj {
                            kmat[(*rj, *ri)] += v;
                        }
                    }
                }
            }
        }
        let diag_max = (0..d.m).map(|i| kmat[(i, i)]).fold(0.0f64, f64::max);
        let reg = 1e-14 * (1.0 + diag_max);
        for i in 0..d.m {
            kmat[(i, i)] += reg;
        }
        for i in 0..d.m {
            for k in 0..d.nfree {
                kmat[(i, d.m + k)] = d.f[(i, k)];
                kmat[(d.m + k, i)] = d.f[(i, k)];
            }
        }
        for k in 0..d.nfree {
            kmat[(d.m + k, d.m + k)] = -reg;
        }
        let lu = kmat.full_piv_lu();

        let sc = s_op(&d.c);
        let a_sc = d.apply_a(&sc);
        let c_sc = inner(&d.c, &sc);
        let mut g = DVector::zeros(d.m + d.nfree);
        g.rows_mut(0, d.m).copy_from(&(&a_sc + &d.b));
        g.rows_mut(d.m, d.nfree).copy_from(&d.cu);
        let Some(qv) = lu.solve(&g) else {
            return give_up("singular Newton system".into(), iter, &best);
        };
        let amb = &a_sc - &d.b;

        // Direction for a given centering, returns (dX, dy, du, dZ, dtau, dkappa).
        type Dir = (
            Vec<DMatrix<f64>>,
            DVector<f64>,
            DVector<f64>,
            Vec<DMatrix<f64>>,
            f64,
            f64,
        );
        let direction = |eta: f64, rc: &[DMatrix<f64>], r_tau: f64| -> Option<Dir> {
            let eta_rd: Vec<DMatrix<f64>> = rd.iter().map(|m| m * eta).collect();
            let s_rd = s_op(&eta_rd);
            let base: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &rc[k] - &s_rd[k]).collect();
            let mut h = DVector::zeros(d.m + d.nfree);
            h.rows_mut(0, d.m).copy_from(&(&rp * eta - d.apply_a(&base)));
            h.rows_mut(d.m, d.nfree).copy_from(&(&rf * eta));
            let pv = lu.solve(&h)?;
            let (py, pu) = (pv.rows(0, d.m), pv.rows(d.m, d.nfree));
            let (qy, qu) = (qv.rows(0, d.m), qv.rows(d.m, d.nfree));
            let lhs = -kappa / tau + amb.dot(&qy) - c_sc + d.cu.dot(&qu);
            let rhs = -eta * rg - r_tau / tau - inner(&d.c, &base) - amb.dot(&py) - d.cu.dot(&pu);
            let dtau = rhs / lhs;
            let dy: DVector<f64> = py + qy * dtau;
            let du: DVector<f64> = pu + qu * dtau;
            let atdy = d.apply_at(&dy);
            let dz: Vec<DMatrix<f64>> = (0..x.len())
                .map(|k| &eta_rd[k] - &atdy[k] + &d.c[k] * dtau)
                .collect();
            let sdz = s_op(&dz);
            let dx: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &rc[k] - &sdz[k]).collect();
            let dkappa = (r_tau - kappa * dtau) / tau;
            let finite = dtau.is_finite() && dkappa.is_finite() && dy.iter().all(|v| v.is_finite());
            finite.then_some((dx, dy, du, dz, dtau, dkappa))
        };
        let step_len = |dir: &Dir, frac: f64| -> Option<f64> {
            let mut alpha = 1.0f64 / frac;
            for k in 0..x.len() {
                alpha = max_step(&x[k], &dir.0[k], alpha)?;
                alpha = max_step(&z[k], &dir.3[k], alpha)?;
            }
            if dir.4 < 0.0 {
                alpha = alpha.min(-tau / dir.4);
            }
            if dir.5 < 0.0 {
                alpha = alpha.min(-kappa / dir.5);
            }
            Some((alpha * frac).min(1.0))
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = x.iter().map(|m| -m).collect();
        let Some(aff) = direction(1.0, &rc_aff, -tau * kappa) else {
            return give_up("non-finite predictor direction".into(), iter, &best);
        };
        let Some(alpha_a) = step_len(&aff, 1.0) else {
            return give_up("predictor step failed".into(), iter, &best);
        };
        let mu_aff = {
            let mut acc = 0.0;
            for k in 0..x.len() {
                let xa = &x[k] + &aff.0[k] * alpha_a;
                let za = &z[k] + &aff.3[k] * alpha_a;
                acc += xa.dot(&za);
            }
            acc += (tau + alpha_a * aff.4) * (kappa + alpha_a * aff.5);
            acc / (ntot as f64 + 1.0)
        };
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: Vec<DMatrix<f64>> = (0..x.len())
            .map(|k| {
                &zinv[k] * (sigma * mu) - &x[k] - sym(&(&aff.0[k] * &aff.3[k] * &zinv[k]))
            })
            .collect();
        let r_tau = sigma * mu - tau * kappa - aff.4 * aff.5;
        let Some(dir) = direction(1.0 - sigma, &rc, r_tau) else {
            return give_up("non-finite corrector direction".into(), iter, &best);
        };
        let Some(alpha) = step_len(&dir, 0.95) else {
            return give_up("corrector step failed".into(), iter, &best);
        };
        if alpha < 1e-12 {
            return give_up("step length collapsed".into(), iter, &best);
        }
        for k in 0..x.len() {
            x[k] = sym(&(&x[k] + &dir.0[k] * alpha));
            z[k] = sym(&(&z[k] + &dir.3[k] * alpha));
        }
        y += &dir.1 * alpha;
        u += &dir.2 * alpha;
        tau += alpha * dir.4;
        kappa += alpha * dir.5;

        // Rescale the embedding to keep magnitudes moderate.
        let scale = tau.max(kappa);
        if !(1e-8..=1e8).contains(&scale) {
            for k in 0..x.len() {
                x[k] /= scale;
                z[k] /= scale;
            }
            y /= scale;
            u /= scale;
            tau /= scale;
            kappa /= scale;
        }
    }
    unreachable!("loop returns at the iteration cap")
}

/// Outcome of the decay-rate bisection.
#[derive(Clone, Debug)]
pub struct BisectionResult<T> {
    pub mu: f64,
    pub solution: T,
    /// `(mu, status)` for every probe, in order.
    pub probes: Vec<(f64, SdpStatus)>,
}

/// Largest `mu` in `[lo, hi]` whose problem is feasible, to within
/// `abs_tol + rel_tol * mu`. Indeterminate probes count as infeasible.
pub fn bisect_mu<T, F>(
    mut feasibility: F,
    bracket: (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> Result<BisectionResult<T>>
where
    F: FnMut(f64) -> Result<(SdpStatus, T)>,
{
    let (lo0, hi0) = bracket;
    let mut probes = Vec::new();
    let (status, sol) = feasibility(lo0)?;
    probes.push((lo0, status));
    if status != SdpStatus::Feasible {
        return Err(Error::NoCertificate(format!(
            "decrease condition is {} at mu = {lo0}",
            match status {
                SdpStatus::Infeasible => "infeasible",
                _ => "unresolved",
            }
        )));
    }
    let (mut lo, mut best) = (lo0, sol);
    let (status, sol) = feasibility(hi0)?;
    probes.push((hi0, status));
    if status == SdpStatus::Feasible {
        return Ok(BisectionResult {
            mu: hi0,
            solution: sol,
            probes,
        });
    }
    let mut hi = hi0;
    while hi - lo > abs_tol + rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        let (status, sol) = feasibility(mid)?;
        probes.push((mid, status));
        if status == SdpStatus::Feasible {
            lo = mid;
            best = sol;
        } else {
            hi = mid;
        }
    }
    Ok(BisectionResult {
        mu: lo,
        solution: best,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(entries: Vec<(usize, usize, usize, f64)>, rhs: f64) -> SdpRow {
        SdpRow {
            entries,
            free: vec![],
            rhs,
        }
    }

    #[test]
    fn maximize_off_diagonal() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.rows.push(row(vec![(0, 0, 0, 1.0)], 1.0));
        p.rows.push(row(vec![(0, 1, 1, 1.0)], 1.0));
        p.c_blocks[0].push((0, 1, -0.5));
        let sol = solve(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!((sol.blocks[0][(0, 1)] - 1.0).abs() < 1e-6, "{}", sol.blocks[0]);
    }

    // x^4 - 2x^2 + 1 over basis (1, x, x^2).
    fn quartic_problem(c: [f64; 5]) -> SdpProblem {
        let mut p = SdpProblem::new(vec![3], 0);
        let pairs: Vec<Vec<(usize, usize)>> = vec![
            vec![(0, 0)],
            vec![(0, 1)],
            vec![(1, 1), (0, 2)],
            vec![(1, 2)],
            vec![(2, 2)],
        ];
        for (deg, ps) in pairs.into_iter().enumerate() {
            p.rows.push(row(ps.into_iter().map(|(i, j)| (0, i, j, 1.0)).collect(), c[deg]));
        }
        p
    }

    #[test]
    fn square_is_feasible() {
        let sol = solve(&quartic_problem([1.0, 0.0, -2.0, 0.0, 1.0]), &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!(sol.metrics.max_residual <= 1e-8);
        assert!(sol.metrics.min_eigenvalue >= -1e-7);
    }

    #[test]
    fn negative_square_is_infeasible() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.rows.push(row(vec![(0, 0, 0, 1.0)], 0.0));
        p.rows.push(row(vec![(0, 0, 1, 1.0)], 0.0));
        p.rows.push(row(vec![(0, 1, 1, 1.0)], -1.0));
        let sol = solve(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn free_variables_are_solved() {
        // Q - u * I-ish: Q00 = 1 + u, Q11 = 2 - u, Q01 = 0, u free; also u = 0.5.
        let mut p = SdpProblem::new(vec![2], 1);
        p.rows.push(SdpRow {
            entries: vec![(0, 0, 0, 1.0)],
            free: vec![(0, -1.0)],
            rhs: 1.0,
        });
        p.rows.push(SdpRow {
            entries: vec![(0, 1, 1, 1.0)],
            free: vec![(0, 1.0)],
            rhs: 2.0,
        });
        p.rows.push(SdpRow {
            entries: vec![],
            free: vec![(0, 2.0)],
            rhs: 1.0,
        });
        let sol = solve(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!((sol.scalars[0] - 0.5).abs() < 1e-7);
        assert!((sol.blocks[0][(0, 0)] - 1.5).abs() < 1e-7);
    }

    #[test]
    fn empty_row_with_rhs_is_infeasible() {
        let mut p = SdpProblem::new(vec![1], 0);
        p.rows.push(row(vec![], 1.0));
        assert_eq!(solve(&p, &SolverTolerances::default()).unwrap().status, SdpStatus::Infeasible);
    }

    #[test]
    fn dimension_cap() {
        let p = SdpProblem::new(vec![100], 0);
        let tol = SolverTolerances {
            dim_cap: 2000,
            ..Default::default()
        };
        assert!(matches!(solve(&p, &tol), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn bisection_on_step_function() {
        let r = bisect_mu(
            |mu| {
                Ok((
                    if mu <= 5.0 {
                        SdpStatus::Feasible
                    } else {
                        SdpStatus::Infeasible
                    },
                    mu,
                ))
            },
            (0.0, 100.0),
            1e-2,
            0.0,
        )
        .unwrap();
        assert!((4.99..=5.01).contains(&r.mu), "{}", r.mu);
        assert_eq!(r.solution, r.mu);
    }

    #[test]
    fn bisection_fails_at_lower_end() {
        let r = bisect_mu(|_| Ok((SdpStatus::Indeterminate, ())), (0.0, 1.0), 1e-2, 1e-2);
        assert!(matches!(r, Err(Error::NoCertificate(_))));
    }

    #[test]
    fn deterministic_iterates() {
        let p = quartic_problem([1.0, 0.0, -2.0, 0.0, 1.0]);
        let a = solve(&p, &SolverTolerances::default()).unwrap();
        let b = solve(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.metrics, b.metrics);
    }
}
