//! End-to-end certification: transform, build the SoS program, bisect on
//! the decay rate, and package the result as a [`Certificate`] together
//! with the settling-time bound and the region where it applies.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::exprparse::ProblemSpec;
use crate::polyalg::{
    coeff_from_f64, Coeff, CompiledExpr, Direction, Monomial, Polynomial, RationalExp,
    SignedPowerExpr, SignedPowerTerm,
};
use crate::sdpsolve::{bisect_mu, solve, SdpSolution, SdpStatus, SolverMetrics, SolverTolerances};
use crate::sosprog::{
    build_decrease, build_positivity, build_sublevel, build_upper_bound, gram_polynomial,
    origin_interior, split_grams, v_basis, verify_constraint, verify_sos, BlockLayout,
    ConstraintKind, DegreeConfig, SosProgram, VerifyTolerances,
};
use crate::transform::{transform, TransformResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyConfig {
    pub solver: SolverTolerances,
    pub verify: VerifyTolerances,
    pub bisect_abs_tol: f64,
    pub bisect_rel_tol: f64,
    /// Degree of the SoS multiplier in the sublevel program.
    pub sublevel_degree: u32,
    pub level_steps: usize,
    /// Stop the level bisection once the bracket is this narrow.
    pub level_tol: f64,
    pub compute_level: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            solver: SolverTolerances::default(),
            verify: VerifyTolerances::default(),
            bisect_abs_tol: 1e-2,
            bisect_rel_tol: 1e-2,
            sublevel_degree: 2,
            level_steps: 40,
            level_tol: 0.0,
            compute_level: true,
        }
    }
}

/// Stored Gram matrix of one SoS slot.
#[derive(Clone, Debug, PartialEq)]
pub struct GramRecord {
    pub basis: Vec<Monomial>,
    pub matrix: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub version: String,
    pub tolerances: BTreeMap<String, f64>,
    pub solver: SolverMetrics,
    pub grams: BTreeMap<String, GramRecord>,
    pub probes: Vec<(f64, SdpStatus)>,
    pub tau_requested: u32,
    pub sectorized: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub state_names: Vec<String>,
    pub v: Polynomial,
    pub multipliers: BTreeMap<String, Polynomial>,
    pub q: Vec<u32>,
    pub lambda: Vec<u32>,
    pub p: u32,
    pub d: u32,
    pub tau: u32,
    pub k: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub omega_ineqs: Vec<Polynomial>,
    pub gamma: RationalExp,
    pub mu_tilde: f64,
    pub v_tilde: SignedPowerExpr,
    /// Largest validated sublevel value; `Some(inf)` when the region is all
    /// of space.
    pub c_star: Option<f64>,
    pub provenance: Provenance,
}

/// `p / (2d)`, rejected unless strictly between 0 and 1.
pub fn gamma_of(p: u32, d: u32) -> Result<RationalExp> {
    if p == 0 || 2 * d <= p {
        return Err(Error::Parameter(format!(
            "need 0 < p < 2d for a finite-time certificate, got p = {p}, d = {d}"
        )));
    }
    Ok(RationalExp::new(i64::from(p), 2 * i64::from(d)))
}

/// Decay rate of the transformed inequality. From `V <= k ||x||^{2d}`,
/// `V^gamma <= k^gamma ||x||^p`, so `mu ||x||^p >= (mu / k^gamma) V^gamma`.
pub fn mu_tilde_of(mu: f64, k: f64, gamma: RationalExp) -> f64 {
    mu / k.powf(gamma.to_f64())
}

impl Certificate {
    /// Assembles a certificate from its primary data, deriving `gamma`,
    /// `mu_tilde` and `V_tilde`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        state_names: Vec<String>,
        v: Polynomial,
        q: Vec<u32>,
        lambda: Vec<u32>,
        p: u32,
        d: u32,
        tau: u32,
        k: f64,
        mu: f64,
        epsilon: f64,
        omega_ineqs: Vec<Polynomial>,
    ) -> Result<Self> {
        let gamma = gamma_of(p, d)?;
        let qexp: Vec<RationalExp> = q.iter().map(|&v| RationalExp::integer(v.into())).collect();
        let v_tilde = v.to_spe().substitute_power(&qexp, Direction::Inverse)?;
        Ok(Self {
            state_names,
            v,
            multipliers: BTreeMap::new(),
            q,
            lambda,
            p,
            d,
            tau,
            k,
            mu,
            epsilon,
            omega_ineqs,
            gamma,
            mu_tilde: mu_tilde_of(mu, k, gamma),
            v_tilde,
            c_star: None,
            provenance: Provenance {
                version: VERSION.to_string(),
                tolerances: BTreeMap::new(),
                solver: SolverMetrics::default(),
                grams: BTreeMap::new(),
                probes: Vec::new(),
                tau_requested: tau,
                sectorized: Vec::new(),
            },
        })
    }

    pub fn nvars(&self) -> usize {
        self.q.len()
    }

    /// Every stored multiplier matches its Gram matrix and that matrix is
    /// positive semidefinite.
    pub fn verify_multipliers(&self, tol: &VerifyTolerances) -> bool {
        self.multipliers.iter().all(|(id, poly)| {
            self.provenance
                .grams
                .get(id)
                .is_some_and(|g| verify_sos(poly, &g.matrix, &g.basis, tol).ok)
        })
    }
}

fn constraint_id(kind: &ConstraintKind) -> String {
    match kind {
        ConstraintKind::Positivity => "positivity".into(),
        ConstraintKind::UpperBound => "upper_bound".into(),
        ConstraintKind::Decrease { sector } => format!("decrease{sector}"),
        ConstraintKind::Membership => "membership".into(),
        ConstraintKind::Sublevel { ineq } => format!("sublevel{ineq}"),
    }
}

/// SoS program for a problem at its transform.
pub fn build_program(spec: &ProblemSpec, tr: &TransformResult, tau: u32) -> Result<SosProgram> {
    let n = spec.nvars();
    let o = &spec.options;
    let prune = origin_interior(&spec.omega_ineqs);
    let vb = v_basis(n, o.deg_v, o.d, prune);
    let cfg = DegreeConfig {
        mult_degree: o.deg_mult,
        prune,
    };
    let mut constraints = vec![
        build_positivity(n, &vb, o.epsilon, tau)?,
        build_upper_bound(n, &vb, o.k, o.d, &spec.omega_ineqs, cfg)?,
    ];
    for (i, s) in tr.sectors.iter().enumerate() {
        constraints.push(build_decrease(i, s, &vb, &spec.omega_ineqs, cfg)?);
    }
    Ok(SosProgram {
        nvars: n,
        v_basis: vb,
        constraints,
    })
}

/// Solves the program at a fixed `mu` and checks every identity.
pub fn solve_at(
    prog: &SosProgram,
    mu: f64,
    cfg: &CertifyConfig,
) -> Result<(SdpStatus, SdpSolution, BlockLayout)> {
    let (sdp, layout) = prog.assemble_sdp(mu)?;
    let sol = solve(&sdp, &cfg.solver)?;
    if sol.status != SdpStatus::Feasible {
        return Ok((sol.status, sol, layout));
    }
    let grams = split_grams(&layout, &sol);
    let all_ok = prog
        .constraints
        .iter()
        .zip(&grams)
        .all(|(c, g)| verify_constraint(c, mu, &sol.scalars, g, &cfg.verify).ok);
    let status = if all_ok {
        SdpStatus::Feasible
    } else {
        SdpStatus::Indeterminate
    };
    Ok((status, sol, layout))
}

/// `tau` actually used: the positivity and upper-bound conditions force
/// `d <= tau`, and `2 tau` cannot exceed the degree of `V`.
pub fn effective_tau(spec: &ProblemSpec) -> u32 {
    let o = &spec.options;
    if origin_interior(&spec.omega_ineqs) {
        o.tau.max(o.d).min(o.deg_v / 2)
    } else {
        o.tau.min(o.deg_v / 2)
    }
}

/// Runs the full pipeline.
pub fn certify(spec: &ProblemSpec, cfg: &CertifyConfig) -> Result<Certificate> {
    spec.validate()?;
    let o = &spec.options;
    gamma_of(o.p, o.d)?;
    if o.deg_v < 2 * o.d {
        return Err(Error::Parameter(format!(
            "deg V = {} is below 2d = {}; the upper bound would force V = 0",
            o.deg_v,
            2 * o.d
        )));
    }
    let tr = transform(spec)?;
    let tau = effective_tau(spec);
    let prog = build_program(spec, &tr, tau)?;

    let result = bisect_mu(
        |mu| {
            let (status, sol, layout) = solve_at(&prog, mu, cfg)?;
            Ok((status, (sol, layout)))
        },
        o.mu_bracket,
        cfg.bisect_abs_tol,
        cfg.bisect_rel_tol,
    )?;
    if result.mu <= 0.0 {
        return Err(Error::NoCertificate(format!(
            "no decay rate above {} is feasible",
            o.mu_bracket.0
        )));
    }
    let (sol, layout) = result.solution;
    let v = prog.extract_v(&sol.scalars);

    let mut cert = Certificate::from_parts(
        spec.state_names.clone(),
        v,
        tr.q.clone(),
        tr.lambda.clone(),
        o.p,
        o.d,
        tau,
        o.k,
        result.mu,
        o.epsilon,
        spec.omega_ineqs.clone(),
    )?;
    let grams = split_grams(&layout, &sol);
    for (c, gs) in prog.constraints.iter().zip(&grams) {
        let cid = constraint_id(&c.kind);
        for (slot, g) in c.slots.iter().zip(gs) {
            let Some(m) = g else { continue };
            let id = format!("{cid}.{}", slot.name);
            cert.multipliers.insert(
                id.clone(),
                Polynomial::from_f64_terms(spec.nvars(), gram_polynomial(m, &slot.basis)),
            );
            cert.provenance.grams.insert(
                id,
                GramRecord {
                    basis: slot.basis.clone(),
                    matrix: m.clone(),
                },
            );
        }
    }
    cert.provenance.solver = sol.metrics.clone();
    cert.provenance.probes = result.probes.iter().map(|(m, s)| (*m, *s)).collect();
    cert.provenance.tau_requested = o.tau;
    cert.provenance.sectorized = tr.sectorized.clone();
    cert.provenance.tolerances = BTreeMap::from([
        ("feas_tol".to_string(), cfg.solver.feas_tol),
        ("eig_tol".to_string(), cfg.verify.eig_tol),
        ("match_tol".to_string(), cfg.verify.match_tol),
        ("bisect_abs_tol".to_string(), cfg.bisect_abs_tol),
        ("bisect_rel_tol".to_string(), cfg.bisect_rel_tol),
    ]);
    if cfg.compute_level {
        cert.c_star = Some(max_valid_level(&cert, cfg)?);
    }
    Ok(cert)
}

/// `T(z0) <= V~(z0)^{1-gamma} / (mu~ (1 - gamma))`.
pub fn settling_bound(c: &Certificate, z0: &[f64]) -> f64 {
    let g = c.gamma.to_f64();
    let vt = c.v_tilde.eval(z0).max(0.0);
    vt.powf(1.0 - g) / (c.mu_tilde * (1.0 - g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SublevelReport {
    pub level: f64,
    pub valid: bool,
    /// Status per region inequality.
    pub statuses: Vec<SdpStatus>,
}

/// Proves `{V <= level}` is inside the region by finding, for each `g_i`,
/// an SoS `sigma` with `g_i - sigma (level - V)` SoS.
pub fn sublevel_validate(c: &Certificate, level: f64, cfg: &CertifyConfig) -> Result<SublevelReport> {
    let mut statuses = Vec::new();
    for (i, g) in c.omega_ineqs.iter().enumerate() {
        let con = build_sublevel(i, g, &c.v, level, cfg.sublevel_degree)?;
        let prog = SosProgram {
            nvars: c.nvars(),
            v_basis: Vec::new(),
            constraints: vec![con],
        };
        let (status, _, _) = solve_at(&prog, 0.0, cfg)?;
        statuses.push(status);
        if status != SdpStatus::Feasible {
            break;
        }
    }
    Ok(SublevelReport {
        level,
        valid: statuses.len() == c.omega_ineqs.len()
            && statuses.iter().all(|s| *s == SdpStatus::Feasible),
        statuses,
    })
}

/// Half-extent of the region along each axis direction: `(minus, plus)`.
pub fn axis_extents(omega: &[Polynomial], nvars: usize) -> Vec<(f64, f64)> {
    const CAP: f64 = 1e3;
    let inside = |x: &[f64]| omega.iter().all(|g| g.eval(x) >= 0.0);
    let reach = |i: usize, s: f64| -> f64 {
        let at = |t: f64| {
            let mut x = vec![0.0; nvars];
            x[i] = s * t;
            x
        };
        let mut lo = 0.0;
        let mut hi = 1e-3;
        while inside(&at(hi)) {
            lo = hi;
            hi *= 2.0;
            if hi > CAP {
                return CAP;
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    (0..nvars).map(|i| (reach(i, -1.0), reach(i, 1.0))).collect()
}

/// Largest level with a validated sublevel set, by bisection on
/// `[0, max V at the axis-boundary points]`.
pub fn max_valid_level(c: &Certificate, cfg: &CertifyConfig) -> Result<f64> {
    if c.omega_ineqs.is_empty() {
        return Ok(f64::INFINITY);
    }
    let n = c.nvars();
    let ext = axis_extents(&c.omega_ineqs, n);
    let mut hi = 0.0f64;
    for (i, (m, p)) in ext.iter().enumerate() {
        for t in [-m, *p] {
            let mut x = vec![0.0; n];
            x[i] = t;
            hi = hi.max(c.v.eval(&x));
        }
    }
    if hi <= 0.0 {
        return Ok(0.0);
    }
    if sublevel_validate(c, hi, cfg)?.valid {
        return Ok(hi);
    }
    let mut lo = 0.0;
    for _ in 0..cfg.level_steps {
        if hi - lo <= cfg.level_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if sublevel_validate(c, mid, cfg)?.valid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest axis box (half-widths) inside the region, in x-coordinates.
pub fn inner_box(omega: &[Polynomial], nvars: usize) -> Vec<f64> {
    let ext = axis_extents(omega, nvars);
    let base: Vec<f64> = ext.iter().map(|(m, p)| m.min(*p)).collect();
    let inside = |x: &[f64]| omega.iter().all(|g| g.eval(x) >= 0.0);
    let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut scale = 1.0;
    for _ in 0..200 {
        let b: Vec<f64> = base.iter().map(|v| v * scale).collect();
        let mut ok = true;
        let total = grid.len().pow(nvars as u32);
        for idx in 0..total {
            let mut rem = idx;
            let x: Vec<f64> = (0..nvars)
                .map(|i| {
                    let g = grid[rem % grid.len()];
                    rem /= grid.len();
                    g * b[i]
                })
                .collect();
            if !inside(&x) {
                ok = false;
                break;
            }
        }
        if ok {
            return b;
        }
        scale *= 0.9;
    }
    vec![0.0; nvars]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovReport {
    pub samples: usize,
    /// Largest raw margin `grad V~ . f + mu~ V~^gamma`.
    pub max_margin: f64,
    /// Largest margin divided by `1 + |grad V~ . f| + mu~ V~^gamma`.
    pub max_scaled_margin: f64,
    pub worst_point: Vec<f64>,
    pub violations: usize,
    pub passed: bool,
}

/// Samples `z` uniformly in a box inside the transformed region and checks
/// `grad V~(z) . f(z) <= -mu~ V~(z)^gamma` with central differences.
pub fn check_lyapunov_numeric(
    c: &Certificate,
    f: &[SignedPowerExpr],
    samples: usize,
    seed: u64,
    z_box: Option<&[f64]>,
) -> LyapunovReport {
    let n = c.nvars();
    let zb: Vec<f64> = match z_box {
        Some(b) => b.to_vec(),
        None => inner_box(&c.omega_ineqs, n)
            .iter()
            .zip(&c.q)
            .map(|(b, &q)| b.powi(q as i32))
            .collect(),
    };
    let vt = c.v_tilde.compile();
    let fc: Vec<CompiledExpr> = f.iter().map(|e| e.compile()).collect();
    let g = c.gamma.to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LyapunovReport {
        samples: 0,
        max_margin: f64::NEG_INFINITY,
        max_scaled_margin: f64::NEG_INFINITY,
        worst_point: vec![0.0; n],
        violations: 0,
        passed: true,
    };
    let mut guard = 0usize;
    while report.samples < samples && guard < samples * 1000 {
        guard += 1;
        let z: Vec<f64> = zb.iter().map(|&b| rng.random_range(-b..=b)).collect();
        if z.iter().any(|v| v.abs() < 1e-6) {
            continue;
        }
        let mut lie = 0.0;
        for i in 0..n {
            let h = 1e-6 * z[i].abs().max(1e-3);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let grad = (vt.eval(&zp) - vt.eval(&zm)) / (2.0 * h);
            lie += grad * fc[i].eval(&z);
        }
        let decay = c.mu_tilde * vt.eval(&z).max(0.0).powf(g);
        let margin = lie + decay;
        let scaled = margin / (1.0 + lie.abs() + decay);
        report.samples += 1;
        if scaled > report.max_scaled_margin {
            report.max_scaled_margin = scaled;
            report.worst_point = z.clone();
        }
        report.max_margin = report.max_margin.max(margin);
        if margin > 1e-6 * (1.0 + lie.abs() + decay) {
            report.violations += 1;
            report.passed = false;
        }
    }
    report
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

fn fstr(x: f64) -> Value {
    Value::String(format!("{x:?}"))
}

fn poly_json(p: &Polynomial) -> Value {
    Value::Array(
        p.terms()
            .map(|(m, c)| json!([m, c.numer().to_string(), c.denom().to_string()]))
            .collect(),
    )
}

fn spe_json(e: &SignedPowerExpr) -> Value {
    Value::Array(
        e.terms()
            .map(|t| {
                let exps: Vec<String> = t.exps.iter().map(|x| x.to_string()).collect();
                json!([t.sigma, exps, t.coeff.numer().to_string(), t.coeff.denom().to_string()])
            })
            .collect(),
    )
}

impl Certificate {
    pub fn to_json_value(&self) -> Value {
        let grams: Map<String, Value> = self
            .provenance
            .grams
            .iter()
            .map(|(id, g)| {
                let rows: Vec<Value> = (0..g.matrix.nrows())
                    .map(|i| Value::Array((0..g.matrix.ncols()).map(|j| fstr(g.matrix[(i, j)])).collect()))
                    .collect();
                (id.clone(), json!({ "basis": g.basis, "matrix": rows }))
            })
            .collect();
        let tolerances: Map<String, Value> = self
            .provenance
            .tolerances
            .iter()
            .map(|(k, v)| (k.clone(), fstr(*v)))
            .collect();
        let m = &self.provenance.solver;
        let probes: Vec<Value> = self
            .provenance
            .probes
            .iter()
            .map(|(mu, s)| json!([fstr(*mu), s]))
            .collect();
        let multipliers: Map<String, Value> = self
            .multipliers
            .iter()
            .map(|(k, p)| (k.clone(), poly_json(p)))
            .collect();
        json!({
            "states": self.state_names,
            "V": poly_json(&self.v),
            "multipliers": multipliers,
            "q": self.q,
            "lambda": self.lambda,
            "p": self.p,
            "d": self.d,
            "tau": self.tau,
            "k": fstr(self.k),
            "mu": fstr(self.mu),
            "epsilon": fstr(self.epsilon),
            "omega_ineqs": self.omega_ineqs.iter().map(poly_json).collect::<Vec<_>>(),
            "gamma": self.gamma.to_string(),
            "mu_tilde": fstr(self.mu_tilde),
            "V_tilde": spe_json(&self.v_tilde),
            "c_star": self.c_star.map_or(Value::Null, fstr),
            "provenance": {
                "version": self.provenance.version,
                "tolerances": tolerances,
                "solver": {
                    "iterations": m.iterations,
                    "max_residual": fstr(m.max_residual),
                    "min_eigenvalue": fstr(m.min_eigenvalue),
                    "objective": fstr(m.objective),
                    "diagnostic": m.diagnostic,
                },
                "grams": grams,
                "probes": probes,
                "tau_requested": self.provenance.tau_requested,
                "sectorized": self.provenance.sectorized,
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        parse_cert(&v)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Certificate(msg.into())
}

fn get<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| bad(format!("missing field {key:?}")))
}

fn as_f64(v: &Value, what: &str) -> Result<f64> {
    v.as_str()
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| bad(format!("{what} must be a decimal string")))
}

fn as_u32(v: &Value, what: &str) -> Result<u32> {
    v.as_u64()
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| bad(format!("{what} must be a nonnegative integer")))
}

fn as_u32_vec(v: &Value, what: &str) -> Result<Vec<u32>> {
    v.as_array()
        .ok_or_else(|| bad(format!("{what} must be a list")))?
        .iter()
        .map(|x| as_u32(x, what))
        .collect()
}

fn as_rational(num: &Value, den: &Value) -> Result<Coeff> {
    let n: BigInt = num
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad numerator"))?;
    let d: BigInt = den
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad denominator"))?;
    if d == BigInt::from(0) {
        return Err(bad("zero denominator"));
    }
    Ok(BigRational::new(n, d))
}

fn parse_poly(v: &Value, nvars: usize) -> Result<Polynomial> {
    let mut p = Polynomial::zero(nvars);
    for t in v.as_array().ok_or_else(|| bad("polynomial must be a list"))? {
        let t = t.as_array().filter(|a| a.len() == 3).ok_or_else(|| bad("term must be [exps, num, den]"))?;
        let m = as_u32_vec(&t[0], "exponent vector")?;
        if m.len() != nvars {
            return Err(bad("exponent vector length mismatch"));
        }
        p.add_term(m, as_rational(&t[1], &t[2])?);
    }
    Ok(p)
}

fn parse_spe(v: &Value, nvars: usize) -> Result<SignedPowerExpr> {
    let mut terms = Vec::new();
    for t in v.as_array().ok_or_else(|| bad("expression must be a list"))? {
        let t = t
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| bad("term must be [sigma, exps, num, den]"))?;
        let sigma: Vec<u8> = as_u32_vec(&t[0], "sigma")?.into_iter().map(|s| s as u8).collect();
        let exps: Vec<RationalExp> = t[1]
            .as_array()
            .ok_or_else(|| bad("exps must be a list"))?
            .iter()
            .map(|e| e.as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad exponent")))
            .collect::<Result<_>>()?;
        if sigma.len() != nvars || exps.len() != nvars {
            return Err(bad("signed-power term length mismatch"));
        }
        terms.push(SignedPowerTerm {
            coeff: as_rational(&t[2], &t[3])?,
            sigma,
            exps,
        });
    }
    Ok(SignedPowerExpr::from_terms(nvars, terms))
}

fn parse_cert(v: &Value) -> Result<Certificate> {
    let states: Vec<String> = get(v, "states")?
        .as_array()
        .ok_or_else(|| bad("states must be a list"))?
        .iter()
        .map(|s| s.as_str().map(String::from).ok_or_else(|| bad("state names must be strings")))
        .collect::<Result<_>>()?;
    let q = as_u32_vec(get(v, "q")?, "q")?;
    let n = q.len();
    if states.len() != n {
        return Err(bad("states and q disagree in length"));
    }
    let p = as_u32(get(v, "p")?, "p")?;
    let d = as_u32(get(v, "d")?, "d")?;
    let gamma: RationalExp = get(v, "gamma")?
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("gamma must be a rational string"))?;
    if gamma != gamma_of(p, d)? {
        return Err(bad("gamma disagrees with p / 2d"));
    }
    let multipliers = get(v, "multipliers")?
        .as_object()
        .ok_or_else(|| bad("multipliers must be an object"))?
        .iter()
        .map(|(k, p)| Ok((k.clone(), parse_poly(p, n)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let omega_ineqs = get(v, "omega_ineqs")?
        .as_array()
        .ok_or_else(|| bad("omega_ineqs must be a list"))?
        .iter()
        .map(|g| parse_poly(g, n))
        .collect::<Result<Vec<_>>>()?;
    let c_star = match get(v, "c_star")? {
        Value::Null => None,
        x => Some(as_f64(x, "c_star")?),
    };
    let prov = get(v, "provenance")?;
    let solver = get(prov, "solver")?;
    let grams = get(prov, "grams")?
        .as_object()
        .ok_or_else(|| bad("grams must be an object"))?
        .iter()
        .map(|(id, g)| {
            let basis: Vec<Monomial> = get(g, "basis")?
                .as_array()
                .ok_or_else(|| bad("basis must be a list"))?
                .iter()
                .map(|m| as_u32_vec(m, "basis monomial"))
                .collect::<Result<_>>()?;
            let rows = get(g, "matrix")?.as_array().ok_or_else(|| bad("matrix must be a list"))?;
            let dim = basis.len();
            if rows.len() != dim {
                return Err(bad("Gram matrix size disagrees with basis"));
            }
            let mut m = DMatrix::zeros(dim, dim);
            for (i, r) in rows.iter().enumerate() {
                let r = r.as_array().filter(|r| r.len() == dim).ok_or_else(|| bad("ragged Gram matrix"))?;
                for (j, x) in r.iter().enumerate() {
                    m[(i, j)] = as_f64(x, "Gram entry")?;
                }
            }
            Ok((id.clone(), GramRecord { basis, matrix: m }))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let tolerances = get(prov, "tolerances")?
        .as_object()
        .ok_or_else(|| bad("tolerances must be an object"))?
        .iter()
        .map(|(k, x)| Ok((k.clone(), as_f64(x, "tolerance")?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let probes = get(prov, "probes")?
        .as_array()
        .ok_or_else(|| bad("probes must be a list"))?
        .iter()
        .map(|pr| {
            let mu = as_f64(pr.get(0).ok_or_else(|| bad("probe"))?, "probe mu")?;
            let st: SdpStatus = serde_json::from_value(pr.get(1).cloned().unwrap_or(Value::Null))?;
            Ok((mu, st))
        })
        .collect::<Result<Vec<_>>>()?;
    let cert = Certificate {
        state_names: states,
        v: parse_poly(get(v, "V")?, n)?,
        multipliers,
        q,
        lambda: as_u32_vec(get(v, "lambda")?, "lambda")?,
        p,
        d,
        tau: as_u32(get(v, "tau")?, "tau")?,
        k: as_f64(get(v, "k")?, "k")?,
        mu: as_f64(get(v, "mu")?, "mu")?,
        epsilon: as_f64(get(v, "epsilon")?, "epsilon")?,
        omega_ineqs,
        gamma,
        mu_tilde: as_f64(get(v, "mu_tilde")?, "mu_tilde")?,
        v_tilde: parse_spe(get(v, "V_tilde")?, n)?,
        c_star,
        provenance: Provenance {
            version: get(prov, "version")?
                .as_str()
                .ok_or_else(|| bad("version must be a string"))?
                .to_string(),
            tolerances,
            solver: SolverMetrics {
                iterations: get(solver, "iterations")?
                    .as_u64()
                    .ok_or_else(|| bad("iterations must be an integer"))? as usize,
                max_residual: as_f64(get(solver, "max_residual")?, "max_residual")?,
                min_eigenvalue: as_f64(get(solver, "min_eigenvalue")?, "min_eigenvalue")?,
                objective: as_f64(get(solver, "objective")?, "objective")?,
                diagnostic: get(solver, "diagnostic")?.as_str().unwrap_or_default().to_string(),
            },
            grams,
            probes,
            tau_requested: as_u32(get(prov, "tau_requested")?, "tau_requested")?,
            sectorized: as_u32_vec(get(prov, "sectorized")?, "sectorized")?
                .into_iter()
                .map(|x| x as usize)
                .collect(),
        },
    };
    if cert.mu_tilde.is_nan() || cert.mu_tilde <= 0.0 {
        return Err(bad("mu_tilde must be positive"));
    }
    if cert.lambda.len() != n {
        return Err(bad("lambda length mismatch"));
    }
    Ok(cert)
}

/// Rational from a float without rounding.
pub fn exact(x: f64) -> Coeff {
    coeff_from_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{coeff_int, coeff_ratio};

    fn scalar_cert(a: Coeff, mu: f64, k: f64) -> Certificate {
        let g = Polynomial::from_terms(1, [(vec![0], coeff_int(2)), (vec![2], coeff_int(-1))]);
        Certificate::from_parts(
            vec!["x".into()],
            Polynomial::monomial(1, vec![4], a),
            vec![3],
            vec![1],
            3,
            2,
            2,
            k,
            mu,
            1e-4,
            vec![g],
        )
        .unwrap()
    }

    #[test]
    fn gamma_requires_two_d_above_p() {
        assert_eq!(gamma_of(3, 2).unwrap(), RationalExp::new(3, 4));
        assert_eq!(gamma_of(4, 3).unwrap(), RationalExp::new(2, 3));
        assert!(gamma_of(4, 2).is_err());
    }

    #[test]
    fn bound_formula() {
        // V = k x^4 with mu = 4k/3: bound = 3 |z|^{1/3}.
        let k = 7.1;
        let c = scalar_cert(exact(k), 4.0 * k / 3.0, k);
        let b = settling_bound(&c, &[1.2]);
        assert!((b - 3.0 * 1.2f64.powf(1.0 / 3.0)).abs() < 1e-9, "{b}");
        assert_eq!(settling_bound(&c, &[0.0]), 0.0);
    }

    #[test]
    fn bound_monotone_in_vtilde() {
        let c = scalar_cert(coeff_ratio(542, 100), 9.0, 7.1);
        let zs = [0.1, 0.5, 1.0, 1.2, 2.0];
        for w in zs.windows(2) {
            assert!(settling_bound(&c, &[w[0]]) <= settling_bound(&c, &[w[1]]));
        }
    }

    #[test]
    fn json_round_trip() {
        let mut c = scalar_cert(coeff_ratio(542, 100), 9.0, 7.1);
        c.c_star = Some(f64::INFINITY);
        let text = c.to_json();
        let back = Certificate::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn malformed_json_rejected() {
        let c = scalar_cert(coeff_ratio(542, 100), 9.0, 7.1);
        let text = c.to_json().replace("\"3/4\"", "\"1/2\"");
        assert!(matches!(Certificate::from_json(&text), Err(Error::Certificate(_))));
        assert!(Certificate::from_json("{}").is_err());
    }

    #[test]
    fn axis_extent_of_disc() {
        let g = Polynomial::from_terms(
            2,
            [
                (vec![0, 0], coeff_int(3)),
                (vec![2, 0], coeff_int(-1)),
                (vec![0, 2], coeff_int(-1)),
            ],
        );
        let e = axis_extents(std::slice::from_ref(&g), 2);
        for (m, p) in e {
            assert!((m - 3f64.sqrt()).abs() < 1e-9 && (p - 3f64.sqrt()).abs() < 1e-9);
        }
        let b = inner_box(std::slice::from_ref(&g), 2);
        assert!(g.eval(&b) >= 0.0);
    }

    #[test]
    fn forged_certificate_flagged() {
        // x' = -x with V = x^2, gamma = 1/2 and mu~ = 1: -2x^2 + |x| > 0 near 0.
        let g = Polynomial::from_terms(1, [(vec![0], coeff_int(1)), (vec![2], coeff_int(-1))]);
        let c = Certificate::from_parts(
            vec!["x".into()],
            Polynomial::monomial(1, vec![2], coeff_int(1)),
            vec![1],
            vec![0],
            1,
            1,
            1,
            1.0,
            1.0,
            1e-4,
            vec![g],
        )
        .unwrap();
        let f = vec![SignedPowerExpr::var(1, 0).scale(&coeff_int(-1))];
        let r = check_lyapunov_numeric(&c, &f, 500, 7, None);
        assert!(!r.passed);
        assert!(r.max_margin > 0.0);
    }

    #[test]
    fn scalar_example_numeric_check() {
        // f = -sign(z)|z|^{2/3}, V~ = 5.42 |z|^{4/3}, mu~ within the
        // closed-form admissible range.
        let f = vec![SignedPowerExpr::from_terms(
            1,
            [SignedPowerTerm {
                coeff: coeff_int(-1),
                sigma: vec![1],
                exps: vec![RationalExp::new(2, 3)],
            }],
        )];
        let k: f64 = 7.1;
        let mu = 1.9 * k.powf(0.75);
        let c = scalar_cert(coeff_ratio(542, 100), mu, k);
        let r = check_lyapunov_numeric(&c, &f, 500, 1, None);
        assert!(r.passed, "{r:?}");
    }
}
