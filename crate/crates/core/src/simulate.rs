//! Adaptive Bogacki–Shampine (RK23) integration of signed-power vector
//! fields, with settling-time detection and certificate cross-checks.

use std::io::Write;

use crate::certify::{axis_extents, settling_bound, sublevel_validate, Certificate, CertifyConfig};
use crate::error::Result;
use crate::polyalg::{CompiledExpr, SignedPowerExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Settled,
    Horizon,
    Blowup,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub settle_time: Option<f64>,
    pub settle_threshold: f64,
    pub terminated_by: Termination,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub initial_step: f64,
    /// States with a norm above this count as a blowup.
    pub blowup_norm: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            min_step: 1e-12,
            initial_step: 1e-3,
            blowup_norm: 1e12,
        }
    }
}

pub const DEFAULT_THRESHOLD: f64 = 1e-6;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Field(Vec<CompiledExpr>);

impl Field {
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.0.iter().map(|e| e.eval(z)).collect()
    }
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += h * c * v;
        }
    }
    out
}

/// One Bogacki–Shampine step: third-order solution, its derivative, and
/// the embedded error estimate.
fn bs_step(f: &Field, y: &[f64], k1: &[f64], h: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k2 = f.eval(&axpy(y, h, &[(0.5, k1)]));
    let k3 = f.eval(&axpy(y, h, &[(0.75, &k2)]));
    let y3 = axpy(y, h, &[(2.0 / 9.0, k1), (1.0 / 3.0, &k2), (4.0 / 9.0, &k3)]);
    let k4 = f.eval(&y3);
    let err = axpy(
        &vec![0.0; y.len()],
        h,
        &[(-5.0 / 72.0, k1), (1.0 / 12.0, &k2), (1.0 / 9.0, &k3), (-1.0 / 8.0, &k4)],
    );
    (y3, k4, err)
}

/// Integrates from `z0` until the state norm drops to `threshold`, the
/// horizon is reached, or the state stops being finite.
pub fn integrate(
    f: &[SignedPowerExpr],
    z0: &[f64],
    threshold: f64,
    horizon: f64,
    ctl: &StepControl,
) -> TrajectoryRecord {
    let field = Field(f.iter().map(|e| e.compile()).collect());
    let mut rec = TrajectoryRecord {
        times: vec![0.0],
        states: vec![z0.to_vec()],
        settle_time: None,
        settle_threshold: threshold,
        terminated_by: Termination::Horizon,
    };
    if z0.iter().any(|v| !v.is_finite()) {
        rec.terminated_by = Termination::Blowup;
        return rec;
    }
    if norm(z0) <= threshold {
        rec.settle_time = Some(0.0);
        rec.terminated_by = Termination::Settled;
        return rec;
    }
    let mut t = 0.0;
    let mut y = z0.to_vec();
    let mut k1 = field.eval(&y);
    let mut h = ctl.initial_step.min(horizon);
    while t < horizon {
        h = h.min(horizon - t).max(ctl.min_step.min(horizon - t));
        let (y_new, k4, err) = bs_step(&field, &y, &k1, h);
        if y_new.iter().chain(&k4).any(|v| !v.is_finite()) || norm(&y_new) > ctl.blowup_norm {
            if h > ctl.min_step {
                h = (0.25 * h).max(ctl.min_step);
                continue;
            }
            rec.terminated_by = Termination::Blowup;
            return rec;
        }
        let err_norm = (err
            .iter()
            .zip(y.iter().zip(&y_new))
            .map(|(e, (a, b))| {
                let sc = ctl.atol + ctl.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / y.len().max(1) as f64)
            .sqrt();
        if err_norm > 1.0 && h > ctl.min_step {
            h = (h * (0.9 * err_norm.powf(-1.0 / 3.0)).max(0.2)).max(ctl.min_step);
            continue;
        }
        if norm(&y_new) <= threshold {
            // Bisect the step length for the first crossing.
            let (mut lo, mut hi) = (0.0, h);
            let mut y_hi = y_new.clone();
            while hi - lo > 1e-9 * (t + hi).max(1e-300) {
                let mid = 0.5 * (lo + hi);
                let (ym, _, _) = bs_step(&field, &y, &k1, mid);
                if norm(&ym) <= threshold {
                    hi = mid;
                    y_hi = ym;
                } else {
                    lo = mid;
                }
            }
            let ts = t + hi;
            if ts > t {
                rec.times.push(ts);
                rec.states.push(y_hi);
            }
            rec.settle_time = Some(ts);
            rec.terminated_by = Termination::Settled;
            return rec;
        }
        t += h;
        y = y_new;
        k1 = k4;
        rec.times.push(t);
        rec.states.push(y.clone());
        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    rec
}

/// Settling time with default step control.
pub fn estimate_settling(f: &[SignedPowerExpr], z0: &[f64], threshold: f64, horizon: f64) -> Option<f64> {
    integrate(f, z0, threshold, horizon, &StepControl::default()).settle_time
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub z0: Vec<f64>,
    pub vtilde: f64,
    pub bound: f64,
    pub in_region: bool,
    pub simulated: Option<f64>,
    /// `simulated <= bound * (1 + slack)`; false when the run did not settle.
    pub sound: bool,
}

/// Compares the certified bound against simulation at `z0`.
pub fn validate_bound(
    c: &Certificate,
    f: &[SignedPowerExpr],
    z0: &[f64],
    slack: f64,
    cfg: &CertifyConfig,
) -> Result<ValidationReport> {
    let bound = settling_bound(c, z0);
    let vtilde = c.v_tilde.eval(z0);
    let in_region = if c.omega_ineqs.is_empty() {
        true
    } else {
        sublevel_validate(c, vtilde, cfg)?.valid
    };
    let horizon = if bound.is_finite() { (2.0 * bound).max(10.0) } else { 1e3 };
    let simulated = estimate_settling(f, z0, DEFAULT_THRESHOLD, horizon);
    let sound = simulated.is_some_and(|s| s <= bound * (1.0 + slack));
    Ok(ValidationReport {
        z0: z0.to_vec(),
        vtilde,
        bound,
        in_region,
        simulated,
        sound,
    })
}

/// `m` points per axis on a box grid whose points all satisfy `V <= level`,
/// returned in `z` coordinates.
pub fn sublevel_grid(c: &Certificate, level: f64, m: usize) -> Vec<Vec<f64>> {
    let n = c.nvars();
    let ext: Vec<f64> = if c.omega_ineqs.is_empty() {
        vec![1.0; n]
    } else {
        axis_extents(&c.omega_ineqs, n).iter().map(|(a, b)| a.min(*b)).collect()
    };
    let axis: Vec<f64> = (0..m)
        .map(|i| if m == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (m - 1) as f64 })
        .collect();
    let total = m.pow(n as u32);
    let points = |s: f64| -> Vec<Vec<f64>> {
        (0..total)
            .map(|idx| {
                let mut rem = idx;
                (0..n)
                    .map(|i| {
                        let a = axis[rem % m];
                        rem /= m;
                        a * ext[i] * s
                    })
                    .collect()
            })
            .collect()
    };
    let mut s = 1.0;
    for _ in 0..400 {
        let xs = points(s);
        if xs.iter().all(|x| c.v.eval(x) <= level) {
            return xs
                .into_iter()
                .map(|x| {
                    x.iter()
                        .zip(&c.q)
                        .map(|(v, &q)| v.signum() * v.abs().powi(q as i32))
                        .collect()
                })
                .collect();
        }
        s *= 0.95;
    }
    vec![vec![0.0; n]]
}

/// Runs `validate_bound` over many points, split across `threads` workers
/// (0 or 1 means sequential). Results keep the input order.
pub fn validate_batch(
    c: &Certificate,
    f: &[SignedPowerExpr],
    points: &[Vec<f64>],
    slack: f64,
    cfg: &CertifyConfig,
    threads: usize,
) -> Result<Vec<ValidationReport>> {
    if threads <= 1 || points.len() <= 1 {
        return points.iter().map(|z| validate_bound(c, f, z, slack, cfg)).collect();
    }
    let chunk = points.len().div_ceil(threads);
    let parts: Vec<Result<Vec<ValidationReport>>> = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|ps| s.spawn(move || ps.iter().map(|z| validate_bound(c, f, z, slack, cfg)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(points.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Writes `t,<states>,norm,vtilde` rows with 15 significant digits.
pub fn write_csv<W: Write>(
    w: &mut W,
    rec: &TrajectoryRecord,
    names: &[String],
    vtilde: Option<&SignedPowerExpr>,
) -> std::io::Result<()> {
    let fmt = |v: f64| format!("{v:.14e}");
    writeln!(w, "t,{},norm,vtilde", names.join(","))?;
    let vt = vtilde.map(|e| e.compile());
    for (t, z) in rec.times.iter().zip(&rec.states) {
        let mut row = vec![fmt(*t)];
        row.extend(z.iter().map(|v| fmt(*v)));
        row.push(fmt(norm(z)));
        row.push(vt.as_ref().map_or(String::new(), |e| fmt(e.eval(z))));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{coeff_int, RationalExp, SignedPowerTerm};

    fn two_thirds() -> Vec<SignedPowerExpr> {
        vec![SignedPowerExpr::from_terms(
            1,
            [SignedPowerTerm {
                coeff: coeff_int(-1),
                sigma: vec![1],
                exps: vec![RationalExp::new(2, 3)],
            }],
        )]
    }

    #[test]
    fn closed_form_settling() {
        // T = 3 (|z0|^{1/3} - threshold^{1/3}).
        for z0 in [1.0, 1.2, -0.7] {
            let t = estimate_settling(&two_thirds(), &[z0], 1e-6, 50.0).unwrap();
            let exact = 3.0 * (f64::abs(z0).powf(1.0 / 3.0) - 1e-2);
            assert!((t - exact).abs() < 1e-3 * exact, "{z0}: {t} vs {exact}");
        }
    }

    #[test]
    fn origin_settles_immediately() {
        let r = integrate(&two_thirds(), &[0.0], 1e-6, 5.0, &StepControl::default());
        assert_eq!(r.settle_time, Some(0.0));
        assert_eq!(r.terminated_by, Termination::Settled);
    }

    #[test]
    fn exponential_decay_hits_horizon() {
        let f = vec![SignedPowerExpr::var(1, 0).scale(&coeff_int(-1))];
        let r = integrate(&f, &[1.0], 1e-6, 5.0, &StepControl::default());
        assert_eq!(r.terminated_by, Termination::Horizon);
        assert!(r.settle_time.is_none());
        assert!((r.times.last().unwrap() - 5.0).abs() < 1e-12);
        assert!((r.states.last().unwrap()[0] - (-5.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn blowup_detected() {
        // x' = x^3 escapes in finite time 1/2 from x0 = 1.
        let x = SignedPowerExpr::var(1, 0);
        let f = vec![&(&x * &x) * &x];
        let r = integrate(&f, &[1.0], 1e-6, 5.0, &StepControl::default());
        assert_eq!(r.terminated_by, Termination::Blowup);
    }

    #[test]
    fn record_invariants() {
        let r = integrate(&two_thirds(), &[1.2], 1e-6, 10.0, &StepControl::default());
        assert!(r.times.windows(2).all(|w| w[0] < w[1]));
        let ts = r.settle_time.unwrap();
        assert_eq!(*r.times.last().unwrap(), ts);
        assert!(norm(r.states.last().unwrap()) <= 1e-6);
        for z in &r.states[..r.states.len() - 1] {
            assert!(norm(z) > 1e-6);
        }
        // |x| is nonincreasing for this system.
        assert!(r.states.windows(2).all(|w| w[1][0].abs() <= w[0][0].abs() + 1e-12));
    }

    #[test]
    fn tolerance_halving_stable() {
        let base = integrate(&two_thirds(), &[1.2], 1e-6, 10.0, &StepControl::default());
        let tight = StepControl {
            rtol: 5e-7,
            atol: 5e-10,
            ..StepControl::default()
        };
        let fine = integrate(&two_thirds(), &[1.2], 1e-6, 10.0, &tight);
        let (a, b) = (base.settle_time.unwrap(), fine.settle_time.unwrap());
        assert!((a - b).abs() < 0.01 * a);
    }

    #[test]
    fn csv_layout() {
        let r = integrate(&two_thirds(), &[1.0], 1e-6, 10.0, &StepControl::default());
        let mut buf = Vec::new();
        write_csv(&mut buf, &r, &["x".to_string()], Some(&two_thirds()[0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,norm,vtilde"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 4);
        assert_eq!(first[1], "1.00000000000000e0");
        assert_eq!(text.lines().count(), r.times.len() + 1);
    }
}
