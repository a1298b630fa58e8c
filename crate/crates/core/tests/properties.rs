//! Property tests for the algebra, parsing, transform, serialization and
//! simulation layers.

use std::collections::BTreeMap;

use proptest::prelude::*;

use ftscert::certify::{settling_bound, Certificate};
use ftscert::exprparse::{parse_expression, parse_polynomial, parse_problem};
use ftscert::polyalg::{
    coeff_int, coeff_ratio, default_names, Direction, Polynomial, RationalExp, SignedPowerExpr,
    SignedPowerTerm,
};
use ftscert::simulate::{integrate, StepControl};
use ftscert::transform::transform;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

fn poly(nvars: usize, max_exp: u32) -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(
        (prop::collection::vec(0..=max_exp, nvars), -20i64..=20, 1i64..=6),
        0..6,
    )
    .prop_map(move |terms| {
        Polynomial::from_terms(nvars, terms.into_iter().map(|(e, n, d)| (e, coeff_ratio(n, d))))
    })
}

fn rational_exp() -> impl Strategy<Value = RationalExp> {
    (0i64..=9, 1i64..=4).prop_map(|(n, d)| RationalExp::new(n, d))
}

fn spe(nvars: usize) -> impl Strategy<Value = SignedPowerExpr> {
    prop::collection::vec(
        (
            prop::collection::vec(0u8..=1, nvars),
            prop::collection::vec(rational_exp(), nvars),
            -12i64..=12,
            1i64..=5,
        ),
        0..5,
    )
    .prop_map(move |terms| {
        SignedPowerExpr::from_terms(
            nvars,
            terms.into_iter().map(|(sigma, exps, n, d)| SignedPowerTerm {
                coeff: coeff_ratio(n, d),
                sigma,
                exps,
            }),
        )
    })
}

fn point(nvars: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![-2.0f64..-0.05, 0.05f64..2.0],
        nvars,
    )
}

fn powers(nvars: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..=4, nvars)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn power_substitution_round_trips(e in spe(2), q in powers(2), z in point(2)) {
        let qe: Vec<RationalExp> = q.iter().map(|&v| RationalExp::integer(v.into())).collect();
        let fwd = e.substitute_power_unchecked(&qe, Direction::Forward).unwrap();
        let back = fwd.substitute_power_unchecked(&qe, Direction::Inverse).unwrap();
        prop_assert_eq!(&back, &e);
        // fwd(x) = e(sign(x)|x|^q).
        let zq: Vec<f64> = z.iter().zip(&q).map(|(v, &k)| v.signum() * v.abs().powi(k as i32)).collect();
        prop_assert!(close(fwd.eval(&z), e.eval(&zq), 1e-12));
    }

    #[test]
    fn polynomial_ops_commute_with_eval(a in poly(3, 3), b in poly(3, 3), x in point(3)) {
        let (va, vb) = (a.eval(&x), b.eval(&x));
        prop_assert!(close((&a + &b).eval(&x), va + vb, 1e-12));
        prop_assert!(close((&a - &b).eval(&x), va - vb, 1e-12));
        prop_assert!(close((&a * &b).eval(&x), va * vb, 1e-11));
        prop_assert!(close(a.pow(2).eval(&x), va * va, 1e-11));
    }

    #[test]
    fn spe_ops_commute_with_eval(a in spe(2), b in spe(2), x in point(2)) {
        let (va, vb) = (a.eval(&x), b.eval(&x));
        prop_assert!(close((&a + &b).eval(&x), va + vb, 1e-12));
        prop_assert!(close((&a * &b).eval(&x), va * vb, 1e-11));
        prop_assert!(close(a.compile().eval(&x), va, 1e-12));
    }

    #[test]
    fn polynomial_to_spe_preserves_values(a in poly(2, 4), x in point(2)) {
        let s = a.to_spe();
        prop_assert!(s.is_polynomial());
        prop_assert_eq!(s.to_polynomial().unwrap(), a.clone());
        prop_assert!(close(s.eval(&x), a.eval(&x), 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences(a in poly(2, 4), x in point(2)) {
        let g = a.gradient();
        for (i, gi) in g.iter().enumerate() {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (a.eval(&xp) - a.eval(&xm)) / (2.0 * h);
            prop_assert!((gi.eval(&x) - fd).abs() <= 1e-5 * (1.0 + a.max_abs_coeff() * 50.0));
        }
    }

    #[test]
    fn normalize_is_a_fixpoint(e in spe(3)) {
        let n = e.normalize();
        prop_assert_eq!(&n, &e);
        prop_assert_eq!(n.normalize(), n);
    }

    #[test]
    fn spe_display_parses_back(e in spe(2)) {
        let names = default_names(2);
        let text = e.display_with(&names);
        let back = parse_expression(&text, &names).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn polynomial_display_parses_back(a in poly(2, 4)) {
        let names = default_names(2);
        let back = parse_polynomial(&a.display_with(&names), &names).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn rational_exp_display_parses_back(n in -50i64..50, d in 1i64..12) {
        let r = RationalExp::new(n, d);
        prop_assert_eq!(r.to_string().parse::<RationalExp>().unwrap(), r);
    }

    #[test]
    fn sector_polynomials_match_direct_evaluation(
        a in prop::sample::select(vec!["1/3", "1/2", "2/3", "1", "3/2", "5/3"]),
        b in prop::sample::select(vec!["1/2", "2/3", "1", "3/5"]),
        c in -3i64..=3,
        v in poly(2, 4),
        mu in 0.0f64..2.0,
        x in point(2),
    ) {
        let text = format!(
            "[system]\nstates = [\"x1\", \"x2\"]\n\
             f = [\"-sign(x1)*abs(x1)^({a}) + {c}*sign(x2)*abs(x2)^({b})\", \"-sign(x2)*abs(x2)^({b})\"]\n\
             [domain]\ng = [\"1 - x1^2 - x2^2\"]\n[params]\np = 2\nd = 2\ndeg_v = 4\n"
        );
        let spec = parse_problem(&text).unwrap();
        let tr = transform(&spec).unwrap();
        let sector = tr.sectors.iter().find(|s| s.contains(&x)).unwrap();
        let mu_c = ftscert::polyalg::coeff_from_f64(mu);
        let direct = tr.lhs_direct(&v, mu, &x);
        let resolved = sector.lhs_poly(&v, &mu_c).eval(&x);
        prop_assert!(close(direct, resolved, 1e-9), "{} vs {}", direct, resolved);
    }

    #[test]
    fn certificate_json_round_trips(
        v in poly(2, 6),
        q in powers(2),
        lambda in prop::collection::vec(0u32..=3, 2),
        mu in 1e-3f64..50.0,
        k in 0.1f64..10.0,
        c_star in prop::option::of(0.0f64..100.0),
    ) {
        let g = Polynomial::from_terms(2, [(vec![0, 0], coeff_int(1)), (vec![2, 0], coeff_int(-1))]);
        let mut cert = Certificate::from_parts(
            vec!["x1".into(), "x2".into()], v, q, lambda, 4, 3, 2, k, mu, 0.01, vec![g],
        ).unwrap();
        cert.c_star = c_star;
        cert.multipliers.insert("positivity.s0".into(), Polynomial::one(2));
        cert.provenance.probes.push((mu, ftscert::sdpsolve::SdpStatus::Feasible));
        let text = cert.to_json();
        let back = Certificate::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back, cert);
    }

    #[test]
    fn bound_is_monotone_along_rays(z in point(2), s in 1.0f64..3.0) {
        let v = Polynomial::from_terms(2, [(vec![6, 0], coeff_int(1)), (vec![0, 6], coeff_int(2)), (vec![2, 2], coeff_int(1))]);
        let cert = Certificate::from_parts(
            vec!["x1".into(), "x2".into()], v, vec![2, 3], vec![2, 2], 4, 3, 2, 1.0, 0.5, 0.0, Vec::new(),
        ).unwrap();
        let zs: Vec<f64> = z.iter().map(|v| v * s).collect();
        prop_assert!(settling_bound(&cert, &zs) >= settling_bound(&cert, &z));
        prop_assert!(settling_bound(&cert, &z) > 0.0);
    }

    #[test]
    fn scalar_settling_matches_closed_form(
        a in prop::sample::select(vec![(1i64, 3i64), (1, 2), (2, 3), (3, 4)]),
        x0 in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
    ) {
        let e = RationalExp::new(a.0, a.1);
        let f = vec![-&SignedPowerExpr::from_terms(1, [SignedPowerTerm {
            coeff: coeff_int(1),
            sigma: vec![1],
            exps: vec![e],
        }])];
        let th: f64 = 1e-6;
        let r = 1.0 - e.to_f64();
        let expected = (x0.abs().powf(r) - th.powf(r)) / r;
        let rec = integrate(&f, &[x0], th, 50.0, &StepControl::default());
        let t = rec.settle_time.unwrap();
        prop_assert!((t - expected).abs() <= 1e-4 * expected, "{} vs {}", t, expected);
        prop_assert!(rec.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(rec.states.iter().all(|z| z[0].abs() <= x0.abs() * (1.0 + 1e-9)));
    }
}

#[test]
fn sector_count_is_two_to_the_mismatches() {
    let text = "[system]\nstates = [\"x1\", \"x2\"]\n\
        f = [\"-sign(x1)*abs(x1)^(1/2)\", \"-x2^3\"]\n\
        [domain]\ng = [\"1 - x1^2\"]\n[params]\np = 2\nd = 2\ndeg_v = 4\n";
    let tr = transform(&parse_problem(text).unwrap()).unwrap();
    let patterns: Vec<&BTreeMap<usize, i8>> = tr.sectors.iter().map(|s| &s.sign_pattern).collect();
    assert_eq!(patterns.len(), 1usize << tr.sectorized.len());
}
