use std::collections::BTreeMap;

use ecp_core::dsl::{self, BinOp, Expr};
use ecp_core::measurement::{herald, qnd_select, DetectorGroup, FlipRule};
use ecp_core::optics::{apply_bs, apply_pbs, apply_vbs};
use ecp_core::protocols::{Engine, ProtocolSpec, RunConfig};
use ecp_core::{
    run, trace, vbs_schedule, Accounting, DetectorModel, EntanglementParams, ModeRef, OccupationPattern,
    StateVector,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn patterns() -> Vec<OccupationPattern> {
    let m = |s: &str, h: bool| if h { ModeRef::h(s) } else { ModeRef::v(s) };
    vec![
        OccupationPattern::single(m("x", true)),
        OccupationPattern::single(m("x", false)),
        OccupationPattern::single(m("y", true)),
        OccupationPattern::from_counts([(m("x", true), 1), (m("y", true), 1)]),
        OccupationPattern::from_counts([(m("x", false), 1), (m("y", true), 1)]),
        OccupationPattern::from_counts([(m("x", true), 2)]),
        OccupationPattern::from_counts([(m("y", false), 2)]),
        OccupationPattern::from_counts([(m("x", true), 1), (m("x", false), 1)]),
    ]
}

fn state() -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8)
        .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|amps| {
            let terms = patterns()
                .into_iter()
                .zip(amps)
                .map(|(p, (re, im))| (p, Complex64::new(re, im)));
            StateVector::from_terms(terms).normalized().unwrap()
        })
}

fn photon_histogram(s: &StateVector) -> BTreeMap<u32, f64> {
    let mut h = BTreeMap::new();
    for (p, a) in s.terms() {
        *h.entry(p.total()).or_insert(0.0) += a.norm_sqr();
    }
    h
}

fn same_histogram(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> bool {
    a.keys().chain(b.keys()).all(|k| {
        (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs() < 1e-12
    })
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| Expr::Num(n as f64 / 8.0)),
        prop::sample::select(vec!["alpha", "beta", "t1"]).prop_map(|v| Expr::Var(v.to_string())),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            inner.clone().prop_map(|e| Expr::Sqrt(Box::new(e))),
            (prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]), inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_elements_preserve_norm_and_photons(s in state(), t in 0.0f64..=1.0) {
        let before = photon_histogram(&s);
        let outs = [
            apply_bs(&s, "x", "y", "u", "w").unwrap(),
            apply_vbs(&s, "x", "u", "w", t).unwrap(),
            apply_pbs(&s, "y", "u", "w").unwrap(),
        ];
        for out in &outs {
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
            prop_assert!(same_histogram(&before, &photon_histogram(out)));
        }
    }

    #[test]
    fn qnd_classes_are_complete(s in state()) {
        let total: f64 = (0..=2).map(|c| qnd_select(&s, "x", "y", c).probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn herald_outcomes_are_complete(s in state()) {
        let mixed = apply_bs(&s, "x", "y", "d1", "d2").unwrap();
        let groups = [DetectorGroup::new("D12", &["d1", "d2"])];
        let flips = [FlipRule::new("d2", "d1")];
        let outcomes = herald(&mixed, &groups, &flips, &DetectorModel::ideal());
        let total: f64 = outcomes.iter().map(|o| o.raw_probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expressions_round_trip(e in expr()) {
        let text = e.to_string();
        let parsed = Expr::parse(&text, 1, 1).unwrap();
        let env: BTreeMap<String, f64> =
            [("alpha", 0.3), ("beta", 0.7), ("t1", 0.45)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let (a, b) = (e.eval(&env), parsed.eval(&env));
        match (a, b) {
            (Ok(x), Ok(y)) => prop_assert!(x == y || (x.is_nan() && y.is_nan()), "{text}: {x} vs {y}"),
            (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
        }
        prop_assert_eq!(parsed.to_string(), text);
    }

    #[test]
    fn circuit_round_trip_with_constants(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let src = dsl::ECP1_SOURCE.replace("t=t1", &format!("t={t1}")).replace("t=t2", &format!("t={t2}"));
        let doc = dsl::parse(&src).unwrap();
        let text = dsl::serialize(&doc);
        prop_assert_eq!(dsl::parse(&text).unwrap(), doc);
    }

    #[test]
    fn stripped_total_symmetric_in_alpha_beta(a2 in 0.01f64..0.99, rounds in 1usize..=5, eta in 0.0f64..=1.0) {
        let p = |a2: f64| {
            let e = EntanglementParams::from_alpha_sq(a2).unwrap();
            run(&e, None, &RunConfig {
                protocol: ProtocolSpec::Ecp2 { schedule: vbs_schedule(&e, rounds).unwrap(), rounds },
                accounting: Accounting::PaperBranch,
                model: DetectorModel::analytic(eta, 1),
                engine: Engine::Exact,
            }).unwrap().p_total
        };
        prop_assert!((p(a2) - p(1.0 - a2)).abs() < 1e-12);
    }

    #[test]
    fn recycled_rounds_follow_product_form(a2 in 0.01f64..0.99, rounds in 1usize..=5) {
        let e = EntanglementParams::from_alpha_sq(a2).unwrap();
        let spec = ProtocolSpec::Ecp2 { schedule: vbs_schedule(&e, rounds).unwrap(), rounds };
        let tr = trace(&e, None, &spec, Accounting::PaperBranch).unwrap();
        let b2 = 1.0 - a2;
        for k in 1..=rounds {
            let num = 2.0 * (a2 * b2).powi(1 << (k - 1));
            let den: f64 = (2..=k).map(|j| a2.powi(1 << (j - 1)) + b2.powi(1 << (j - 1))).product();
            prop_assert!((tr.raw_success(k - 1) - num / den).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_is_seeded_and_converges(a2 in 0.05f64..0.95, seed in any::<u64>()) {
        let e = EntanglementParams::from_alpha_sq(a2).unwrap();
        let config = |engine| RunConfig {
            protocol: ProtocolSpec::Ecp2 { schedule: vbs_schedule(&e, 3).unwrap(), rounds: 3 },
            accounting: Accounting::PaperBranch,
            model: DetectorModel::bernoulli(0.8),
            engine,
        };
        let mc = Engine::MonteCarlo { trials: 20_000, seed };
        let a = run(&e, None, &config(mc)).unwrap();
        let b = run(&e, None, &config(mc)).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        let exact = run(&e, None, &config(Engine::Exact)).unwrap().p_total;
        let sigma = a.stderr.unwrap();
        prop_assert!((a.p_total - exact).abs() <= 5.0 * sigma + 1e-12, "{} vs {exact} ({sigma})", a.p_total);
    }
}
