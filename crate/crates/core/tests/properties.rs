use std::collections::BTreeMap;

use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pandora_core::engine::{evaluate_policy, exact_expected_utility, monte_carlo, optimal_adaptive_oracle, OracleGuards};
use pandora_core::generate::{generate, DiscountKind, GeneratorParams};
use pandora_core::hypergraph::{build, enumerate_matchings, is_matching};
use pandora_core::indices::reservation_value;
use pandora_core::io::{instance_from_json, instance_to_json};
use pandora_core::model::{expectation_of_max, DiscreteDistribution};
use pandora_core::pipeline::main_schedule;
use pandora_core::rational::{int, ratio, to_f64, Rational};
use pandora_core::strategies::{RngSource, Strategy as _};
use pandora_core::submodular::{measured_continuous_greedy, SolverConfig, SubmodularObjective};
use pandora_core::{Instance, Variant};

fn law() -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((0i64..60, 1i64..10), 1..5).prop_map(|atoms| {
        let merged: BTreeMap<i64, i64> = atoms.into_iter().fold(BTreeMap::new(), |mut m, (v, w)| {
            *m.entry(v).or_default() += w;
            m
        });
        let total: i64 = merged.values().sum();
        DiscreteDistribution::new(merged.into_iter().map(|(v, w)| (int(v), ratio(w, total)))).unwrap()
    })
}

fn small_instance(seed: u64, absent: bool, discount: DiscountKind) -> Instance {
    let params = GeneratorParams {
        n: 1 + (seed % 3) as usize,
        horizon: Some(5),
        absent_prob: if absent { 0.2 } else { 0.0 },
        discount,
        ..GeneratorParams::default()
    };
    generate(&params, seed).unwrap()
}

fn discount_kind() -> impl Strategy<Value = DiscountKind> {
    prop_oneof![
        Just(DiscountKind::Identity),
        Just(DiscountKind::Commit),
        Just(DiscountKind::Multiplicative),
        Just(DiscountKind::Table),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expectation_of_max_is_monotone_in_inclusion(
        laws in prop::collection::vec(law(), 1..4),
        qs in prop::collection::vec((0i64..=8, 0i64..=8), 4),
    ) {
        let dists: Vec<&DiscreteDistribution> = laws.iter().collect();
        let lo: Vec<Rational> = qs.iter().take(laws.len()).map(|(a, b)| ratio(*a.min(b), 8)).collect();
        let hi: Vec<Rational> = qs.iter().take(laws.len()).map(|(a, b)| ratio(*a.max(b), 8)).collect();
        prop_assert!(expectation_of_max(&dists, &lo).unwrap() <= expectation_of_max(&dists, &hi).unwrap());
        let ones = vec![Rational::one(); laws.len()];
        let best_single = laws.iter().map(|d| d.expectation()).max().unwrap();
        prop_assert!(expectation_of_max(&dists, &ones).unwrap() >= best_single);
    }

    #[test]
    fn capped_expectation_is_bounded(d in law(), cap in 0i64..70) {
        let e = d.capped(&int(cap)).expectation();
        prop_assert!(e <= d.expectation());
        prop_assert!(e <= int(cap));
    }

    #[test]
    fn reservation_solves_the_indifference_equation(d in law(), c1 in 1i64..400, c2 in 1i64..400) {
        let ev = d.expectation();
        prop_assume!(!ev.is_zero());
        let (lo, hi) = (c1.min(c2), c1.max(c2));
        let cost_lo = &ev * ratio(lo, 400);
        let cost_hi = &ev * ratio(hi, 400);
        let r_lo = reservation_value(&d, &cost_lo);
        let r_hi = reservation_value(&d, &cost_hi);
        prop_assert_eq!(d.excess(&r_lo), cost_lo);
        prop_assert!(r_hi <= r_lo);
    }

    #[test]
    fn objective_is_monotone_submodular_and_extends_to_vertices(seed in 0u64..10_000, picks in prop::collection::vec(any::<(bool, bool)>(), 40)) {
        let inst = small_instance(seed, true, DiscountKind::Identity);
        let obj = SubmodularObjective::from_hypergraph(&build(&inst));
        let m = obj.ground_size();
        let s: Vec<usize> = (0..m).filter(|&e| picks[e % picks.len()].0).collect();
        let t: Vec<usize> = (0..m).filter(|&e| picks[e % picks.len()].1).collect();
        let union: Vec<usize> = (0..m).filter(|e| s.contains(e) || t.contains(e)).collect();
        let inter: Vec<usize> = s.iter().copied().filter(|e| t.contains(e)).collect();
        let f = |x: &[usize]| obj.f_eval(x).unwrap();
        prop_assert!(f(&s) + f(&t) >= f(&union) + f(&inter));
        prop_assert!(f(&inter) <= f(&s) && f(&s) <= f(&union));
        let vertex: Vec<Rational> = (0..m).map(|e| if s.contains(&e) { Rational::one() } else { Rational::zero() }).collect();
        prop_assert_eq!(obj.multilinear_eval(&vertex).unwrap(), f(&s));
    }

    #[test]
    fn enumerated_matchings_are_matchings(seed in 0u64..10_000) {
        let h = build(&small_instance(seed, true, DiscountKind::Identity));
        for m in enumerate_matchings(&h, usize::MAX).unwrap() {
            prop_assert!(is_matching(&h, &m.edges).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn continuous_greedy_stays_in_scaled_polytope(seed in 0u64..10_000) {
        let h = build(&small_instance(seed, true, DiscountKind::Identity));
        let cfg = SolverConfig { mcg_steps: 20, ..SolverConfig::default() };
        let sol = measured_continuous_greedy(&SubmodularObjective::from_hypergraph(&h), &h, &cfg).unwrap();
        prop_assert!(h.in_scaled_polytope(&sol.x, &cfg.b));
        prop_assert!(sol.x.iter().all(|x| *x >= Rational::zero()));
    }

    #[test]
    fn main_schedule_traces_are_consistent(seed in 0u64..10_000, discount in discount_kind(), draws in 0u64..1000) {
        let inst = small_instance(seed, true, discount);
        let schedule = main_schedule(&inst, &SolverConfig::default(), seed).unwrap();
        let h = build(&inst);
        prop_assert!(is_matching(&h, &schedule.matching().edges).unwrap());
        let mut src = RngSource::new(ChaCha8Rng::seed_from_u64(draws));
        let trace = schedule.execute(&inst, &mut src).unwrap();
        trace.verify(&inst).unwrap();
        let n = trace.inspected.len();
        for (k, ins) in trace.inspected.iter().enumerate() {
            prop_assert!(ins.r >= schedule.tau);
            if ins.value >= schedule.tau {
                prop_assert_eq!(k + 1, n);
                prop_assert_eq!(trace.halted_at, ins.time);
                prop_assert!(trace.collected.is_some());
            }
        }
    }

    #[test]
    fn oracle_policy_reproduces_its_value(seed in 0u64..10_000, discount in discount_kind()) {
        let inst = small_instance(seed, true, discount);
        let res = optimal_adaptive_oracle(&inst, &OracleGuards::default()).unwrap();
        prop_assert_eq!(evaluate_policy(&inst, &res.policy), res.optimal_value.clone());
        let schedule = main_schedule(&inst, &SolverConfig::default(), seed).unwrap();
        prop_assert!(exact_expected_utility(&inst, &schedule).unwrap() <= res.optimal_value);
    }

    #[test]
    fn monte_carlo_agrees_with_exact(seed in 0u64..10_000) {
        let inst = small_instance(seed, false, DiscountKind::Identity);
        let schedule = main_schedule(&inst, &SolverConfig::default(), seed).unwrap();
        let exact = to_f64(&exact_expected_utility(&inst, &schedule).unwrap());
        let mc = monte_carlo(&inst, &schedule, 4000, seed).unwrap();
        prop_assert!((mc.mean - exact).abs() <= 4.0 * mc.stderr + 1e-9, "mc {} ± {} vs exact {}", mc.mean, mc.stderr, exact);
    }

    #[test]
    fn generated_instances_survive_json(seed in 0u64..10_000, variant in prop_oneof![Just(Variant::General), Just(Variant::Instant), Just(Variant::Fixed)]) {
        let params = GeneratorParams { variant, absent_prob: if variant == Variant::Fixed { 0.0 } else { 0.3 }, ..GeneratorParams::default() };
        let inst = generate(&params, seed).unwrap();
        prop_assert_eq!(instance_from_json(&instance_to_json(&inst)).unwrap(), inst);
    }
}
