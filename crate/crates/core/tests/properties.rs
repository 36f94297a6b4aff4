use gasket_forms::functions::TestFunction;
use gasket_forms::gasket::Gasket;
use gasket_forms::seminorms::{local_energy_sequence, trace_termwise, weighted_tail_sum};
use gasket_forms::BigRational;
use proptest::prelude::*;

fn level2_values() -> impl Strategy<Value = Vec<f64>> {
    // #V_2 = 15; small integers keep the exact arithmetic cheap
    prop::collection::vec((-8i32..=8).prop_map(f64::from), 15)
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn renormalized_energies_never_decrease(values in level2_values()) {
        let g = Gasket::new(5).unwrap();
        let u = TestFunction::Custom { level: 2, values }.materialize::<BigRational>(&g, 5).unwrap();
        let a = local_energy_sequence(&g, &u, 5).unwrap();
        for w in a.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        // beyond the data level the function is harmonic, so energy is kept
        prop_assert_eq!(&a[1], &a[4]);
    }

    #[test]
    fn edge_trace_is_dominated_levelwise(values in level2_values()) {
        let g = Gasket::new(4).unwrap();
        let u = TestFunction::Custom { level: 2, values }.materialize::<BigRational>(&g, 4).unwrap();
        for level in trace_termwise(&g, &u, 4).unwrap() {
            prop_assert!(level.holds, "level {}: {} > {}", level.n, level.interval, level.gasket);
        }
    }

    #[test]
    fn completed_sum_is_monotone_in_lambda(
        steps in prop::collection::vec(0i64..20, 1..8),
        l1 in 201i64..333,
        l2 in 201i64..333,
    ) {
        let mut acc = 0;
        let a: Vec<BigRational> = steps.iter().map(|s| { acc += s; q(acc, 1) }).collect();
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        let n = a.len();
        let small = weighted_tail_sum(&a, &q(lo, 1000), n).unwrap();
        let large = weighted_tail_sum(&a, &q(hi, 1000), n).unwrap();
        prop_assert!(large.completed() <= small.completed());
        prop_assert!(small.completed() <= a[n - 1]);
    }
}
