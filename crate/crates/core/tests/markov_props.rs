use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use proptest::prelude::*;
use ratmix_core::markov::{
    cylinder_correlation, last_exit_residuals, nstep_row, taboo_column, transition_profile, Chain, Cylinder,
};
use ratmix_core::numeric::Rational;
use ratmix_core::renewal::{renewal_from_lifetime, renewal_from_lifetime_exact, LifetimeDist};

fn rational_lifetime(max: u64) -> impl Strategy<Value = LifetimeDist> {
    prop::collection::btree_map(1..=max, 1u32..20, 1..=5).prop_map(|atoms| {
        let total: u32 = atoms.values().sum();
        let probs: BTreeMap<u64, Rational> = atoms
            .into_iter()
            .map(|(k, w)| (k, Rational::new(BigInt::from(w), BigInt::from(total))))
            .collect();
        LifetimeDist::explicit(probs).unwrap()
    })
}

fn chain() -> impl Strategy<Value = Chain> {
    prop_oneof![
        1 => Just(Chain::hopf()),
        3 => rational_lifetime(10).prop_map(|f| Chain::renewal_shift(f).unwrap()),
    ]
}

fn cylinder(states: u64) -> impl Strategy<Value = Cylinder> {
    (prop::collection::vec(1..=states, 1..=3), -4i64..=4).prop_map(|(w, k)| Cylinder::new(w, k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diagonal_identity_is_exact(f in rational_lifetime(12)) {
        let n = 96;
        let c = Chain::renewal_shift(f.clone()).unwrap();
        let u = renewal_from_lifetime_exact(&f, n).unwrap();
        let (col, dropped) = transition_profile::<Rational>(&c, 1, 1, n).unwrap();
        prop_assert_eq!(dropped, 0.0);
        prop_assert_eq!(&col[..], u.exact().unwrap());
    }

    #[test]
    fn floating_matrix_powers_match_the_recursion_bitwise(f in rational_lifetime(12)) {
        let c = Chain::renewal_shift(f.clone()).unwrap();
        let u = renewal_from_lifetime(&f, 2000).unwrap();
        let (col, _) = transition_profile::<f64>(&c, 1, 1, 2000).unwrap();
        prop_assert_eq!(&col[..], u.values());
    }

    #[test]
    fn rows_are_stochastic(c in chain(), s in 1u64..6, n in 0u64..60) {
        let row = nstep_row::<Rational>(&c, s, n).unwrap();
        prop_assert!(row.total().is_one());
    }

    #[test]
    fn last_exit_decomposition(c in chain(), s in 1u64..4, t in 1u64..6) {
        for r in last_exit_residuals(&c, s, t, 64).unwrap() {
            prop_assert!(r.is_zero());
        }
    }

    #[test]
    fn chung_partial_sums(f in rational_lifetime(10), t in 1u64..12) {
        let c = Chain::renewal_shift(f).unwrap();
        let col = taboo_column::<Rational>(&c, 1, t, 80).unwrap();
        let pi: Rational = c.pi(t).unwrap();
        let mut acc = Rational::zero();
        for x in col {
            let next = &acc + x;
            prop_assert!(next >= acc);
            acc = next;
            prop_assert!(acc <= pi);
        }
    }

    #[test]
    fn correlations_are_offset_covariant(c in chain(), a in cylinder(5), b in cylinder(5), shift in -6i64..6, n in 0u64..20) {
        let x = cylinder_correlation::<Rational>(&c, &a, &b, n).unwrap();
        let y = cylinder_correlation::<Rational>(&c, &a.shifted(shift), &b.shifted(shift), n).unwrap();
        prop_assert_eq!(x, y);
    }
}
