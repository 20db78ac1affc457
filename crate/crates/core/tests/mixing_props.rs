use std::collections::BTreeMap;

use num_bigint::BigInt;
use proptest::prelude::*;
use ratmix_core::indexsets::weighted_cesaro_mean;
use ratmix_core::markov::{correlation_profile, cylinder_measure, occupation_sequence, Chain, Cylinder};
use ratmix_core::mixing::{density_report, gl_ratio_profile, krickeberg_profile, rwm_report};
use ratmix_core::numeric::Rational;
use ratmix_core::renewal::LifetimeDist;
use ratmix_core::weights::{WeightRule, WeightSeq};

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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn diagonal_defect_vanishes(f in rational_lifetime(8), s in 1u64..4) {
        let c = Chain::renewal_shift(f).unwrap();
        prop_assume!(c.pi::<f64>(s).unwrap() > 0.0);
        let u = occupation_sequence(&c, s, 600).unwrap().weight;
        prop_assume!(u.get(0).unwrap() > 0.0);
        let cyl = Cylinder::new(vec![s], 0).unwrap();
        let rep = rwm_report(&c, &[(cyl.clone(), cyl)], &u, 600).unwrap();
        // m(A)² u_k and m(A ∩ T^{-k}A) agree exactly in real arithmetic; in
        // floating point they round identically when π_s is a power of two
        let pi: f64 = c.pi(s).unwrap();
        let dyadic = pi.log2().fract() == 0.0;
        for &v in &rep.profiles[0].values {
            if dyadic {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v <= 8.0 * f64::EPSILON, "defect {}", v);
            }
        }
    }

    /// The `u`-weighted mean of the ratios equals the normalized correlation sum.
    #[test]
    fn krickeberg_mean_matches_correlation_sum(f in rational_lifetime(6), b0 in 1u64..4, a0 in 1u64..4) {
        let c = Chain::renewal_shift(f).unwrap();
        let u = occupation_sequence(&c, 1, 400).unwrap().weight;
        prop_assume!(u.values().iter().all(|&x| x > 0.0));
        let (a, b) = (Cylinder::new(vec![a0], 0).unwrap(), Cylinder::new(vec![b0, 1], 0).unwrap());
        let m: f64 = cylinder_measure::<f64>(&c, &a).unwrap() * cylinder_measure::<f64>(&c, &b).unwrap();
        prop_assume!(m > 0.0);
        let k = krickeberg_profile(&c, &a, &b, &u, &[400], 0.1).unwrap();
        prop_assert!(k.ratios.iter().all(|&r| r >= 0.0));
        let (corr, _) = correlation_profile::<f64>(&c, &a, &b, 400).unwrap();
        for n in [1u64, 17, 400] {
            let mean = weighted_cesaro_mean(&k.ratios, &u, n).unwrap();
            let direct = corr[..n as usize].iter().sum::<f64>() / (m * u.partial_sum(n).unwrap());
            prop_assert!((mean - direct).abs() <= 1e-12 * direct.abs().max(1e-300), "{} vs {}", mean, direct);
        }
    }

    /// With `a(n) = Σ_{k=1}^n k^{-β}` squeezed between the integrals of `x^{-β}`,
    /// `n (n+1)^{-β} / a(n)` lies in an explicit window that closes at rate `n^{β-1}`.
    #[test]
    fn gl_ratio_of_power_laws(beta in 0.05f64..0.95) {
        let horizon = 100_000;
        let u = WeightSeq::from_rule(WeightRule::PowerLaw { beta }, horizon);
        let grid = [10u64, 100, 1000, 10_000, 100_000];
        let prof = gl_ratio_profile(&u, &grid).unwrap();
        for (&n, &r) in grid.iter().zip(&prof.values) {
            let x = n as f64;
            let lower = ((x + 1.0).powf(1.0 - beta) - 1.0) / (1.0 - beta);
            let upper = 1.0 + (x.powf(1.0 - beta) - 1.0) / (1.0 - beta);
            let top = x * (x + 1.0).powf(-beta);
            prop_assert!(r >= top / upper * (1.0 - 1e-12) && r <= top / lower * (1.0 + 1e-12));
            prop_assert!((r - (1.0 - beta)).abs() <= 2.0 * x.powf(beta - 1.0));
        }
    }

    #[test]
    fn density_exceptional_set_ignores_weight_perturbation(seed in any::<u64>()) {
        let n = 5000u64;
        let u = WeightSeq::from_rule(WeightRule::PowerLaw { beta: 0.5 }, n);
        let w = WeightSeq::from_values(
            "perturbed",
            (0..=n).map(|k| u.get(k).unwrap() + 1.0 / ((k + 2) as f64).powi(2)).collect(),
        )
        .unwrap();
        let s: Vec<f64> = (0..=n).map(|k| if (k ^ seed) % 97 == 0 { 2.0 } else { 1.0 }).collect();
        let a = density_report(&s, &u, n, 0.1, 0.02).unwrap();
        let b = density_report(&s, &w, n, 0.1, 0.02).unwrap();
        prop_assert_eq!(&a.values["exceptional_set"], &b.values["exceptional_set"]);
        prop_assert_eq!(a.verdict, b.verdict);
    }
}
