//! Finite-horizon signatures of rational weak mixing: the weighted
//! correlation defect, pointwise correlation ratios, density convergence,
//! return sequences and the Garsia–Lamperti ratio.

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::indexsets::{density_profile, exceptional_set, smallness_profile, IndexSet};
use crate::markov::{correlation_profile, cylinder_measure, Chain, Cylinder};
use crate::numeric::CompensatedSum;
use crate::report::{log_grid, ConvergenceProfile, GridRule, Report};
use crate::weights::{rv_index_estimate, WeightSeq};

/// Defect `D(n) = a_u(n)^{-1} Σ_{k<n} |m(A ∩ T^{-k}B) - m(A)m(B)u_k|` on a
/// dyadic grid up to `n`, for every pair.
pub fn rwm_report(c: &Chain, pairs: &[(Cylinder, Cylinder)], u: &WeightSeq, n: u64) -> Result<Report> {
    if n == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    u.get(n - 1)?;
    let grid = GridRule::Dyadic.build(1, n);
    let results: Vec<Result<(ConvergenceProfile, f64)>> =
        pairs.par_iter().map(|(a, b)| pair_defect(c, a, b, u, &grid)).collect();
    let mut report = Report::new("rwm", c.label(), n);
    let mut rows = Vec::new();
    for ((a, b), res) in pairs.iter().zip(results) {
        let (prof, dropped) = res?;
        report.truncation_bound = report.truncation_bound.max(dropped);
        let last = prof.last().map_or(f64::NAN, |(_, v)| v);
        rows.push(json!({
            "A": a.to_string(),
            "B": b.to_string(),
            "defect": last,
            "last_decade_slope": prof.last_decade_slope(),
        }));
        report.profiles.push(ConvergenceProfile { label: format!("defect {a} {b}"), ..prof });
    }
    let worst = report.profiles.iter().filter_map(|p| p.last()).map(|(_, v)| v).fold(0.0, f64::max);
    report.set("weight", u.label());
    report.set("pairs", rows);
    report.set("max_defect", worst);
    report.verdict = format!("max defect {worst:e} at N = {n}");
    Ok(report)
}

fn pair_defect(c: &Chain, a: &Cylinder, b: &Cylinder, u: &WeightSeq, grid: &[u64]) -> Result<(ConvergenceProfile, f64)> {
    let (ma, mb): (f64, f64) = (cylinder_measure(c, a)?, cylinder_measure(c, b)?);
    for (cyl, m) in [(a, ma), (b, mb)] {
        if m <= 0.0 {
            return Err(Error::DegenerateSet(format!("cylinder {cyl} has measure zero")));
        }
    }
    let max = *grid.last().unwrap_or(&1);
    let (corr, dropped) = correlation_profile::<f64>(c, a, b, max - 1)?;
    let product = ma * mb;
    let (mut total, mut dev) = (CompensatedSum::new(), CompensatedSum::new());
    let mut values = Vec::with_capacity(grid.len());
    let mut gi = 0;
    for k in 0..max {
        let uk = u.get(k)?;
        total.add(uk);
        dev.add((corr[k as usize] - product * uk).abs());
        while gi < grid.len() && grid[gi] == k + 1 {
            let a_n = total.value();
            if a_n <= 0.0 {
                return Err(Error::DegenerateWeight(format!("a_u({}) = 0", k + 1)));
            }
            values.push(dev.value() / a_n);
            gi += 1;
        }
    }
    Ok((ConvergenceProfile::new("defect", grid.to_vec(), values)?, dropped))
}

/// Pointwise ratios `m(A ∩ T^{-n}B) / (m(A)m(B)u_n)` and their exceptional set.
#[derive(Debug, Clone, PartialEq)]
pub struct KrickebergProfile {
    pub profile: ConvergenceProfile,
    /// The ratio for every `n = 0..=max(grid)`.
    pub ratios: Vec<f64>,
    /// `{n : |ratio_n - 1| > eps}` over `0..=max(grid)`.
    pub exceptional: IndexSet,
}

pub fn krickeberg_profile(
    c: &Chain,
    a: &Cylinder,
    b: &Cylinder,
    u: &WeightSeq,
    grid: &[u64],
    eps: f64,
) -> Result<KrickebergProfile> {
    let max = *grid.last().ok_or_else(|| Error::Config("empty grid".into()))?;
    u.get(max)?;
    let (ma, mb): (f64, f64) = (cylinder_measure(c, a)?, cylinder_measure(c, b)?);
    if ma * mb <= 0.0 {
        return Err(Error::DegenerateSet("cylinder of measure zero".into()));
    }
    let (corr, _) = correlation_profile::<f64>(c, a, b, max)?;
    let ratios = (0..=max)
        .map(|n| {
            let un = u.get(n)?;
            if un > 0.0 {
                Ok(corr[n as usize] / (ma * mb * un))
            } else {
                Err(Error::DegenerateWeight(format!("u_{n} = 0")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let values = grid.iter().map(|&n| ratios[n as usize]).collect();
    let profile = ConvergenceProfile::new(format!("krickeberg {a} {b}"), grid.to_vec(), values)?;
    let exceptional = exceptional_set(&ratios, 0, 1.0, eps)?;
    Ok(KrickebergProfile { profile, ratios, exceptional })
}

/// Combines the regular-variation index of `u` with the exceptional set
/// `{n : |s_n - 1| > eps}` of a ratio sequence `s_0..=s_N`, and reports
/// whether zero counting density and `u`-smallness agree at the horizon.
pub fn density_report(s: &[f64], u: &WeightSeq, n: u64, eps: f64, tol: f64) -> Result<Report> {
    if (s.len() as u64) <= n {
        return Err(Error::Horizon { requested: n, horizon: s.len().saturating_sub(1) as u64 });
    }
    if n < 1000 {
        return Err(Error::Config("the index fit needs a horizon of at least 1000".into()));
    }
    u.get(n)?;
    let rv = rv_index_estimate(u, &log_grid(n / 1000, n, 40))?;
    let k_set = exceptional_set(&s[..=n as usize], 0, 1.0, eps)?;
    let density = density_profile(&k_set, &[n])?.values[0];
    let small = smallness_profile(&k_set, u, &[n])?.values[0];
    let zero_density = density <= tol;
    let is_small = small <= tol;
    let theorem_a = rv.index > -1.0 && rv.index <= 0.03;

    let mut report = Report::new("density", u.label(), n);
    report.set("rv_index", rv.index);
    report.set("rv_residual", rv.residual);
    report.set("eps", eps);
    report.set("tol", tol);
    report.set("exceptional_count", k_set.len_upto(n));
    report.set("exceptional_density", density);
    report.set("exceptional_smallness", small);
    report.set("index_in_range", theorem_a);
    report.set("exceptional_set", k_set.to_json());
    report.check(
        "density-smallness-agree",
        zero_density == is_small,
        format!("density {density:e}, smallness {small:e}, tolerance {tol:e}"),
    );
    report.note("the reference set is the one-state cylinder whose return weight is u");
    report.verdict = if zero_density && is_small {
        "density convergence observed at horizon".into()
    } else {
        "no density convergence".into()
    };
    Ok(report)
}

/// Return weight of a finite disjoint union `F` of cylinders.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSequence {
    /// `w_k = m(F ∩ T^{-k}F) / m(F)²`.
    pub weight: WeightSeq,
    /// `a_n(F) = Σ_{k<n} w_k` for `n = 0..=N`.
    pub partial: Vec<f64>,
    pub truncation: f64,
}

pub fn return_sequence(c: &Chain, parts: &[Cylinder], n: u64) -> Result<ReturnSequence> {
    if parts.is_empty() {
        return Err(Error::DegenerateSet("empty union".into()));
    }
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[i + 1..] {
            if !a.conflicts_with(b) {
                return Err(Error::DegenerateSet(format!("{a} and {b} overlap")));
            }
        }
    }
    let m_f: f64 = parts.iter().map(|a| cylinder_measure::<f64>(c, a)).sum::<Result<f64>>()?;
    if m_f <= 0.0 {
        return Err(Error::DegenerateSet("union has measure zero".into()));
    }
    let pairs: Vec<(&Cylinder, &Cylinder)> = parts.iter().flat_map(|a| parts.iter().map(move |b| (a, b))).collect();
    let profiles: Vec<Result<(Vec<f64>, f64)>> =
        pairs.par_iter().map(|(a, b)| correlation_profile::<f64>(c, a, b, n)).collect();
    let mut w = vec![0.0; n as usize + 1];
    let mut truncation: f64 = 0.0;
    for res in profiles {
        let (corr, dropped) = res?;
        truncation = truncation.max(dropped);
        for (acc, x) in w.iter_mut().zip(corr) {
            *acc += x;
        }
    }
    let norm = m_f * m_f;
    let w: Vec<f64> = w.into_iter().map(|x| x / norm).collect();
    let mut partial = Vec::with_capacity(w.len());
    let mut acc = CompensatedSum::new();
    partial.push(0.0);
    for &x in &w[..n as usize] {
        acc.add(x);
        partial.push(acc.value());
    }
    let label = parts.iter().map(ToString::to_string).collect::<Vec<_>>().join("∪");
    Ok(ReturnSequence { weight: WeightSeq::from_values(format!("return[{label}]"), w)?, partial, truncation })
}

/// `n u_n / a_u(n)` on the grid.
pub fn gl_ratio_profile(u: &WeightSeq, grid: &[u64]) -> Result<ConvergenceProfile> {
    if grid.first() == Some(&0) {
        return Err(Error::Config("the ratio is defined for n >= 1".into()));
    }
    let max = *grid.last().ok_or_else(|| Error::Config("empty grid".into()))?;
    u.get(max)?;
    let sums = prefix_sums_to(u, max)?;
    let values = grid
        .iter()
        .map(|&n| {
            let a = sums[n as usize];
            if a > 0.0 {
                Ok(n as f64 * u.get(n)? / a)
            } else {
                Err(Error::DegenerateWeight(format!("a_u({n}) = 0")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ConvergenceProfile::new(format!("gl[{}]", u.label()), grid.to_vec(), values)
}

fn prefix_sums_to(u: &WeightSeq, max: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(max as usize + 1);
    let mut acc = CompensatedSum::new();
    out.push(0.0);
    for k in 0..max {
        acc.add(u.get(k)?);
        out.push(acc.value());
    }
    Ok(out)
}

/// Garsia–Lamperti ratio against its predicted limit `gamma`: the profile,
/// the exceptional set `{n : |ratio_n - γ| > eps}` and its `u`-smallness over
/// the last decade.
pub fn gl_report(u: &WeightSeq, gamma: f64, n: u64, eps: f64) -> Result<Report> {
    if n < 100 {
        return Err(Error::Config("horizon must be at least 100".into()));
    }
    u.get(n)?;
    let sums = prefix_sums_to(u, n)?;
    let ratios = (1..=n).map(|k| Ok(k as f64 * u.get(k)? / sums[k as usize])).collect::<Result<Vec<f64>>>()?;
    let k_set = IndexSet::from_indices(
        ratios.iter().enumerate().filter(|(_, r)| !((*r - gamma).abs() <= eps)).map(|(i, _)| i as u64 + 1),
    )
    .known_up_to(n);
    let grid = GridRule::Dyadic.build(1, n);
    let profile = ConvergenceProfile::new("n u_n / a_u(n)", grid.clone(), grid.iter().map(|&k| ratios[k as usize - 1]).collect())?;
    let decade = log_grid(n / 10, n, 11);
    let small = smallness_profile(&k_set, u, &decade)?;
    let last = ratios[n as usize - 1];

    let mut report = Report::new("garsia-lamperti", u.label(), n);
    report.set("gamma", gamma);
    report.set("eps", eps);
    report.set("ratio", last);
    report.set("exceptional_count", k_set.len_upto(n));
    report.set("exceptional_smallness", small.last().map(|(_, v)| v));
    report.check("ratio-at-horizon", (last - gamma).abs() < eps, format!("|{last:.5} - {gamma}| vs {eps}"));
    report.check("exceptional-smallness-decreasing", small.decreasing_tail(small.values.len()), "over the last decade");
    report.verdict = if (last - gamma).abs() < eps { "pointwise limit observed at horizon".into() } else { "limit only in density at horizon".into() };
    report.profiles.push(profile);
    report.profiles.push(ConvergenceProfile { label: "exceptional smallness".into(), ..small });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::occupation_sequence;
    use crate::numeric::Rational;
    use crate::renewal::{renewal_from_lifetime, LifetimeDist};
    use crate::weights::WeightRule;

    fn cyl(s: &str) -> Cylinder {
        s.parse().unwrap()
    }

    fn geo_chain() -> Chain {
        Chain::renewal_shift(LifetimeDist::geometric(Rational::new(1.into(), 2.into())).unwrap()).unwrap()
    }

    #[test]
    fn diagonal_defect_is_zero_with_the_renewal_sequence() {
        for f in [LifetimeDist::StPetersburg, "explicit(1:1/3,3:2/3)".parse().unwrap()] {
            let c = Chain::renewal_shift(f.clone()).unwrap();
            let u = renewal_from_lifetime(&f, 2000).unwrap();
            let rep = rwm_report(&c, &[(cyl("[1]_0"), cyl("[1]_0"))], u.weights(), 2000).unwrap();
            assert!(rep.profiles[0].values.iter().all(|&v| v == 0.0), "{}", f.label());
        }
    }

    #[test]
    fn rwm_st_petersburg_decreases() {
        let c = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let u = renewal_from_lifetime(&LifetimeDist::StPetersburg, 10_000).unwrap();
        let rep = rwm_report(&c, &[(cyl("[1,2]_0"), cyl("[2]_0"))], u.weights(), 10_000).unwrap();
        let p = &rep.profiles[0];
        assert!(p.decreasing_tail(6), "{:?}", p.values);
        assert!(p.last().unwrap().1 < 0.05);
    }

    #[test]
    fn rwm_rejects_null_cylinders() {
        let c = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let u = WeightSeq::constant(1.0, 10);
        let res = rwm_report(&c, &[(cyl("[1,3]_0"), cyl("[1]_0"))], &u, 10);
        assert!(matches!(res, Err(Error::DegenerateSet(_))));
    }

    #[test]
    fn krickeberg_examples() {
        let c = geo_chain();
        let u = occupation_sequence(&c, 1, 200).unwrap().weight;
        let k = krickeberg_profile(&c, &cyl("[1]_0"), &cyl("[1]_0"), &u, &[1, 10, 200], 1e-9).unwrap();
        assert!(k.profile.values.iter().all(|&v| v == 1.0));
        assert!(k.exceptional.is_empty());
        let k = krickeberg_profile(&c, &cyl("[2]_0"), &cyl("[3]_0"), &u, &[100], 1e-3).unwrap();
        assert!((k.profile.values[0] - 1.0).abs() < 1e-3);
        assert!(k.exceptional.intervals().last().unwrap().1 < 100);
    }

    #[test]
    fn density_report_examples() {
        let u = WeightSeq::constant(1.0, 5000);
        let rep = density_report(&[1.0; 5001], &u, 5000, 0.1, 0.02).unwrap();
        assert_eq!(rep.values["exceptional_count"], json!(0));
        assert_eq!(rep.verdict, "density convergence observed at horizon");
        let bad: Vec<f64> = (0..=5000).map(|n| if n % 3 == 0 { 2.0 } else { 1.0 }).collect();
        let rep = density_report(&bad, &u, 5000, 0.1, 0.02).unwrap();
        assert_eq!(rep.verdict, "no density convergence");
        assert!(rep.all_passed());
    }

    #[test]
    fn return_sequence_examples() {
        let f = LifetimeDist::StPetersburg;
        let c = Chain::renewal_shift(f.clone()).unwrap();
        let one = return_sequence(&c, &[cyl("[1]_0")], 500).unwrap();
        let u = renewal_from_lifetime(&f, 500).unwrap();
        for n in [1usize, 10, 500] {
            let direct: f64 = u.values()[..n].iter().sum();
            assert!((one.partial[n] - direct).abs() < 1e-12 * direct);
        }
        assert!(matches!(
            return_sequence(&c, &[cyl("[1]_0"), cyl("[1,2]_0")], 10),
            Err(Error::DegenerateSet(_))
        ));
    }

    #[test]
    fn gl_power_law() {
        let u = WeightSeq::from_rule(WeightRule::PowerLaw { beta: 0.25 }, 100_000);
        let p = gl_ratio_profile(&u, &[10, 1000, 100_000]).unwrap();
        assert!((p.values[2] - 0.75).abs() < 1e-3);
        assert!((p.values[2] - 0.75).abs() < (p.values[1] - 0.75).abs());
    }
}
