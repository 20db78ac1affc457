//! Weight sequences and their calculus.
//!
//! A weight is a bounded nonnegative sequence `u_0, u_1, ...` whose partial
//! sums diverge. Everything here works on a finite materialization
//! `u_0..=u_N`; the horizon `N` travels with every result.
//!
//! Index convention: `a_u(n) = u_0 + ... + u_{n-1}`. Difference sums
//! `Σ_{k=1}^{n} |u_k - u_{k+1}|` keep their one-based range, so they need
//! `u` materialized to `n + 1`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, least_squares, rational_from_f64, CompensatedSum, Rational};
use crate::report::ConvergenceProfile;

/// Closed-form rules that can extend a weight beyond its materialized range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum WeightRule {
    /// `u_n = c`.
    Constant { value: f64 },
    /// `u_n = (n + 1)^(-beta)`.
    PowerLaw { beta: f64 },
    /// `u_0 = 0`, `u_n = sqrt(2 / (pi n))`.
    HopfAsymptotic,
    /// `u_n = 1 / ln(n + e)`.
    KaluzaLog,
    /// `1, 0, 1, 0, ...`
    Alternating,
    /// `u_n = 1 / (n + 1)`.
    Harmonic,
}

impl WeightRule {
    pub fn eval(&self, n: u64) -> f64 {
        let x = n as f64;
        match *self {
            Self::Constant { value } => value,
            Self::PowerLaw { beta } => (x + 1.0).powf(-beta),
            Self::HopfAsymptotic => {
                if n == 0 {
                    0.0
                } else {
                    (2.0 / (std::f64::consts::PI * x)).sqrt()
                }
            }
            Self::KaluzaLog => 1.0 / (x + std::f64::consts::E).ln(),
            Self::Alternating => {
                if n.is_multiple_of(2) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Harmonic => 1.0 / (x + 1.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Constant { value } => format!("constant({value})"),
            Self::PowerLaw { beta } => format!("power-law({beta})"),
            Self::HopfAsymptotic => "hopf-asymptotic".into(),
            Self::KaluzaLog => "kaluza-log".into(),
            Self::Alternating => "alternating".into(),
            Self::Harmonic => "harmonic".into(),
        }
    }
}

/// Parses the names produced by [`WeightRule::name`]; `power(β)` is accepted
/// for `power-law(β)`.
impl FromStr for WeightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| Error::Config(format!("unbalanced parentheses in '{s}'")))?;
                (name.trim(), Some(inner.trim()))
            }
            None => (s, None),
        };
        let number = || -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Config(format!("weight '{name}' needs a parameter")))?;
            a.parse().map_err(|_| Error::Config(format!("bad weight parameter '{a}'")))
        };
        let rule = match name {
            "constant" => Self::Constant { value: number()? },
            "power-law" | "power" => Self::PowerLaw { beta: number()? },
            "hopf-asymptotic" => Self::HopfAsymptotic,
            "kaluza-log" => Self::KaluzaLog,
            "alternating" => Self::Alternating,
            "harmonic" => Self::Harmonic,
            _ => return Err(Error::Config(format!("unknown weight rule '{name}'"))),
        };
        if arg.is_some() && !matches!(rule, Self::Constant { .. } | Self::PowerLaw { .. }) {
            return Err(Error::Config(format!("weight '{name}' takes no parameter")));
        }
        Ok(rule)
    }
}

/// A weight `u_0..=u_N`: stored values, optionally continued by a rule.
///
/// Rule-backed weights built with [`WeightSeq::lazy`] store nothing and
/// evaluate the rule on demand, so horizons like `2^25` cost no memory.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSeq {
    values: Vec<f64>,
    rule: Option<WeightRule>,
    horizon: u64,
    label: String,
}

impl WeightSeq {
    /// Wraps explicit values; rejects negative or non-finite entries.
    pub fn from_values(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateWeight("empty weight sequence".into()));
        }
        if let Some((n, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::DegenerateWeight(format!("u_{n} = {v} is not a finite nonnegative number")));
        }
        Ok(Self { horizon: values.len() as u64 - 1, values, rule: None, label: label.into() })
    }

    pub fn from_rule(rule: WeightRule, horizon: u64) -> Self {
        let values = (0..=horizon).map(|n| rule.eval(n)).collect();
        Self { label: rule.name(), values, rule: Some(rule), horizon }
    }

    /// Rule-backed weight with nothing materialized.
    pub fn lazy(rule: WeightRule, horizon: u64) -> Self {
        Self { label: rule.name(), values: Vec::new(), rule: Some(rule), horizon }
    }

    pub fn constant(value: f64, horizon: u64) -> Self {
        Self::from_rule(WeightRule::Constant { value }, horizon)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rule(&self) -> Option<&WeightRule> {
        self.rule.as_ref()
    }

    /// Largest available index `N`.
    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Stored values; empty for lazy weights.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `u_n` without the horizon check (callers check `n <= N`).
    #[inline]
    pub(crate) fn at(&self, n: u64) -> f64 {
        match self.values.get(n as usize) {
            Some(&v) => v,
            None => self.rule.as_ref().map_or(0.0, |r| r.eval(n)),
        }
    }

    pub fn get(&self, n: u64) -> Result<f64> {
        self.require(n)?;
        Ok(self.at(n))
    }

    /// Stored copy of `u_0..=u_N` (materializes lazy weights).
    pub fn materialize(&self) -> Self {
        let values = (0..=self.horizon).map(|n| self.at(n)).collect();
        Self { values, rule: self.rule.clone(), horizon: self.horizon, label: self.label.clone() }
    }

    /// Re-materializes a rule-backed weight to a new horizon.
    pub fn extend_to(&self, horizon: u64) -> Result<Self> {
        match &self.rule {
            Some(rule) => Ok(Self::from_rule(rule.clone(), horizon).with_label(self.label.clone())),
            None if horizon <= self.horizon() => Ok(Self {
                values: self.values[..=horizon as usize].to_vec(),
                rule: None,
                horizon,
                label: self.label.clone(),
            }),
            None => Err(Error::Horizon { requested: horizon, horizon: self.horizon() }),
        }
    }

    fn require(&self, n: u64) -> Result<()> {
        if n > self.horizon() {
            Err(Error::Horizon { requested: n, horizon: self.horizon() })
        } else {
            Ok(())
        }
    }

    /// `a_u(n) = Σ_{k<n} u_k`, compensated, ascending.
    pub fn partial_sum(&self, n: u64) -> Result<f64> {
        self.require(n)?;
        Ok(compensated_sum((0..n).map(|k| self.at(k))))
    }

    /// All partial sums `a_u(0), ..., a_u(N + 1)`.
    pub fn prefix_sums(&self) -> Vec<f64> {
        let mut acc = CompensatedSum::new();
        let mut out = Vec::with_capacity(self.horizon as usize + 2);
        out.push(0.0);
        for k in 0..=self.horizon {
            acc.add(self.at(k));
            out.push(acc.value());
        }
        out
    }

    /// Exact rational `a_u(n)` of the stored doubles.
    pub fn partial_sum_exact(&self, n: u64) -> Result<Rational> {
        self.require(n)?;
        let mut acc = Rational::from_integer(0.into());
        for k in 0..n {
            acc += rational_from_f64(self.at(k))?;
        }
        Ok(acc)
    }

    /// `sup_{n <= N} u_n`.
    pub fn sup(&self) -> f64 {
        (0..=self.horizon).map(|k| self.at(k)).fold(0.0, f64::max)
    }

    /// CSV with header `n,u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,u\n");
        for n in 0..=self.horizon {
            out.push_str(&format!("{n},{:e}\n", self.at(n)));
        }
        out
    }

    pub fn from_csv(label: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("n,u") => {}
            other => return Err(Error::Config(format!("expected CSV header 'n,u', found {other:?}"))),
        }
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let (n, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("malformed CSV row {}: '{line}'", row + 1)))?;
            let n: usize = n.trim().parse().map_err(|_| Error::Config(format!("bad index '{n}'")))?;
            if n != row {
                return Err(Error::Config(format!("CSV indices must be 0,1,2,...; found {n} at row {row}")));
            }
            values.push(v.trim().parse().map_err(|_| Error::Config(format!("bad value '{v}'")))?);
        }
        Self::from_values(label, values)
    }
}

/// `a_u(n)`.
pub fn partial_sums(u: &WeightSeq, n: u64) -> Result<f64> {
    u.partial_sum(n)
}

fn positive_sum(a: f64, n: u64) -> Result<f64> {
    if a > 0.0 {
        Ok(a)
    } else {
        Err(Error::DegenerateWeight(format!("a_u({n}) = 0")))
    }
}

/// Running `Σ_{k=1}^{n} |u_k - u_{k+1}|` for `n = 0..=N-1` (entry `n`).
fn variation_sums(u: &WeightSeq) -> Vec<f64> {
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity(u.horizon() as usize);
    out.push(0.0);
    for k in 1..u.horizon() {
        acc.add((u.at(k) - u.at(k + 1)).abs());
        out.push(acc.value());
    }
    out
}

/// Profile of `σ_u(n) = a_u(n)^{-1} Σ_{k=1}^{n} |u_k - u_{k+1}|` over `grid`.
pub fn smoothness_profile(u: &WeightSeq, grid: &[u64]) -> Result<ConvergenceProfile> {
    if let Some(&max) = grid.iter().max() {
        u.require(max + 1)?;
    }
    let prefix = u.prefix_sums();
    let var = variation_sums(u);
    let values = grid
        .iter()
        .map(|&n| Ok(var[n as usize] / positive_sum(prefix[n as usize], n)?))
        .collect::<Result<Vec<_>>>()?;
    ConvergenceProfile::new(format!("smoothness[{}]", u.label()), grid.to_vec(), values)
}

/// `d_n(u, w) = a_u(n)^{-1} Σ_{k=1}^{n} |u_k - w_k|`.
pub fn asym_distance(u: &WeightSeq, w: &WeightSeq, n: u64) -> Result<f64> {
    u.require(n)?;
    w.require(n)?;
    let a = positive_sum(u.partial_sum(n)?, n)?;
    let diff = compensated_sum((1..=n).map(|k| (u.at(k) - w.at(k)).abs()));
    Ok(diff / a)
}

/// `u^(p)_n = u_{pn}` for `pn <= N`.
pub fn subsample(u: &WeightSeq, p: u64) -> Result<WeightSeq> {
    if p == 0 {
        return Err(Error::Config("subsampling step must be positive".into()));
    }
    let horizon = u.horizon() / p;
    let values = (0..=horizon).map(|n| u.at(n * p)).collect();
    Ok(WeightSeq { values, rule: None, horizon, label: format!("{}^({p})", u.label()) })
}

/// Both sides of the subsampling comparison at `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsampleBound {
    pub p: u64,
    pub n: u64,
    /// `|p a_{u^(p)}(n) - a_u(pn)|`
    pub lhs: f64,
    /// `p² Σ_{k=0}^{pn-1} |u_k - u_{k+1}|`
    pub rhs: f64,
}

impl SubsampleBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300
    }

    /// `rhs - lhs`.
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Evaluates `|p a_{u^(p)}(n) - a_u(pn)| <= p² Σ_{k=0}^{pn-1} |u_k - u_{k+1}|`.
///
/// The variation sum starts at `k = 0` because `a_u` starts at `u_0`.
pub fn subsample_bound(u: &WeightSeq, p: u64, n: u64) -> Result<SubsampleBound> {
    u.require(p * n)?;
    let sub = subsample(u, p)?;
    let lhs = (p as f64 * sub.partial_sum(n)? - u.partial_sum(p * n)?).abs();
    let var = compensated_sum((0..p * n).map(|k| (u.at(k) - u.at(k + 1)).abs()));
    Ok(SubsampleBound { p, n, lhs, rhs: (p * p) as f64 * var })
}

/// `u^(κ)_n = Π_j u_{κ_j n}`.
pub fn product_weight(u: &WeightSeq, kappa: &[u64]) -> Result<WeightSeq> {
    let kmax = *kappa.iter().max().ok_or_else(|| Error::Config("empty kappa".into()))?;
    if kappa.contains(&0) {
        return Err(Error::Config("kappa entries must be positive".into()));
    }
    let horizon = u.horizon() / kmax;
    let values = (0..=horizon)
        .map(|n| kappa.iter().map(|&k| u.at(k * n)).product())
        .collect();
    let label = format!(
        "{}^({})",
        u.label(),
        kappa.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    Ok(WeightSeq { values, rule: None, horizon, label })
}

/// Least-squares regular-variation index estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RvIndex {
    pub index: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
}

/// Slope of `ln u_n` against `ln n` over `grid` (which must span two decades).
pub fn rv_index_estimate(u: &WeightSeq, grid: &[u64]) -> Result<RvIndex> {
    let (lo, hi) = match (grid.iter().min(), grid.iter().max()) {
        (Some(&lo), Some(&hi)) if lo > 0 => (lo, hi),
        _ => return Err(Error::Config("rv index grid must be nonempty and start at n >= 1".into())),
    };
    if (hi as f64) < 100.0 * lo as f64 {
        return Err(Error::Config(format!("rv index grid [{lo}, {hi}] spans less than two decades")));
    }
    u.require(hi)?;
    let mut xs = Vec::with_capacity(grid.len());
    let mut ys = Vec::with_capacity(grid.len());
    for &n in grid {
        let v = u.at(n);
        if v <= 0.0 {
            return Err(Error::DegenerateWeight(format!("u_{n} = {v} is not positive")));
        }
        xs.push((n as f64).ln());
        ys.push(v.ln());
    }
    let (index, intercept, residual) = least_squares(&xs, &ys);
    Ok(RvIndex { index, intercept, residual, points: grid.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::log_grid;

    #[test]
    fn rule_names_round_trip() {
        for r in [
            WeightRule::Constant { value: 0.5 },
            WeightRule::PowerLaw { beta: 0.25 },
            WeightRule::HopfAsymptotic,
            WeightRule::KaluzaLog,
            WeightRule::Alternating,
            WeightRule::Harmonic,
        ] {
            assert_eq!(r.name().parse::<WeightRule>().unwrap(), r);
        }
        assert_eq!("power(0.5)".parse::<WeightRule>().unwrap(), WeightRule::PowerLaw { beta: 0.5 });
        assert!("harmonic(2)".parse::<WeightRule>().is_err());
        assert!("power".parse::<WeightRule>().is_err());
    }

    #[test]
    fn constant_partial_sums() {
        let u = WeightSeq::constant(1.0, 20);
        assert_eq!(partial_sums(&u, 10).unwrap(), 10.0);
        assert_eq!(partial_sums(&u, 0).unwrap(), 0.0);
        assert!(matches!(partial_sums(&u, 21), Err(Error::Horizon { requested: 21, horizon: 20 })));
    }

    #[test]
    fn hopf_weight_sum_matches_exact_oracle() {
        let u = WeightSeq::from_rule(WeightRule::HopfAsymptotic, 100);
        let float = partial_sums(&u, 100).unwrap();
        let exact = crate::numeric::ratio_to_f64(&u.partial_sum_exact(100).unwrap());
        assert!((float - exact).abs() <= 1e-15 * exact);
    }

    #[test]
    fn rejects_negative_entries() {
        assert!(WeightSeq::from_values("bad", vec![1.0, -0.5]).is_err());
        assert!(WeightSeq::from_values("bad", vec![f64::INFINITY]).is_err());
        assert!(WeightSeq::from_values("empty", vec![]).is_err());
    }

    #[test]
    fn smoothness_of_constant_and_alternating() {
        let one = WeightSeq::constant(1.0, 100);
        let p = smoothness_profile(&one, &[1, 10, 99]).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));

        let alt = WeightSeq::from_rule(WeightRule::Alternating, 101);
        let p = smoothness_profile(&alt, &[2, 10, 100]).unwrap();
        assert_eq!(p.values, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn smoothness_needs_one_extra_index() {
        let one = WeightSeq::constant(1.0, 10);
        assert!(smoothness_profile(&one, &[10]).is_err());
        assert!(smoothness_profile(&one, &[9]).is_ok());
    }

    #[test]
    fn smoothness_fails_loudly_on_zero_prefix() {
        let u = WeightSeq::from_values("zeros", vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(smoothness_profile(&u, &[1]), Err(Error::DegenerateWeight(_))));
        assert!(smoothness_profile(&u, &[2]).is_err());
    }

    #[test]
    fn kaluza_log_is_smooth_at_horizon() {
        let u = WeightSeq::from_rule(WeightRule::KaluzaLog, 100_001);
        let p = smoothness_profile(&u, &log_grid(10, 100_000, 12)).unwrap();
        assert!(p.values.windows(2).all(|w| w[1] < w[0]));
        // direct evaluation: (u_1 - u_{n+1}) / Σ_{k<n} 1/ln(k+e)
        let direct = (u.values[1] - u.values[100_001])
            / compensated_sum((0..100_000).map(|k| 1.0 / (k as f64 + std::f64::consts::E).ln()));
        assert!((p.values.last().unwrap() - direct).abs() < 1e-15);
        assert!(p.below_at_horizon(1e-3));
    }

    #[test]
    fn asym_distance_examples() {
        let one = WeightSeq::constant(1.0, 50);
        let zero = WeightSeq::constant(0.0, 50);
        assert_eq!(asym_distance(&one, &one, 50).unwrap(), 0.0);
        assert_eq!(asym_distance(&one, &zero, 37).unwrap(), 1.0);
        assert!(asym_distance(&zero, &one, 10).is_err());

        // distance to the one-step shift equals the smoothness ratio
        let u = WeightSeq::from_rule(WeightRule::HopfAsymptotic, 1001);
        let shifted = WeightSeq::from_values("shift", u.values()[1..].to_vec()).unwrap();
        let d = asym_distance(&u, &shifted, 1000).unwrap();
        let s = smoothness_profile(&u, &[1000]).unwrap().values[0];
        assert!((d - s).abs() <= 1e-15 * s);
    }

    #[test]
    fn subsample_examples() {
        let one = WeightSeq::constant(1.0, 100);
        let sub = subsample(&one, 2).unwrap();
        assert_eq!(sub.horizon(), 50);
        assert!(sub.values().iter().all(|&v| v == 1.0));
        let b = subsample_bound(&one, 2, 50).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert_eq!(2.0 * sub.partial_sum(50).unwrap(), one.partial_sum(100).unwrap());

        let alt = WeightSeq::from_rule(WeightRule::Alternating, 100);
        assert!(subsample(&alt, 2).unwrap().values().iter().all(|&v| v == 1.0));

        let kal = WeightSeq::from_rule(WeightRule::KaluzaLog, 30_000);
        let b = subsample_bound(&kal, 3, 10_000).unwrap();
        assert!(b.holds() && b.slack() > 0.0);
        assert!(subsample_bound(&kal, 3, 10_001).is_err());
        assert!(subsample(&kal, 0).is_err());
    }

    #[test]
    fn product_weight_examples() {
        let u = WeightSeq::from_rule(WeightRule::KaluzaLog, 20_000);
        assert_eq!(product_weight(&u, &[1]).unwrap().values(), u.values());
        let sq = product_weight(&u, &[1, 1]).unwrap();
        for n in [0u64, 7, 1000] {
            let x = 1.0 / (n as f64 + std::f64::consts::E).ln();
            assert!((sq.values()[n as usize] - x * x).abs() < 1e-16);
        }
        // Kaluza ratios of the (1,2) product stay increasing through n = 10^4
        let pr = product_weight(&u, &[1, 2]).unwrap();
        assert_eq!(pr.horizon(), 10_000);
        let v = pr.values();
        let ratios: Vec<f64> = (0..10_000).map(|n| v[n + 1] / v[n]).collect();
        assert!(ratios.windows(2).all(|w| w[0] < w[1]));
        assert!(ratios.iter().all(|&r| r < 1.0));
        assert!(product_weight(&u, &[]).is_err());
        assert!(product_weight(&u, &[0]).is_err());
    }

    #[test]
    fn rv_index_examples() {
        let grid = log_grid(10, 10_000, 40);
        let u = WeightSeq::from_rule(WeightRule::PowerLaw { beta: 0.5 }, 10_000);
        let est = rv_index_estimate(&u, &grid).unwrap();
        assert!((est.index + 0.5).abs() < 0.01, "{est:?}");
        let one = WeightSeq::constant(1.0, 10_000);
        assert!(rv_index_estimate(&one, &grid).unwrap().index.abs() < 1e-12);
        assert!(rv_index_estimate(&one, &[10, 100]).is_err());
        let alt = WeightSeq::from_rule(WeightRule::Alternating, 10_000);
        assert!(matches!(rv_index_estimate(&alt, &[1, 101, 1001]), Err(Error::DegenerateWeight(_))));
    }

    #[test]
    fn csv_round_trip() {
        let u = WeightSeq::from_rule(WeightRule::Harmonic, 5);
        let back = WeightSeq::from_csv("h", &u.to_csv()).unwrap();
        assert_eq!(back.values(), u.values());
        assert!(WeightSeq::from_csv("h", "n,v\n0,1\n").is_err());
        assert!(WeightSeq::from_csv("h", "n,u\n1,1\n").is_err());
    }

    #[test]
    fn extend_rule_backed() {
        let u = WeightSeq::from_rule(WeightRule::Harmonic, 5);
        assert_eq!(u.extend_to(10).unwrap().horizon(), 10);
        let e = WeightSeq::from_values("e", vec![1.0, 2.0]).unwrap();
        assert!(e.extend_to(3).is_err());
        assert_eq!(e.extend_to(0).unwrap().values(), &[1.0]);
    }
}
