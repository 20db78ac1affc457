//! Lifetime distributions and their renewal sequences
//! `u_0 = 1, u_n = Σ_{k=1}^n f_k u_{n-k}`, together with the smoothness
//! diagnostics for renewal sequences and the explicit construction of
//! lifetimes whose renewal sequence makes an arbitrarily large ratio jump.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numeric::{
    format_rational, least_squares, parse_rational, ratio_to_f64, rational_from_f64, CompensatedSum, Rational,
    Scalar,
};
use crate::report::{log_grid, ConvergenceProfile, GridRule, Report};
use crate::weights::{smoothness_profile, WeightRule, WeightSeq};

/// A probability (or sub-probability) distribution on `{1, 2, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub enum LifetimeDist {
    /// Finitely many masses, possibly with total below one.
    Explicit(BTreeMap<u64, Rational>),
    /// `f_{2^m} = 2^{-(m+1)}`.
    StPetersburg,
    /// `f_n = p (1 - p)^{n-1}`.
    Geometric(Rational),
    /// Tail `f([n, ∞)) = n^{-γ}`.
    Pareto(f64),
}

impl LifetimeDist {
    pub fn explicit(probs: BTreeMap<u64, Rational>) -> Result<Self> {
        let d = Self::Explicit(probs.into_iter().filter(|(_, p)| !p.is_zero()).collect());
        d.validate()?;
        Ok(d)
    }

    /// Point mass at `n`.
    pub fn dirac(n: u64) -> Result<Self> {
        Self::explicit(BTreeMap::from([(n, Rational::one())]))
    }

    pub fn geometric(p: Rational) -> Result<Self> {
        let d = Self::Geometric(p);
        d.validate()?;
        Ok(d)
    }

    pub fn pareto(gamma: f64) -> Result<Self> {
        let d = Self::Pareto(gamma);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Explicit(probs) => {
                if probs.contains_key(&0) {
                    return Err(Error::InvalidDistribution("lifetimes live on n >= 1".into()));
                }
                if let Some((n, p)) = probs.iter().find(|(_, p)| p.is_negative()) {
                    return Err(Error::InvalidDistribution(format!("f_{n} = {} is negative", format_rational(p))));
                }
                let total: Rational = probs.values().sum();
                if total > Rational::one() {
                    return Err(Error::InvalidDistribution(format!(
                        "total mass {} exceeds one",
                        format_rational(&total)
                    )));
                }
                Ok(())
            }
            Self::StPetersburg => Ok(()),
            Self::Geometric(p) => {
                if p.is_positive() && *p <= Rational::one() {
                    Ok(())
                } else {
                    Err(Error::InvalidDistribution(format!("geometric needs 0 < p <= 1, got {}", format_rational(p))))
                }
            }
            Self::Pareto(gamma) => {
                if *gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidDistribution(format!("pareto needs gamma > 0, got {gamma}")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Explicit(probs) if probs.len() == 1 && probs.values().all(One::is_one) => {
                format!("dirac({})", probs.keys().next().copied().unwrap_or(1))
            }
            Self::Explicit(probs) => {
                let body: Vec<String> =
                    probs.iter().map(|(n, p)| format!("{n}:{}", format_rational(p))).collect();
                format!("explicit({})", body.join(","))
            }
            Self::StPetersburg => "st-petersburg".into(),
            Self::Geometric(p) => format!("geometric({})", format_rational(p)),
            Self::Pareto(g) => format!("pareto({g})"),
        }
    }

    /// Largest support point, `None` for infinite support.
    pub fn max_support(&self) -> Option<u64> {
        match self {
            Self::Explicit(probs) => Some(probs.keys().next_back().copied().unwrap_or(0)),
            Self::Geometric(p) if p.is_one() => Some(1),
            _ => None,
        }
    }

    /// `f_n`.
    pub fn mass(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self {
            Self::StPetersburg if n.is_power_of_two() => 0.5f64.powi(n.trailing_zeros() as i32 + 1),
            Self::StPetersburg => 0.0,
            Self::Pareto(g) => {
                let x = n as f64;
                // n^{-γ} - (n+1)^{-γ} without cancellation
                -x.powf(-g) * ((-g) * (1.0 / x).ln_1p()).exp_m1()
            }
            Self::Geometric(p) => {
                let p = ratio_to_f64(p);
                p * (1.0 - p).powf((n - 1) as f64)
            }
            Self::Explicit(_) => self.mass_exact(n).map_or(0.0, |r| ratio_to_f64(&r)),
        }
    }

    /// `f_n` exactly, when the distribution is rational.
    pub fn mass_exact(&self, n: u64) -> Option<Rational> {
        if n == 0 {
            return Some(Rational::zero());
        }
        match self {
            Self::Explicit(probs) => Some(probs.get(&n).cloned().unwrap_or_else(Rational::zero)),
            Self::StPetersburg if n.is_power_of_two() => Some(pow2_neg(n.trailing_zeros() as u64 + 1)),
            Self::StPetersburg => Some(Rational::zero()),
            Self::Geometric(p) => {
                let q = Rational::one() - p;
                Some(p * num_traits::pow(q, (n - 1) as usize))
            }
            Self::Pareto(_) => None,
        }
    }

    /// `f([n, ∞))`, excluding any deficiency of an explicit distribution.
    pub fn tail(&self, n: u64) -> f64 {
        let n = n.max(1);
        match self {
            Self::StPetersburg => 0.5f64.powi(ceil_log2(n) as i32),
            Self::Pareto(g) => (n as f64).powf(-g),
            Self::Geometric(p) => (1.0 - ratio_to_f64(p)).powf((n - 1) as f64),
            Self::Explicit(probs) => ratio_to_f64(&probs.range(n..).map(|(_, p)| p).sum()),
        }
    }

    pub fn tail_exact(&self, n: u64) -> Option<Rational> {
        let n = n.max(1);
        match self {
            Self::StPetersburg => Some(pow2_neg(ceil_log2(n))),
            Self::Pareto(_) => None,
            Self::Geometric(p) => Some(num_traits::pow(Rational::one() - p, (n - 1) as usize)),
            Self::Explicit(probs) => Some(probs.range(n..).map(|(_, p)| p).sum()),
        }
    }

    /// `1 - Σ f_n` (zero for the named families).
    pub fn deficiency(&self) -> f64 {
        match self {
            Self::Explicit(probs) => ratio_to_f64(&(Rational::one() - probs.values().sum::<Rational>())),
            _ => 0.0,
        }
    }

    /// Nonzero masses `(k, f_k)` with `k <= n`, in increasing `k`.
    pub fn support_upto(&self, n: u64) -> Vec<(u64, f64)> {
        match self {
            Self::Explicit(probs) => probs.range(1..=n).map(|(&k, p)| (k, ratio_to_f64(p))).collect(),
            Self::StPetersburg => {
                (0..64).map(|m| 1u64 << m).take_while(|&k| k <= n).map(|k| (k, self.mass(k))).collect()
            }
            Self::Geometric(_) | Self::Pareto(_) => {
                (1..=n).map(|k| (k, self.mass(k))).take_while(|&(_, p)| p > 0.0).collect()
            }
        }
    }

    /// Exact nonzero masses with `k <= n`.
    pub fn support_exact_upto(&self, n: u64) -> Result<Vec<(u64, Rational)>> {
        match self {
            Self::Explicit(probs) => Ok(probs.range(1..=n).map(|(&k, p)| (k, p.clone())).collect()),
            Self::StPetersburg => Ok((0..64)
                .map(|m| 1u64 << m)
                .take_while(|&k| k <= n)
                .map(|k| (k, pow2_neg(k.trailing_zeros() as u64 + 1)))
                .collect()),
            Self::Geometric(p) => {
                let q = Rational::one() - p;
                let mut cur = p.clone();
                let mut out = Vec::new();
                for k in 1..=n {
                    if cur.is_zero() {
                        break;
                    }
                    out.push((k, cur.clone()));
                    cur = &cur * &q;
                }
                Ok(out)
            }
            Self::Pareto(g) => Err(Error::NotRational(format!("pareto({g}) masses"))),
        }
    }

    fn support_generic<T: Scalar>(&self, n: u64) -> Result<Vec<(u64, T)>> {
        if T::is_exact() {
            self.support_exact_upto(n)?
                .into_iter()
                .map(|(k, p)| Ok((k, T::lift(Some(&p), 0.0)?)))
                .collect()
        } else {
            self.support_upto(n).into_iter().map(|(k, p)| Ok((k, T::lift(None, p)?))).collect()
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Self::Explicit(probs) => json!({
                "kind": "explicit",
                "probs": probs.iter().map(|(n, p)| json!([n, format_rational(p)])).collect::<Vec<_>>(),
            }),
            Self::StPetersburg => json!({"kind": "family", "name": "st-petersburg", "params": []}),
            Self::Geometric(p) => json!({"kind": "family", "name": "geometric", "params": [format_rational(p)]}),
            Self::Pareto(g) => json!({"kind": "family", "name": "pareto", "params": [g]}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("lifetime JSON: {what}"));
        match v.get("kind").and_then(Value::as_str) {
            Some("explicit") => {
                let list = v.get("probs").and_then(Value::as_array).ok_or_else(|| bad("missing probs"))?;
                let mut probs = BTreeMap::new();
                for entry in list {
                    let pair = entry.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("entries are [n, p]"))?;
                    let n = pair[0].as_u64().ok_or_else(|| bad("index must be a positive integer"))?;
                    let p = param_text(&pair[1]).ok_or_else(|| bad("mass must be a string or number"))?;
                    if probs.insert(n, parse_rational(&p)?).is_some() {
                        return Err(bad("duplicate index"));
                    }
                }
                Self::explicit(probs)
            }
            Some("family") => {
                let name = v.get("name").and_then(Value::as_str).ok_or_else(|| bad("missing name"))?;
                let params = match v.get("params") {
                    None | Some(Value::Null) => Vec::new(),
                    Some(Value::Array(a)) => {
                        a.iter().map(|p| param_text(p).ok_or_else(|| bad("bad param"))).collect::<Result<_>>()?
                    }
                    Some(_) => return Err(bad("params must be a list")),
                };
                match family(name, &params)? {
                    Family::Lifetime(d) => Ok(d),
                    Family::Renewal(_) => Err(bad(&format!("'{name}' is a renewal sequence, not a lifetime"))),
                }
            }
            _ => Err(bad("kind must be 'explicit' or 'family'")),
        }
    }
}

fn param_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Short syntax: `st-petersburg`, `geometric(1/2)` (or `geom`), `pareto(0.75)`,
/// `dirac(3)`, `explicit(1:1/2,3:1/2)`.
impl FromStr for LifetimeDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("unbalanced parentheses in '{s}'")))?;
                (name.trim(), inner.split(',').map(|a| a.trim().to_string()).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        if name == "explicit" {
            let mut probs = BTreeMap::new();
            for a in &args {
                let (n, p) = a.split_once(':').ok_or_else(|| Error::Config(format!("expected n:p, got '{a}'")))?;
                let n: u64 = n.trim().parse().map_err(|_| Error::Config(format!("bad index '{n}'")))?;
                probs.insert(n, parse_rational(p)?);
            }
            return Self::explicit(probs);
        }
        match family(name, &args)? {
            Family::Lifetime(d) => Ok(d),
            Family::Renewal(_) => Err(Error::Config(format!("'{name}' is not a lifetime distribution"))),
        }
    }
}

impl fmt::Display for LifetimeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn pow2_neg(m: u64) -> Rational {
    Rational::new(One::one(), num_traits::pow(num_bigint::BigInt::from(2u32), m as usize))
}

fn ceil_log2(n: u64) -> u64 {
    (64 - (n - 1).leading_zeros()) as u64
}

/// Named objects.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Lifetime(LifetimeDist),
    /// Renewal sequences given in closed form (their lifetime is obtained by inversion).
    Renewal(WeightRule),
}

/// Looks up `st-petersburg`, `geometric(p)`, `pareto(γ)`, `dirac(n)` or
/// `kaluza-log`. Parameters are decimal or `p/q` text.
pub fn family(name: &str, params: &[String]) -> Result<Family> {
    let arity = |k: usize| {
        if params.len() == k {
            Ok(())
        } else {
            Err(Error::Config(format!("family '{name}' takes {k} parameter(s), got {}", params.len())))
        }
    };
    match name {
        "st-petersburg" => arity(0).map(|_| Family::Lifetime(LifetimeDist::StPetersburg)),
        "geometric" | "geom" => {
            arity(1)?;
            Ok(Family::Lifetime(LifetimeDist::geometric(parse_rational(&params[0])?)?))
        }
        "pareto" => {
            arity(1)?;
            Ok(Family::Lifetime(LifetimeDist::pareto(ratio_to_f64(&parse_rational(&params[0])?))?))
        }
        "dirac" | "delta" => {
            arity(1)?;
            let n: u64 = params[0].parse().map_err(|_| Error::Config(format!("bad dirac index '{}'", params[0])))?;
            if n == 0 {
                return Err(Error::InvalidDistribution("lifetimes live on n >= 1".into()));
            }
            Ok(Family::Lifetime(LifetimeDist::dirac(n)?))
        }
        "kaluza-log" => arity(0).map(|_| Family::Renewal(WeightRule::KaluzaLog)),
        _ => Err(Error::Config(format!("unknown family '{name}'"))),
    }
}

/// Where a renewal sequence came from.
#[derive(Debug, Clone, PartialEq)]
pub enum RenewalSource {
    Lifetime(LifetimeDist),
    /// Given directly (closed form or data); its lifetime is obtained by inversion.
    Given,
}

/// A renewal sequence `u_0 = 1, u_1, ..., u_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSeq {
    seq: WeightSeq,
    source: RenewalSource,
    exact: Option<Vec<Rational>>,
}

impl RenewalSeq {
    /// Wraps a given sequence, checking `u_0 = 1` and `0 <= u_n <= 1`.
    pub fn from_weights(u: WeightSeq) -> Result<Self> {
        let u = u.materialize();
        let v = u.values();
        if v.first() != Some(&1.0) {
            return Err(Error::InvalidDistribution("a renewal sequence starts with u_0 = 1".into()));
        }
        if let Some(n) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidDistribution(format!("u_{n} = {} lies outside [0, 1]", v[n])));
        }
        Ok(Self { seq: u, source: RenewalSource::Given, exact: None })
    }

    pub fn from_rule(rule: WeightRule, horizon: u64) -> Result<Self> {
        Self::from_weights(WeightSeq::from_rule(rule, horizon))
    }

    pub fn weights(&self) -> &WeightSeq {
        &self.seq
    }

    pub fn values(&self) -> &[f64] {
        self.seq.values()
    }

    pub fn horizon(&self) -> u64 {
        self.seq.horizon()
    }

    pub fn get(&self, n: u64) -> Result<f64> {
        self.seq.get(n)
    }

    pub fn source(&self) -> &RenewalSource {
        &self.source
    }

    /// Exact values, when computed in rational mode.
    pub fn exact(&self) -> Option<&[Rational]> {
        self.exact.as_deref()
    }

    pub fn to_csv(&self) -> String {
        self.seq.to_csv()
    }
}

/// `u_0 = 1, u_n = Σ_{(k, f_k) ∈ support, k <= n} f_k u_{n-k}` to `u_n`.
///
/// Terms are accumulated from the largest `k` down, the order in which a
/// renewal shift's state 1 receives them, so floating results agree bit for
/// bit with matrix powers of the chain.
pub fn renewal_recursion<T: Scalar>(support: &[(u64, T)], n: u64) -> Vec<T> {
    let mut u: Vec<T> = Vec::with_capacity(n as usize + 1);
    u.push(T::one());
    for m in 1..=n {
        let upto = support.partition_point(|(k, _)| *k <= m);
        let mut acc = T::zero();
        for (k, fk) in support[..upto].iter().rev() {
            if u[(m - k) as usize] > T::zero() {
                acc = acc + u[(m - k) as usize].clone() * fk.clone();
            }
        }
        u.push(acc);
    }
    u
}

/// Inverse recursion `f_n = u_n - Σ_{k=1}^{n-1} f_k u_{n-k}`; entry 0 is zero.
pub fn inversion_recursion<T: Scalar>(u: &[T]) -> Vec<T> {
    let mut f: Vec<T> = vec![T::zero(); u.len()];
    for n in 1..u.len() {
        let mut acc = u[n].clone();
        for k in 1..n {
            acc = acc - f[k].clone() * u[n - k].clone();
        }
        f[n] = acc;
    }
    f
}

fn renewal_generic<T: Scalar>(f: &LifetimeDist, n: u64) -> Result<Vec<T>> {
    f.validate()?;
    Ok(renewal_recursion(&f.support_generic::<T>(n)?, n))
}

/// The renewal sequence of `f`, in floating point.
pub fn renewal_from_lifetime(f: &LifetimeDist, n: u64) -> Result<RenewalSeq> {
    let values = renewal_generic::<f64>(f, n)?;
    let seq = WeightSeq::from_values(format!("u[{}]", f.label()), values)?;
    Ok(RenewalSeq { seq, source: RenewalSource::Lifetime(f.clone()), exact: None })
}

/// The renewal sequence of a rational `f`, exactly. Cost grows quickly with
/// `n` because denominators do; keep `n` in the hundreds.
pub fn renewal_from_lifetime_exact(f: &LifetimeDist, n: u64) -> Result<RenewalSeq> {
    let exact = renewal_generic::<Rational>(f, n)?;
    let values = exact.iter().map(ratio_to_f64).collect();
    let seq = WeightSeq::from_values(format!("u[{}]", f.label()), values)?;
    Ok(RenewalSeq { seq, source: RenewalSource::Lifetime(f.clone()), exact: Some(exact) })
}

/// Negative lifetime masses of size at most this are rounding noise.
pub const INVERSION_TOLERANCE: f64 = 1e-12;

/// Recovers `f_1..f_n` from `u` (exactly when `u` carries exact values).
pub fn lifetime_from_renewal(u: &RenewalSeq, n: u64) -> Result<LifetimeDist> {
    u.get(n)?;
    let probs: BTreeMap<u64, Rational> = match u.exact() {
        Some(ex) => {
            let f = inversion_recursion(&ex[..=n as usize]);
            if let Some(k) = f.iter().position(Signed::is_negative) {
                return Err(Error::NotRenewal { index: k as u64, value: ratio_to_f64(&f[k]) });
            }
            f.into_iter().enumerate().skip(1).map(|(k, p)| (k as u64, p)).collect()
        }
        None => {
            let f = inversion_recursion(&u.values()[..=n as usize]);
            let mut probs = BTreeMap::new();
            for (k, &p) in f.iter().enumerate().skip(1) {
                if p < -INVERSION_TOLERANCE {
                    return Err(Error::NotRenewal { index: k as u64, value: p });
                }
                if p > 0.0 {
                    probs.insert(k as u64, rational_from_f64(p)?);
                }
            }
            probs
        }
    };
    let probs: BTreeMap<u64, Rational> = probs.into_iter().filter(|(_, p)| !p.is_zero()).collect();
    let total: Rational = probs.values().sum();
    if total > Rational::one() {
        let excess = ratio_to_f64(&(total - Rational::one()));
        if excess > INVERSION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("inverted masses exceed one by {excess:e}")));
        }
        // rescale away the rounding excess so the result is a distribution
        let scale = Rational::one() / probs.values().sum::<Rational>();
        return LifetimeDist::explicit(probs.into_iter().map(|(k, p)| (k, p * &scale)).collect());
    }
    LifetimeDist::explicit(probs)
}

/// gcd of `{n >= 1 : u_n > 0}` over the materialized range.
pub fn aperiodicity(u: &RenewalSeq) -> Result<u64> {
    let g = u
        .values()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &x)| x > 0.0)
        .fold(0u64, |g, (n, _)| g.gcd(&(n as u64)));
    if g == 0 {
        Err(Error::Inconclusive(format!("u_n = 0 for all 1 <= n <= {}", u.horizon())))
    } else {
        Ok(g)
    }
}

/// `L(n) = Σ_{k=1}^n f([k, ∞))` and `V(n) = Σ_{k<=n} k² f_k`.
pub fn tail_and_moment(f: &LifetimeDist, n: u64) -> (f64, f64) {
    let (l, v) = tail_moment_profiles(f, &[n.max(1)]);
    if n == 0 {
        (0.0, 0.0)
    } else {
        (l[0], v[0])
    }
}

/// `L` and `V` at each point of an increasing grid (points `>= 1`), one sweep.
fn tail_moment_profiles(f: &LifetimeDist, grid: &[u64]) -> (Vec<f64>, Vec<f64>) {
    let max = grid.last().copied().unwrap_or(0);
    let mut l_acc = CompensatedSum::new();
    let mut v_acc = CompensatedSum::new();
    let mut support = f.support_upto(max).into_iter().peekable();
    let (mut ls, mut vs) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    let mut gi = 0;
    for k in 1..=max {
        l_acc.add(f.tail(k));
        if let Some(&(j, p)) = support.peek() {
            if j == k {
                v_acc.add((k as f64) * (k as f64) * p);
                support.next();
            }
        }
        while gi < grid.len() && grid[gi] == k {
            ls.push(l_acc.value());
            vs.push(v_acc.value());
            gi += 1;
        }
    }
    (ls, vs)
}

/// Finite-horizon view of the two sufficient conditions for smoothness of
/// an aperiodic recurrent renewal sequence: `Σ 1/V(n)² < ∞` (which forces
/// `Σ (u_n - u_{n+1})² < ∞`) and `L(n)/√n → 0`.
///
/// `tol` bounds the relative growth of a partial sum over the last doubling
/// for it to count as flat, and bounds `σ_u(N)`. The verdict is advisory.
pub fn prop83_report(f: &LifetimeDist, n: u64, tol: f64) -> Result<Report> {
    if n < 4 {
        return Err(Error::Config("horizon must be at least 4".into()));
    }
    let u = renewal_from_lifetime(f, n + 1)?;
    let uv = u.values();
    let grid = GridRule::Dyadic.build(1, n);
    let mut report = Report::new("prop83", f.label(), n);
    report.truncation_bound = f.tail(n + 2);

    let (ls, _) = tail_moment_profiles(f, &grid);
    let full: Vec<u64> = (1..=n).collect();
    let (_, v_all) = tail_moment_profiles(f, &full);

    let mut sq = CompensatedSum::new();
    let mut inv = CompensatedSum::new();
    let (mut sq_prof, mut inv_prof) = (Vec::new(), Vec::new());
    let mut gi = 0;
    for m in 1..=n {
        let d = uv[m as usize] - uv[m as usize + 1];
        sq.add(d * d);
        let v = v_all[m as usize - 1];
        if v > 0.0 {
            inv.add(1.0 / (v * v));
        }
        if grid[gi] == m {
            sq_prof.push(sq.value());
            inv_prof.push(inv.value());
            gi += 1;
        }
    }
    let half = grid.len() - 2;
    let flat = |p: &[f64]| {
        let (last, prev) = (p[p.len() - 1], p[half]);
        last - prev <= tol * last.max(f64::MIN_POSITIVE)
    };
    let sq_flat = flat(&sq_prof);
    let inv_flat = flat(&inv_prof);

    let l_over: Vec<f64> = grid.iter().zip(&ls).map(|(&m, &l)| l / (m as f64).sqrt()).collect();
    let l_prof = ConvergenceProfile::new("L/sqrt(n)", grid.clone(), l_over)?;
    let l_decreasing = l_prof.decreasing_tail(4);

    let sm = smoothness_profile(u.weights(), &grid)?;
    let sigma = sm.last().map_or(f64::NAN, |(_, s)| s);

    let fit_grid = log_grid((n / 10).max(1), n, 30);
    let (xs, ys): (Vec<f64>, Vec<f64>) = fit_grid
        .iter()
        .map(|&m| (m, v_all[m as usize - 1]))
        .filter(|&(_, v)| v > 0.0)
        .map(|(m, v)| ((m as f64).ln(), v.ln()))
        .unzip();
    let v_exponent = if xs.len() >= 2 { least_squares(&xs, &ys).0 } else { 0.0 };

    report.set("sum_sq_differences", sq.value());
    report.set("sum_inverse_v_squared", inv.value());
    report.set("v_growth_exponent", v_exponent);
    report.set("inverse_v_squared_flat", inv_flat);
    report.set("L_over_sqrt_n", l_prof.last().map(|(_, v)| v));
    report.set("smoothness", sigma);
    report.check(
        "criterion-i",
        sq_flat,
        format!(
            "Σ(u_n-u_(n+1))² = {:e}; Σ1/V² = {:e} ({}), fitted V exponent {v_exponent:.3}",
            sq.value(),
            inv.value(),
            if inv_flat { "flat" } else { "still growing" }
        ),
    );
    report.check("criterion-ii", l_decreasing, format!("L(n)/sqrt(n) = {:e} at n = {n}", l_prof.values[grid.len() - 1]));
    report.check("smoothness", sigma <= tol, format!("sigma_u({n}) = {sigma:e}"));
    report.verdict = if report.all_passed() {
        "criteria satisfied at horizon (advisory)".into()
    } else if !l_decreasing {
        "criterion (ii) inapplicable at horizon (advisory)".into()
    } else {
        "criteria not satisfied at horizon (advisory)".into()
    };
    report.note("summability of 1/V(n)^2 is judged from partial sums and the fitted growth exponent of V");

    let mk = |label: &str, vals: Vec<f64>| ConvergenceProfile::new(label, grid.clone(), vals);
    report.profiles.push(mk("sum (u_n-u_(n+1))^2", sq_prof)?);
    report.profiles.push(mk("sum 1/V(n)^2", inv_prof)?);
    report.profiles.push(l_prof);
    report.profiles.push(ConvergenceProfile { label: "smoothness".into(), ..sm });
    Ok(report)
}

/// Ratio profile `r_n = v_{n+1}/v_n` where `v_n = u_n`, or `2^{-n}` when `u_n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrlpProfile {
    pub profile: ConvergenceProfile,
    /// Indices where the surrogate replaced a zero.
    pub surrogates: Vec<u64>,
}

pub fn srlp_profile(u: &RenewalSeq, grid: &[u64]) -> Result<SrlpProfile> {
    if let Some(&max) = grid.last() {
        u.get(max + 1)?;
    }
    let mut surrogates = Vec::new();
    let mut v = |n: u64| {
        let x = u.values()[n as usize];
        if x == 0.0 {
            surrogates.push(n);
            0.5f64.powi(n.min(1074) as i32)
        } else {
            x
        }
    };
    let values: Vec<f64> = grid.iter().map(|&n| { let a = v(n); v(n + 1) / a }).collect();
    surrogates.sort_unstable();
    surrogates.dedup();
    Ok(SrlpProfile { profile: ConvergenceProfile::new("srlp", grid.to_vec(), values)?, surrogates })
}

/// Defective renewal sequence `v_0 = 1, v_n = Σ_{k=1}^{n∧ℓ} h_k v_{n-k}`
/// with the block maxima `V_r = max_{rℓ+1 <= ν <= N} v_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectiveRenewal {
    pub ell: u64,
    /// `H = Σ_{k<=ℓ} h_k`.
    pub mass: f64,
    pub v: Vec<f64>,
    pub block_max: Vec<f64>,
    /// `V_r <= H V_{r-1}` for every checkable `r >= 1`.
    pub bound_holds: bool,
}

/// Relative slack allowed when checking `V_r <= H V_{r-1}` in floating point.
const BLOCK_BOUND_SLACK: f64 = 1e-12;

pub fn defective_renewal(h: &LifetimeDist, ell: u64, n: u64) -> Result<DefectiveRenewal> {
    if ell == 0 {
        return Err(Error::Config("truncation point must be at least 1".into()));
    }
    let masses = h.support_upto(ell);
    defective_from_masses(&masses, ell, n)
}

fn defective_from_masses(masses: &[(u64, f64)], ell: u64, n: u64) -> Result<DefectiveRenewal> {
    let mass: f64 = masses.iter().map(|&(_, p)| p).sum();
    if mass >= 1.0 {
        return Err(Error::InvalidDistribution(format!("truncated mass H = {mass} is not below one")));
    }
    let v = renewal_recursion(masses, n);
    Ok(block_maxima(v, ell, mass))
}

fn block_maxima(v: Vec<f64>, ell: u64, mass: f64) -> DefectiveRenewal {
    let n = v.len() as u64 - 1;
    // suffix maxima over [i, n]
    let mut suffix = v.clone();
    for i in (0..suffix.len().saturating_sub(1)).rev() {
        suffix[i] = suffix[i].max(suffix[i + 1]);
    }
    let block_max: Vec<f64> =
        (0..).map(|r| r * ell + 1).take_while(|&s| s <= n).map(|s| suffix[s as usize]).collect();
    let bound_holds = block_max.windows(2).all(|w| w[1] <= mass * w[0] * (1.0 + BLOCK_BOUND_SLACK));
    DefectiveRenewal { ell, mass, v, block_max, bound_holds }
}

/// Result of the ratio-jump construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DysonOutcome {
    /// `g_n = h_n` for `n <= ℓ`, `g_L = Σ_{j>ℓ} h_j`.
    pub g: LifetimeDist,
    pub ell: u64,
    pub big_l: u64,
    /// Mixing weight of the geometric perturbation, when `f` had finite support.
    pub eta: Option<f64>,
    pub report: Report,
}

/// The infinite-support lifetime `h` near `f` used by the construction.
enum Perturbed<'a> {
    Same(&'a LifetimeDist),
    /// `(1 - η) f + η · geometric(1/2)`.
    Mixed(&'a LifetimeDist, f64),
}

impl Perturbed<'_> {
    fn mass(&self, n: u64) -> f64 {
        match *self {
            Self::Same(f) => f.mass(n),
            Self::Mixed(f, eta) => (1.0 - eta) * f.mass(n) + eta * 0.5f64.powi(n.min(1100) as i32),
        }
    }

    fn mass_exact(&self, n: u64) -> Option<Rational> {
        match *self {
            Self::Same(f) => f.mass_exact(n),
            Self::Mixed(..) => None,
        }
    }

    fn tail(&self, n: u64) -> f64 {
        match *self {
            Self::Same(f) => f.tail(n),
            Self::Mixed(f, eta) => (1.0 - eta) * f.tail(n) + eta * 0.5f64.powi((n.max(1) - 1).min(1100) as i32),
        }
    }
}

/// `d(f, g) = |1/f_1 - 1/g_1| + Σ |f_n - g_n|` for `g` of finite support.
pub fn lifetime_distance(f: &LifetimeDist, g: &LifetimeDist) -> Result<f64> {
    let LifetimeDist::Explicit(gp) = g else {
        return Err(Error::Config("second argument must have finite support".into()));
    };
    let (f1, g1) = (f.mass(1), g.mass(1));
    if f1 <= 0.0 || g1 <= 0.0 {
        return Err(Error::InvalidDistribution("the metric needs f_1 > 0 and g_1 > 0".into()));
    }
    let m = gp.keys().next_back().copied().unwrap_or(0);
    let mut acc = CompensatedSum::new();
    acc.add((1.0 / f1 - 1.0 / g1).abs());
    for k in 1..=m {
        acc.add((f.mass(k) - g.mass(k)).abs());
    }
    acc.add(f.tail(m + 1));
    Ok(acc.value())
}

/// Builds `g` with `d(f, g) < 2 eps` and `u^{(g)}_{L-1} < u^{(g)}_L / k`.
///
/// `max_len` caps both the search for `ℓ` and for `L`.
pub fn dyson_construct(f: &LifetimeDist, eps: f64, k: u64, max_len: u64) -> Result<DysonOutcome> {
    f.validate()?;
    let f1 = f.mass(1);
    if f1 <= 0.0 {
        return Err(Error::InvalidDistribution("the construction needs f_1 > 0".into()));
    }
    if !(eps > 0.0 && eps < 1.0) || k == 0 {
        return Err(Error::Config("need 0 < eps < 1 and k >= 1".into()));
    }

    // Step 1: an infinite-support h with d(f, h) < eps.
    let (h, eta, d_fh) = match f.max_support() {
        None => (Perturbed::Same(f), None, 0.0),
        Some(m) => {
            let geo_gap: f64 = (1..=m).map(|n| (f.mass(n) - 0.5f64.powi(n as i32)).abs()).sum::<f64>()
                + 0.5f64.powi(m as i32);
            let mut eta = eps;
            loop {
                let h1 = (1.0 - eta) * f1 + eta * 0.5;
                let d = (1.0 / f1 - 1.0 / h1).abs() + eta * geo_gap;
                if d < eps {
                    break (Perturbed::Mixed(f, eta), Some(eta), d);
                }
                eta /= 2.0;
            }
        }
    };

    // Step 2: minimal ℓ > k with 0 < 1 - H < eps.
    let mut ell = k + 1;
    loop {
        let rest = h.tail(ell + 1);
        if rest > 0.0 && rest < eps {
            break;
        }
        if ell >= max_len {
            return Err(Error::Horizon { requested: ell + 1, horizon: max_len });
        }
        ell += 1;
    }
    let masses: Vec<(u64, f64)> = (1..=ell).map(|n| (n, h.mass(n))).filter(|&(_, p)| p > 0.0).collect();
    let one_minus_h = h.tail(ell + 1);
    let big_h = 1.0 - one_minus_h;

    // Step 3: minimal L > ℓ with v_{L-1} < (1 - H)/k.
    let threshold = one_minus_h / k as f64;
    let mut v: Vec<f64> = vec![1.0];
    let mut big_l = None;
    for m in 1..max_len {
        let x: f64 = masses.iter().take_while(|(j, _)| *j <= m).map(|&(j, p)| p * v[(m - j) as usize]).sum();
        v.push(x);
        if m >= ell && x < threshold {
            big_l = Some(m + 1);
            break;
        }
    }
    let big_l = big_l.ok_or(Error::Horizon { requested: max_len + 1, horizon: max_len })?;

    // Step 4: g with rational masses summing to one.
    let mut probs = BTreeMap::new();
    for &(n, p) in &masses {
        let exact = match h.mass_exact(n) {
            Some(r) => r,
            None => rational_from_f64(p)?,
        };
        probs.insert(n, exact);
    }
    let rest = Rational::one() - probs.values().sum::<Rational>();
    probs.insert(big_l, rest);
    let g = LifetimeDist::explicit(probs)?;

    // Post hoc verification through the ordinary renewal recursion.
    let ug = renewal_from_lifetime(&g, big_l)?;
    let (before, at) = (ug.values()[big_l as usize - 1], ug.values()[big_l as usize]);
    let d_fg = lifetime_distance(f, &g)?;
    let defective = block_maxima(v, ell, big_h);

    let mut report = Report::new("dyson", f.label(), big_l);
    report.set("eps", eps);
    report.set("k", k);
    report.set("ell", ell);
    report.set("L", big_l);
    report.set("H", big_h);
    report.set("one_minus_H", one_minus_h);
    report.set("eta", eta);
    report.set("distance_f_h", d_fh);
    report.set("distance_f_g", d_fg);
    report.set("u_L_minus_1", before);
    report.set("u_L", at);
    report.set("g", g.to_json());
    report.check("ratio-jump", (k as f64) * before < at, format!("{k}·u_(L-1) = {:e} vs u_L = {at:e}", k as f64 * before));
    report.check("distance", d_fg < 2.0 * eps, format!("d(f,g) = {d_fg:e} < 2·eps = {}", 2.0 * eps));
    report.check(
        "block-bound",
        defective.bound_holds,
        format!("V_r <= H·V_(r-1) over {} blocks", defective.block_max.len()),
    );
    let blocks: Vec<u64> = (0..defective.block_max.len() as u64).collect();
    report.profiles.push(ConvergenceProfile::new("V_r", blocks, defective.block_max.clone())?);
    report.verdict = if report.all_passed() { "constructed".into() } else { "verification failed".into() };
    Ok(DysonOutcome { g, ell, big_l, eta, report })
}

/// `|T_n|` with `T_n = a_u(n)^{-1} Σ_{k<n} u_k e^{2πikθ}`.
pub fn met_fourier_profile(u: &WeightSeq, theta: f64, grid: &[u64]) -> Result<ConvergenceProfile> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("theta must lie in (0, 1), got {theta}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    let Some(&max) = grid.last() else {
        return ConvergenceProfile::new(format!("met[{theta}]"), Vec::new(), Vec::new());
    };
    u.get(max)?;
    let (mut re, mut im, mut total) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    let mut values = Vec::with_capacity(grid.len());
    let mut gi = 0;
    for k in 0..=max {
        while gi < grid.len() && grid[gi] == k {
            let a = total.value();
            if a <= 0.0 {
                return Err(Error::DegenerateWeight(format!("a_u({k}) = 0")));
            }
            values.push(re.value().hypot(im.value()) / a);
            gi += 1;
        }
        if k == max {
            break;
        }
        let w = u.get(k)?;
        total.add(w);
        if w != 0.0 {
            // reduce kθ mod 1 before scaling so the phase stays accurate for large k
            let phase = 2.0 * std::f64::consts::PI * (k as f64 * theta).fract();
            re.add(w * phase.cos());
            im.add(w * phase.sin());
        }
    }
    ConvergenceProfile::new(format!("met[{theta}]"), grid.to_vec(), values)
}

/// For `u_n = 1/ln(n + e)`: `ln(n+1+e)² - ln(n+e)·ln(n+2+e)`, written as a sum of
/// positive terms so its sign is certified. Positive means `r_n < r_{n+1}`
/// for `r_n = u_{n+1}/u_n`.
pub fn kaluza_ratio_gap(n: u64) -> f64 {
    let x = n as f64 + std::f64::consts::E;
    let y = (x + 1.0).ln();
    let d1 = (1.0 / x).ln_1p();
    let d2 = (1.0 / (x + 1.0)).ln_1p();
    // (x + 1)² = x (x + 2) + 1, so d1 - d2 = ln(1 + 1/(x (x + 2)))
    let d12 = (1.0 / (x * (x + 2.0))).ln_1p();
    y * d12 + d1 * d2
}

/// `r_n = ln(n + e) / ln(n + 1 + e)`.
pub fn kaluza_ratio(n: u64) -> f64 {
    let x = n as f64 + std::f64::consts::E;
    x.ln() / (x + 1.0).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p.into(), q.into())
    }

    #[test]
    fn renewal_examples() {
        let u = renewal_from_lifetime(&LifetimeDist::dirac(1).unwrap(), 50).unwrap();
        assert!(u.values().iter().all(|&x| x == 1.0));

        let geo = LifetimeDist::geometric(r(1, 2)).unwrap();
        let u = renewal_from_lifetime_exact(&geo, 60).unwrap();
        assert!(u.exact().unwrap()[1..].iter().all(|x| *x == r(1, 2)));

        let u = renewal_from_lifetime_exact(&LifetimeDist::StPetersburg, 4).unwrap();
        assert_eq!(u.exact().unwrap(), &[r(1, 1), r(1, 2), r(1, 2), r(3, 8), r(7, 16)]);
    }

    #[test]
    fn st_petersburg_masses_and_tails() {
        let f = LifetimeDist::StPetersburg;
        assert_eq!(f.mass(1), 0.5);
        assert_eq!(f.mass(2), 0.25);
        assert_eq!(f.mass(3), 0.0);
        assert_eq!(f.mass(4), 0.125);
        for n in 1..200u64 {
            let direct: Rational = (n..=1024).filter_map(|k| f.mass_exact(k)).sum::<Rational>() + pow2_neg(11);
            assert_eq!(f.tail_exact(n).unwrap(), direct, "n = {n}");
        }
        let (l1, _) = tail_and_moment(&f, 1);
        let (l2, _) = tail_and_moment(&f, 2);
        let (_, v4) = tail_and_moment(&f, 4);
        assert_eq!((l1, l2, v4), (1.0, 1.5, 3.5));
    }

    #[test]
    fn dirac_tail_moment() {
        let f = LifetimeDist::dirac(1).unwrap();
        for n in [1, 2, 10, 1000] {
            assert_eq!(tail_and_moment(&f, n), (1.0, 1.0));
        }
    }

    #[test]
    fn pareto_tail_sum_matches_zeta_asymptotics() {
        let f = LifetimeDist::pareto(0.75).unwrap();
        assert!((f.tail(2) - 2f64.powf(-0.75)).abs() < 1e-15);
        let n = 1_000_000u64;
        let (l, _) = tail_and_moment(&f, n);
        // Σ_{k<=n} k^{-3/4} = 4 n^{1/4} + ζ(3/4) + O(n^{-3/4})
        let zeta_three_quarters = -3.441_285_386_945;
        assert!((l - 4.0 * (n as f64).powf(0.25) - zeta_three_quarters).abs() < 1e-4);
        // masses sum to the telescoped tail
        let s: f64 = (1..1000).map(|k| f.mass(k)).sum();
        assert!((s - (1.0 - f.tail(1000))).abs() < 1e-13);
    }

    #[test]
    fn inversion_round_trips() {
        let u = renewal_from_lifetime(&LifetimeDist::dirac(1).unwrap(), 20).unwrap();
        assert_eq!(lifetime_from_renewal(&u, 20).unwrap(), LifetimeDist::dirac(1).unwrap());

        let geo = LifetimeDist::geometric(r(1, 2)).unwrap();
        let u = renewal_from_lifetime_exact(&geo, 40).unwrap();
        let LifetimeDist::Explicit(back) = lifetime_from_renewal(&u, 40).unwrap() else { panic!() };
        for n in 1..=40u64 {
            assert_eq!(back[&n], geo.mass_exact(n).unwrap());
        }
    }

    #[test]
    fn kaluza_inverts_to_nonnegative_lifetime() {
        let u = RenewalSeq::from_rule(WeightRule::KaluzaLog, 1000).unwrap();
        assert!((u.values()[1] - 0.7615).abs() < 1e-4);
        let f = lifetime_from_renewal(&u, 1000).unwrap();
        assert!(f.deficiency() >= -1e-12);
        assert!(f.mass(1) > 0.0);
    }

    #[test]
    fn non_renewal_is_rejected() {
        let u = RenewalSeq::from_weights(WeightSeq::from_values("x", vec![1.0, 0.5, 0.0, 0.9]).unwrap()).unwrap();
        assert!(matches!(lifetime_from_renewal(&u, 3), Err(Error::NotRenewal { index: 2, .. })));
    }

    #[test]
    fn aperiodicity_examples() {
        let p2 = renewal_from_lifetime(&LifetimeDist::dirac(2).unwrap(), 30).unwrap();
        assert_eq!(aperiodicity(&p2).unwrap(), 2);
        let sp = renewal_from_lifetime(&LifetimeDist::StPetersburg, 30).unwrap();
        assert_eq!(aperiodicity(&sp).unwrap(), 1);
        let f24: LifetimeDist = "explicit(2:1/2,4:1/2)".parse().unwrap();
        assert_eq!(aperiodicity(&renewal_from_lifetime(&f24, 30).unwrap()).unwrap(), 2);
        let d5 = renewal_from_lifetime(&LifetimeDist::dirac(5).unwrap(), 3).unwrap();
        assert!(matches!(aperiodicity(&d5), Err(Error::Inconclusive(_))));
    }

    #[test]
    fn prop83_st_petersburg_satisfied() {
        let rep = prop83_report(&LifetimeDist::StPetersburg, 100_000, 0.01).unwrap();
        assert_eq!(rep.verdict, "criteria satisfied at horizon (advisory)", "{rep:#?}");
        assert_eq!(rep.values["inverse_v_squared_flat"], serde_json::json!(true));
    }

    #[test]
    fn prop83_dirac_and_pareto() {
        let rep = prop83_report(&LifetimeDist::dirac(1).unwrap(), 1000, 0.01).unwrap();
        assert!(rep.all_passed());
        let rep = prop83_report(&LifetimeDist::pareto(0.25).unwrap(), 4096, 0.01).unwrap();
        assert!(rep.verdict.starts_with("criterion (ii) inapplicable"));
    }

    #[test]
    fn srlp_examples() {
        let one = renewal_from_lifetime(&LifetimeDist::dirac(1).unwrap(), 20).unwrap();
        let p = srlp_profile(&one, &[0, 5, 19]).unwrap();
        assert!(p.profile.values.iter().all(|&x| x == 1.0));
        let geo = renewal_from_lifetime(&LifetimeDist::geometric(r(1, 2)).unwrap(), 20).unwrap();
        let p = srlp_profile(&geo, &[1, 10, 19]).unwrap();
        assert!(p.profile.values.iter().all(|&x| x == 1.0));
        let d2 = renewal_from_lifetime(&LifetimeDist::dirac(2).unwrap(), 10).unwrap();
        let p = srlp_profile(&d2, &[1, 2]).unwrap();
        assert_eq!(p.surrogates, vec![1, 3]);
        assert_eq!(p.profile.values, vec![1.0 / 0.5, 0.125]);
    }

    #[test]
    fn defective_examples() {
        let half: LifetimeDist = "explicit(1:1/2)".parse().unwrap();
        let d = defective_renewal(&half, 1, 30).unwrap();
        for (n, &v) in d.v.iter().enumerate() {
            assert_eq!(v, 0.5f64.powi(n as i32));
        }
        let two: LifetimeDist = "explicit(2:1/2)".parse().unwrap();
        let d = defective_renewal(&two, 2, 30).unwrap();
        for (n, &v) in d.v.iter().enumerate() {
            let want = if n % 2 == 0 { 0.5f64.powi(n as i32 / 2) } else { 0.0 };
            assert_eq!(v, want);
        }
        let geo = LifetimeDist::geometric(r(1, 2)).unwrap();
        let d = defective_renewal(&geo, 11, 5000).unwrap();
        assert!(d.bound_holds);
        assert!((d.mass - (1.0 - 2f64.powi(-11))).abs() < 1e-15);
        assert!(defective_renewal(&LifetimeDist::dirac(1).unwrap(), 1, 5).is_err());
    }

    #[test]
    fn dyson_geometric() {
        let geo = LifetimeDist::geometric(r(1, 2)).unwrap();
        let out = dyson_construct(&geo, 0.1, 10, 1 << 20).unwrap();
        assert_eq!(out.ell, 11);
        assert!(out.report.all_passed(), "{:#?}", out.report.checks);
        let out = dyson_construct(&geo, 0.5, 1, 1 << 20).unwrap();
        assert_eq!(out.ell, 2);
        assert!(out.report.all_passed());
    }

    #[test]
    fn dyson_finite_support_is_perturbed() {
        let out = dyson_construct(&LifetimeDist::dirac(1).unwrap(), 0.2, 3, 1 << 22).unwrap();
        assert!(out.eta.is_some());
        assert!(out.report.all_passed(), "{:#?}", out.report.checks);
        assert!(out.report.get_f64("distance_f_h").unwrap() < 0.2);
        assert!(dyson_construct(&LifetimeDist::dirac(2).unwrap(), 0.2, 3, 1000).is_err());
    }

    #[test]
    fn met_profile_examples() {
        let one = WeightSeq::constant(1.0, 1000);
        let p = met_fourier_profile(&one, 0.5, &[1, 2, 3, 101, 1000]).unwrap();
        for (&n, &v) in p.grid.iter().zip(&p.values) {
            assert!(v <= 1.0 / n as f64 + 1e-15);
        }
        let alt = WeightSeq::from_rule(WeightRule::Alternating, 1000);
        let p = met_fourier_profile(&alt, 0.5, &[10, 100, 1000]).unwrap();
        assert!(p.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn family_lookup() {
        let Family::Lifetime(sp) = family("st-petersburg", &[]).unwrap() else { panic!() };
        assert_eq!(sp.mass_exact(4).unwrap(), r(1, 8));
        let Family::Lifetime(p) = family("pareto", &["0.75".into()]).unwrap() else { panic!() };
        assert_eq!(p.tail(2), 2f64.powf(-0.75));
        assert_eq!(family("kaluza-log", &[]).unwrap(), Family::Renewal(WeightRule::KaluzaLog));
        assert!(matches!(family("nope", &[]), Err(Error::Config(_))));
        assert!(family("geometric", &["0".into()]).is_err());
    }

    #[test]
    fn lifetime_json_and_short_syntax() {
        for text in ["st-petersburg", "geometric(1/3)", "pareto(0.5)", "explicit(1:1/4,3:3/4)", "dirac(2)"] {
            let d: LifetimeDist = text.parse().unwrap();
            assert_eq!(d.label(), text);
            assert_eq!(LifetimeDist::from_json(&d.to_json()).unwrap(), d);
        }
        let v = serde_json::json!({"kind": "explicit", "probs": [[1, "1/2"], [2, 0.25]]});
        let d = LifetimeDist::from_json(&v).unwrap();
        assert_eq!(d.mass_exact(2).unwrap(), r(1, 4));
        assert!((d.deficiency() - 0.25).abs() < 1e-15);
        let neg = serde_json::json!({"kind": "explicit", "probs": [[1, "-1/2"]]});
        assert!(matches!(LifetimeDist::from_json(&neg), Err(Error::InvalidDistribution(_))));
        assert!("explicit(1:1/2,2:2/3)".parse::<LifetimeDist>().is_err());
    }

    #[test]
    fn kaluza_ratio_gap_is_positive() {
        for n in [0u64, 1, 10, 1000, 999_999] {
            assert!(kaluza_ratio_gap(n) > 0.0);
            assert!(kaluza_ratio(n) < kaluza_ratio(n + 1));
        }
    }
}
