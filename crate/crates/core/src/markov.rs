//! Countable-state Markov chains on `{1, 2, ...}`: renewal shifts and the
//! reflected symmetric walk, their n-step and taboo probabilities, and
//! stationary measures of cylinder sets.
//!
//! Distributions are stored densely in state order; both chains move by
//! bounded increments except for the jump out of state 1 of a renewal shift,
//! which is truncated at a state cap with the dropped mass tracked.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::indexsets::{exceptional_set, smallness_profile, strong_cesaro_profile};
use crate::numeric::{Rational, Scalar};
use crate::renewal::LifetimeDist;
use crate::report::{ConvergenceProfile, GridRule, Report};
use crate::weights::WeightSeq;

/// Largest state a renewal shift may jump to when its lifetime has infinite support.
pub const DEFAULT_STATE_CAP: u64 = 1 << 16;

/// Tail mass below which a lifetime is cut off.
pub const TAIL_CUTOFF: f64 = 1e-15;

/// Default memory budget for distribution vectors, in MiB.
const DEFAULT_BUDGET_MB: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Chain {
    /// `P_{1,n} = f_n`, `P_{n+1,n} = 1`, stationary `π_n = f([n, ∞))`.
    RenewalShift { f: LifetimeDist, cap: u64 },
    /// `p_{1,1} = p_{1,2} = 1/2`, `p_{n,n±1} = 1/2` for `n >= 2`, `π ≡ 1`.
    Hopf,
}

impl Chain {
    /// Renewal shift of a proper lifetime, with the jump out of state 1
    /// truncated where the tail drops below [`TAIL_CUTOFF`] (at most
    /// [`DEFAULT_STATE_CAP`]).
    pub fn renewal_shift(f: LifetimeDist) -> Result<Self> {
        let cap = match f.max_support() {
            Some(m) => m,
            None if f.tail(DEFAULT_STATE_CAP + 1) > TAIL_CUTOFF => DEFAULT_STATE_CAP,
            None => {
                // smallest m with f([m + 1, ∞)) <= TAIL_CUTOFF
                let (mut lo, mut hi) = (0u64, DEFAULT_STATE_CAP);
                while lo + 1 < hi {
                    let mid = lo + (hi - lo) / 2;
                    if f.tail(mid + 1) > TAIL_CUTOFF {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        };
        Self::renewal_shift_with_cap(f, cap)
    }

    pub fn renewal_shift_with_cap(f: LifetimeDist, cap: u64) -> Result<Self> {
        f.validate()?;
        let deficiency = f.deficiency();
        if deficiency.abs() > 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "a renewal shift needs a proper lifetime; mass is short by {deficiency:e}"
            )));
        }
        if cap == 0 {
            return Err(Error::Config("state cap must be positive".into()));
        }
        Ok(Self::RenewalShift { f, cap })
    }

    pub fn hopf() -> Self {
        Self::Hopf
    }

    pub fn label(&self) -> String {
        match self {
            Self::RenewalShift { f, .. } => format!("renewal-shift:{}", f.label()),
            Self::Hopf => "hopf".into(),
        }
    }

    /// Mass of the row out of state 1 lost to the state cap.
    pub fn row_truncation(&self) -> f64 {
        match self {
            Self::RenewalShift { f, cap } => f.tail(cap + 1),
            Self::Hopf => 0.0,
        }
    }

    /// `π_s`, normalized so that `π_1 = 1`.
    pub fn pi<T: Scalar>(&self, s: u64) -> Result<T> {
        check_state(s)?;
        match self {
            Self::RenewalShift { f, .. } => T::lift(f.tail_exact(s).as_ref(), f.tail(s)),
            Self::Hopf => Ok(T::one()),
        }
    }

    /// `p_{s,t}` (untruncated).
    pub fn transition<T: Scalar>(&self, s: u64, t: u64) -> Result<T> {
        check_state(s)?;
        check_state(t)?;
        match self {
            Self::RenewalShift { f, .. } => {
                if s == 1 {
                    T::lift(f.mass_exact(t).as_ref(), f.mass(t))
                } else if t + 1 == s {
                    Ok(T::one())
                } else {
                    Ok(T::zero())
                }
            }
            Self::Hopf => {
                if t + 1 == s || t == s + 1 || (s == 1 && t == 1) {
                    Ok(T::half())
                } else {
                    Ok(T::zero())
                }
            }
        }
    }

    /// Nonzero entries of row `s`, the renewal jump truncated at the cap.
    pub fn row<T: Scalar>(&self, s: u64) -> Result<Vec<(u64, T)>> {
        check_state(s)?;
        match self {
            Self::RenewalShift { f, cap } => {
                if s == 1 {
                    jump_support(f, *cap)
                } else {
                    Ok(vec![(s - 1, T::one())])
                }
            }
            Self::Hopf => {
                if s == 1 {
                    Ok(vec![(1, T::half()), (2, T::half())])
                } else {
                    Ok(vec![(s - 1, T::half()), (s + 1, T::half())])
                }
            }
        }
    }

    /// All `(s, p_{s,t})` with `p_{s,t} > 0`.
    pub fn predecessors<T: Scalar>(&self, t: u64) -> Result<Vec<(u64, T)>> {
        check_state(t)?;
        let mut out = Vec::new();
        match self {
            Self::RenewalShift { .. } => {
                let p1: T = self.transition(1, t)?;
                if p1 > T::zero() {
                    out.push((1, p1));
                }
                out.push((t + 1, T::one()));
            }
            Self::Hopf => {
                if t == 1 {
                    out.push((1, T::half()));
                    out.push((2, T::half()));
                } else {
                    out.push((t - 1, T::half()));
                    out.push((t + 1, T::half()));
                }
            }
        }
        Ok(out)
    }

    /// `max_{t <= window} |Σ_s π_s p_{s,t} - π_t|`.
    pub fn stationarity_residual<T: Scalar>(&self, window: u64) -> Result<T> {
        let mut worst = T::zero();
        for t in 1..=window {
            let mut acc = T::zero();
            for (s, p) in self.predecessors::<T>(t)? {
                acc = acc + self.pi::<T>(s)? * p;
            }
            let r = (acc - self.pi::<T>(t)?).abs_val();
            if r > worst {
                worst = r;
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Value {
        match self {
            Self::RenewalShift { f, cap } => json!({"kind": "renewal-shift", "lifetime": f.to_json(), "cap": cap}),
            Self::Hopf => json!({"kind": "hopf"}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match v.get("kind").and_then(Value::as_str) {
            Some("hopf") => Ok(Self::Hopf),
            Some("renewal-shift") => {
                let f = LifetimeDist::from_json(
                    v.get("lifetime").ok_or_else(|| Error::Config("renewal-shift needs a lifetime".into()))?,
                )?;
                match v.get("cap").and_then(Value::as_u64) {
                    Some(cap) => Self::renewal_shift_with_cap(f, cap),
                    None => Self::renewal_shift(f),
                }
            }
            _ => Err(Error::Config("chain kind must be 'renewal-shift' or 'hopf'".into())),
        }
    }
}

/// `hopf` or `renewal-shift:<lifetime>`, e.g. `renewal-shift:geom(0.5)`.
impl FromStr for Chain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "hopf" {
            return Ok(Self::Hopf);
        }
        match s.split_once(':') {
            Some(("renewal-shift", f)) => Self::renewal_shift(f.parse()?),
            _ => Err(Error::Config(format!("unknown chain '{s}'"))),
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn check_state(s: u64) -> Result<()> {
    if s == 0 {
        Err(Error::Config("states are numbered from 1".into()))
    } else {
        Ok(())
    }
}

fn jump_support<T: Scalar>(f: &LifetimeDist, cap: u64) -> Result<Vec<(u64, T)>> {
    if T::is_exact() {
        f.support_exact_upto(cap)?.into_iter().map(|(k, p)| Ok((k, T::lift(Some(&p), 0.0)?))).collect()
    } else {
        f.support_upto(cap).into_iter().map(|(k, p)| Ok((k, T::lift(None, p)?))).collect()
    }
}

/// Entry limit for distribution vectors, from `RATMIX_BUDGET_MB`.
pub(crate) fn entry_budget<T>() -> usize {
    let mb = std::env::var("RATMIX_BUDGET_MB").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(DEFAULT_BUDGET_MB);
    // big rationals carry heap data; charge them a flat estimate
    let per = if std::mem::size_of::<T>() > 8 { 96 } else { 8 };
    (mb << 20) / per
}

/// A distribution over states evolving under the chain.
struct Evolver<'a, T: Scalar> {
    chain: &'a Chain,
    /// `dist[i]` is the mass at state `i + 1`.
    dist: VecDeque<T>,
    jumps: Vec<(u64, T)>,
    jump_loss: f64,
    dropped: f64,
    limit: usize,
}

impl<'a, T: Scalar> Evolver<'a, T> {
    fn new(chain: &'a Chain, start: u64) -> Result<Self> {
        Self::with_limit(chain, start, entry_budget::<T>())
    }

    fn with_limit(chain: &'a Chain, start: u64, limit: usize) -> Result<Self> {
        check_state(start)?;
        if start as usize > limit {
            return Err(Error::Budget { entries: start as usize, limit });
        }
        let mut dist = VecDeque::from(vec![T::zero(); start as usize]);
        dist[start as usize - 1] = T::one();
        let (jumps, jump_loss) = match chain {
            Chain::RenewalShift { f, cap } => (jump_support(f, *cap)?, f.tail(cap + 1)),
            Chain::Hopf => (Vec::new(), 0.0),
        };
        Ok(Self { chain, dist, jumps, jump_loss, dropped: 0.0, limit })
    }

    fn at(&self, t: u64) -> T {
        self.dist.get(t as usize - 1).cloned().unwrap_or_else(T::zero)
    }

    fn clear(&mut self, t: u64) {
        if let Some(x) = self.dist.get_mut(t as usize - 1) {
            *x = T::zero();
        }
    }

    fn step(&mut self) -> Result<()> {
        match self.chain {
            Chain::RenewalShift { .. } => {
                let a = self.dist.pop_front().unwrap_or_else(T::zero);
                if a > T::zero() {
                    let need = self.jumps.last().map_or(0, |&(k, _)| k as usize);
                    if need > self.limit {
                        return Err(Error::Budget { entries: need, limit: self.limit });
                    }
                    if self.dist.len() < need {
                        self.dist.resize(need, T::zero());
                    }
                    for (k, p) in &self.jumps {
                        let slot = &mut self.dist[*k as usize - 1];
                        *slot = slot.clone() + a.clone() * p.clone();
                    }
                    self.dropped += a.approx() * self.jump_loss;
                }
            }
            Chain::Hopf => {
                let n = self.dist.len();
                if n + 1 > self.limit {
                    return Err(Error::Budget { entries: n + 1, limit: self.limit });
                }
                let half = T::half();
                let old: Vec<T> = self.dist.drain(..).collect();
                let get = |i: usize| old.get(i).cloned().unwrap_or_else(T::zero);
                self.dist.push_back(half.clone() * (get(0) + get(1)));
                for i in 1..=n {
                    self.dist.push_back(half.clone() * (get(i - 1) + get(i + 1)));
                }
            }
        }
        Ok(())
    }

    fn to_row(&self) -> SparseRow<T> {
        let entries = self
            .dist
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != T::zero())
            .map(|(i, x)| (i as u64 + 1, x.clone()))
            .collect();
        SparseRow { entries, dropped: self.dropped }
    }
}

/// Nonzero entries of a distribution, with the mass lost to truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow<T> {
    pub entries: Vec<(u64, T)>,
    pub dropped: f64,
}

impl<T: Scalar> SparseRow<T> {
    pub fn get(&self, t: u64) -> T {
        self.entries
            .binary_search_by_key(&t, |(s, _)| *s)
            .map_or_else(|_| T::zero(), |i| self.entries[i].1.clone())
    }

    pub fn total(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, (_, x)| acc + x.clone())
    }
}

/// Row `s` of `P^n`.
pub fn nstep_row<T: Scalar>(c: &Chain, s: u64, n: u64) -> Result<SparseRow<T>> {
    let mut ev = Evolver::<T>::new(c, s)?;
    for _ in 0..n {
        ev.step()?;
    }
    Ok(ev.to_row())
}

/// `p^{(m)}_{r,t}` for `m = 0..=n`, plus the truncation bound.
pub fn transition_profile<T: Scalar>(c: &Chain, r: u64, t: u64, n: u64) -> Result<(Vec<T>, f64)> {
    check_state(t)?;
    let mut ev = Evolver::<T>::new(c, r)?;
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(ev.at(t));
    for _ in 0..n {
        ev.step()?;
        out.push(ev.at(t));
    }
    Ok((out, ev.dropped))
}

/// Taboo rows `_s p^{(k)}_{s,·}` for `k = 1..=n`: paths from `s` that do not
/// revisit `s` before time `k` (the entry at `s` itself is the first return).
pub fn taboo_nstep<T: Scalar>(c: &Chain, s: u64, n: u64) -> Result<Vec<SparseRow<T>>> {
    let mut ev = Evolver::<T>::new(c, s)?;
    let mut rows = Vec::with_capacity(n as usize);
    for _ in 0..n {
        ev.step()?;
        rows.push(ev.to_row());
        ev.clear(s);
    }
    Ok(rows)
}

/// `_s p^{(k)}_{s,t}` for `k = 0..=n` (entry 0 is zero).
pub fn taboo_column<T: Scalar>(c: &Chain, s: u64, t: u64, n: u64) -> Result<Vec<T>> {
    check_state(t)?;
    let mut ev = Evolver::<T>::new(c, s)?;
    let mut out = vec![T::zero()];
    for _ in 0..n {
        ev.step()?;
        out.push(ev.at(t));
        ev.clear(s);
    }
    Ok(out)
}

/// A cylinder `[s_1, ..., s_I]_k = {x : x_{k+i} = s_i, 1 <= i <= I}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cylinder {
    pub states: Vec<u64>,
    pub offset: i64,
}

impl Cylinder {
    pub fn new(states: Vec<u64>, offset: i64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("a cylinder needs at least one state".into()));
        }
        for &s in &states {
            check_state(s)?;
        }
        Ok(Self { states, offset })
    }

    /// Position of the first pinned coordinate.
    pub fn start(&self) -> i64 {
        self.offset + 1
    }

    /// Position of the last pinned coordinate.
    pub fn end(&self) -> i64 {
        self.offset + self.states.len() as i64
    }

    pub fn shifted(&self, by: i64) -> Self {
        Self { states: self.states.clone(), offset: self.offset + by }
    }

    /// True when some coordinate is pinned to different states.
    pub fn conflicts_with(&self, other: &Self) -> bool {
        self.states.iter().enumerate().any(|(i, &a)| {
            let pos = self.start() + i as i64 - other.start();
            pos >= 0 && (pos as usize) < other.states.len() && other.states[pos as usize] != a
        })
    }

    pub fn to_json(&self) -> Value {
        json!({"states": self.states, "offset": self.offset})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let states = v
            .get("states")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Config("cylinder needs 'states'".into()))?
            .iter()
            .map(|x| x.as_u64().ok_or_else(|| Error::Config("cylinder states are positive integers".into())))
            .collect::<Result<Vec<_>>>()?;
        let offset = v.get("offset").map_or(Some(0), Value::as_i64).ok_or_else(|| Error::Config("bad offset".into()))?;
        Self::new(states, offset)
    }
}

/// `[1,2]_0` style text.
impl FromStr for Cylinder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse cylinder '{s}', expected [s1,s2,...]_k"));
        let s = s.trim();
        let (word, offset) = s.strip_prefix('[').and_then(|r| r.split_once(']')).ok_or_else(bad)?;
        let offset = match offset.strip_prefix('_') {
            Some(k) => k.parse::<i64>().map_err(|_| bad())?,
            None if offset.is_empty() => 0,
            None => return Err(bad()),
        };
        let states = word.split(',').map(|x| x.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        Self::new(states, offset)
    }
}

impl fmt::Display for Cylinder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.states.iter().map(u64::to_string).collect();
        write!(f, "[{}]_{}", body.join(","), self.offset)
    }
}

/// `π_{s_1} p_{s_1,s_2} ... p_{s_{I-1},s_I}`.
pub fn cylinder_measure<T: Scalar>(c: &Chain, a: &Cylinder) -> Result<T> {
    word_measure(c, &a.states)
}

fn word_measure<T: Scalar>(c: &Chain, word: &[u64]) -> Result<T> {
    let mut m: T = c.pi(word[0])?;
    for w in word.windows(2) {
        if m == T::zero() {
            break;
        }
        m = m * c.transition::<T>(w[0], w[1])?;
    }
    Ok(m)
}

/// How `A` and `T^{-n}B` sit relative to each other.
enum Layout {
    /// `first` ends, then `gap` steps later `second` starts.
    Apart { first_is_a: bool, gap: u64 },
    /// The pinned coordinates overlap or touch.
    Merged(Option<Vec<u64>>),
}

fn arrange(a: &Cylinder, b: &Cylinder) -> Layout {
    if b.start() > a.end() {
        return Layout::Apart { first_is_a: true, gap: (b.start() - a.end()) as u64 };
    }
    if a.start() > b.end() {
        return Layout::Apart { first_is_a: false, gap: (a.start() - b.end()) as u64 };
    }
    if a.conflicts_with(b) {
        return Layout::Merged(None);
    }
    let lo = a.start().min(b.start());
    let hi = a.end().max(b.end());
    let word = (lo..=hi)
        .map(|p| {
            let pick = |c: &Cylinder| {
                let i = p - c.start();
                (i >= 0 && (i as usize) < c.states.len()).then(|| c.states[i as usize])
            };
            pick(a).or_else(|| pick(b)).unwrap_or(0)
        })
        .collect();
    Layout::Merged(Some(word))
}

/// `m(A ∩ T^{-n}B)`, exactly in rational mode.
pub fn cylinder_correlation<T: Scalar>(c: &Chain, a: &Cylinder, b: &Cylinder, n: u64) -> Result<T> {
    let bn = b.shifted(n as i64);
    match arrange(a, &bn) {
        Layout::Merged(None) => Ok(T::zero()),
        Layout::Merged(Some(word)) => word_measure(c, &word),
        Layout::Apart { first_is_a, gap } => {
            let (first, second) = if first_is_a { (a, &bn) } else { (&bn, a) };
            let from = *first.states.last().unwrap_or(&1);
            let to = second.states[0];
            let head: T = cylinder_measure(c, first)?;
            let tail: T = cylinder_measure(c, second)?;
            if head.is_zero() || tail.is_zero() {
                return Ok(T::zero());
            }
            let p = nstep_row::<T>(c, from, gap)?.get(to);
            Ok(head * p * tail / c.pi::<T>(to)?)
        }
    }
}

/// `m(A ∩ T^{-n}B)` for `n = 0..=n_max`, sharing one matrix-power sweep per
/// block order. Returns the values and the truncation bound.
pub fn correlation_profile<T: Scalar>(c: &Chain, a: &Cylinder, b: &Cylinder, n_max: u64) -> Result<(Vec<T>, f64)> {
    let a_end = *a.states.last().unwrap_or(&1);
    let b_first = b.states[0];
    let (col, dropped) = transition_profile::<T>(c, a_end, b_first, (n_max as i64 + b.start() - a.end()).max(0) as u64)?;
    let ma: T = cylinder_measure(c, a)?;
    let mb: T = cylinder_measure(c, b)?;
    let pi_b: T = c.pi(b_first)?;
    let scale = if pi_b.is_zero() { T::zero() } else { ma * mb / pi_b };
    let mut out = Vec::with_capacity(n_max as usize + 1);
    for n in 0..=n_max {
        let bn = b.shifted(n as i64);
        let v = match arrange(a, &bn) {
            Layout::Apart { first_is_a: true, gap } => scale.clone() * col[gap as usize].clone(),
            _ => cylinder_correlation(c, a, b, n)?,
        };
        out.push(v);
    }
    Ok((out, dropped))
}

/// The return weight of `[s]_0`: `u_n = p^{(n)}_{s,s} / π_s`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub weight: WeightSeq,
    /// Mass lost to the state cap while computing it.
    pub truncation: f64,
}

pub fn occupation_sequence(c: &Chain, s: u64, n: u64) -> Result<Occupation> {
    let pi: f64 = c.pi(s)?;
    if pi <= 0.0 {
        return Err(Error::DegenerateSet(format!("pi_{s} = 0")));
    }
    let (col, truncation) = transition_profile::<f64>(c, s, s, n)?;
    let weight = WeightSeq::from_values(format!("occupation[{}, {s}]", c.label()), col.into_iter().map(|p| p / pi).collect())?;
    Ok(Occupation { weight, truncation })
}

/// One `(r, t, ℓ)` entry of a ratio-limit check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatioPair {
    pub r: u64,
    pub t: u64,
    pub ell: i64,
}

/// Strong-Cesàro check of `p^{(n+ℓ)}_{r,t} / u_n → π_t` with `u = u([s]_0)`,
/// via `s_n = p^{(n+ℓ)}_{r,t} / (u_n π_t)` against the limit 1. Terms with
/// `n + ℓ < 0` or `u_n = 0` are set to 1; the latter carry zero weight.
pub fn ratio_limit_report(c: &Chain, s: u64, pairs: &[RatioPair], n: u64, eps: f64) -> Result<Report> {
    if n < 2 {
        return Err(Error::Config("horizon must be at least 2".into()));
    }
    let occ = occupation_sequence(c, s, n)?;
    let u = &occ.weight;
    let grid = GridRule::Dyadic.build(1, n);
    let per_pair: Vec<Result<(ConvergenceProfile, u64, f64, f64)>> = pairs
        .par_iter()
        .map(|p| {
            let reach = (n as i64 + p.ell).max(0) as u64;
            let (col, dropped) = transition_profile::<f64>(c, p.r, p.t, reach)?;
            let pi_t: f64 = c.pi(p.t)?;
            let seq: Vec<f64> = (0..n)
                .map(|k| {
                    let m = k as i64 + p.ell;
                    let uk = u.values()[k as usize];
                    if m < 0 || uk == 0.0 {
                        1.0
                    } else {
                        col[m as usize] / (uk * pi_t)
                    }
                })
                .collect();
            let prof = strong_cesaro_profile(&seq, 1.0, u, &grid)?;
            let exc = exceptional_set(&seq, 0, 1.0, eps)?;
            let small = smallness_profile(&exc, u, &[n])?.values[0];
            Ok((prof, exc.len_upto(n), small, dropped))
        })
        .collect();
    let mut report = Report::new("ratio-limit", c.label(), n);
    report.truncation_bound = occ.truncation;
    let mut rows = Vec::new();
    for (p, res) in pairs.iter().zip(per_pair) {
        let (prof, count, small, dropped) = res?;
        report.truncation_bound = report.truncation_bound.max(dropped);
        let name = format!("({},{},{})", p.r, p.t, p.ell);
        let e_n = prof.last().map_or(f64::NAN, |(_, v)| v);
        report.check(
            format!("E_N non-increasing {name}"),
            prof.decreasing_tail(3),
            format!("E_{n} = {e_n:e}; |K_eps| = {count}, smallness {small:e}"),
        );
        rows.push(json!({"pair": [p.r, p.t, p.ell], "E_N": e_n, "exceptional_count": count, "exceptional_smallness": small}));
        report.profiles.push(ConvergenceProfile { label: format!("E{name}"), ..prof });
    }
    report.set("reference_state", s);
    report.set("eps", eps);
    report.set("pairs", rows);
    report.verdict = if report.all_passed() { "ratio limits consistent at horizon".into() } else { "non-monotone error at horizon".into() };
    Ok(report)
}

/// Residuals of the last-exit decomposition
/// `p^{(n)}_{s,t} = Σ_{k=1}^n u_{n-k} · _s p^{(k)}_{s,t}` with `u_j = p^{(j)}_{s,s}`,
/// computed exactly for `n = 1..=n_max`.
pub fn last_exit_residuals(c: &Chain, s: u64, t: u64, n_max: u64) -> Result<Vec<Rational>> {
    let (p_st, _) = transition_profile::<Rational>(c, s, t, n_max)?;
    let (u, _) = transition_profile::<Rational>(c, s, s, n_max)?;
    let taboo = taboo_column::<Rational>(c, s, t, n_max)?;
    Ok((1..=n_max as usize)
        .map(|n| (1..=n).fold(p_st[n].clone(), |acc, k| acc - &u[n - k] * &taboo[k]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renewal::renewal_from_lifetime_exact;
    use num_traits::{One, Zero};

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p.into(), q.into())
    }

    fn geo_half() -> LifetimeDist {
        LifetimeDist::geometric(r(1, 2)).unwrap()
    }

    #[test]
    fn renewal_shift_structure() {
        let d1 = Chain::renewal_shift(LifetimeDist::dirac(1).unwrap()).unwrap();
        assert_eq!(d1.pi::<Rational>(1).unwrap(), r(1, 1));
        assert_eq!(d1.row::<Rational>(1).unwrap(), vec![(1, r(1, 1))]);

        let sp = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let pis: Vec<Rational> = (1..=3).map(|s| sp.pi(s).unwrap()).collect();
        assert_eq!(pis, vec![r(1, 1), r(1, 2), r(1, 4)]);
        assert_eq!(sp.row_truncation(), 2f64.powi(-17));

        let geo = Chain::renewal_shift(geo_half()).unwrap();
        let Chain::RenewalShift { cap, .. } = &geo else { panic!() };
        assert_eq!(*cap, 50);
        let (col, _) = transition_profile::<Rational>(&geo, 1, 1, 40).unwrap();
        assert!(col[1..].iter().all(|x| *x == r(1, 2)));
        assert!(Chain::renewal_shift("explicit(1:1/2)".parse().unwrap()).is_err());
    }

    #[test]
    fn hopf_small_powers() {
        let h = Chain::hopf();
        let row = nstep_row::<Rational>(&h, 1, 2).unwrap();
        assert_eq!(row.get(1), r(1, 2));
        let row = nstep_row::<Rational>(&h, 1, 3).unwrap();
        assert_eq!(row.entries, vec![(1, r(3, 8)), (2, r(3, 8)), (3, r(1, 8)), (4, r(1, 8))]);
        assert!(row.total().is_one());
        assert!(h.stationarity_residual::<Rational>(100).unwrap().is_zero());
        let row = nstep_row::<Rational>(&h, 5, 0).unwrap();
        assert_eq!(row.entries, vec![(5, r(1, 1))]);
    }

    #[test]
    fn renewal_shift_is_stationary() {
        let sp = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        assert!(sp.stationarity_residual::<Rational>(200).unwrap().is_zero());
        let f: LifetimeDist = "explicit(1:1/3,4:1/2,7:1/6)".parse().unwrap();
        let c = Chain::renewal_shift(f).unwrap();
        assert!(c.stationarity_residual::<Rational>(10).unwrap().is_zero());
    }

    #[test]
    fn diagonal_identity_exact() {
        let f: LifetimeDist = "explicit(1:1/5,2:1/5,5:3/5)".parse().unwrap();
        let u = renewal_from_lifetime_exact(&f, 120).unwrap();
        let c = Chain::renewal_shift(f).unwrap();
        let (col, dropped) = transition_profile::<Rational>(&c, 1, 1, 120).unwrap();
        assert_eq!(col.as_slice(), u.exact().unwrap());
        assert_eq!(dropped, 0.0);
        assert!(nstep_row::<Rational>(&c, 1, 77).unwrap().total().is_one());
    }

    #[test]
    fn taboo_rows_of_renewal_shift() {
        let sp = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let rows = taboo_nstep::<Rational>(&sp, 1, 40).unwrap();
        for (k, row) in rows.iter().enumerate() {
            let k = k as u64 + 1;
            for t in 1..=20u64 {
                assert_eq!(row.get(t), LifetimeDist::StPetersburg.mass_exact(t + k - 1).unwrap(), "k={k} t={t}");
            }
        }
        let h = Chain::hopf();
        let first = taboo_nstep::<Rational>(&h, 2, 1).unwrap();
        assert_eq!(first[0].entries, vec![(1, r(1, 2)), (3, r(1, 2))]);
    }

    #[test]
    fn chung_identity_partial_sums() {
        let f = LifetimeDist::StPetersburg;
        let c = Chain::renewal_shift(f.clone()).unwrap();
        for t in 1..=8u64 {
            let col = taboo_column::<Rational>(&c, 1, t, 1000).unwrap();
            let sum: Rational = col.iter().sum();
            let gap = f.tail_exact(t).unwrap() - &sum;
            assert!(gap >= Rational::zero() && gap <= f.tail_exact(t + 1000).unwrap());
        }
    }

    #[test]
    fn cylinder_measures() {
        let sp = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let m = |s: &str| cylinder_measure::<Rational>(&sp, &s.parse().unwrap()).unwrap();
        assert_eq!(m("[1]_0"), r(1, 1));
        assert_eq!(m("[1,2]_0"), r(1, 4));
        assert_eq!(m("[2,1]_5"), r(1, 2));
        assert_eq!(m("[1,3]_0"), r(0, 1));
    }

    #[test]
    fn correlation_examples() {
        let sp = Chain::renewal_shift(LifetimeDist::StPetersburg).unwrap();
        let one: Cylinder = "[1]_0".parse().unwrap();
        let u = renewal_from_lifetime_exact(&LifetimeDist::StPetersburg, 30).unwrap();
        for n in 0..=30 {
            assert_eq!(cylinder_correlation::<Rational>(&sp, &one, &one, n).unwrap(), u.exact().unwrap()[n as usize]);
        }
        let two: Cylinder = "[2]_0".parse().unwrap();
        assert!(cylinder_correlation::<Rational>(&sp, &one, &two, 0).unwrap().is_zero());
        let h = Chain::hopf();
        assert_eq!(cylinder_correlation::<Rational>(&h, &one, &two, 3).unwrap(), r(3, 8));
    }

    #[test]
    fn correlation_handles_overlap_and_reverse_order() {
        let h = Chain::hopf();
        let a: Cylinder = "[1,2,3]_0".parse().unwrap();
        let b: Cylinder = "[2,3]_0".parse().unwrap();
        // B shifted by 1 overlaps A on positions 2, 3
        assert_eq!(cylinder_correlation::<Rational>(&h, &a, &b, 1).unwrap(), r(1, 4));
        assert!(cylinder_correlation::<Rational>(&h, &a, &b, 0).unwrap().is_zero());
        // B far to the left of A
        let left: Cylinder = "[1]_-5".parse().unwrap();
        let v = cylinder_correlation::<Rational>(&h, &a, &left, 0).unwrap();
        let p = nstep_row::<Rational>(&h, 1, 5).unwrap().get(1);
        assert_eq!(v, p * r(1, 4));
        let (prof, _) = correlation_profile::<Rational>(&h, &a, &b, 12).unwrap();
        for (n, x) in prof.iter().enumerate() {
            assert_eq!(*x, cylinder_correlation::<Rational>(&h, &a, &b, n as u64).unwrap());
        }
    }

    #[test]
    fn correlation_is_offset_covariant() {
        let h = Chain::hopf();
        let a: Cylinder = "[2,1]_3".parse().unwrap();
        let b: Cylinder = "[1,2]_-1".parse().unwrap();
        for n in 0..10 {
            let x = cylinder_correlation::<Rational>(&h, &a, &b, n).unwrap();
            let y = cylinder_correlation::<Rational>(&h, &a.shifted(7), &b.shifted(7), n).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn occupation_examples() {
        let d1 = Chain::renewal_shift(LifetimeDist::dirac(1).unwrap()).unwrap();
        let occ = occupation_sequence(&d1, 1, 100).unwrap();
        assert!(occ.weight.values().iter().all(|&x| x == 1.0));
        assert_eq!(occ.weight.partial_sum(100).unwrap(), 100.0);

        let h = Chain::hopf();
        let occ = occupation_sequence(&h, 1, 4000).unwrap();
        // p^{(n)}_{11} = C(n, ⌊n/2⌋) / 2^n
        let binom = |n: u64| -> f64 {
            let k = n / 2;
            let ln = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k) - n as f64 * 2f64.ln();
            ln.exp()
        };
        for n in [1u64, 2, 3, 10, 999, 4000] {
            let got = occ.weight.values()[n as usize];
            assert!((got / binom(n) - 1.0).abs() < 1e-10, "n = {n}");
        }
    }

    fn ln_factorial(n: u64) -> f64 {
        (1..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn last_exit_identity_exact() {
        let f: LifetimeDist = "explicit(1:1/4,2:1/4,3:1/2)".parse().unwrap();
        let c = Chain::renewal_shift(f).unwrap();
        for t in 1..=3 {
            assert!(last_exit_residuals(&c, 1, t, 60).unwrap().iter().all(Zero::is_zero));
        }
        assert!(last_exit_residuals(&Chain::hopf(), 2, 3, 30).unwrap().iter().all(Zero::is_zero));
    }

    #[test]
    fn ratio_limit_examples() {
        let geo = Chain::renewal_shift(geo_half()).unwrap();
        let rep = ratio_limit_report(&geo, 1, &[RatioPair { r: 1, t: 1, ell: 0 }], 1000, 0.1).unwrap();
        let e = rep.profiles[0].values.iter().cloned().fold(0.0, f64::max);
        assert!(e < 1e-15);
        let h = Chain::hopf();
        let rep = ratio_limit_report(&h, 1, &[RatioPair { r: 2, t: 3, ell: 1 }], 4096, 0.1).unwrap();
        assert!(rep.all_passed(), "{:?}", rep.checks);
    }

    #[test]
    fn chain_text_and_json() {
        let c: Chain = "renewal-shift:geom(0.5)".parse().unwrap();
        assert_eq!(c.label(), "renewal-shift:geometric(1/2)");
        assert_eq!(Chain::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(Chain::from_json(&json!({"kind": "hopf"})).unwrap(), Chain::Hopf);
        assert!("nope".parse::<Chain>().is_err());
        let cyl: Cylinder = "[1,2]_-3".parse().unwrap();
        assert_eq!(cyl.to_string(), "[1,2]_-3");
        assert_eq!(Cylinder::from_json(&cyl.to_json()).unwrap(), cyl);
        assert!("[]_0".parse::<Cylinder>().is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let h = Chain::hopf();
        let mut ev = Evolver::<f64>::with_limit(&h, 1, 3).unwrap();
        ev.step().unwrap();
        ev.step().unwrap();
        assert!(matches!(ev.step(), Err(Error::Budget { entries: 4, limit: 3 })));
        assert!(Evolver::<f64>::with_limit(&h, 10, 3).is_err());
    }
}
