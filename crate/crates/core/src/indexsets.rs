//! Subsets of ℕ as sorted interval lists, with the weighted-mass,
//! density and strong-Cesàro calculus used to certify "small" exceptional
//! sets at a finite horizon.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::report::ConvergenceProfile;
use crate::weights::WeightSeq;

/// Rules that generate infinite index sets.
#[derive(Debug, Clone, PartialEq)]
pub enum SetRule {
    /// `⋃_k [2^{k²}, k·2^{k²}]`: u-small for `u_n = 1/(n+1)` yet of upper density one.
    Counterexample,
    /// `{j² : j >= 1}`.
    Squares,
    /// `{n >= 0 : n ≡ residue (mod modulus)}`.
    Residue { modulus: u64, residue: u64 },
    /// Blocks `[jb, (j+1)b - 1]`, each kept independently with probability `density`.
    RandomBlocks { seed: u64, density: f64, block: u64 },
}

impl fmt::Display for SetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Counterexample => write!(f, "counterexample"),
            Self::Squares => write!(f, "squares"),
            Self::Residue { modulus, residue } => write!(f, "residue({modulus},{residue})"),
            Self::RandomBlocks { seed, density, block } => {
                write!(f, "random-blocks({seed},{density},{block})")
            }
        }
    }
}

impl FromStr for SetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown set generator '{s}'"));
        let (name, args) = match s.split_once('(') {
            Some((name, rest)) => {
                let rest = rest.strip_suffix(')').ok_or_else(bad)?;
                (name, rest.split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        match (name, args.as_slice()) {
            ("counterexample", []) => Ok(Self::Counterexample),
            ("squares", []) => Ok(Self::Squares),
            ("evens", []) => Ok(Self::Residue { modulus: 2, residue: 0 }),
            ("all", []) => Ok(Self::Residue { modulus: 1, residue: 0 }),
            ("residue", [m, r]) => {
                let modulus: u64 = m.parse().map_err(|_| bad())?;
                let residue: u64 = r.parse().map_err(|_| bad())?;
                if modulus == 0 || residue >= modulus {
                    return Err(bad());
                }
                Ok(Self::Residue { modulus, residue })
            }
            ("random-blocks", [seed, d, b]) => {
                let density: f64 = d.parse().map_err(|_| bad())?;
                let block: u64 = b.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&density) || block == 0 {
                    return Err(bad());
                }
                Ok(Self::RandomBlocks { seed: seed.parse().map_err(|_| bad())?, density, block })
            }
            _ => Err(bad()),
        }
    }
}

impl SetRule {
    /// Intervals of the generated set that start at or below `bound`.
    fn intervals(&self, bound: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        match *self {
            Self::Counterexample => {
                for k in 1u64.. {
                    let Some(start) = 1u64.checked_shl((k * k) as u32).filter(|_| k * k < 64) else {
                        break;
                    };
                    if start > bound {
                        break;
                    }
                    match start.checked_mul(k) {
                        Some(end) => out.push((start, end)),
                        None => break,
                    }
                }
            }
            Self::Squares => {
                let mut j = 1u64;
                while let Some(sq) = j.checked_mul(j).filter(|&sq| sq <= bound) {
                    out.push((sq, sq));
                    j += 1;
                }
            }
            Self::Residue { modulus: 1, .. } => out.push((0, bound)),
            Self::Residue { modulus, residue } => {
                let mut n = residue;
                while n <= bound {
                    out.push((n, n));
                    n += modulus;
                }
            }
            Self::RandomBlocks { seed, density, block } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut start = 0u64;
                while start <= bound {
                    let end = start + block - 1;
                    if rng.gen::<f64>() < density {
                        match out.last_mut() {
                            Some(last) if last.1 + 1 == start => last.1 = end,
                            _ => out.push((start, end)),
                        }
                    }
                    start += block;
                }
            }
        }
        out
    }
}

/// A subset of ℕ stored as sorted disjoint inclusive intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    intervals: Vec<(u64, u64)>,
    generator: Option<SetRule>,
    /// Membership is known exactly on `[0, known_to]`; `None` means everywhere.
    known_to: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct IndexSetJson {
    intervals: Vec<[u64; 2]>,
    generator: Option<String>,
}

impl IndexSet {
    pub fn empty() -> Self {
        Self { intervals: Vec::new(), generator: None, known_to: None }
    }

    /// Explicit finite set; intervals must satisfy `a_i <= b_i < a_{i+1}`.
    pub fn from_intervals(intervals: Vec<(u64, u64)>) -> Result<Self> {
        validate(&intervals)?;
        Ok(Self { intervals, generator: None, known_to: None })
    }

    /// Finite set from arbitrary indices (duplicates allowed).
    pub fn from_indices<I: IntoIterator<Item = u64>>(indices: I) -> Self {
        let mut v: Vec<u64> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        let mut intervals: Vec<(u64, u64)> = Vec::new();
        for n in v {
            match intervals.last_mut() {
                Some(last) if last.1 + 1 == n => last.1 = n,
                _ => intervals.push((n, n)),
            }
        }
        Self { intervals, generator: None, known_to: None }
    }

    /// Generator-backed set materialized on `[0, bound]`.
    pub fn generated(rule: SetRule, bound: u64) -> Self {
        let mut intervals = rule.intervals(bound);
        let known_to = match rule {
            // every interval of the counterexample that fits in u64 is listed
            SetRule::Counterexample => {
                intervals = rule.intervals(u64::MAX);
                None
            }
            _ => Some(bound),
        };
        Self { intervals, generator: Some(rule), known_to }
    }

    /// Marks the set as known only on `[0, bound]` (e.g. an exceptional set
    /// read off a finite sequence).
    pub fn known_up_to(mut self, bound: u64) -> Self {
        self.known_to = Some(bound);
        self
    }

    pub fn intervals(&self) -> &[(u64, u64)] {
        &self.intervals
    }

    pub fn generator(&self) -> Option<&SetRule> {
        self.generator.as_ref()
    }

    pub fn known_to(&self) -> Option<u64> {
        self.known_to
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Membership in O(log #intervals).
    pub fn contains(&self, n: u64) -> bool {
        let i = self.intervals.partition_point(|&(_, b)| b < n);
        self.intervals.get(i).is_some_and(|&(a, _)| a <= n)
    }

    /// `|K ∩ [lo, hi]|`.
    pub fn count_in(&self, lo: u64, hi: u64) -> u64 {
        if lo > hi {
            return 0;
        }
        let first = self.intervals.partition_point(|&(_, b)| b < lo);
        self.intervals[first..]
            .iter()
            .take_while(|&&(a, _)| a <= hi)
            .map(|&(a, b)| b.min(hi) - a.max(lo) + 1)
            .sum()
    }

    pub fn len_upto(&self, bound: u64) -> u64 {
        self.count_in(0, bound)
    }

    /// `[0, bound] \ K` as an explicit set.
    pub fn complement(&self, bound: u64) -> Self {
        let mut out = Vec::new();
        let mut next = 0u64;
        for &(a, b) in &self.intervals {
            if a > bound {
                break;
            }
            if a > next {
                out.push((next, a - 1));
            }
            next = b.saturating_add(1);
        }
        if next <= bound {
            out.push((next, bound));
        }
        Self { intervals: out, generator: None, known_to: Some(bound) }
    }

    /// True when `self ∩ [0, bound] ⊆ other`.
    pub fn is_subset_upto(&self, other: &Self, bound: u64) -> bool {
        self.intervals.iter().take_while(|&&(a, _)| a <= bound).all(|&(a, b)| {
            let b = b.min(bound);
            other.count_in(a, b) == b - a + 1
        })
    }

    fn require_known(&self, n: u64) -> Result<()> {
        match self.known_to {
            Some(k) if n > k => Err(Error::Horizon { requested: n, horizon: k }),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let j = IndexSetJson {
            intervals: self.intervals.iter().map(|&(a, b)| [a, b]).collect(),
            generator: self.generator.as_ref().map(ToString::to_string),
        };
        serde_json::to_value(j).unwrap_or(serde_json::Value::Null)
    }

    /// Reads `{"intervals": [[a,b],...], "generator": name|null}`.
    ///
    /// A generator-backed set is taken as known up to its last listed
    /// interval end.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let j: IndexSetJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("index set JSON: {e}")))?;
        let intervals: Vec<(u64, u64)> = j.intervals.iter().map(|&[a, b]| (a, b)).collect();
        validate(&intervals)?;
        let generator = j.generator.as_deref().map(SetRule::from_str).transpose()?;
        let known_to = match &generator {
            None | Some(SetRule::Counterexample) => None,
            Some(_) => Some(intervals.last().map_or(0, |&(_, b)| b)),
        };
        Ok(Self { intervals, generator, known_to })
    }
}

fn validate(intervals: &[(u64, u64)]) -> Result<()> {
    for (i, &(a, b)) in intervals.iter().enumerate() {
        if a > b {
            return Err(Error::Config(format!("interval {i} = [{a}, {b}] is empty")));
        }
        if let Some(&(next, _)) = intervals.get(i + 1) {
            if b >= next {
                return Err(Error::Config(format!("intervals {i} and {} overlap or are unsorted", i + 1)));
            }
        }
    }
    Ok(())
}

/// The `⋃_{k>=1} [2^{k²}, k·2^{k²}]` set, every interval representable in u64.
pub fn counterexample_set() -> IndexSet {
    IndexSet::generated(SetRule::Counterexample, u64::MAX)
}

/// `a_u(K, n) = Σ_{k ∈ K, k < n} u_k`.
pub fn weighted_mass(k_set: &IndexSet, u: &WeightSeq, n: u64) -> Result<f64> {
    u.get(n)?;
    if n > 0 {
        k_set.require_known(n - 1)?;
    }
    let mut acc = CompensatedSum::new();
    for &(a, b) in &k_set.intervals {
        if a >= n {
            break;
        }
        for k in a..=b.min(n - 1) {
            acc.add(u.at(k));
        }
    }
    Ok(acc.value())
}

/// Sweeps `k = 0..max(grid)` once, returning `(a_u(n), a_u(K, n))` at each grid point.
fn mass_sweep(k_set: &IndexSet, u: &WeightSeq, grid: &[u64]) -> Result<Vec<(f64, f64)>> {
    check_grid(grid)?;
    let Some(&max) = grid.last() else {
        return Ok(Vec::new());
    };
    u.get(max)?;
    if max > 0 {
        k_set.require_known(max - 1)?;
    }
    let mut total = CompensatedSum::new();
    let mut inside = CompensatedSum::new();
    let mut out = Vec::with_capacity(grid.len());
    let mut iv = k_set.intervals.iter().peekable();
    let mut gi = 0;
    for k in 0..=max {
        while gi < grid.len() && grid[gi] == k {
            out.push((total.value(), inside.value()));
            gi += 1;
        }
        if k == max {
            break;
        }
        let x = u.at(k);
        total.add(x);
        while iv.peek().is_some_and(|&&(_, b)| b < k) {
            iv.next();
        }
        if iv.peek().is_some_and(|&&(a, _)| a <= k) {
            inside.add(x);
        }
    }
    Ok(out)
}

fn check_grid(grid: &[u64]) -> Result<()> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Profile of `a_u(K, n) / a_u(n)`.
pub fn smallness_profile(k_set: &IndexSet, u: &WeightSeq, grid: &[u64]) -> Result<ConvergenceProfile> {
    let values = mass_sweep(k_set, u, grid)?
        .into_iter()
        .zip(grid)
        .map(|((total, inside), &n)| {
            if total > 0.0 {
                Ok(inside / total)
            } else {
                Err(Error::DegenerateWeight(format!("a_u({n}) = 0")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ConvergenceProfile::new(format!("smallness[{}]", u.label()), grid.to_vec(), values)
}

/// Profile of the counting density `|K ∩ [1, n]| / n` (grid points `n >= 1`).
pub fn density_profile(k_set: &IndexSet, grid: &[u64]) -> Result<ConvergenceProfile> {
    check_grid(grid)?;
    if grid.first() == Some(&0) {
        return Err(Error::Config("density is defined for n >= 1".into()));
    }
    if let Some(&max) = grid.last() {
        k_set.require_known(max)?;
    }
    let values = grid.iter().map(|&n| k_set.count_in(1, n) as f64 / n as f64).collect();
    ConvergenceProfile::new("density", grid.to_vec(), values)
}

/// `K_ε = {n : |s_n - L| > ε}` for `s` indexed from `start`; non-finite
/// entries count as exceptional. The result is known on the materialized range.
pub fn exceptional_set(s: &[f64], start: u64, limit: f64, eps: f64) -> Result<IndexSet> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let set = IndexSet::from_indices(
        s.iter()
            .enumerate()
            .filter(|(_, &x)| !((x - limit).abs() <= eps))
            .map(|(i, _)| start + i as u64),
    );
    Ok(match (start + s.len() as u64).checked_sub(1) {
        Some(last) => set.known_up_to(last),
        None => set,
    })
}

/// Result of the diagonal construction over a nested family.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSet {
    pub set: IndexSet,
    /// Cut points `N_1 < N_2 < ...`.
    pub cuts: Vec<u64>,
    /// Horizon up to which the thresholds were certified.
    pub horizon: u64,
}

/// `K_∞ = ⋃_j K_j ∩ [N_j + 1, N_{j+1}]` with `N_j` the first index from which
/// `a_u(K_j, n)/a_u(n) < thresholds[j]` holds for every checked `n` up to the
/// horizon of `u`. The last set runs to the horizon.
pub fn diagonal_merge(sets: &[IndexSet], u: &WeightSeq, thresholds: &[f64]) -> Result<MergedSet> {
    if sets.len() != thresholds.len() {
        return Err(Error::Config("one threshold per set is required".into()));
    }
    let horizon = u.horizon();
    for (j, pair) in sets.windows(2).enumerate() {
        if !pair[0].is_subset_upto(&pair[1], horizon) {
            return Err(Error::Nesting { index: j + 1 });
        }
    }
    let grid: Vec<u64> = (1..=horizon).collect();
    let mut cuts: Vec<u64> = Vec::with_capacity(sets.len());
    for (j, (k_set, &thr)) in sets.iter().zip(thresholds).enumerate() {
        let sweep = mass_sweep(k_set, u, &grid)?;
        let ok = |&(total, inside): &(f64, f64)| total <= 0.0 || inside < thr * total;
        if !sweep.last().is_some_and(ok) {
            return Err(Error::Horizon { requested: horizon + 1, horizon });
        }
        // first N with the threshold met on all of [N, horizon]
        let tail_ok = sweep.iter().rev().take_while(|x| ok(x)).count() as u64;
        let mut cut = horizon + 1 - tail_ok;
        if j > 0 {
            cut = cut.max(cuts[j - 1] + 1);
        }
        cuts.push(cut);
    }
    let mut indices = Vec::new();
    for (j, k_set) in sets.iter().enumerate() {
        let lo = cuts[j] + 1;
        let hi = cuts.get(j + 1).copied().unwrap_or(horizon).min(horizon);
        for &(a, b) in &k_set.intervals {
            let (a, b) = (a.max(lo), b.min(hi));
            if a <= b {
                indices.extend(a..=b);
            }
        }
    }
    Ok(MergedSet { set: IndexSet::from_indices(indices).known_up_to(horizon), cuts, horizon })
}

/// `E_n = a_u(n)^{-1} Σ_{k<n} u_k |s_k - L|`.
pub fn strong_cesaro_error(s: &[f64], limit: f64, u: &WeightSeq, n: u64) -> Result<f64> {
    Ok(strong_cesaro_profile(s, limit, u, &[n])?.values[0])
}

/// `E_n` over a grid, one ascending sweep.
pub fn strong_cesaro_profile(s: &[f64], limit: f64, u: &WeightSeq, grid: &[u64]) -> Result<ConvergenceProfile> {
    check_grid(grid)?;
    let Some(&max) = grid.last() else {
        return ConvergenceProfile::new("strong-cesaro", Vec::new(), Vec::new());
    };
    u.get(max)?;
    if (s.len() as u64) < max {
        return Err(Error::Horizon { requested: max, horizon: s.len() as u64 });
    }
    let mut total = CompensatedSum::new();
    let mut dev = CompensatedSum::new();
    let mut values = Vec::with_capacity(grid.len());
    let mut gi = 0;
    for k in 0..=max {
        while gi < grid.len() && grid[gi] == k {
            let a = total.value();
            if a <= 0.0 {
                return Err(Error::DegenerateWeight(format!("a_u({k}) = 0")));
            }
            values.push(dev.value() / a);
            gi += 1;
        }
        if k == max {
            break;
        }
        let w = u.at(k);
        total.add(w);
        if w > 0.0 {
            dev.add(w * (s[k as usize] - limit).abs());
        }
    }
    ConvergenceProfile::new("strong-cesaro", grid.to_vec(), values)
}

/// `a_u(n)^{-1} Σ_{k<n} u_k s_k`.
pub fn weighted_cesaro_mean(s: &[f64], u: &WeightSeq, n: u64) -> Result<f64> {
    u.get(n)?;
    if (s.len() as u64) < n {
        return Err(Error::Horizon { requested: n, horizon: s.len() as u64 });
    }
    let a = u.partial_sum(n)?;
    if a <= 0.0 {
        return Err(Error::DegenerateWeight(format!("a_u({n}) = 0")));
    }
    let mut acc = CompensatedSum::new();
    for k in 0..n {
        let w = u.at(k);
        if w > 0.0 {
            acc.add(w * s[k as usize]);
        }
    }
    Ok(acc.value() / a)
}
