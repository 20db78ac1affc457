//! Piecewise-affine realization of a Markov shift on `[0, ∞)` and its
//! two-dimensional natural extension on `[0, ∞) × [0, 1]`.
//!
//! Cell `a_s` has length `π_s` and the cells are laid end to end in state
//! order. Inside `a_s`, subcell `a_{s,t}` has length `π_s p_{s,t}`, again in
//! target order, and `τ` maps it affinely onto `a_t`. The layout only covers
//! states up to a cutoff; rows leading past it, and jump mass lost to the
//! chain's own state cap, are left uncovered and reported as truncated mass.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::markov::{cylinder_measure, entry_budget, Chain, Cylinder};
use crate::numeric::Scalar;
use crate::report::Report;

/// Scalars stored per subcell (endpoints, slope, offset, slot base and width).
const SCALARS_PER_SUBCELL: usize = 6;

/// One piece `a_{s,t}` of the map, `τ(x) = slope · x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subcell<T> {
    pub source: u64,
    pub target: u64,
    pub lo: T,
    pub hi: T,
    /// `π_t / (π_s p_{s,t})`.
    pub slope: T,
    pub offset: T,
    /// Rounding bound on `lo` and `hi`; zero for exact layouts.
    pub error: f64,
}

/// The fibre slot that `a_{s,t}` occupies above `a_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<T> {
    pub source: u64,
    /// `q_{k-1}`.
    pub base: T,
    /// `π_s p_{s,t} / π_t`.
    pub width: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell<T> {
    pub state: u64,
    pub lo: T,
    pub hi: T,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout<T> {
    chain: Chain,
    cutoff: u64,
    cells: Vec<Cell<T>>,
    /// `subcells[s - 1]`, ordered by target.
    subcells: Vec<Vec<Subcell<T>>>,
    /// `fibres[t - 1]`, ordered by source.
    fibres: Vec<Vec<Slot<T>>>,
    truncated_mass: f64,
}

/// Lays out cells for states `1..=cutoff` (fewer if `π` vanishes earlier).
pub fn build_layout<T: Scalar>(c: &Chain, cutoff: u64) -> Result<Layout<T>> {
    if cutoff < 2 {
        return Err(Error::Config(format!("layout cutoff must be at least 2, got {cutoff}")));
    }
    let limit = entry_budget::<T>();
    let mut pis: Vec<T> = Vec::new();
    for s in 1..=cutoff {
        let p: T = c.pi(s)?;
        if p <= T::zero() {
            break;
        }
        pis.push(p);
        if 2 * pis.len() > limit {
            return Err(Error::Budget { entries: 2 * pis.len(), limit });
        }
    }
    let states = pis.len() as u64;
    let eps = f64::EPSILON;

    let mut cells = Vec::with_capacity(pis.len());
    let mut start = T::zero();
    for (i, pi) in pis.iter().enumerate() {
        let hi = start.clone() + pi.clone();
        let error = if T::is_exact() { 0.0 } else { (i + 1) as f64 * eps * hi.approx() };
        cells.push(Cell { state: i as u64 + 1, lo: start, hi: hi.clone(), error });
        start = hi;
    }

    let mut entries = 2 * cells.len();
    let mut subcells = Vec::with_capacity(cells.len());
    let mut fibres: Vec<Vec<Slot<T>>> = vec![Vec::new(); cells.len()];
    let mut truncated = 0.0;
    for cell in &cells {
        let s = cell.state;
        let pi_s = &pis[s as usize - 1];
        let mut row = c.row::<T>(s)?;
        row.retain(|(t, p)| *t <= states && *p > T::zero());
        row.sort_by_key(|(t, _)| *t);
        entries += SCALARS_PER_SUBCELL * row.len();
        if entries > limit {
            return Err(Error::Budget { entries, limit });
        }
        let mut pieces = Vec::with_capacity(row.len());
        let mut lo = cell.lo.clone();
        for (j, (t, p)) in row.into_iter().enumerate() {
            let mass = pi_s.clone() * p;
            let hi = lo.clone() + mass.clone();
            let pi_t = &pis[t as usize - 1];
            let slope = pi_t.clone() / mass.clone();
            let offset = cells[t as usize - 1].lo.clone() - slope.clone() * lo.clone();
            let error = if T::is_exact() { 0.0 } else { cell.error + (j + 1) as f64 * eps * hi.approx() };
            fibres[t as usize - 1].push(Slot { source: s, base: T::zero(), width: mass / pi_t.clone() });
            pieces.push(Subcell { source: s, target: t, lo, hi: hi.clone(), slope, offset, error });
            lo = hi;
        }
        truncated += (cell.hi.clone() - lo).approx().max(0.0);
        subcells.push(pieces);
    }
    // sources were visited in increasing order, so each fibre is sorted
    for fibre in &mut fibres {
        let mut q = T::zero();
        for slot in fibre.iter_mut() {
            slot.base = q.clone();
            q = q + slot.width.clone();
        }
    }
    Ok(Layout { chain: c.clone(), cutoff, cells, subcells, fibres, truncated_mass: truncated })
}

impl<T: Scalar> Layout<T> {
    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn cutoff(&self) -> u64 {
        self.cutoff
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn cell(&self, s: u64) -> Option<&Cell<T>> {
        self.cells.get((s as usize).checked_sub(1)?)
    }

    pub fn subcells(&self, s: u64) -> &[Subcell<T>] {
        (s as usize).checked_sub(1).and_then(|i| self.subcells.get(i)).map_or(&[], Vec::as_slice)
    }

    /// Fibre slots above `a_t`.
    pub fn fibre(&self, t: u64) -> &[Slot<T>] {
        (t as usize).checked_sub(1).and_then(|i| self.fibres.get(i)).map_or(&[], Vec::as_slice)
    }

    /// Length of the part of the laid-out cells on which `τ` is undefined.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    /// Right end of the last cell.
    pub fn end(&self) -> T {
        self.cells.last().map_or_else(T::zero, |c| c.hi.clone())
    }

    /// The state `s` with `x` in the open interval `a_s`.
    pub fn state_of(&self, x: &T) -> Result<u64> {
        let i = self.cells.partition_point(|c| c.lo <= *x);
        let cell = i.checked_sub(1).map(|i| &self.cells[i]).ok_or_else(|| domain(x))?;
        if *x > cell.lo && *x < cell.hi {
            Ok(cell.state)
        } else {
            Err(domain(x))
        }
    }

    /// The subcell whose open interior contains `x`.
    pub fn subcell_of(&self, x: &T) -> Result<&Subcell<T>> {
        let pieces = self.subcells(self.state_of(x)?);
        let i = pieces.partition_point(|p| p.lo <= *x);
        let piece = i.checked_sub(1).map(|i| &pieces[i]).ok_or_else(|| domain(x))?;
        if *x > piece.lo && *x < piece.hi {
            Ok(piece)
        } else {
            Err(domain(x))
        }
    }

    pub fn to_json(&self) -> Value {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|c| json!({"state": c.state, "lo": scalar_json(&c.lo), "hi": scalar_json(&c.hi), "error": c.error}))
            .collect();
        let subcells: Vec<Value> = self
            .subcells
            .iter()
            .flatten()
            .map(|p| {
                json!({
                    "source": p.source,
                    "target": p.target,
                    "lo": scalar_json(&p.lo),
                    "hi": scalar_json(&p.hi),
                    "slope": scalar_json(&p.slope),
                    "offset": scalar_json(&p.offset),
                    "error": p.error,
                })
            })
            .collect();
        json!({
            "chain": self.chain.to_json(),
            "cutoff": self.cutoff,
            "exact": T::is_exact(),
            "truncated_mass": self.truncated_mass,
            "cells": cells,
            "subcells": subcells,
        })
    }
}

fn domain<T: Scalar>(x: &T) -> Error {
    Error::Domain(x.render())
}

fn scalar_json<T: Scalar>(x: &T) -> Value {
    if T::is_exact() {
        Value::String(x.render())
    } else {
        json!(x.approx())
    }
}

/// `τ(x)`; boundary points and points of the truncated region are rejected.
pub fn tau_eval<T: Scalar>(layout: &Layout<T>, x: &T) -> Result<T> {
    let piece = layout.subcell_of(x)?;
    Ok(piece.slope.clone() * x.clone() + piece.offset.clone())
}

/// `T(x, y) = (τx, F_{τx, α(x)}(y))`.
pub fn natext_eval<T: Scalar>(layout: &Layout<T>, x: &T, y: &T) -> Result<(T, T)> {
    if *y < T::zero() || *y > T::one() {
        return Err(Error::Domain(format!("fibre coordinate {} outside [0, 1]", y.render())));
    }
    let piece = layout.subcell_of(x)?;
    let tx = piece.slope.clone() * x.clone() + piece.offset.clone();
    let slot = layout
        .fibre(piece.target)
        .iter()
        .find(|s| s.source == piece.source)
        .ok_or_else(|| domain(x))?;
    Ok((tx, slot.width.clone() * y.clone() + slot.base.clone()))
}

/// `(α(x), α(τx), …, α(τ^{n-1}x))`.
pub fn itinerary<T: Scalar>(layout: &Layout<T>, x: &T, n: usize) -> Result<Vec<u64>> {
    let mut word = Vec::with_capacity(n);
    let mut x = x.clone();
    for step in 0..n {
        let fail = |e: Error| Error::OrbitDomain { step, reason: e.to_string() };
        word.push(layout.state_of(&x).map_err(fail)?);
        if step + 1 < n {
            x = tau_eval(layout, &x).map_err(fail)?;
        }
    }
    Ok(word)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitPoint<T> {
    pub step: usize,
    pub x: T,
    pub y: T,
    pub state: u64,
}

/// The first `n + 1` points of the orbit of `(x, y)` under the natural extension.
pub fn orbit<T: Scalar>(layout: &Layout<T>, x: &T, y: &T, n: usize) -> Result<Vec<OrbitPoint<T>>> {
    let mut out = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (x.clone(), y.clone());
    for step in 0..=n {
        let fail = |e: Error| Error::OrbitDomain { step, reason: e.to_string() };
        let state = layout.state_of(&x).map_err(fail)?;
        out.push(OrbitPoint { step, x: x.clone(), y: y.clone(), state });
        if step < n {
            (x, y) = natext_eval(layout, &x, &y).map_err(fail)?;
        }
    }
    Ok(out)
}

pub fn orbit_csv<T: Scalar>(points: &[OrbitPoint<T>]) -> String {
    let mut out = String::from("step,x,y,state\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.step, p.x.render(), p.y.render(), p.state));
    }
    out
}

/// Compares `λ(τ^{-1} I)` with `λ(I)` for `I = [lo, hi]`.
///
/// The preimage of `I ∩ a_t` is the union of the subcells `a_{s,t}`, each
/// contributing `(π_s p_{s,t} / π_t) λ(I ∩ a_t)`. Sources beyond the cutoff
/// are taken from the chain, since the full layout contains them; jumps
/// dropped by a renewal shift's state cap are not.
pub fn measure_preservation_test<T: Scalar>(layout: &Layout<T>, lo: &T, hi: &T, tol: f64) -> Result<Report> {
    if lo >= hi || *lo < T::zero() {
        return Err(Error::Config(format!("bad interval [{}, {}]", lo.render(), hi.render())));
    }
    let mut report = Report::new("measure-preservation", layout.chain.label(), layout.cutoff);
    let end = layout.end();
    let hi = if *hi > end {
        report.note(format!("interval clipped to the layout end {}", end.render()));
        end
    } else {
        hi.clone()
    };
    let mut lambda = T::zero();
    let mut preimage = T::zero();
    for cell in &layout.cells {
        let a = if cell.lo > *lo { cell.lo.clone() } else { lo.clone() };
        let b = if cell.hi < hi { cell.hi.clone() } else { hi.clone() };
        if a >= b {
            continue;
        }
        let overlap = b - a;
        let t = cell.state;
        let pi_t: T = layout.chain.pi(t)?;
        let mut weight = T::zero();
        for (s, p) in covered_predecessors::<T>(&layout.chain, t)? {
            weight = weight + layout.chain.pi::<T>(s)? * p / pi_t.clone();
        }
        lambda = lambda + overlap.clone();
        preimage = preimage + weight * overlap;
    }
    let discrepancy = (preimage.clone() - lambda.clone()).abs_val();
    let bound = tol + layout.truncated_mass;
    report.truncation_bound = layout.truncated_mass;
    report.set("interval", [lo.render(), hi.render()]);
    report.set("lambda", lambda.render());
    report.set("preimage", preimage.render());
    report.set("discrepancy", discrepancy.render());
    report.set("discrepancy_approx", discrepancy.approx());
    report.set("exact", T::is_exact());
    report.check("discrepancy-bounded", discrepancy.approx() <= bound, format!("{} vs {bound:e}", discrepancy.render()));
    report.verdict = if discrepancy.is_zero() {
        "measure preserved exactly".into()
    } else {
        format!("discrepancy {:e}", discrepancy.approx())
    };
    Ok(report)
}

fn covered_predecessors<T: Scalar>(c: &Chain, t: u64) -> Result<Vec<(u64, T)>> {
    let mut preds = c.predecessors::<T>(t)?;
    if let Chain::RenewalShift { cap, .. } = c {
        preds.retain(|(s, _)| *s != 1 || t <= *cap);
    }
    Ok(preds)
}

/// Samples `x` uniformly from the first `cells` cells, reads words of length
/// `word_len` off the orbit, and compares each word's frequency with
/// `m([w]_0) / λ(a_1 ∪ … ∪ a_cells)` in standard errors.
pub fn frequency_report(layout: &Layout<f64>, cells: u64, word_len: usize, samples: u64, seed: u64) -> Result<Report> {
    const CHUNK: u64 = 1 << 16;
    let region = layout
        .cell(cells)
        .ok_or_else(|| Error::Config(format!("layout has no cell {cells}")))?
        .hi;
    let chunks = samples.div_ceil(CHUNK);
    let tallies: Vec<(BTreeMap<Vec<u64>, u64>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let count = CHUNK.min(samples - chunk * CHUNK);
            let mut words = BTreeMap::new();
            let mut rejected = 0;
            for _ in 0..count {
                let x = region * rng.gen::<f64>();
                match itinerary(layout, &x, word_len) {
                    Ok(w) => *words.entry(w).or_insert(0) += 1,
                    Err(_) => rejected += 1,
                }
            }
            (words, rejected)
        })
        .collect();
    let mut words: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let mut rejected = 0;
    for (w, r) in tallies {
        rejected += r;
        for (k, v) in w {
            *words.entry(k).or_insert(0) += v;
        }
    }

    let mut report = Report::new("itinerary-frequencies", layout.chain.label(), word_len as u64);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut mass = 0.0;
    for (w, &count) in &words {
        let m: f64 = cylinder_measure(&layout.chain, &Cylinder::new(w.clone(), 0)?)?;
        let p = m / region;
        mass += p;
        let freq = count as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        let z = if se > 0.0 { (freq - p).abs() / se } else if freq == p { 0.0 } else { f64::INFINITY };
        worst = worst.max(z);
        rows.push(json!({"word": w, "count": count, "frequency": freq, "expected": p, "z": z}));
    }
    report.truncation_bound = layout.truncated_mass;
    report.set("samples", samples);
    report.set("seed", seed);
    report.set("region", region);
    report.set("rejected", rejected);
    report.set("observed_mass", mass);
    report.set("max_z", worst);
    report.set("words", rows);
    report.check("within-3-se", worst <= 3.0, format!("max |z| = {worst:.3} over {} words", words.len()));
    // rejected samples against the mass of every word never observed
    let rest = (1.0 - mass).max(0.0);
    let rest_freq = rejected as f64 / samples as f64;
    let rest_se = (rest * (1.0 - rest) / samples as f64).sqrt();
    let rest_z = if rest_se > 0.0 { (rest_freq - rest).abs() / rest_se } else if rejected == 0 { 0.0 } else { f64::INFINITY };
    report.set("remainder_z", rest_z);
    report.check(
        "remainder-within-3-se",
        rest_z <= 3.0,
        format!("{rejected} rejected samples vs unobserved mass {rest:e} (|z| = {rest_z:.3})"),
    );
    report.verdict = format!("max deviation {worst:.3} standard errors");
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{parse_rational, Rational};
    use crate::renewal::LifetimeDist;

    fn q(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn geo() -> Chain {
        Chain::renewal_shift(LifetimeDist::geometric(q("1/2")).unwrap()).unwrap()
    }

    fn dirac() -> Chain {
        Chain::renewal_shift(LifetimeDist::dirac(1).unwrap()).unwrap()
    }

    #[test]
    fn geometric_cells() {
        let l = build_layout::<Rational>(&geo(), 20).unwrap();
        assert_eq!(l.cells().len(), 20);
        assert_eq!((l.cells()[0].lo.clone(), l.cells()[0].hi.clone()), (q("0"), q("1")));
        assert_eq!((l.cells()[1].lo.clone(), l.cells()[1].hi.clone()), (q("1"), q("3/2")));
        // the jump out of a_1 to targets past 20 is uncovered: 2^-20
        assert_eq!(l.truncated_mass(), 2f64.powi(-20));
    }

    #[test]
    fn hopf_cells_have_unit_length() {
        let l = build_layout::<Rational>(&Chain::hopf(), 50).unwrap();
        assert!(l.cells().iter().all(|c| c.hi.clone() - c.lo.clone() == q("1")));
        assert_eq!(l.truncated_mass(), 0.5);
    }

    #[test]
    fn dirac_is_the_identity() {
        let l = build_layout::<Rational>(&dirac(), 10).unwrap();
        assert_eq!(l.cells().len(), 1);
        let x = q("3/7");
        assert_eq!(tau_eval(&l, &x).unwrap(), x);
        assert_eq!(natext_eval(&l, &x, &q("2/9")).unwrap(), (x.clone(), q("2/9")));
        assert_eq!(itinerary(&l, &x, 5).unwrap(), vec![1; 5]);
    }

    #[test]
    fn tau_on_subcell_midpoints() {
        let l = build_layout::<Rational>(&Chain::hopf(), 10).unwrap();
        let piece = l.subcells(2).iter().find(|p| p.target == 1).unwrap();
        assert_eq!(piece.slope, q("2"));
        let mid = (piece.lo.clone() + piece.hi.clone()) / q("2");
        assert_eq!(tau_eval(&l, &mid).unwrap(), q("1/2"));

        let l = build_layout::<Rational>(&geo(), 20).unwrap();
        let piece = &l.subcells(2)[0];
        assert_eq!((piece.target, piece.slope.clone()), (1, q("2")));
        let mid = (piece.lo.clone() + piece.hi.clone()) / q("2");
        assert_eq!(tau_eval(&l, &mid).unwrap(), q("1/2"));
        assert_eq!(itinerary(&l, &mid, 2).unwrap(), vec![2, 1]);
    }

    #[test]
    fn boundaries_are_rejected() {
        let l = build_layout::<Rational>(&Chain::hopf(), 10).unwrap();
        for x in ["0", "1", "1/2", "10", "11"] {
            assert!(matches!(tau_eval(&l, &q(x)), Err(Error::Domain(_))), "{x}");
        }
        // a_{10,11} is outside the layout
        assert!(tau_eval(&l, &q("39/4")).is_err());
        assert!(matches!(itinerary(&l, &q("35/4"), 4), Err(Error::OrbitDomain { step: 1, .. })));
    }

    #[test]
    fn fibre_slots() {
        let l = build_layout::<Rational>(&Chain::hopf(), 10).unwrap();
        let (_, y) = natext_eval(&l, &q("1/4"), &q("0")).unwrap();
        assert_eq!(y, q("0"));
        let g = build_layout::<Rational>(&geo(), 20).unwrap();
        for t in 1..20 {
            let total = g.fibre(t).iter().fold(q("0"), |acc, s| acc + s.width.clone());
            assert_eq!(total, q("1"), "t = {t}");
        }
    }

    #[test]
    fn slope_times_length_is_target_length() {
        let l = build_layout::<Rational>(&geo(), 20).unwrap();
        for s in 1..=20 {
            for p in l.subcells(s) {
                let image = p.slope.clone() * (p.hi.clone() - p.lo.clone());
                let cell = l.cell(p.target).unwrap();
                assert_eq!(image, cell.hi.clone() - cell.lo.clone());
                assert_eq!(p.slope.clone() * p.lo.clone() + p.offset.clone(), cell.lo);
            }
        }
    }

    #[test]
    fn measure_preservation_examples() {
        let h = build_layout::<Rational>(&Chain::hopf(), 50).unwrap();
        let rep = measure_preservation_test(&h, &q("0"), &q("1"), 0.0).unwrap();
        assert_eq!(rep.values["discrepancy"], json!("0"));
        let g = build_layout::<f64>(&geo(), 20).unwrap();
        let rep = measure_preservation_test(&g, &1.0, &1.25, 0.0).unwrap();
        assert!(rep.get_f64("discrepancy_approx").unwrap() <= 1e-12);
        let d = build_layout::<Rational>(&dirac(), 5).unwrap();
        let rep = measure_preservation_test(&d, &q("1/3"), &q("1/2"), 0.0).unwrap();
        assert_eq!(rep.values["discrepancy"], json!("0"));
    }

    #[test]
    fn orbit_csv_format() {
        let l = build_layout::<Rational>(&Chain::hopf(), 10).unwrap();
        let pts = orbit(&l, &q("1/3"), &q("1/2"), 2).unwrap();
        let csv = orbit_csv(&pts);
        assert!(csv.starts_with("step,x,y,state\n0,1/3,1/2,1\n1,2/3,1/4,1\n"), "{csv}");
    }

    #[test]
    fn cutoff_below_two_is_rejected() {
        assert!(matches!(build_layout::<f64>(&Chain::hopf(), 1), Err(Error::Config(_))));
    }

    #[test]
    fn frequencies_are_seeded_and_consistent() {
        let l = build_layout::<f64>(&geo(), 20).unwrap();
        let a = frequency_report(&l, 3, 2, 100_000, 7).unwrap();
        let b = frequency_report(&l, 3, 2, 100_000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.all_passed(), "{:?}", a.checks);
        let counted: u64 = a.values["words"].as_array().unwrap().iter().map(|w| w["count"].as_u64().unwrap()).sum();
        assert_eq!(counted + a.values["rejected"].as_u64().unwrap(), 100_000);
    }
}
