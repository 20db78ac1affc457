//! Dispatch from `(command, op)` to the core diagnostics.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use ratmix_core::affine::{
    build_layout, frequency_report, itinerary, measure_preservation_test, natext_eval, orbit, orbit_csv, tau_eval,
};
use ratmix_core::indexsets::{density_profile, smallness_profile, IndexSet, SetRule};
use ratmix_core::markov::{
    last_exit_residuals, nstep_row, occupation_sequence, ratio_limit_report, taboo_column, Chain, Cylinder, RatioPair,
};
use ratmix_core::mixing::{density_report, gl_ratio_profile, gl_report, krickeberg_profile, return_sequence, rwm_report};
use ratmix_core::numeric::{format_rational, parse_rational, Rational, Scalar};
use ratmix_core::renewal::{
    aperiodicity, dyson_construct, family, kaluza_ratio, kaluza_ratio_gap, lifetime_from_renewal, met_fourier_profile,
    prop83_report, renewal_from_lifetime, renewal_from_lifetime_exact, srlp_profile, tail_and_moment, Family,
    LifetimeDist, RenewalSeq,
};
use ratmix_core::report::{log_grid, ConvergenceProfile, Report};
use ratmix_core::weights::{
    partial_sums, rv_index_estimate, smoothness_profile, subsample_bound, WeightRule, WeightSeq,
};
use ratmix_core::{Error, Result};

use crate::spec::{ExperimentSpec, Mode};

/// Largest horizon accepted in rational mode.
pub const RATIONAL_HORIZON_LIMIT: u64 = 512;

/// A file written next to the report, named `<step>.<suffix>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub suffix: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    fn report(report: Report) -> Self {
        Self { report, artifacts: Vec::new() }
    }

    fn with(mut self, suffix: &str, content: String) -> Self {
        self.artifacts.push(Artifact { suffix: suffix.into(), content });
        self
    }
}

pub fn execute(spec: &ExperimentSpec) -> Result<Outcome> {
    let cx = Cx { spec };
    match spec.command.as_str() {
        "weights" => weights(&cx),
        "sets" => sets(&cx),
        "renewal" => renewal(&cx),
        "chain" => chain(&cx),
        "mixing" => mixing(&cx),
        "affine" => affine(&cx),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

struct Cx<'a> {
    spec: &'a ExperimentSpec,
}

impl Cx<'_> {
    fn input(&self, key: &str) -> Option<&str> {
        self.spec.inputs.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.input(key)
            .ok_or_else(|| Error::Config(format!("{} needs the input '{key}'", self.spec)))
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.input(key) {
            None => Ok(default),
            Some(text) => text
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse input {key} = '{text}'"))),
        }
    }

    fn horizon(&self) -> Result<u64> {
        let n = self
            .spec
            .horizon
            .ok_or_else(|| Error::Config(format!("{} needs a horizon (--N)", self.spec)))?;
        if self.exact() && n > RATIONAL_HORIZON_LIMIT {
            return Err(Error::Config(format!(
                "rational mode is limited to N <= {RATIONAL_HORIZON_LIMIT}, got {n}"
            )));
        }
        Ok(n)
    }

    fn horizon_or(&self, default: u64) -> Result<u64> {
        match self.spec.horizon {
            Some(_) => self.horizon(),
            None => Ok(default),
        }
    }

    fn grid(&self, from: u64, to: u64) -> Result<Vec<u64>> {
        Ok(self.spec.grid_rule()?.build(from, to))
    }

    fn exact(&self) -> bool {
        self.spec.mode == Mode::Rational
    }

    fn float_only(&self) -> Result<()> {
        if self.exact() {
            Err(Error::Config(format!("{} has no rational mode", self.spec)))
        } else {
            Ok(())
        }
    }

    fn tol_or(&self, default: f64) -> f64 {
        self.spec.tol.unwrap_or(default)
    }

    fn lifetime(&self) -> Result<Family> {
        if let Some(text) = self.input("lifetime") {
            return Ok(Family::Lifetime(match text.strip_prefix("json:") {
                Some(path) => LifetimeDist::from_json(&read_json(path)?)?,
                None => text.parse()?,
            }));
        }
        let name = self.require("family")?;
        let params: Vec<String> = self
            .input("params")
            .map(|p| p.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        family(name, &params)
    }

    fn proper_lifetime(&self) -> Result<LifetimeDist> {
        match self.lifetime()? {
            Family::Lifetime(f) => Ok(f),
            Family::Renewal(rule) => Err(Error::Config(format!("{} is given as a renewal sequence, not a lifetime", rule.name()))),
        }
    }

    fn chain(&self) -> Result<Chain> {
        let text = self.input("chain").or_else(|| self.input("kind")).ok_or_else(|| {
            Error::Config(format!("{} needs the input 'chain' (or 'kind')", self.spec))
        })?;
        match text.strip_prefix("json:") {
            Some(path) => Chain::from_json(&read_json(path)?),
            None => text.parse(),
        }
    }

    fn state(&self, key: &str, default: u64) -> Result<u64> {
        let s = self.parse(key, default)?;
        if s == 0 {
            return Err(Error::Config(format!("{key}: states are numbered from 1")));
        }
        Ok(s)
    }

    fn cylinder(&self, key: &str, default: &str) -> Result<Cylinder> {
        self.input(key).unwrap_or(default).parse()
    }

    /// A weight named by `text`: a rule name, `csv:<path>`,
    /// `renewal:<lifetime>` or `occupation:<state>` (needs a chain).
    fn weight(&self, text: &str, horizon: u64, chain: Option<&Chain>) -> Result<WeightSeq> {
        if let Some(path) = text.strip_prefix("csv:") {
            let body = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
            return WeightSeq::from_csv(path, &body);
        }
        if let Some(f) = text.strip_prefix("renewal:") {
            return Ok(renewal_from_lifetime(&f.parse()?, horizon)?.weights().clone());
        }
        if let Some(s) = text.strip_prefix("occupation:") {
            let c = chain.ok_or_else(|| Error::Config("an occupation weight needs a chain".into()))?;
            let s: u64 = s.parse().map_err(|_| Error::Config(format!("bad state in '{text}'")))?;
            return Ok(occupation_sequence(c, s, horizon)?.weight);
        }
        Ok(WeightSeq::lazy(text.parse::<WeightRule>()?, horizon))
    }

    fn weight_input(&self, default: &str, horizon: u64, chain: Option<&Chain>) -> Result<WeightSeq> {
        self.weight(self.input("weight").unwrap_or(default), horizon, chain)
    }
}

fn read_json(path: &str) -> Result<Value> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
    serde_json::from_str(&body).map_err(|e| Error::Config(format!("{path}: {e}")))
}

fn unknown_op(cx: &Cx) -> Error {
    Error::Config(format!("unknown op '{}' for '{}'", cx.spec.op, cx.spec.command))
}

// ---------------------------------------------------------------- weights

fn weights(cx: &Cx) -> Result<Outcome> {
    cx.float_only()?;
    let n = cx.horizon()?;
    match cx.spec.op.as_str() {
        "smoothness" => {
            let u = cx.weight_input("harmonic", n + 1, None)?;
            let prof = smoothness_profile(&u, &cx.grid(1, n)?)?;
            let mut r = Report::new("smoothness", u.label(), n);
            let last = prof.last().map_or(f64::NAN, |(_, v)| v);
            r.set("sigma", last);
            r.set("decreasing_last_two", prof.decreasing_tail(2));
            r.set("last_decade_slope", prof.last_decade_slope());
            if let Some(tol) = cx.spec.tol {
                r.check("sigma-below-tol", last < tol, format!("sigma_u({n}) = {last:e} vs {tol:e}"));
            }
            r.verdict = format!("sigma_u({n}) = {last:e}");
            r.profiles.push(prof);
            Ok(Outcome::report(r))
        }
        "rv-index" => {
            let u = cx.weight_input("harmonic", n, None)?;
            let est = rv_index_estimate(&u, &log_grid((n / 100).max(1), n, 30))?;
            let mut r = Report::new("rv-index", u.label(), n);
            r.set("index", est.index);
            r.set("intercept", est.intercept);
            r.set("residual", est.residual);
            r.set("points", est.points);
            r.verdict = format!("index {:.4}", est.index);
            Ok(Outcome::report(r))
        }
        "partial-sums" => {
            let u = cx.weight_input("harmonic", n, None)?;
            let grid = cx.grid(1, n)?;
            let values = grid.iter().map(|&m| partial_sums(&u, m)).collect::<Result<Vec<_>>>()?;
            let mut r = Report::new("partial-sums", u.label(), n);
            r.set("a_N", values.last().copied());
            r.verdict = format!("a_u({n}) = {:e}", values.last().copied().unwrap_or(0.0));
            r.profiles.push(ConvergenceProfile::new("a_u(n)", grid, values)?);
            Ok(Outcome::report(r))
        }
        "subsample" => {
            let p: u64 = cx.parse("p", 2)?;
            if p == 0 {
                return Err(Error::Config("p must be positive".into()));
            }
            let u = cx.weight_input("harmonic", n, None)?;
            let grid = cx.grid(1, n / p)?;
            let bounds = grid.iter().map(|&m| subsample_bound(&u, p, m)).collect::<Result<Vec<_>>>()?;
            let mut r = Report::new("subsample", u.label(), n);
            let failures: Vec<u64> = bounds.iter().filter(|b| !b.holds()).map(|b| b.n).collect();
            r.check("inequality-holds", failures.is_empty(), format!("failures at n = {failures:?}"));
            r.set("p", p);
            r.set("bounds", &bounds);
            r.verdict = if failures.is_empty() { "inequality holds on the grid".into() } else { "inequality violated".into() };
            Ok(Outcome::report(r))
        }
        "values" => {
            let u = cx.weight_input("harmonic", n, None)?.materialize();
            let mut r = Report::new("values", u.label(), n);
            r.set("sup", u.sup());
            r.verdict = "values written".into();
            Ok(Outcome::report(r).with("weight.csv", u.to_csv()))
        }
        _ => Err(unknown_op(cx)),
    }
}

// ---------------------------------------------------------------- sets

fn set_input(cx: &Cx, bound: u64) -> Result<IndexSet> {
    let text = cx.require("set")?;
    if let Some(path) = text.strip_prefix("json:") {
        return IndexSet::from_json(&read_json(path)?);
    }
    Ok(IndexSet::generated(text.parse::<SetRule>()?, bound))
}

fn sets(cx: &Cx) -> Result<Outcome> {
    cx.float_only()?;
    match cx.spec.op.as_str() {
        "smallness" => {
            let n = cx.horizon()?;
            let k = set_input(cx, n)?;
            let u = cx.weight_input("harmonic", n, None)?;
            let grid = cx.grid(1, n)?;
            let small = smallness_profile(&k, &u, &grid)?;
            let dens = density_profile(&k, &grid)?;
            let s = small.last().map_or(f64::NAN, |(_, v)| v);
            let d = dens.last().map_or(f64::NAN, |(_, v)| v);
            let mut r = Report::new("smallness", format!("{} / {}", cx.require("set")?, u.label()), n);
            r.set("smallness", s);
            r.set("density", d);
            r.set("count", k.len_upto(n));
            if let Some(tol) = cx.spec.tol {
                r.check("small-at-horizon", s <= tol, format!("a_u(K,{n})/a_u({n}) = {s:e} vs {tol:e}"));
            }
            r.verdict = format!("smallness {s:.6}, density {d:.6}");
            r.profiles.push(ConvergenceProfile { label: "smallness".into(), ..small });
            r.profiles.push(ConvergenceProfile { label: "density".into(), ..dens });
            Ok(Outcome::report(r))
        }
        "counterexample" => {
            let n = cx.horizon_or(1 << 25)?;
            let at = cx.parse("density-at", 262_144u64)?;
            let k = IndexSet::generated(SetRule::Counterexample, n);
            let u = WeightSeq::lazy(WeightRule::Harmonic, n);
            let s = smallness_profile(&k, &u, &[n])?.values[0];
            let count = k.count_in(1, at);
            let d = count as f64 / at as f64;
            let mut r = Report::new("counterexample", "harmonic", n);
            r.set("smallness", s);
            r.set("density_at", at);
            r.set("count", count);
            r.set("density", d);
            r.set("intervals", k.intervals());
            r.check("u-small", s <= 0.2, format!("a_u(K,{n})/a_u({n}) = {s:.6} <= 0.2"));
            r.check("dense", d >= 0.75, format!("|K ∩ [1,{at}]|/{at} = {count}/{at} = {d:.6} >= 0.75"));
            r.verdict = "small but not of zero density".into();
            Ok(Outcome::report(r))
        }
        _ => Err(unknown_op(cx)),
    }
}

// ---------------------------------------------------------------- renewal

fn renewal_seq(cx: &Cx, n: u64) -> Result<RenewalSeq> {
    match cx.lifetime()? {
        Family::Lifetime(f) if cx.exact() => renewal_from_lifetime_exact(&f, n),
        Family::Lifetime(f) => renewal_from_lifetime(&f, n),
        Family::Renewal(rule) => {
            cx.float_only()?;
            RenewalSeq::from_rule(rule, n)
        }
    }
}

fn renewal(cx: &Cx) -> Result<Outcome> {
    match cx.spec.op.as_str() {
        "sequence" => {
            let n = cx.horizon()?;
            let u = renewal_seq(cx, n)?;
            let mut r = Report::new("renewal-sequence", u.weights().label(), n);
            if let ratmix_core::renewal::RenewalSource::Lifetime(f) = u.source() {
                r.truncation_bound = f.tail(n + 1);
            }
            r.set("u_N", u.get(n)?);
            r.set("period", aperiodicity(&u).ok());
            r.verdict = format!("u_{n} = {:e}", u.get(n)?);
            let csv = match u.exact() {
                Some(ex) => {
                    let mut out = String::from("n,u\n");
                    for (i, x) in ex.iter().enumerate() {
                        out.push_str(&format!("{i},{}\n", format_rational(x)));
                    }
                    out
                }
                None => u.to_csv(),
            };
            Ok(Outcome::report(r).with("u.csv", csv))
        }
        "prop83" => {
            cx.float_only()?;
            let f = cx.proper_lifetime()?;
            Ok(Outcome::report(prop83_report(&f, cx.horizon()?, cx.tol_or(0.05))?))
        }
        "srlp" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let u = renewal_seq(cx, n + 1)?;
            let s = srlp_profile(&u, &cx.grid(1, n)?)?;
            let mut r = Report::new("srlp", u.weights().label(), n);
            let last = s.profile.last().map_or(f64::NAN, |(_, v)| v);
            r.set("ratio_at_horizon", last);
            r.set("surrogates", &s.surrogates);
            r.verdict = format!("u_(N+1)/u_N = {last:.8}");
            r.profiles.push(s.profile);
            Ok(Outcome::report(r))
        }
        "dyson" => {
            cx.float_only()?;
            let f = cx.proper_lifetime()?;
            let eps = cx.parse("eps", 0.1)?;
            let k = cx.parse("k", 10u64)?;
            let max_len = cx.parse("max-len", 1u64 << 20)?;
            let out = dyson_construct(&f, eps, k, max_len)?;
            let g = serde_json::to_string_pretty(&out.g.to_json()).unwrap_or_default() + "\n";
            Ok(Outcome::report(out.report).with("g.json", g))
        }
        "met" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let u = match cx.input("weight") {
                Some(w) => cx.weight(w, n, None)?,
                None => renewal_seq(cx, n)?.weights().clone(),
            };
            let thetas: Vec<f64> = match cx.input("theta") {
                Some(t) => t
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad theta '{x}'"))))
                    .collect::<Result<_>>()?,
                None => (1..=9).map(|i| i as f64 / 10.0).collect(),
            };
            let grid = cx.grid(1, n)?;
            let profiles = thetas
                .par_iter()
                .map(|&t| met_fourier_profile(&u, t, &grid))
                .collect::<Result<Vec<_>>>()?;
            let mut r = Report::new("met", u.label(), n);
            let worst = profiles.iter().filter_map(|p| p.last()).map(|(_, v)| v).fold(0.0, f64::max);
            r.set("thetas", &thetas);
            r.set("max_abs_T_at_horizon", worst);
            if let Some(tol) = cx.spec.tol {
                r.check("below-tol", worst <= tol, format!("max |T_N| = {worst:e}"));
            }
            r.verdict = format!("max over theta of |T_{n}| = {worst:e}");
            r.profiles = profiles;
            Ok(Outcome::report(r))
        }
        "gl" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let f = cx.proper_lifetime()?;
            let gamma = match (cx.input("gamma"), &f) {
                (Some(g), _) => g.parse().map_err(|_| Error::Config(format!("bad gamma '{g}'")))?,
                (None, LifetimeDist::Pareto(g)) => *g,
                (None, _) => return Err(Error::Config("gl needs 'gamma' unless the lifetime is pareto".into())),
            };
            let u = renewal_from_lifetime(&f, n)?;
            Ok(Outcome::report(gl_report(u.weights(), gamma, n, cx.tol_or(0.05))?))
        }
        "kaluza" => {
            cx.float_only()?;
            let n = cx.horizon_or(1_000_000)?;
            let failures: Vec<u64> = (0..n)
                .into_par_iter()
                .filter(|&m| !(kaluza_ratio_gap(m) > 0.0 && kaluza_ratio(m) < 1.0))
                .collect();
            let mut r = Report::new("kaluza", "kaluza-log", n);
            r.set("failures", failures.len());
            r.set("first_failures", &failures[..failures.len().min(10)]);
            r.check(
                "ratio-strictly-increasing",
                failures.is_empty(),
                format!("{} failures for n < {n}", failures.len()),
            );
            r.verdict = if failures.is_empty() { "Kaluza property holds on the range".into() } else { "Kaluza property violated".into() };
            Ok(Outcome::report(r))
        }
        "tail" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let f = cx.proper_lifetime()?;
            let grid = cx.grid(1, n)?;
            let (ls, vs): (Vec<f64>, Vec<f64>) = grid
                .iter()
                .map(|&m| {
                    let (l, v) = tail_and_moment(&f, m);
                    (l / (m as f64).sqrt(), v)
                })
                .unzip();
            let mut r = Report::new("tail", f.label(), n);
            r.set("L_over_sqrt_n", ls.last().copied());
            r.set("V", vs.last().copied());
            r.truncation_bound = f.tail(n + 1);
            r.verdict = format!("L(N)/sqrt(N) = {:e}", ls.last().copied().unwrap_or(f64::NAN));
            r.profiles.push(ConvergenceProfile::new("L(n)/sqrt(n)", grid.clone(), ls)?);
            r.profiles.push(ConvergenceProfile::new("V(n)", grid, vs)?);
            Ok(Outcome::report(r))
        }
        "invert" => {
            let n = cx.horizon()?;
            let u = match cx.input("weight") {
                Some(w) => {
                    cx.float_only()?;
                    RenewalSeq::from_weights(cx.weight(w, n, None)?.materialize())?
                }
                None => renewal_seq(cx, n)?,
            };
            let f = lifetime_from_renewal(&u, n)?;
            let mut r = Report::new("invert", u.weights().label(), n);
            r.set("lifetime", f.to_json());
            r.set("deficiency", f.deficiency());
            r.verdict = "renewal sequence on [0, N]".into();
            let body = serde_json::to_string_pretty(&f.to_json()).unwrap_or_default() + "\n";
            Ok(Outcome::report(r).with("lifetime.json", body))
        }
        _ => Err(unknown_op(cx)),
    }
}

// ---------------------------------------------------------------- chain

fn chain(cx: &Cx) -> Result<Outcome> {
    let c = cx.chain()?;
    match cx.spec.op.as_str() {
        "occupation" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let s = cx.state("s", 1)?;
            let occ = occupation_sequence(&c, s, n)?;
            let u = &occ.weight;
            let grid = cx.grid(1, n)?;
            let scaled: Vec<f64> = grid.iter().map(|&m| u.values()[m as usize] * (m as f64).sqrt()).collect();
            let plain: Vec<f64> = grid.iter().map(|&m| u.values()[m as usize]).collect();
            let window: Vec<f64> = (n / 2..=n).map(|m| u.values()[m as usize] * (m as f64).sqrt()).collect();
            let (lo, hi) = window.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            let mut r = Report::new("occupation", c.label(), n);
            r.truncation_bound = occ.truncation;
            r.set("state", s);
            r.set("u_N", u.values()[n as usize]);
            r.set("u_N_sqrt_N", u.values()[n as usize] * (n as f64).sqrt());
            r.set("relative_variation_upper_half", (hi - lo) / mean);
            if n >= 200 {
                let est = rv_index_estimate(u, &log_grid(n / 100, n, 30))?;
                r.set("rv_index", est.index);
                r.set("rv_residual", est.residual);
            }
            r.verdict = format!("u_N sqrt(N) = {:.6}", u.values()[n as usize] * (n as f64).sqrt());
            r.profiles.push(ConvergenceProfile::new("u_n", grid.clone(), plain)?);
            r.profiles.push(ConvergenceProfile::new("u_n sqrt(n)", grid, scaled)?);
            Ok(Outcome::report(r).with("occupation.csv", u.to_csv()))
        }
        "nstep" => {
            let n = cx.horizon()?;
            let s = cx.state("s", 1)?;
            let (entries, total, dropped): (Vec<Value>, String, f64) = if cx.exact() {
                let row = nstep_row::<Rational>(&c, s, n)?;
                let e = row.entries.iter().map(|(t, p)| json!([t, format_rational(p)])).collect();
                (e, format_rational(&row.total()), row.dropped)
            } else {
                let row = nstep_row::<f64>(&c, s, n)?;
                let e = row.entries.iter().map(|(t, p)| json!([t, p])).collect();
                (e, row.total().render(), row.dropped)
            };
            let mut r = Report::new("nstep", c.label(), n);
            r.truncation_bound = dropped;
            r.set("state", s);
            r.set("support", entries.len());
            r.set("total", &total);
            r.set("row", entries);
            r.verdict = format!("row {s} of P^{n} sums to {total}");
            Ok(Outcome::report(r))
        }
        "chung" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let s = cx.state("s", 1)?;
            let t_max = cx.state("t", 8)?;
            let rows = (1..=t_max)
                .into_par_iter()
                .map(|t| {
                    let col = taboo_column::<f64>(&c, s, t, n)?;
                    let sum: f64 = ratmix_core::numeric::compensated_sum(col.iter().copied());
                    let pi: f64 = c.pi(t)?;
                    Ok((t, sum, pi))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut r = Report::new("chung", c.label(), n);
            r.truncation_bound = c.row_truncation();
            let mut table = Vec::new();
            for (t, sum, pi) in rows {
                let gap = pi - sum;
                match (&c, s) {
                    (Chain::RenewalShift { f, .. }, 1) => {
                        // the excursion from 1 misses t by time N exactly when it jumps past t + N - 1
                        let bound = f.tail(t + n);
                        r.check(
                            format!("t = {t}"),
                            gap >= -1e-12 && gap <= bound + 1e-12,
                            format!("pi_t - sum = {gap:e}, tail bound {bound:e}"),
                        );
                        table.push(json!({"t": t, "sum": sum, "pi": pi, "gap": gap, "tail_bound": bound}));
                    }
                    _ => {
                        r.check(format!("t = {t}"), gap >= -1e-12, format!("pi_t - sum = {gap:e}"));
                        table.push(json!({"t": t, "sum": sum, "pi": pi, "gap": gap}));
                    }
                }
            }
            r.set("table", table);
            r.verdict = if r.all_passed() { "partial sums within bounds".into() } else { "partial sums out of bounds".into() };
            Ok(Outcome::report(r))
        }
        "ratio-limit" => {
            cx.float_only()?;
            let n = cx.horizon()?;
            let s = cx.state("s", 1)?;
            let pairs = parse_ratio_pairs(cx.input("pairs").unwrap_or("1,1,0;1,2,1;2,1,-1"))?;
            Ok(Outcome::report(ratio_limit_report(&c, s, &pairs, n, cx.tol_or(0.1))?))
        }
        "last-exit" => {
            let n = cx.horizon_or(64)?.min(RATIONAL_HORIZON_LIMIT);
            let s = cx.state("s", 1)?;
            let t = cx.state("t", 2)?;
            let res = last_exit_residuals(&c, s, t, n)?;
            let bad: Vec<usize> = res.iter().enumerate().filter(|(_, x)| **x != Rational::from_integer(0.into())).map(|(i, _)| i + 1).collect();
            let mut r = Report::new("last-exit", c.label(), n);
            r.check("identity-exact", bad.is_empty(), format!("nonzero residuals at n = {bad:?}"));
            r.verdict = if bad.is_empty() { "decomposition exact".into() } else { "decomposition fails".into() };
            Ok(Outcome::report(r))
        }
        "stationarity" => {
            let n = cx.horizon()?;
            let res = if cx.exact() {
                format_rational(&c.stationarity_residual::<Rational>(n)?)
            } else {
                c.stationarity_residual::<f64>(n)?.render()
            };
            let mut r = Report::new("stationarity", c.label(), n);
            r.set("residual", &res);
            r.verdict = format!("max residual {res}");
            Ok(Outcome::report(r))
        }
        _ => Err(unknown_op(cx)),
    }
}

fn parse_ratio_pairs(text: &str) -> Result<Vec<RatioPair>> {
    text.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let parts: Vec<&str> = p.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("expected r,t,ell in '{p}'"));
            match parts.as_slice() {
                [r, t, l] => Ok(RatioPair {
                    r: r.parse().map_err(|_| bad())?,
                    t: t.parse().map_err(|_| bad())?,
                    ell: l.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- mixing

fn parse_cylinders(text: &str) -> Result<Vec<Cylinder>> {
    text.split(';').filter(|c| !c.trim().is_empty()).map(str::parse).collect()
}

/// Pairs from `pairs` (a JSON file holding cylinders, taken as a basket,
/// or explicit `[A, B]` pairs) or `basket` (inline, `;`-separated).
fn pair_list(cx: &Cx) -> Result<Vec<(Cylinder, Cylinder)>> {
    let all_pairs = |basket: Vec<Cylinder>| {
        basket.iter().flat_map(|a| basket.iter().map(move |b| (a.clone(), b.clone()))).collect()
    };
    if let Some(path) = cx.input("pairs") {
        let v = read_json(path)?;
        let list = v.as_array().ok_or_else(|| Error::Config(format!("{path}: expected a JSON array")))?;
        if list.iter().all(|x| x.is_array()) {
            return list
                .iter()
                .map(|x| match x.as_array().map(Vec::as_slice) {
                    Some([a, b]) => Ok((Cylinder::from_json(a)?, Cylinder::from_json(b)?)),
                    _ => Err(Error::Config(format!("{path}: pairs must have two cylinders"))),
                })
                .collect();
        }
        return Ok(all_pairs(list.iter().map(Cylinder::from_json).collect::<Result<_>>()?));
    }
    Ok(all_pairs(parse_cylinders(cx.input("basket").unwrap_or("[1]_0"))?))
}

/// A single-state diagonal pair `([s]_k, [s]_k)`.
fn diagonal_state(a: &Cylinder, b: &Cylinder) -> Option<u64> {
    (a == b && a.states.len() == 1).then(|| a.states[0])
}

fn mixing(cx: &Cx) -> Result<Outcome> {
    cx.float_only()?;
    let n = cx.horizon()?;
    match cx.spec.op.as_str() {
        "rwm" => {
            let c = cx.chain()?;
            let pairs = pair_list(cx)?;
            let default = cx.weight_input("occupation:1", n, Some(&c))?;
            // a single-state diagonal pair is measured against its own return weight
            let mut own: BTreeMap<u64, WeightSeq> = BTreeMap::new();
            for (a, b) in &pairs {
                if let Some(s) = diagonal_state(a, b) {
                    if let std::collections::btree_map::Entry::Vacant(slot) = own.entry(s) {
                        slot.insert(occupation_sequence(&c, s, n)?.weight);
                    }
                }
            }
            let reports = pairs
                .par_iter()
                .map(|(a, b)| {
                    let u = diagonal_state(a, b).and_then(|s| own.get(&s)).unwrap_or(&default);
                    Ok((rwm_report(&c, &[(a.clone(), b.clone())], u, n)?, u.label().to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut r = Report::new("rwm", c.label(), n);
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for (sub, label) in reports {
                r.truncation_bound = r.truncation_bound.max(sub.truncation_bound);
                if let Some(Value::Array(list)) = sub.values.get("pairs") {
                    for row in list {
                        let mut row = row.clone();
                        row["weight"] = json!(label);
                        rows.push(row);
                    }
                }
                worst = worst.max(sub.get_f64("max_defect").unwrap_or(f64::NAN));
                r.profiles.extend(sub.profiles);
            }
            r.set("pairs", rows);
            r.set("max_defect", worst);
            if let Some(tol) = cx.spec.tol {
                r.check("defect-below-tol", worst < tol, format!("max defect {worst:e} vs {tol:e}"));
            }
            r.verdict = format!("max defect {worst:e} at N = {n}");
            Ok(Outcome::report(r))
        }
        "krickeberg" => {
            let c = cx.chain()?;
            let a = cx.cylinder("a", "[1]_0")?;
            let b = cx.cylinder("b", "[1]_0")?;
            let u = cx.weight_input("occupation:1", n, Some(&c))?;
            let eps = cx.parse("eps", 1e-3)?;
            let k = krickeberg_profile(&c, &a, &b, &u, &cx.grid(1, n)?, eps)?;
            let mut r = Report::new("krickeberg", c.label(), n);
            let last = k.profile.last().map_or(f64::NAN, |(_, v)| v);
            r.set("ratio_at_horizon", last);
            r.set("eps", eps);
            r.set("exceptional_count", k.exceptional.len_upto(n));
            r.set("exceptional_set", k.exceptional.to_json());
            r.verdict = format!("ratio at N = {last:.8}");
            let mut csv = String::from("n,ratio\n");
            for (i, x) in k.ratios.iter().enumerate() {
                csv.push_str(&format!("{i},{x:e}\n"));
            }
            r.profiles.push(k.profile);
            Ok(Outcome::report(r).with("ratios.csv", csv))
        }
        "density" => {
            let c = cx.chain()?;
            let a = cx.cylinder("a", "[1]_0")?;
            let b = cx.cylinder("b", "[1]_0")?;
            let u = cx.weight_input("occupation:1", n, Some(&c))?;
            let eps = cx.parse("eps", 0.1)?;
            let k = krickeberg_profile(&c, &a, &b, &u, &[n], eps)?;
            Ok(Outcome::report(density_report(&k.ratios, &u, n, eps, cx.tol_or(0.02))?))
        }
        "return" => {
            let c = cx.chain()?;
            let parts = parse_cylinders(cx.input("union").unwrap_or("[1]_0"))?;
            let ret = return_sequence(&c, &parts, n)?;
            let grid = cx.grid(1, n)?;
            let values: Vec<f64> = grid.iter().map(|&m| ret.partial[m as usize]).collect();
            let fit_grid = log_grid((n / 100).max(1), n, 30);
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                fit_grid.iter().map(|&m| ((m as f64).ln(), ret.partial[m as usize].ln())).unzip();
            let (slope, _, _) = ratmix_core::numeric::least_squares(&xs, &ys);
            let mut r = Report::new("return-sequence", ret.weight.label(), n);
            r.truncation_bound = ret.truncation;
            r.set("a_N", ret.partial[n as usize]);
            r.set("growth_exponent", slope);
            r.verdict = format!("a_N = {:e}, growth exponent {slope:.4}", ret.partial[n as usize]);
            r.profiles.push(ConvergenceProfile::new("a_n(F)", grid, values)?);
            Ok(Outcome::report(r))
        }
        "gl" => {
            let chain = cx.chain().ok();
            let u = cx.weight_input("harmonic", n, chain.as_ref())?;
            let prof = gl_ratio_profile(&u, &cx.grid(1, n)?)?;
            let mut r = Report::new("gl-ratio", u.label(), n);
            let last = prof.last().map_or(f64::NAN, |(_, v)| v);
            r.set("ratio_at_horizon", last);
            r.verdict = format!("n u_n / a_u(n) = {last:.6} at N");
            r.profiles.push(prof);
            Ok(Outcome::report(r))
        }
        _ => Err(unknown_op(cx)),
    }
}

// ---------------------------------------------------------------- affine

/// Scalars the affine ops read from the command line.
trait Point: Scalar {
    fn parse_point(text: &str) -> Result<Self>;
    fn fraction(num: u64, den: u64) -> Self;
}

impl Point for f64 {
    fn parse_point(text: &str) -> Result<Self> {
        text.trim().parse().map_err(|_| Error::Config(format!("bad point '{text}'")))
    }

    fn fraction(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
}

impl Point for Rational {
    fn parse_point(text: &str) -> Result<Self> {
        parse_rational(text)
    }

    fn fraction(num: u64, den: u64) -> Self {
        Rational::new(num.into(), den.into())
    }
}

fn affine(cx: &Cx) -> Result<Outcome> {
    if cx.exact() {
        affine_generic::<Rational>(cx)
    } else {
        affine_generic::<f64>(cx)
    }
}

fn affine_generic<T: Point>(cx: &Cx) -> Result<Outcome> {
    let c = cx.chain()?;
    let cutoff = cx.parse("cutoff", 20u64)?;
    let layout = build_layout::<T>(&c, cutoff)?;
    let point = |key: &str| T::parse_point(cx.require(key)?);
    let mut r = Report::new(format!("affine-{}", cx.spec.op), c.label(), cutoff);
    r.truncation_bound = layout.truncated_mass();
    match cx.spec.op.as_str() {
        "layout" => {
            r.set("cells", layout.cells().len());
            r.set("truncated_mass", layout.truncated_mass());
            r.verdict = format!("{} cells", layout.cells().len());
            let body = serde_json::to_string_pretty(&layout.to_json()).unwrap_or_default() + "\n";
            Ok(Outcome::report(r).with("layout.json", body))
        }
        "tau" => {
            let x = point("x")?;
            let y = tau_eval(&layout, &x)?;
            r.set("x", x.render());
            r.set("tau_x", y.render());
            r.set("cell", layout.state_of(&x)?);
            r.set("image_cell", layout.state_of(&y).ok());
            r.verdict = format!("tau({}) = {}", x.render(), y.render());
            Ok(Outcome::report(r))
        }
        "natext" => {
            let (x, y) = (point("x")?, point("y")?);
            let (tx, ty) = natext_eval(&layout, &x, &y)?;
            r.set("image", [tx.render(), ty.render()]);
            r.verdict = format!("T({}, {}) = ({}, {})", x.render(), y.render(), tx.render(), ty.render());
            Ok(Outcome::report(r))
        }
        "itinerary" => {
            let x = point("x")?;
            let steps = cx.parse("steps", 10usize)?;
            let word = itinerary(&layout, &x, steps)?;
            r.set("word", &word);
            r.verdict = format!("{word:?}");
            Ok(Outcome::report(r))
        }
        "orbit" => {
            let (x, y) = (point("x")?, T::parse_point(cx.input("y").unwrap_or("0"))?);
            let steps = cx.parse("steps", 10usize)?;
            let pts = orbit(&layout, &x, &y, steps)?;
            r.set("states", pts.iter().map(|p| p.state).collect::<Vec<_>>());
            r.verdict = format!("{} orbit points", pts.len());
            Ok(Outcome::report(r).with("orbit.csv", orbit_csv(&pts)))
        }
        "preserve" => preserve(cx, &layout, r),
        "frequencies" => {
            cx.float_only()?;
            let layout = build_layout::<f64>(&c, cutoff)?;
            let cells = cx.parse("cells", 4u64)?;
            let word_len = cx.parse("word-len", 2usize)?;
            let samples = cx.parse("samples", 1_000_000u64)?;
            let seed = cx.parse("seed", 0u64)?;
            Ok(Outcome::report(frequency_report(&layout, cells, word_len, samples, seed)?))
        }
        _ => Err(unknown_op(cx)),
    }
}

/// Measure preservation on every cell below the cutoff and on random
/// subintervals, or on the single `interval` input.
fn preserve<T: Point>(cx: &Cx, layout: &ratmix_core::affine::Layout<T>, mut r: Report) -> Result<Outcome> {
    const DEN: u64 = 1 << 20;
    let tol = cx.tol_or(0.0);
    let mut intervals: Vec<(T, T)> = Vec::new();
    if let Some(text) = cx.input("interval") {
        let (lo, hi) = text
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("expected lo,hi in '{text}'")))?;
        intervals.push((T::parse_point(lo)?, T::parse_point(hi)?));
    } else {
        intervals.extend(layout.cells().iter().map(|c| (c.lo.clone(), c.hi.clone())));
        let samples = cx.parse("samples", 100usize)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cx.parse("seed", 0u64)?);
        let end = layout.end();
        while intervals.len() < layout.cells().len() + samples {
            let (a, b) = (rng.gen_range(0..=DEN), rng.gen_range(0..=DEN));
            if a != b {
                let (a, b) = (a.min(b), a.max(b));
                intervals.push((end.clone() * T::fraction(a, DEN), end.clone() * T::fraction(b, DEN)));
            }
        }
    }
    let results = intervals
        .par_iter()
        .map(|(lo, hi)| measure_preservation_test(layout, lo, hi, tol))
        .collect::<Result<Vec<_>>>()?;
    let worst = results.iter().filter_map(|x| x.get_f64("discrepancy_approx")).fold(0.0, f64::max);
    let zeros = results.iter().filter(|x| x.get_f64("discrepancy_approx") == Some(0.0)).count();
    let failed: Vec<Value> = results
        .iter()
        .filter(|x| !x.all_passed())
        .map(|x| x.values.get("interval").cloned().unwrap_or(Value::Null))
        .collect();
    r.set("intervals", results.len());
    r.set("exact_zero", zeros);
    r.set("max_discrepancy", worst);
    r.set("exact", T::is_exact());
    r.check(
        "discrepancy-bounded",
        failed.is_empty(),
        format!("max discrepancy {worst:e} over {} intervals; bound tol + truncated mass", results.len()),
    );
    r.set("failed_intervals", failed);
    r.verdict = if zeros == results.len() {
        format!("discrepancy 0 on all {} intervals", results.len())
    } else {
        format!("max discrepancy {worst:e}")
    };
    Ok(Outcome::report(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Settings;

    fn spec(command: &str, op: &str, n: Option<u64>, inputs: &[(&str, &str)]) -> ExperimentSpec {
        let settings = Settings {
            horizon: n,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ..Settings::default()
        };
        ExperimentSpec::new(command, op, None, settings).unwrap()
    }

    #[test]
    fn rational_mode_is_capped() {
        let mut s = spec("renewal", "sequence", Some(600), &[("lifetime", "geometric(1/2)")]);
        s.mode = Mode::Rational;
        assert!(matches!(execute(&s), Err(Error::Config(_))));
        s.horizon = Some(40);
        let out = execute(&s).unwrap();
        assert!(out.artifacts[0].content.contains("\n40,1/2\n"));
    }

    #[test]
    fn unknown_ops_and_missing_inputs_are_config_errors() {
        assert!(matches!(execute(&spec("chain", "nope", Some(5), &[("chain", "hopf")])), Err(Error::Config(_))));
        assert!(matches!(execute(&spec("chain", "occupation", Some(5), &[])), Err(Error::Config(_))));
        assert!(matches!(execute(&spec("renewal", "prop83", None, &[("family", "st-petersburg")])), Err(Error::Config(_))));
    }

    #[test]
    fn diagonal_rwm_rows_are_zero() {
        let s = spec(
            "mixing",
            "rwm",
            Some(500),
            &[("chain", "renewal-shift:geom(0.5)"), ("basket", "[1]_0;[2]_0;[1,1]_0")],
        );
        let out = execute(&s).unwrap();
        let rows = out.report.values["pairs"].as_array().unwrap();
        assert_eq!(rows.len(), 9);
        for row in rows {
            if row["A"] == row["B"] && !row["A"].as_str().unwrap().contains(',') {
                assert_eq!(row["defect"], json!(0.0), "{row}");
            }
        }
    }

    #[test]
    fn ratio_pairs_parse() {
        let p = parse_ratio_pairs("1,2,0; 3,1,-2").unwrap();
        assert_eq!(p[1], RatioPair { r: 3, t: 1, ell: -2 });
        assert!(parse_ratio_pairs("1,2").is_err());
    }

    #[test]
    fn affine_tau_in_rational_mode() {
        let mut s = spec("affine", "tau", None, &[("chain", "hopf"), ("x", "5/4"), ("cutoff", "10")]);
        s.mode = Mode::Rational;
        let out = execute(&s).unwrap();
        assert_eq!(out.report.values["tau_x"], json!("1/2"));
    }
}
