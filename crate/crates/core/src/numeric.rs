//! Scalar abstraction shared by the floating and exact-rational code paths,
//! plus compensated summation.
//!
//! Every recursion that has to be cross-checked exactly (renewal equation,
//! sparse matrix powers, interval layouts) is written once against
//! [`Scalar`] and instantiated with `f64` or [`Rational`].

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Field operations needed by the generic recursions.
pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// Lift a quantity known either exactly or only approximately.
    ///
    /// The floating instance always uses `approx`; the rational instance
    /// requires `exact` and fails otherwise.
    fn lift(exact: Option<&Rational>, approx: f64) -> Result<Self>;

    fn approx(&self) -> f64;

    fn from_u64(n: u64) -> Self;

    fn abs_val(&self) -> Self;

    fn is_exact() -> bool;

    /// Round-trippable text form: shortest decimal or `p/q`.
    fn render(&self) -> String;

    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }
}

impl Scalar for f64 {
    fn lift(_exact: Option<&Rational>, approx: f64) -> Result<Self> {
        Ok(approx)
    }

    fn approx(&self) -> f64 {
        *self
    }

    fn from_u64(n: u64) -> Self {
        n as f64
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }

    fn is_exact() -> bool {
        false
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Scalar for Rational {
    fn lift(exact: Option<&Rational>, approx: f64) -> Result<Self> {
        exact
            .cloned()
            .ok_or_else(|| Error::NotRational(format!("{approx:e} has no exact rational form")))
    }

    fn approx(&self) -> f64 {
        ratio_to_f64(self)
    }

    fn from_u64(n: u64) -> Self {
        Rational::from_integer(BigInt::from(n))
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }

    fn is_exact() -> bool {
        true
    }

    fn render(&self) -> String {
        format_rational(self)
    }
}

/// Converts a big rational to the nearest-ish double, staying finite for
/// numerators and denominators far beyond the `f64` exponent range.
pub fn ratio_to_f64(r: &Rational) -> f64 {
    if let Some(x) = ToPrimitive::to_f64(r) {
        if x.is_finite() && (x != 0.0 || r.is_zero()) {
            return x;
        }
    }
    let num = r.numer();
    let den = r.denom();
    let shift = num.bits() as i64 - den.bits() as i64;
    // scale so that the quotient has ~60 significant bits
    let scaled = if shift > 60 {
        num / (den << (shift - 60) as usize)
    } else {
        (num << (60 - shift) as usize) / den
    };
    let mant = scaled.to_f64().unwrap_or(0.0);
    mant * 2f64.powi((shift - 60) as i32)
}

/// Exact rational from a double (every finite double is a dyadic rational).
pub fn rational_from_f64(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| Error::NotRational(format!("{x} is not finite")))
}

/// Parses `"p/q"`, an integer, or a decimal literal into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse rational '{s}'"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let negative = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let mut num: BigInt = digits.parse().map_err(|_| bad())?;
        if negative {
            num = -num;
        }
        let den = num_traits::pow(BigInt::from(10u32), frac.len());
        return Ok(Rational::new(num, den));
    }
    let p: BigInt = s.parse().map_err(|_| bad())?;
    Ok(Rational::from_integer(p))
}

/// Formats a rational as `"p/q"` (or `"p"` for integers).
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Compensated sum of an iterator, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(iter);
    acc.value()
}

/// Ordinary least squares slope and intercept of `y` against `x`, with the
/// residual root-mean-square.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = compensated_sum(xs.iter().copied()) / n;
    let my = compensated_sum(ys.iter().copied()) / n;
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = compensated_sum(
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2)),
    );
    (slope, intercept, (rss / n).sqrt())
}
