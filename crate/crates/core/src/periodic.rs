//! Mean-zero 1-periodic functions and their exact dilation correlations.
//!
//! Two representations are supported: trigonometric polynomials (cosine and
//! sine coefficients, rational or machine-real) and step functions with
//! rational breakpoints and values. For step functions the correlation
//! `gamma(n) = \int_0^1 f(x) f(n x) dx` is a finite rational and is computed
//! two independent ways:
//!
//! * [`correlation_exact`] refines the partition of `f` by the `n m`
//!   breakpoints of `f(n x)` and integrates piece products;
//! * [`correlation_counting`] uses the antiderivative `H(t) = \int_0^t f`,
//!   giving `gamma(n) = \sum_i v_i (H(n b_i) - H(n a_i)) / n` over the pieces
//!   `[a_i, b_i)` of `f`, in `O(m log m)` time independent of `n`.
//!
//! The identity-permutation constant for `n_k = theta^k` is
//! `sigma^2 = |f|^2 + 2 \sum_{k>=1} gamma(theta^k)`, truncated at `K`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

/// Largest multiplier accepted by the refinement route of [`correlation_exact`].
pub const MAX_REFINEMENT_MULTIPLIER: u64 = 1 << 24;

/// Truncation index used when none is given.
pub const DEFAULT_TRUNCATION: u32 = 24;

#[derive(Debug, Error)]
pub enum PeriodicError {
    #[error("interval endpoints must satisfy 0 <= a < b <= 1 (got a={a}, b={b})")]
    InvalidInterval { a: String, b: String },
    #[error("invalid step function: {0}")]
    InvalidStep(String),
    #[error("multiplier {n} exceeds the refinement limit of {limit}; use correlation_counting")]
    MultiplierTooLarge { n: String, limit: u64 },
    #[error("truncated sigma^2 = {value} is negative at K={truncation}; increase K")]
    NegativeSigma2 { truncation: u32, value: f64 },
    #[error("truncation index must be at least 1")]
    InvalidTruncation,
    #[error("base must be at least 2, got {0}")]
    InvalidBase(u64),
    #[error("grid denominator must be at least 2, got {0}")]
    InvalidGrid(u64),
    #[error("degree must be at least 1")]
    InvalidDegree,
    #[error("cache line {line}: {message}")]
    CacheFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses `p/q` or `p` into an exact rational.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    match text.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().ok()?;
            let q: BigInt = q.trim().parse().ok()?;
            if q.is_zero() {
                None
            } else {
                Some(BigRational::new(p, q))
            }
        }
        None => text.parse::<BigInt>().ok().map(BigRational::from_integer),
    }
}

/// Formats as `p/q` in lowest terms, always with a denominator.
pub fn format_rational(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // ratios of huge integers: scale both down first
        let shift = r.numer().bits().max(r.denom().bits()).saturating_sub(1000);
        let n = (r.numer() >> shift).to_f64().unwrap_or(f64::NAN);
        let d = (r.denom() >> shift).to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// A value that is exact when its inputs were.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Exact(BigRational),
    Approx(f64),
}

impl Scalar {
    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => rational_to_f64(r),
            Scalar::Approx(v) => *v,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Scalar::Exact(r) => Some(r),
            Scalar::Approx(_) => None,
        }
    }

    fn add(self, other: Scalar) -> Scalar {
        match (self, other) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(a + b),
            (a, b) => Scalar::Approx(a.to_f64() + b.to_f64()),
        }
    }

    fn scale(self, k: i64) -> Scalar {
        match self {
            Scalar::Exact(a) => Scalar::Exact(a * BigRational::from_integer(k.into())),
            Scalar::Approx(a) => Scalar::Approx(a * k as f64),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact(r) => write!(f, "{}", format_rational(r)),
            Scalar::Approx(v) => write!(f, "{v}"),
        }
    }
}

/// `\sum_j a_j cos(2 pi j x) + b_j sin(2 pi j x)`, no constant term.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    cos: Vec<f64>,
    sin: Vec<f64>,
    exact: Option<(Vec<BigRational>, Vec<BigRational>)>,
}

impl TrigPolynomial {
    /// Rational coefficients; `cos[j-1]` multiplies `cos(2 pi j x)`.
    pub fn exact(mut cos: Vec<BigRational>, mut sin: Vec<BigRational>) -> Self {
        let d = cos.len().max(sin.len());
        cos.resize(d, BigRational::zero());
        sin.resize(d, BigRational::zero());
        Self {
            cos: cos.iter().map(rational_to_f64).collect(),
            sin: sin.iter().map(rational_to_f64).collect(),
            exact: Some((cos, sin)),
        }
    }

    pub fn real(mut cos: Vec<f64>, mut sin: Vec<f64>) -> Self {
        let d = cos.len().max(sin.len());
        cos.resize(d, 0.0);
        sin.resize(d, 0.0);
        Self {
            cos,
            sin,
            exact: None,
        }
    }

    /// Pure cosine polynomial with integer coefficients.
    pub fn cosines(coefficients: &[i64]) -> Self {
        Self::exact(
            coefficients
                .iter()
                .map(|&c| BigRational::from_integer(c.into()))
                .collect(),
            Vec::new(),
        )
    }

    pub fn degree(&self) -> usize {
        self.cos.len()
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn cos_coefficients(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_coefficients(&self) -> &[f64] {
        &self.sin
    }

    pub fn exact_coefficients(&self) -> Option<(&[BigRational], &[BigRational])> {
        self.exact.as_ref().map(|(c, s)| (c.as_slice(), s.as_slice()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut sum = 0.0;
        for (j, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let angle = std::f64::consts::TAU * (j + 1) as f64 * x;
            if *a != 0.0 {
                sum += a * angle.cos();
            }
            if *b != 0.0 {
                sum += b * angle.sin();
            }
        }
        sum
    }

    /// `|f|^2 = \sum (a_j^2 + b_j^2) / 2`.
    pub fn norm_squared(&self) -> Scalar {
        match &self.exact {
            Some((c, s)) => {
                let two = BigRational::from_integer(2.into());
                Scalar::Exact(c.iter().chain(s).map(|v| v * v).sum::<BigRational>() / two)
            }
            None => Scalar::Approx(self.cos.iter().chain(&self.sin).map(|v| v * v).sum::<f64>() / 2.0),
        }
    }
}

/// Piecewise-constant 1-periodic function with rational breakpoints.
///
/// Piece `i` covers `[breakpoints[i], breakpoints[i+1])`, the last piece ending at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<BigRational>,
    values: Vec<BigRational>,
    breakpoints_f64: Vec<f64>,
    values_f64: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<BigRational>, values: Vec<BigRational>) -> Result<Self, PeriodicError> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(PeriodicError::InvalidStep(
                "need one value per breakpoint and at least one piece".into(),
            ));
        }
        if !breakpoints[0].is_zero() {
            return Err(PeriodicError::InvalidStep("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PeriodicError::InvalidStep("breakpoints must increase".into()));
        }
        if *breakpoints.last().expect("non-empty") >= BigRational::one() {
            return Err(PeriodicError::InvalidStep("breakpoints must lie in [0, 1)".into()));
        }
        Ok(Self {
            breakpoints_f64: breakpoints.iter().map(rational_to_f64).collect(),
            values_f64: values.iter().map(rational_to_f64).collect(),
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[BigRational] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[BigRational] {
        &self.values
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    fn end(&self, i: usize) -> BigRational {
        self.breakpoints
            .get(i + 1)
            .cloned()
            .unwrap_or_else(BigRational::one)
    }

    fn length(&self, i: usize) -> BigRational {
        self.end(i) - &self.breakpoints[i]
    }

    pub fn integral(&self) -> BigRational {
        (0..self.pieces())
            .map(|i| &self.values[i] * self.length(i))
            .sum()
    }

    pub fn is_mean_zero(&self) -> bool {
        self.integral().is_zero()
    }

    /// Total variation over one period, including the jump across 1.
    pub fn variation(&self) -> BigRational {
        let m = self.pieces();
        (0..m)
            .map(|i| (&self.values[(i + 1) % m] - &self.values[i]).abs())
            .sum()
    }

    pub fn norm_squared(&self) -> BigRational {
        (0..self.pieces())
            .map(|i| &self.values[i] * &self.values[i] * self.length(i))
            .sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = x - x.floor();
        let i = self.breakpoints_f64.partition_point(|b| *b <= y);
        self.values_f64[i.saturating_sub(1)]
    }

    /// `\int_0^s f` for `s` in `[0, 1]`.
    fn partial_integral(&self, s: &BigRational) -> BigRational {
        let i = self.breakpoints.partition_point(|b| b <= s).saturating_sub(1);
        let full: BigRational = (0..i).map(|j| &self.values[j] * self.length(j)).sum();
        full + &self.values[i] * (s - &self.breakpoints[i])
    }

    /// `\int_0^t f` for any real `t >= 0`, using periodicity.
    fn antiderivative(&self, t: &BigRational, total: &BigRational) -> BigRational {
        let whole = t.floor();
        let frac = t - &whole;
        whole * total + self.partial_integral(&frac)
    }
}

/// `1_[a,b)({x}) - (b - a)`.
pub fn centered_indicator(a: &BigRational, b: &BigRational) -> Result<StepFunction, PeriodicError> {
    let zero = BigRational::zero();
    let one = BigRational::one();
    if a < &zero || a >= b || b > &one {
        return Err(PeriodicError::InvalidInterval {
            a: format_rational(a),
            b: format_rational(b),
        });
    }
    let len = b - a;
    let inside = &one - &len;
    let outside = -len;
    let mut breakpoints = Vec::with_capacity(3);
    let mut values = Vec::with_capacity(3);
    if a > &zero {
        breakpoints.push(zero.clone());
        values.push(outside.clone());
    }
    breakpoints.push(a.clone());
    values.push(inside);
    if b < &one {
        breakpoints.push(b.clone());
        values.push(outside);
    }
    StepFunction::new(breakpoints, values)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeriodicFunction {
    Trig(TrigPolynomial),
    Step(StepFunction),
}

impl PeriodicFunction {
    pub fn zero() -> Self {
        PeriodicFunction::Trig(TrigPolynomial::real(Vec::new(), Vec::new()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PeriodicFunction::Trig(p) => p.eval(x),
            PeriodicFunction::Step(s) => s.eval(x),
        }
    }

    pub fn norm_squared(&self) -> Scalar {
        match self {
            PeriodicFunction::Trig(p) => p.norm_squared(),
            PeriodicFunction::Step(s) => Scalar::Exact(s.norm_squared()),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.norm_squared().to_f64().sqrt()
    }

    /// `\int_0^1 f(x) f(n x) dx`; exact for rational data.
    pub fn correlation(&self, n: &BigUint) -> Scalar {
        match self {
            PeriodicFunction::Trig(p) => correlation_trig(p, n),
            PeriodicFunction::Step(s) => Scalar::Exact(correlation_counting(s, n)),
        }
    }
}

impl From<TrigPolynomial> for PeriodicFunction {
    fn from(p: TrigPolynomial) -> Self {
        PeriodicFunction::Trig(p)
    }
}

impl From<StepFunction> for PeriodicFunction {
    fn from(s: StepFunction) -> Self {
        PeriodicFunction::Step(s)
    }
}

/// `2 pi` times the fractional part of `j r`, reduced exactly before rounding.
fn angle_of(j: u64, r: &BigRational) -> f64 {
    let scaled = r * BigRational::from_integer(j.into());
    let frac = &scaled - scaled.floor();
    std::f64::consts::TAU * rational_to_f64(&frac)
}

/// Fourier coefficients up to degree `d` of the centered indicator of `[a, b)`.
pub fn indicator_fourier(a: &BigRational, b: &BigRational, d: usize) -> Result<TrigPolynomial, PeriodicError> {
    centered_indicator(a, b)?;
    if d == 0 {
        return Err(PeriodicError::InvalidDegree);
    }
    let mut cos = Vec::with_capacity(d);
    let mut sin = Vec::with_capacity(d);
    for j in 1..=d as u64 {
        let (ta, tb) = (angle_of(j, a), angle_of(j, b));
        let scale = std::f64::consts::PI * j as f64;
        cos.push((tb.sin() - ta.sin()) / scale);
        sin.push((ta.cos() - tb.cos()) / scale);
    }
    Ok(TrigPolynomial::real(cos, sin))
}

/// Correlation by explicit refinement of the partition; `n <= 2^24`.
pub fn correlation_exact(f: &StepFunction, n: &BigUint) -> Result<BigRational, PeriodicError> {
    let n = match n.to_u64() {
        Some(v) if (1..=MAX_REFINEMENT_MULTIPLIER).contains(&v) => v,
        _ => {
            return Err(PeriodicError::MultiplierTooLarge {
                n: n.to_string(),
                limit: MAX_REFINEMENT_MULTIPLIER,
            })
        }
    };
    // Work in integer units of 1/(n D), D the common denominator of the breakpoints.
    let denominator = f
        .breakpoints
        .iter()
        .fold(BigInt::one(), |acc, b| acc.lcm(b.denom()));
    let unit = &denominator * BigInt::from(n);
    let to_units = |r: &BigRational| -> BigInt { (r * BigRational::from_integer(unit.clone())).to_integer() };
    let m = f.pieces();
    // piece starts of f in units, plus the period end
    let mut f_edges: Vec<BigInt> = f.breakpoints.iter().map(to_units).collect();
    f_edges.push(unit.clone());
    // piece starts of f(n .) within one period of f(n x): (beta_j + i) / n
    let scaled: Vec<BigInt> = f
        .breakpoints
        .iter()
        .map(|b| (b * BigRational::from_integer(denominator.clone())).to_integer())
        .collect();
    let mut overlap = vec![BigInt::zero(); m * m];
    let mut fi = 0usize;
    for i in 0..n {
        let offset = &denominator * BigInt::from(i);
        for j in 0..m {
            let start = &offset + &scaled[j];
            let end = if j + 1 < m {
                &offset + &scaled[j + 1]
            } else {
                &offset + &denominator
            };
            let mut cursor = start;
            while cursor < end {
                while f_edges[fi + 1] <= cursor {
                    fi += 1;
                }
                let stop = if f_edges[fi + 1] < end {
                    f_edges[fi + 1].clone()
                } else {
                    end.clone()
                };
                overlap[fi * m + j] += &stop - &cursor;
                cursor = stop;
            }
        }
    }
    let mut total = BigRational::zero();
    for a in 0..m {
        for b in 0..m {
            if !overlap[a * m + b].is_zero() {
                total += &f.values[a] * &f.values[b] * BigRational::from_integer(overlap[a * m + b].clone());
            }
        }
    }
    Ok(total / BigRational::from_integer(unit))
}

/// Correlation through the antiderivative of `f`; exact for any `n >= 1`.
pub fn correlation_counting(f: &StepFunction, n: &BigUint) -> BigRational {
    let n_r = BigRational::from_integer(BigInt::from(n.clone()));
    let total = f.integral();
    let mut sum = BigRational::zero();
    for i in 0..f.pieces() {
        if f.values[i].is_zero() {
            continue;
        }
        let hi = f.antiderivative(&(&n_r * f.end(i)), &total);
        let lo = f.antiderivative(&(&n_r * &f.breakpoints[i]), &total);
        sum += &f.values[i] * (hi - lo);
    }
    sum / n_r
}

/// Resonance form: `\sum_{j : n j <= d} (a_{nj} a_j + b_{nj} b_j) / 2`.
pub fn correlation_trig(f: &TrigPolynomial, n: &BigUint) -> Scalar {
    let d = f.degree();
    let n = match n.to_usize() {
        Some(v) if v >= 1 && v <= d => v,
        _ => {
            return match f.exact {
                Some(_) => Scalar::Exact(BigRational::zero()),
                None => Scalar::Approx(0.0),
            }
        }
    };
    match &f.exact {
        Some((c, s)) => {
            let two = BigRational::from_integer(2.into());
            let sum: BigRational = (1..=d / n)
                .map(|j| &c[n * j - 1] * &c[j - 1] + &s[n * j - 1] * &s[j - 1])
                .sum();
            Scalar::Exact(sum / two)
        }
        None => Scalar::Approx(
            (1..=d / n)
                .map(|j| f.cos[n * j - 1] * f.cos[j - 1] + f.sin[n * j - 1] * f.sin[j - 1])
                .sum::<f64>()
                / 2.0,
        ),
    }
}

/// Truncated `sigma^2 = |f|^2 + 2 \sum_{k=1}^K gamma(theta^k)` and its square root.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaIdentity {
    pub theta: u64,
    pub truncation: u32,
    pub sigma2: Scalar,
    pub sigma: f64,
    /// `gamma(theta^k)` for `k = 1..=K`.
    pub gammas: Vec<Scalar>,
    /// `sigma` range implied by `sigma^2 +- 2 |gamma_K|`.
    pub bracket: (f64, f64),
}

pub fn sigma_identity(f: &PeriodicFunction, theta: u64, truncation: u32) -> Result<SigmaIdentity, PeriodicError> {
    if theta < 2 {
        return Err(PeriodicError::InvalidBase(theta));
    }
    if truncation == 0 {
        return Err(PeriodicError::InvalidTruncation);
    }
    let base = BigUint::from(theta);
    let mut gammas = Vec::with_capacity(truncation as usize);
    let mut sigma2 = f.norm_squared();
    let mut n = BigUint::one();
    for _ in 0..truncation {
        n *= &base;
        let gamma = f.correlation(&n);
        sigma2 = sigma2.add(gamma.clone().scale(2));
        gammas.push(gamma);
    }
    let value = sigma2.to_f64();
    if value < 0.0 {
        return Err(PeriodicError::NegativeSigma2 {
            truncation,
            value,
        });
    }
    let slack = 2.0 * gammas.last().map_or(0.0, |g| g.to_f64().abs());
    Ok(SigmaIdentity {
        theta,
        truncation,
        sigma: value.sqrt(),
        sigma2,
        gammas,
        bracket: ((value - slack).max(0.0).sqrt(), (value + slack).sqrt()),
    })
}

/// Maximizer of the truncated sigma over centered indicators on a `1/D` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SupSigma {
    pub theta: u64,
    pub truncation: u32,
    pub grid_denominator: u64,
    pub a: BigRational,
    pub b: BigRational,
    pub sigma2: BigRational,
    pub sigma: f64,
}

/// `D * F(t / D)` where `F(t) = |{y in [0, t) : {y} in [A/D, B/D)}|`.
#[inline]
fn counting_units(t: i128, d: i128, a: i128, len: i128) -> i128 {
    let (whole, rest) = (t.div_euclid(d), t.rem_euclid(d));
    whole * len + (rest - a).clamp(0, len)
}

/// `sigma^2 * theta^K * D^2` for the centered indicator of `[A/D, B/D)`, if it fits in `i128`.
fn scaled_sigma2(theta: i128, truncation: u32, d: i128, a: i128, b: i128) -> Option<i128> {
    let len = b - a;
    let top = theta.checked_pow(truncation)?;
    let mut acc = len.checked_mul(d - len)?.checked_mul(top)?;
    let len_sq_top = len.checked_mul(len)?.checked_mul(top)?;
    let mut n: i128 = 1;
    let mut rest = top;
    for _ in 0..truncation {
        n = n.checked_mul(theta)?;
        rest /= theta;
        let measure = counting_units(n.checked_mul(b)?, d, a, len)
            - counting_units(n.checked_mul(a)?, d, a, len);
        let term = measure.checked_mul(d)?.checked_mul(rest)?.checked_sub(len_sq_top)?;
        acc = acc.checked_add(term.checked_mul(2)?)?;
    }
    Some(acc)
}

/// Grid search of `sigma(1_[a,b) - (b-a))` over `a < b` in `{0, 1/D, ..., 1}`.
///
/// All comparisons use exact integers scaled by the common denominator
/// `theta^K D^2`; the search is parallel over `a` with a deterministic
/// tie-break on the smallest `(a, b)`.
pub fn sup_sigma_over_intervals(theta: u64, truncation: u32, grid_denominator: u64) -> Result<SupSigma, PeriodicError> {
    if theta < 2 {
        return Err(PeriodicError::InvalidBase(theta));
    }
    if truncation == 0 {
        return Err(PeriodicError::InvalidTruncation);
    }
    if grid_denominator < 2 {
        return Err(PeriodicError::InvalidGrid(grid_denominator));
    }
    let (t, d) = (theta as i128, grid_denominator as i128);
    let fits = (2 * truncation as i128 + 4)
        .checked_mul(t.checked_pow(truncation).unwrap_or(i128::MAX))
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| v.checked_mul(d))
        .is_some();
    if !fits {
        return sup_sigma_rational(theta, truncation, grid_denominator);
    }
    let best = (0..d)
        .into_par_iter()
        .map(|a| {
            let mut best: Option<(i128, i128, i128)> = None;
            for b in (a + 1)..=d {
                let v = scaled_sigma2(t, truncation, d, a, b).expect("range checked");
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, a, b));
                }
            }
            best.expect("a < D leaves at least one b")
        })
        .reduce_with(|x, y| {
            if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) {
                y
            } else {
                x
            }
        })
        .expect("non-empty grid");
    let (value, a, b) = best;
    let scale = BigInt::from(t.pow(truncation)) * BigInt::from(d) * BigInt::from(d);
    let sigma2 = BigRational::new(BigInt::from(value), scale);
    Ok(SupSigma {
        theta,
        truncation,
        grid_denominator,
        a: BigRational::new(BigInt::from(a), BigInt::from(d)),
        b: BigRational::new(BigInt::from(b), BigInt::from(d)),
        sigma: rational_to_f64(&sigma2).max(0.0).sqrt(),
        sigma2,
    })
}

/// Slow exact route through [`sigma_identity`], used when integers would overflow.
fn sup_sigma_rational(theta: u64, truncation: u32, grid_denominator: u64) -> Result<SupSigma, PeriodicError> {
    let d = grid_denominator as i64;
    let at = |v: i64| BigRational::new(v.into(), d.into());
    let mut best: Option<(BigRational, i64, i64)> = None;
    for a in 0..d {
        for b in (a + 1)..=d {
            let f = PeriodicFunction::Step(centered_indicator(&at(a), &at(b))?);
            let s = sigma_identity(&f, theta, truncation)?;
            let v = s.sigma2.exact().expect("step functions are exact").clone();
            if best.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
                best = Some((v, a, b));
            }
        }
    }
    let (sigma2, a, b) = best.expect("non-empty grid");
    Ok(SupSigma {
        theta,
        truncation,
        grid_denominator,
        a: at(a),
        b: at(b),
        sigma: rational_to_f64(&sigma2).max(0.0).sqrt(),
        sigma2,
    })
}

/// Text cache of exact correlations and grid-search results.
///
/// ```text
/// # lacunary correlation cache v1
/// gamma <theta> <a> <b> <k> <p/q>
/// sup <theta> <K> <D> <a> <b> <sigma2>
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationCache {
    gammas: BTreeMap<(u64, BigRational, BigRational, u32), BigRational>,
    sups: BTreeMap<(u64, u32, u64), (BigRational, BigRational, BigRational)>,
}

const CACHE_HEADER: &str = "# lacunary correlation cache v1";

impl CorrelationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn gamma(&self, theta: u64, a: &BigRational, b: &BigRational, k: u32) -> Option<&BigRational> {
        self.gammas.get(&(theta, a.clone(), b.clone(), k))
    }

    pub fn insert_gamma(&mut self, theta: u64, a: BigRational, b: BigRational, k: u32, gamma: BigRational) {
        self.gammas.insert((theta, a, b, k), gamma);
    }

    pub fn len(&self) -> usize {
        self.gammas.len() + self.sups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact gammas of one indicator, computed and cached on demand.
    pub fn indicator_gammas(
        &mut self,
        theta: u64,
        a: &BigRational,
        b: &BigRational,
        truncation: u32,
    ) -> Result<Vec<BigRational>, PeriodicError> {
        let f = centered_indicator(a, b)?;
        let mut n = BigUint::one();
        let mut out = Vec::with_capacity(truncation as usize);
        for k in 1..=truncation {
            n *= theta;
            let g = match self.gamma(theta, a, b, k) {
                Some(g) => g.clone(),
                None => {
                    let g = correlation_counting(&f, &n);
                    self.insert_gamma(theta, a.clone(), b.clone(), k, g.clone());
                    g
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Grid search with results keyed by `(theta, K, D)`.
    pub fn sup_sigma(&mut self, theta: u64, truncation: u32, grid_denominator: u64) -> Result<SupSigma, PeriodicError> {
        if let Some((a, b, sigma2)) = self.sups.get(&(theta, truncation, grid_denominator)) {
            return Ok(SupSigma {
                theta,
                truncation,
                grid_denominator,
                a: a.clone(),
                b: b.clone(),
                sigma: rational_to_f64(sigma2).max(0.0).sqrt(),
                sigma2: sigma2.clone(),
            });
        }
        let sup = sup_sigma_over_intervals(theta, truncation, grid_denominator)?;
        self.indicator_gammas(theta, &sup.a, &sup.b, truncation)?;
        self.sups.insert(
            (theta, truncation, grid_denominator),
            (sup.a.clone(), sup.b.clone(), sup.sigma2.clone()),
        );
        Ok(sup)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CACHE_HEADER}\n");
        for ((theta, a, b, k), g) in &self.gammas {
            out.push_str(&format!(
                "gamma {theta} {} {} {k} {}\n",
                format_rational(a),
                format_rational(b),
                format_rational(g)
            ));
        }
        for ((theta, k, d), (a, b, s)) in &self.sups {
            out.push_str(&format!(
                "sup {theta} {k} {d} {} {} {}\n",
                format_rational(a),
                format_rational(b),
                format_rational(s)
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, PeriodicError> {
        let mut cache = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: &str| PeriodicError::CacheFormat {
                line: i + 1,
                message: message.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad("expected an integer"));
            let rat = |s: &str| parse_rational(s).ok_or_else(|| bad("expected a rational p/q"));
            match fields.as_slice() {
                ["gamma", theta, a, b, k, g] => {
                    let k = u32::try_from(int(k)?).map_err(|_| bad("index too large"))?;
                    cache.insert_gamma(int(theta)?, rat(a)?, rat(b)?, k, rat(g)?);
                }
                ["sup", theta, k, d, a, b, s] => {
                    let k = u32::try_from(int(k)?).map_err(|_| bad("index too large"))?;
                    cache
                        .sups
                        .insert((int(theta)?, k, int(d)?), (rat(a)?, rat(b)?, rat(s)?));
                }
                _ => return Err(bad("unrecognised record")),
            }
        }
        Ok(cache)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PeriodicError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PeriodicError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
