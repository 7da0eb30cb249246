//! Integer sequences `n_1 < n_2 < ...` and their gap statistics.
//!
//! Indices are 1-based throughout, matching `n_k` for `k >= 1`. Generated
//! sequences keep their terms implicit: the super-lacunary sequence at
//! `N = 2^13` has terms of ~33 million bits, and the experiments only ever
//! need `{n_k x}`, which [`IntegerSequence::frac_term`] supplies through a
//! sparse plan.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use thiserror::Error;

use crate::numerics::{FracTerm, SignedDigit};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("sequence length must be at least {required}, got {len}")]
    TooShort { len: usize, required: usize },
    #[error("base must be at least 2, got {0}")]
    InvalidBase(u32),
    #[error("term {index} is not larger than its predecessor")]
    NotIncreasing { index: usize },
    #[error("term {index} is zero; terms must be positive")]
    NonPositive { index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scale factors must be positive")]
    InvalidScale,
    #[error("index {index} is outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the terms of a sequence are produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Generator {
    /// `base^k`
    Power { base: u32 },
    /// `base^k - 1`
    PowerMinusOne { base: u32 },
    /// `2^(k(k+1)/2)`, so that `n_{k+1}/n_k = 2^(k+1)`.
    Superlacunary,
    /// Explicit terms, from a file or a derived construction.
    Custom,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Power { base } => write!(f, "power(base={base})"),
            Generator::PowerMinusOne { base } => write!(f, "power_minus_one(base={base})"),
            Generator::Superlacunary => write!(f, "superlacunary"),
            Generator::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegerSequence {
    generator: Generator,
    len: usize,
    explicit: Option<Arc<Vec<BigUint>>>,
}

fn triangular(k: usize) -> u64 {
    let k = k as u64;
    k * (k + 1) / 2
}

pub fn gen_power(base: u32, len: usize) -> Result<IntegerSequence, SequenceError> {
    IntegerSequence::generated(Generator::Power { base }, len)
}

pub fn gen_power_minus_one(base: u32, len: usize) -> Result<IntegerSequence, SequenceError> {
    IntegerSequence::generated(Generator::PowerMinusOne { base }, len)
}

pub fn gen_superlacunary(len: usize) -> Result<IntegerSequence, SequenceError> {
    IntegerSequence::generated(Generator::Superlacunary, len)
}

impl IntegerSequence {
    fn generated(generator: Generator, len: usize) -> Result<Self, SequenceError> {
        if len == 0 {
            return Err(SequenceError::TooShort { len, required: 1 });
        }
        if let Generator::Power { base } | Generator::PowerMinusOne { base } = generator {
            if base < 2 {
                return Err(SequenceError::InvalidBase(base));
            }
        }
        Ok(Self {
            generator,
            len,
            explicit: None,
        })
    }

    /// Wraps explicit terms, rejecting anything that is not strictly increasing and positive.
    pub fn from_terms(terms: Vec<BigUint>) -> Result<Self, SequenceError> {
        if terms.is_empty() {
            return Err(SequenceError::TooShort { len: 0, required: 1 });
        }
        if terms[0] == BigUint::ZERO {
            return Err(SequenceError::NonPositive { index: 1 });
        }
        if let Some(i) = terms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SequenceError::NotIncreasing { index: i + 2 });
        }
        Ok(Self {
            generator: Generator::Custom,
            len: terms.len(),
            explicit: Some(Arc::new(terms)),
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check_index(&self, k: usize) -> Result<(), SequenceError> {
        if k == 0 || k > self.len {
            Err(SequenceError::IndexOutOfRange {
                index: k,
                len: self.len,
            })
        } else {
            Ok(())
        }
    }

    /// The term `n_k` (1-based).
    pub fn term(&self, k: usize) -> Result<BigUint, SequenceError> {
        self.check_index(k)?;
        Ok(match (&self.explicit, &self.generator) {
            (Some(terms), _) => terms[k - 1].clone(),
            (None, Generator::Power { base }) => BigUint::from(*base).pow(k as u32),
            (None, Generator::PowerMinusOne { base }) => BigUint::from(*base).pow(k as u32) - 1u8,
            (None, Generator::Superlacunary) => BigUint::one() << triangular(k),
            (None, Generator::Custom) => unreachable!("custom sequences are explicit"),
        })
    }

    /// All terms, materialized.
    pub fn terms(&self) -> Vec<BigUint> {
        match &self.explicit {
            Some(terms) => terms.as_ref().clone(),
            None => (1..=self.len).map(|k| self.term(k).expect("in range")).collect(),
        }
    }

    /// Bit length of `n_k`.
    pub fn bit_length(&self, k: usize) -> Result<u64, SequenceError> {
        self.check_index(k)?;
        Ok(match (&self.explicit, &self.generator) {
            (None, Generator::Power { base: 2 }) => k as u64 + 1,
            (None, Generator::PowerMinusOne { base: 2 }) => k as u64,
            (None, Generator::Superlacunary) => triangular(k) + 1,
            _ => self.term(k)?.bits(),
        })
    }

    /// Evaluation plan for `x -> {n_k x}`.
    pub fn frac_term(&self, k: usize) -> Result<FracTerm, SequenceError> {
        self.check_index(k)?;
        Ok(match (&self.explicit, &self.generator) {
            (None, Generator::Power { base: 2 }) => FracTerm::power_of_two(k as u64),
            (None, Generator::PowerMinusOne { base: 2 }) => FracTerm::from_signed_digits(
                vec![
                    SignedDigit {
                        negative: false,
                        exponent: k as u64,
                    },
                    SignedDigit {
                        negative: true,
                        exponent: 0,
                    },
                ],
                k as u64,
            ),
            (None, Generator::Superlacunary) => FracTerm::power_of_two(triangular(k)),
            _ => FracTerm::from_biguint(&self.term(k)?),
        })
    }

    /// The first `n` terms.
    pub fn prefix(&self, n: usize) -> Result<Self, SequenceError> {
        if n == 0 || n > self.len {
            return Err(SequenceError::IndexOutOfRange {
                index: n,
                len: self.len,
            });
        }
        Ok(Self {
            generator: self.generator.clone(),
            len: n,
            explicit: self
                .explicit
                .as_ref()
                .map(|terms| Arc::new(terms[..n].to_vec())),
        })
    }

    /// The sequence without its first `m` terms, as explicit terms.
    pub fn drop_prefix(&self, m: usize) -> Result<Self, SequenceError> {
        if m >= self.len {
            return Err(SequenceError::TooShort {
                len: self.len,
                required: m + 1,
            });
        }
        let terms = ((m + 1)..=self.len)
            .map(|k| self.term(k))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_terms(terms)
    }
}

/// Minimum consecutive ratio and a sampled ratio trail.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `min_k n_{k+1} / n_k`, exact.
    pub min_ratio: BigRational,
    /// The `k` attaining the minimum (first occurrence).
    pub min_ratio_index: usize,
    pub is_hadamard: bool,
    /// `(k, n_{k+1}/n_k)` at up to [`TREND_SAMPLES`] evenly spaced `k`.
    pub ratio_trend: Vec<(usize, f64)>,
}

pub const TREND_SAMPLES: usize = 64;

impl GapReport {
    /// Whether the sampled ratios strictly increase, the finite shadow of `n_{k+1}/n_k -> inf`.
    pub fn trend_increasing(&self) -> bool {
        self.ratio_trend.windows(2).all(|w| w[1].1 > w[0].1)
    }
}

fn ratio_f64(num: &BigUint, den: &BigUint) -> f64 {
    let shift = num.bits().max(den.bits()).saturating_sub(64);
    let (n, d) = ((num >> shift).to_f64(), (den >> shift).to_f64());
    match (n, d) {
        (Some(n), Some(d)) if d > 0.0 => n / d,
        _ => f64::INFINITY,
    }
}

pub fn gap_report(seq: &IntegerSequence) -> Result<GapReport, SequenceError> {
    if seq.len() < 2 {
        return Err(SequenceError::TooShort {
            len: seq.len(),
            required: 2,
        });
    }
    let terms = seq.terms();
    let mut best = 1usize;
    for k in 2..terms.len() {
        // n_{k+1}/n_k < best ratio  <=>  n_{k+1} * n_best < n_{best+1} * n_k
        if &terms[k] * &terms[best - 1] < &terms[best] * &terms[k - 1] {
            best = k;
        }
    }
    let min_ratio = BigRational::new(
        BigInt::from(terms[best].clone()),
        BigInt::from(terms[best - 1].clone()),
    );
    let pairs = terms.len() - 1;
    let step = pairs.div_ceil(TREND_SAMPLES).max(1);
    let ratio_trend = (1..=pairs)
        .step_by(step)
        .map(|k| (k, ratio_f64(&terms[k], &terms[k - 1])))
        .collect();
    Ok(GapReport {
        is_hadamard: min_ratio > BigRational::one(),
        min_ratio,
        min_ratio_index: best,
        ratio_trend,
    })
}

/// The union of `{a n_k}` and `{b n_k}` in increasing order, with its gap report.
#[derive(Debug, Clone)]
pub struct MergedSequence {
    pub sequence: IntegerSequence,
    pub gap: Option<GapReport>,
}

pub fn merge_scaled(seq: &IntegerSequence, a: u64, b: u64) -> Result<MergedSequence, SequenceError> {
    if a == 0 || b == 0 {
        return Err(SequenceError::InvalidScale);
    }
    let terms = seq.terms();
    let left: Vec<BigUint> = terms.iter().map(|t| t * a).collect();
    let right: Vec<BigUint> = terms.iter().map(|t| t * b).collect();
    let mut merged = Vec::with_capacity(left.len() + right.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() || j < right.len() {
        let next = match (left.get(i), right.get(j)) {
            (Some(l), Some(r)) if l < r => {
                i += 1;
                l
            }
            (Some(l), Some(r)) if l == r => {
                i += 1;
                j += 1;
                l
            }
            (Some(l), None) => {
                i += 1;
                l
            }
            (_, Some(r)) => {
                j += 1;
                r
            }
            (None, None) => unreachable!(),
        };
        if merged.last() != Some(next) {
            merged.push(next.clone());
        }
    }
    let sequence = IntegerSequence::from_terms(merged)?;
    let gap = gap_report(&sequence).ok();
    Ok(MergedSequence { sequence, gap })
}

/// Parses the sequence file format: one base-10 integer per line, `#` comments.
pub fn parse_sequence_text(text: &str) -> Result<IntegerSequence, SequenceError> {
    let mut terms: Vec<BigUint> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: BigUint = line.parse().map_err(|_| SequenceError::Parse {
            line: i + 1,
            message: format!("not a non-negative integer: {line:?}"),
        })?;
        if value == BigUint::ZERO {
            return Err(SequenceError::Parse {
                line: i + 1,
                message: "terms must be positive".into(),
            });
        }
        if terms.last().is_some_and(|prev| *prev >= value) {
            return Err(SequenceError::Parse {
                line: i + 1,
                message: "terms must be strictly increasing".into(),
            });
        }
        terms.push(value);
    }
    IntegerSequence::from_terms(terms)
}

pub fn load_sequence_file(path: impl AsRef<Path>) -> Result<IntegerSequence, SequenceError> {
    parse_sequence_text(&std::fs::read_to_string(path)?)
}

pub fn write_sequence_text(seq: &IntegerSequence) -> String {
    let mut out = format!("# {} N={}\n", seq.generator(), seq.len());
    for t in seq.terms() {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}
