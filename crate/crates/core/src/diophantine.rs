//! Exact solution counts for `a n_k + b n_l = c` over `1 <= k, l <= N`.
//!
//! Counts are over ordered pairs. Diagonal pairs `k = l` are always reported
//! separately; for `c = 0` the headline count excludes them, since
//! `(a + b) n_k = 0` has a solution at every `k` when `a = -b`.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::sequences::IntegerSequence;

/// Default cap on the number of materialized values in [`max_multiplicity`].
pub const DEFAULT_PAIR_BUDGET: u64 = 100_000_000;

pub const COUNT_CONVENTION: &str = "ordered pairs (k,l) with 1<=k,l<=N; diagonal k=l counted \
     for c!=0 and excluded from the headline count when c=0; unordered counts are at most \
     half the off-diagonal ordered count plus the diagonal";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiophantineError {
    #[error("coefficients a and b must be nonzero (a={a}, b={b})")]
    ZeroCoefficient { a: i64, b: i64 },
    #[error("prefix length {n} is outside 1..={len}")]
    PrefixOutOfRange { n: usize, len: usize },
    #[error("{pairs} pairs exceed the budget of {budget}; use a smaller N")]
    BudgetExceeded { pairs: u64, budget: u64 },
    #[error("prefix grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("degree bound must be at least 1")]
    InvalidDegree,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiophQuery {
    pub a: i64,
    pub b: i64,
    pub c: BigInt,
    pub n: usize,
}

impl DiophQuery {
    pub fn new(a: i64, b: i64, c: impl Into<BigInt>, n: usize) -> Result<Self, DiophantineError> {
        if a == 0 || b == 0 {
            return Err(DiophantineError::ZeroCoefficient { a, b });
        }
        Ok(Self {
            a,
            b,
            c: c.into(),
            n,
        })
    }

    fn check(&self, seq: &IntegerSequence) -> Result<(), DiophantineError> {
        if self.a == 0 || self.b == 0 {
            return Err(DiophantineError::ZeroCoefficient {
                a: self.a,
                b: self.b,
            });
        }
        if self.n == 0 || self.n > seq.len() {
            return Err(DiophantineError::PrefixOutOfRange {
                n: self.n,
                len: seq.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolutionCount {
    pub ordered: u64,
    pub diagonal: u64,
    pub c_is_zero: bool,
}

impl SolutionCount {
    pub fn off_diagonal(&self) -> u64 {
        self.ordered - self.diagonal
    }

    /// The count bounded by `K(a, b)`: off-diagonal for `c = 0`, all ordered pairs otherwise.
    pub fn headline(&self) -> u64 {
        if self.c_is_zero {
            self.off_diagonal()
        } else {
            self.ordered
        }
    }
}

fn prefix_terms(seq: &IntegerSequence, n: usize) -> Vec<BigInt> {
    (1..=n)
        .map(|k| BigInt::from(seq.term(k).expect("prefix checked")))
        .collect()
}

/// Cheap, collision-tolerant key: bit length plus lowest and highest limbs.
type Fingerprint = (u64, u64, u64);

fn fingerprint(v: &BigUint) -> Fingerprint {
    let mut digits = v.iter_u64_digits();
    let low = digits.next().unwrap_or(0);
    let high = digits.next_back().unwrap_or(low);
    (v.bits(), low, high)
}

/// Membership index over `{n_l : l <= N}`, reusable across queries.
pub struct SolutionCounter {
    terms: Vec<BigInt>,
    index: HashMap<Fingerprint, Vec<usize>>,
}

impl SolutionCounter {
    pub fn new(seq: &IntegerSequence, n: usize) -> Result<Self, DiophantineError> {
        if n == 0 || n > seq.len() {
            return Err(DiophantineError::PrefixOutOfRange { n, len: seq.len() });
        }
        let terms = prefix_terms(seq, n);
        let mut index: HashMap<Fingerprint, Vec<usize>> = HashMap::with_capacity(n);
        for (i, t) in terms.iter().enumerate() {
            index.entry(fingerprint(t.magnitude())).or_default().push(i);
        }
        Ok(Self { terms, index })
    }

    fn lookup(&self, v: &BigInt) -> Option<usize> {
        if v.sign() != Sign::Plus {
            return None;
        }
        self.index
            .get(&fingerprint(v.magnitude()))?
            .iter()
            .copied()
            .find(|&i| &self.terms[i] == v)
    }

    /// Counts pairs over the whole indexed prefix.
    pub fn count(&self, a: i64, b: i64, c: &BigInt) -> Result<SolutionCount, DiophantineError> {
        if a == 0 || b == 0 {
            return Err(DiophantineError::ZeroCoefficient { a, b });
        }
        let b_big = BigInt::from(b);
        let mut ordered = 0;
        let mut diagonal = 0;
        for (k, nk) in self.terms.iter().enumerate() {
            let rest = c - nk * a;
            let (q, r) = rest.div_rem(&b_big);
            if !r.is_zero() {
                continue;
            }
            if let Some(l) = self.lookup(&q) {
                ordered += 1;
                if l == k {
                    diagonal += 1;
                }
            }
        }
        Ok(SolutionCount {
            ordered,
            diagonal,
            c_is_zero: c.is_zero(),
        })
    }
}

/// Counts solutions with one membership test per `k`.
pub fn count_solutions(seq: &IntegerSequence, q: &DiophQuery) -> Result<SolutionCount, DiophantineError> {
    q.check(seq)?;
    SolutionCounter::new(seq, q.n)?.count(q.a, q.b, &q.c)
}

/// Testing oracle: compares `a n_k` against `c - b n_l` for every ordered pair.
pub fn brute_force_count(seq: &IntegerSequence, q: &DiophQuery) -> Result<SolutionCount, DiophantineError> {
    q.check(seq)?;
    let terms = prefix_terms(seq, q.n);
    let left: Vec<BigInt> = terms.iter().map(|t| t * q.a).collect();
    let right: Vec<BigInt> = terms.iter().map(|t| &q.c - t * q.b).collect();
    let mut ordered = 0;
    let mut diagonal = 0;
    for (k, lk) in left.iter().enumerate() {
        for (l, rl) in right.iter().enumerate() {
            if lk == rl {
                ordered += 1;
                if k == l {
                    diagonal += 1;
                }
            }
        }
    }
    Ok(SolutionCount {
        ordered,
        diagonal,
        c_is_zero: q.c.is_zero(),
    })
}

/// Largest multiplicity of `a n_k + b n_l` (`k != l`) over nonzero values, and the zero count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplicityReport {
    pub n: usize,
    pub max_nonzero: u64,
    /// Every nonzero `c` attaining `max_nonzero`, ascending, capped at [`MAX_WITNESSES`].
    pub witnesses: Vec<BigInt>,
    pub zero_count: u64,
}

pub const MAX_WITNESSES: usize = 8;

pub fn max_multiplicity(
    seq: &IntegerSequence,
    a: i64,
    b: i64,
    n: usize,
) -> Result<MultiplicityReport, DiophantineError> {
    max_multiplicity_with_budget(seq, a, b, n, DEFAULT_PAIR_BUDGET)
}

pub fn max_multiplicity_with_budget(
    seq: &IntegerSequence,
    a: i64,
    b: i64,
    n: usize,
    budget: u64,
) -> Result<MultiplicityReport, DiophantineError> {
    DiophQuery::new(a, b, 0, n)?.check(seq)?;
    let pairs = (n as u64) * (n as u64 - 1);
    if pairs > budget {
        return Err(DiophantineError::BudgetExceeded { pairs, budget });
    }
    let terms = prefix_terms(seq, n);
    multiplicities_from_terms(&terms, a, b)
}

const FINGERPRINT_PRIMES: [u64; 2] = [(1 << 61) - 1, 4_611_686_018_427_387_847];

fn residue(v: &BigInt, p: u64) -> u64 {
    let r = (v % BigInt::from(p)).to_i128().expect("below the modulus");
    r.rem_euclid(p as i128) as u64
}

fn multiplicities_from_terms(terms: &[BigInt], a: i64, b: i64) -> Result<MultiplicityReport, DiophantineError> {
    // Pairs are grouped by a residue fingerprint of a n_k + b n_l, then split exactly.
    let residues: Vec<[(u64, u64); 2]> = terms
        .iter()
        .map(|t| {
            FINGERPRINT_PRIMES.map(|p| {
                let r = residue(t, p) as u128;
                let ra = (r * (a as i128).rem_euclid(p as i128) as u128 % p as u128) as u64;
                let rb = (r * (b as i128).rem_euclid(p as i128) as u128 % p as u128) as u64;
                (ra, rb)
            })
        })
        .collect();
    let n = terms.len();
    let mut keys: Vec<(u64, u64, u32, u32)> = Vec::with_capacity(n * n.saturating_sub(1));
    for k in 0..n {
        for l in 0..n {
            if k != l {
                let f = |i: usize| {
                    let p = FINGERPRINT_PRIMES[i];
                    ((residues[k][i].0 as u128 + residues[l][i].1 as u128) % p as u128) as u64
                };
                keys.push((f(0), f(1), k as u32, l as u32));
            }
        }
    }
    keys.sort_unstable();
    let value = |k: usize, l: usize| &terms[k] * a + &terms[l] * b;
    let mut zero_count = 0;
    let mut max_nonzero = 0;
    let mut witnesses: Vec<BigInt> = Vec::new();
    let mut singletons = false;
    let mut start = 0;
    while start < keys.len() {
        let mut end = start + 1;
        while end < keys.len() && keys[end].0 == keys[start].0 && keys[end].1 == keys[start].1 {
            end += 1;
        }
        if end - start == 1 && (keys[start].0, keys[start].1) != (0, 0) {
            // a lone fingerprint cannot repeat, and a nonzero residue cannot be zero
            singletons = true;
            start = end;
            continue;
        }
        let mut class: Vec<BigInt> = keys[start..end]
            .iter()
            .map(|&(_, _, k, l)| value(k as usize, l as usize))
            .collect();
        class.sort_unstable();
        for run in class.chunk_by(|x, y| x == y) {
            let count = run.len() as u64;
            if run[0].is_zero() {
                zero_count = count;
            } else if count > max_nonzero {
                max_nonzero = count;
                witnesses.clear();
                witnesses.push(run[0].clone());
            } else if count == max_nonzero {
                witnesses.push(run[0].clone());
            }
        }
        start = end;
    }
    if singletons && max_nonzero <= 1 {
        // Every nonzero c occurs once. For fixed k the value is strictly monotone
        // in l, so the smallest ones sit at the two ends of the l range.
        let reach = MAX_WITNESSES + 2;
        let mut candidates: Vec<BigInt> = Vec::new();
        for k in 0..n {
            for l in (0..n.min(reach)).chain(n.saturating_sub(reach)..n) {
                if l != k {
                    let v = value(k, l);
                    if !v.is_zero() {
                        candidates.push(v);
                    }
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        max_nonzero = 1;
        witnesses = candidates;
    }
    witnesses.sort();
    witnesses.truncate(MAX_WITNESSES);
    Ok(MultiplicityReport {
        n: terms.len(),
        max_nonzero,
        witnesses,
        zero_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Bounded,
    Growing,
}

impl Growth {
    pub fn as_str(&self) -> &'static str {
        match self {
            Growth::Bounded => "bounded",
            Growth::Growing => "growing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRow {
    pub a: i64,
    pub b: i64,
    pub reports: Vec<MultiplicityReport>,
    pub nonzero_growth: Growth,
    pub zero_growth: Growth,
}

impl ProfileRow {
    pub fn growth(&self) -> Growth {
        if self.nonzero_growth == Growth::Growing || self.zero_growth == Growth::Growing {
            Growth::Growing
        } else {
            Growth::Bounded
        }
    }
}

/// Heuristic boundedness verdicts per coefficient pair; asymptotic claims cannot be certified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionProfile {
    pub degree: i64,
    pub grid: Vec<usize>,
    pub rows: Vec<ProfileRow>,
}

impl ConditionProfile {
    pub fn all_bounded(&self) -> bool {
        self.rows.iter().all(|r| r.growth() == Growth::Bounded)
    }

    pub fn row(&self, a: i64, b: i64) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.a == a && r.b == b)
    }

    /// Long-format CSV, one line per `(a, b, N)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,N,max_mult_nonzero_c,witness_c,zero_c_count,verdict\n");
        for row in &self.rows {
            for r in &row.reports {
                let witness = r
                    .witnesses
                    .first()
                    .map_or_else(String::new, |w| w.to_string());
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.a,
                    row.b,
                    r.n,
                    r.max_nonzero,
                    witness,
                    r.zero_count,
                    row.growth().as_str()
                ));
            }
        }
        out
    }
}

fn classify(values: &[u64]) -> Growth {
    match values {
        [.., prev, last] if last > prev => Growth::Growing,
        _ => Growth::Bounded,
    }
}

pub fn condition_profile(
    seq: &IntegerSequence,
    degree: i64,
    grid: &[usize],
) -> Result<ConditionProfile, DiophantineError> {
    if degree < 1 {
        return Err(DiophantineError::InvalidDegree);
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] == 0 {
        return Err(DiophantineError::InvalidGrid);
    }
    let largest = *grid.last().expect("non-empty");
    if largest > seq.len() {
        return Err(DiophantineError::PrefixOutOfRange {
            n: largest,
            len: seq.len(),
        });
    }
    let terms = prefix_terms(seq, largest);
    let coefficients: Vec<i64> = (-degree..=degree).filter(|&v| v != 0).collect();
    let pairs: Vec<(i64, i64)> = coefficients
        .iter()
        .flat_map(|&a| coefficients.iter().map(move |&b| (a, b)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(a, b)| {
            let reports = grid
                .iter()
                .map(|&n| multiplicities_from_terms(&terms[..n], a, b))
                .collect::<Result<Vec<_>, _>>()?;
            let nonzero: Vec<u64> = reports.iter().map(|r| r.max_nonzero).collect();
            let zero: Vec<u64> = reports.iter().map(|r| r.zero_count).collect();
            Ok(ProfileRow {
                a,
                b,
                nonzero_growth: classify(&nonzero),
                zero_growth: classify(&zero),
                reports,
            })
        })
        .collect::<Result<Vec<_>, DiophantineError>>()?;
    Ok(ConditionProfile {
        degree,
        grid: grid.to_vec(),
        rows,
    })
}

/// Builds a sign-aware description of the equation for reports.
pub fn describe(a: i64, b: i64, c: &BigInt) -> String {
    let sign = if b.is_negative() { '-' } else { '+' };
    format!("{a} n_k {sign} {} n_l = {c}", b.abs())
}
