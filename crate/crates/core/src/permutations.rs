//! Rearrangements of a sequence: identity, block-sorted orders, and the
//! pair-interleaving permutation built from solutions of `a n_k - b n_l = c`.
//!
//! A plan is materialized as `order[p-1] = sigma(p)`, a list of 1-based
//! sequence indices. Positions and indices are 1-based throughout.

use std::collections::HashSet;
use std::fmt;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::Zero;
use thiserror::Error;

use crate::sequences::{IntegerSequence, SequenceError};

#[derive(Debug, Error)]
pub enum PermutationError {
    #[error("coefficients must be positive (got a={a}, b={b})")]
    NonPositiveCoefficients { a: i64, b: i64 },
    #[error("found {found} of {required} solution pairs within the first {searched} terms")]
    InsufficientPairs {
        found: usize,
        required: usize,
        searched: usize,
    },
    #[error("block ratio must exceed 1, got {0}")]
    InvalidTheta(f64),
    #[error("prefix at N={n} needs {needed} new indices, expected 2")]
    IncrementSize { n: usize, needed: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// How far apart consecutive solution pairs must be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthPolicy {
    /// `k_{i+1}/k_i >= i + 2` and `l_{i+1}/l_i >= i + 2` (hence `> 2`).
    Asymptotic { min_index: usize },
    /// Disjoint pairs with `min(k', l') >= max(k, l) + min_gap` between neighbours.
    Spaced { min_index: usize, min_gap: usize },
}

impl GrowthPolicy {
    /// Spaced pairs starting just above the filler block of a run up to `n_max`.
    pub fn spaced_for(n_max: usize) -> Self {
        GrowthPolicy::Spaced {
            min_index: 2 * ilog10(n_max.max(1)) + 1,
            min_gap: 2,
        }
    }

    fn admits(&self, previous: Option<(usize, usize)>, count: usize, k: usize, l: usize) -> bool {
        match *self {
            GrowthPolicy::Asymptotic { min_index } => {
                if k.min(l) < min_index {
                    return false;
                }
                match previous {
                    None => true,
                    Some((pk, pl)) => {
                        let rate = count + 2;
                        k > 2 * pk && l > 2 * pl && k >= rate * pk && l >= rate * pl
                    }
                }
            }
            GrowthPolicy::Spaced { min_index, min_gap } => {
                if k.min(l) < min_index {
                    return false;
                }
                match previous {
                    None => true,
                    Some((pk, pl)) => k > pk && l > pl && k.min(l) >= pk.max(pl) + min_gap,
                }
            }
        }
    }
}

impl fmt::Display for GrowthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthPolicy::Asymptotic { min_index } => write!(f, "asymptotic(min_index={min_index})"),
            GrowthPolicy::Spaced { min_index, min_gap } => {
                write!(f, "spaced(min_index={min_index}, min_gap={min_gap})")
            }
        }
    }
}

/// Which growth properties a list of pairs actually has.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowthCertificate {
    /// `k` and `l` strictly increasing.
    pub increasing: bool,
    /// All consecutive ratios `k_{i+1}/k_i`, `l_{i+1}/l_i` exceed 2.
    pub ratio_above_two: bool,
    /// All consecutive ratios are at least `i + 2`.
    pub ratio_diverging: bool,
    /// Every pair solves the source equation, checked exactly.
    pub solves: bool,
    /// No index is used twice.
    pub disjoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPairs {
    /// `(k_i, l_i)`, 1-based.
    pub pairs: Vec<(usize, usize)>,
    pub a: i64,
    pub b: i64,
    pub c: BigInt,
    pub policy: GrowthPolicy,
    pub certificate: GrowthCertificate,
}

impl SolutionPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.pairs.iter().map(|&(k, l)| k.max(l)).max().unwrap_or(0)
    }
}

fn ilog10(n: usize) -> usize {
    n.checked_ilog10().unwrap_or(0) as usize
}

/// The index `k` with `n_k = target`, if any.
fn locate(seq: &IntegerSequence, target: &BigUint) -> Result<Option<usize>, SequenceError> {
    let bits = target.bits();
    let (mut lo, mut hi) = (1usize, seq.len() + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if seq.bit_length(mid)? < bits {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut k = lo;
    while k <= seq.len() && seq.bit_length(k)? == bits {
        match seq.term(k)?.cmp(target) {
            std::cmp::Ordering::Equal => return Ok(Some(k)),
            std::cmp::Ordering::Greater => return Ok(None),
            std::cmp::Ordering::Less => k += 1,
        }
    }
    Ok(None)
}

fn certify(seq: &IntegerSequence, pairs: &[(usize, usize)], a: i64, b: i64, c: &BigInt) -> Result<GrowthCertificate, SequenceError> {
    let mut cert = GrowthCertificate {
        increasing: true,
        ratio_above_two: true,
        ratio_diverging: true,
        solves: true,
        disjoint: true,
    };
    let mut seen = HashSet::new();
    for (i, &(k, l)) in pairs.iter().enumerate() {
        let lhs = BigInt::from(seq.term(k)?) * a - BigInt::from(seq.term(l)?) * b;
        cert.solves &= &lhs == c;
        cert.disjoint &= k != l && seen.insert(k) && seen.insert(l);
        if i > 0 {
            let (pk, pl) = pairs[i - 1];
            cert.increasing &= k > pk && l > pl;
            cert.ratio_above_two &= k > 2 * pk && l > 2 * pl;
            // pair i (1-based) to pair i+1 needs ratio i+2
            cert.ratio_diverging &= k >= (i + 2) * pk && l >= (i + 2) * pl;
        }
    }
    Ok(cert)
}

/// Greedy scan over `l` for solutions of `a n_k - b n_l = c` admitted by `policy`.
pub fn find_solution_pairs(
    seq: &IntegerSequence,
    a: i64,
    b: i64,
    c: &BigInt,
    max_pairs: usize,
    policy: GrowthPolicy,
) -> Result<SolutionPairs, PermutationError> {
    if a <= 0 || b <= 0 {
        return Err(PermutationError::NonPositiveCoefficients { a, b });
    }
    let (a_big, b_big) = (BigInt::from(a), BigInt::from(b));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = HashSet::new();
    for l in 1..=seq.len() {
        if pairs.len() == max_pairs {
            break;
        }
        let numerator = c + &b_big * BigInt::from(seq.term(l)?);
        if numerator.sign() != Sign::Plus {
            continue;
        }
        let (target, rest) = numerator.div_rem(&a_big);
        if !rest.is_zero() {
            continue;
        }
        let target = target.magnitude().clone();
        let Some(k) = locate(seq, &target)? else {
            continue;
        };
        if k == l || used.contains(&k) || used.contains(&l) {
            continue;
        }
        if policy.admits(pairs.last().copied(), pairs.len(), k, l) {
            used.insert(k);
            used.insert(l);
            pairs.push((k, l));
        }
    }
    if pairs.len() < max_pairs {
        return Err(PermutationError::InsufficientPairs {
            found: pairs.len(),
            required: max_pairs,
            searched: seq.len(),
        });
    }
    let certificate = certify(seq, &pairs, a, b, c)?;
    Ok(SolutionPairs {
        pairs,
        a,
        b,
        c: c.clone(),
        policy,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanKind {
    Identity,
    BlockSorted { theta: f64 },
    PairInterleave { pairs: SolutionPairs },
    Explicit,
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::Identity => "identity",
            PlanKind::BlockSorted { .. } => "block_sorted",
            PlanKind::PairInterleave { .. } => "pair_interleave",
            PlanKind::Explicit => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPlan {
    pub kind: PlanKind,
    order: Vec<usize>,
}

impl PermutationPlan {
    pub fn identity(n_max: usize) -> Self {
        Self {
            kind: PlanKind::Identity,
            order: (1..=n_max).collect(),
        }
    }

    /// An arbitrary list of indices, not checked.
    pub fn explicit(order: Vec<usize>) -> Self {
        Self {
            kind: PlanKind::Explicit,
            order,
        }
    }

    /// Block-sorts an index order; on an increasing sequence this sorts the terms.
    pub fn block_sorted(order: &[usize], theta: f64) -> Result<Self, PermutationError> {
        Ok(Self {
            kind: PlanKind::BlockSorted { theta },
            order: block_sorted(order, theta)?,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.order.iter().copied().max().unwrap_or(0)
    }

    /// `position index` per line, both 1-based.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.order.len() * 12);
        for (p, k) in self.order.iter().enumerate() {
            out.push_str(&format!("{} {}\n", p + 1, k));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, PermutationError> {
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: &str| PermutationError::Parse {
                line: i + 1,
                message: message.into(),
            };
            let mut fields = line.split_whitespace();
            let position: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected a position"))?;
            let index: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected an index"))?;
            if fields.next().is_some() {
                return Err(bad("trailing fields"));
            }
            if position != order.len() + 1 {
                return Err(bad("positions must be consecutive from 1"));
            }
            order.push(index);
        }
        Ok(Self::explicit(order))
    }
}

/// Block boundaries `ceil(theta^m)` for `m >= 1`, up to and past `n`.
fn block_starts(theta: f64, n: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut power = theta;
    loop {
        let start = power.ceil() as usize;
        if starts.last() != Some(&start) {
            starts.push(start);
        }
        if start > n {
            return starts;
        }
        power *= theta;
    }
}

/// Sorts the values at positions `theta^m <= k < theta^(m+1)` (1-based, `m >= 1`)
/// within each block; positions below `theta` keep their values.
pub fn block_sorted<T: Ord + Clone>(values: &[T], theta: f64) -> Result<Vec<T>, PermutationError> {
    if theta <= 1.0 || !theta.is_finite() {
        return Err(PermutationError::InvalidTheta(theta));
    }
    let mut out = values.to_vec();
    let starts = block_starts(theta, values.len());
    for w in starts.windows(2) {
        let lo = (w[0] - 1).min(out.len());
        let hi = (w[1] - 1).min(out.len());
        out[lo..hi].sort();
    }
    Ok(out)
}

/// Number of pairs in the prefix at even `n`: `n/2 - floor(log10 n)`.
pub fn pairs_in_prefix(n: usize) -> usize {
    (n / 2).saturating_sub(ilog10(n))
}

/// Materializes the pair-interleaving permutation on positions `1..=n_max`.
///
/// At each even `N` the image of `1..N` is the union of the first
/// `N/2 - floor(log10 N)` pairs with `{1..M}`, `M` minimal; the two indices
/// that enter between `N - 2` and `N` are placed smaller first.
pub fn build_counterexample(pairs: &SolutionPairs, n_max: usize) -> Result<PermutationPlan, PermutationError> {
    let even_max = n_max + n_max % 2;
    let required = pairs_in_prefix(even_max);
    if pairs.len() < required {
        return Err(PermutationError::InsufficientPairs {
            found: pairs.len(),
            required,
            searched: 0,
        });
    }
    let limit = pairs.max_index().max(even_max) + 2;
    let mut in_target = vec![false; limit + 1];
    let mut order = Vec::with_capacity(even_max);
    let mut taken = 0usize;
    let mut filler = 0usize;
    for n in (2..=even_max).step_by(2) {
        // the prescribed sets only grow, so the new indices are exactly the additions
        let mut fresh: Vec<usize> = Vec::with_capacity(2);
        let claim = |i: usize, in_target: &mut [bool], fresh: &mut Vec<usize>| {
            if !in_target[i] {
                in_target[i] = true;
                fresh.push(i);
            }
        };
        while taken < pairs_in_prefix(n) {
            let (k, l) = pairs.pairs[taken];
            claim(k, &mut in_target, &mut fresh);
            claim(l, &mut in_target, &mut fresh);
            taken += 1;
        }
        while order.len() + fresh.len() < n {
            filler += 1;
            claim(filler, &mut in_target, &mut fresh);
        }
        if fresh.len() != 2 {
            return Err(PermutationError::IncrementSize { n, needed: fresh.len() });
        }
        fresh.sort_unstable();
        order.extend(fresh);
    }
    order.truncate(n_max);
    Ok(PermutationPlan {
        kind: PlanKind::PairInterleave { pairs: pairs.clone() },
        order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duplicate {
    pub first_position: usize,
    pub second_position: usize,
    pub index: usize,
}

/// Prefix-set comparison for pair-interleaving plans.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixCheck {
    pub even_prefixes: usize,
    /// First even `N` whose image differs from the prescribed set.
    pub mismatch_at: Option<usize>,
    /// Largest filler size seen, with its `N`.
    pub worst_filler: (usize, usize),
    /// `M <= 2 ln N` at every even `N`.
    pub filler_within_ln: bool,
    /// `M <= 2 log10 N` at every even `N` (reported only).
    pub filler_within_log10: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub kind: &'static str,
    pub n_max: usize,
    pub injective: bool,
    pub duplicate: Option<Duplicate>,
    /// The image of `1..=n_max` is exactly `{1..n_max}`.
    pub bijective: bool,
    /// Smallest index in `1..=n_max` outside the image.
    pub missing: Option<usize>,
    pub prefix: Option<PrefixCheck>,
    pub growth: Option<GrowthCertificate>,
    pub pass: bool,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "plan: {} N_max={}", self.kind, self.n_max)?;
        writeln!(f, "injective: {}", self.injective)?;
        if let Some(d) = self.duplicate {
            writeln!(
                f,
                "  duplicate index {} at positions {} and {}",
                d.index, d.first_position, d.second_position
            )?;
        }
        writeln!(f, "bijective on 1..N_max: {}", self.bijective)?;
        if let Some(m) = self.missing {
            writeln!(f, "  missing index {m}")?;
        }
        if let Some(p) = &self.prefix {
            writeln!(f, "even prefixes checked: {}", p.even_prefixes)?;
            match p.mismatch_at {
                Some(n) => writeln!(f, "prefix sets: mismatch at N={n}")?,
                None => writeln!(f, "prefix sets: all equal")?,
            }
            writeln!(
                f,
                "filler: max M={} at N={}; M <= 2 ln N: {}; M <= 2 log10 N: {}",
                p.worst_filler.1, p.worst_filler.0, p.filler_within_ln, p.filler_within_log10
            )?;
        }
        if let Some(g) = &self.growth {
            writeln!(
                f,
                "growth: increasing={} ratio>2={} ratio>=i+2={} solves={} disjoint={}",
                g.increasing, g.ratio_above_two, g.ratio_diverging, g.solves, g.disjoint
            )?;
        }
        write!(f, "result: {}", if self.pass { "pass" } else { "fail" })
    }
}

/// Checks a plan over positions `1..=n_max`.
///
/// Identity, block-sorted and explicit plans must be bijections of `{1..n_max}`.
/// Pair-interleaving plans index beyond `n_max` by design; they must be
/// injective, match the prescribed prefix set at every even `N`, and keep the
/// filler within `2 ln N`.
pub fn validate(plan: &PermutationPlan, n_max: usize) -> ValidationReport {
    let order = &plan.order[..n_max.min(plan.order.len())];
    let complete = order.len() == n_max;
    let limit = order.iter().copied().max().unwrap_or(0).max(n_max);
    let mut first_seen = vec![0usize; limit + 1];
    let mut duplicate = None;
    for (p, &i) in order.iter().enumerate() {
        if i == 0 {
            duplicate.get_or_insert(Duplicate {
                first_position: p + 1,
                second_position: p + 1,
                index: 0,
            });
            continue;
        }
        if first_seen[i] != 0 {
            duplicate.get_or_insert(Duplicate {
                first_position: first_seen[i],
                second_position: p + 1,
                index: i,
            });
        } else {
            first_seen[i] = p + 1;
        }
    }
    let missing = (1..=n_max).find(|&i| first_seen[i] == 0);
    let injective = duplicate.is_none() && complete;
    let bijective = injective && missing.is_none();
    let (prefix, growth) = match &plan.kind {
        PlanKind::PairInterleave { pairs } => (Some(check_prefixes(order, pairs, limit)), Some(pairs.certificate)),
        _ => (None, None),
    };
    let pass = match &prefix {
        Some(p) => injective && p.mismatch_at.is_none() && p.filler_within_ln,
        None => bijective,
    };
    ValidationReport {
        kind: plan.kind.name(),
        n_max,
        injective,
        duplicate,
        bijective,
        missing,
        prefix,
        growth,
        pass,
    }
}

/// Tracks the symmetric difference between the image and the prescribed set.
fn check_prefixes(order: &[usize], pairs: &SolutionPairs, limit: usize) -> PrefixCheck {
    let size = limit.max(pairs.max_index()) + 1;
    let mut image = vec![false; size];
    let mut target = vec![false; size];
    let mut target_len = 0usize;
    let mut differ = 0i64;
    let flip = |i: usize, set: &mut [bool], other: &[bool], differ: &mut i64| {
        if i >= set.len() || set[i] {
            return false;
        }
        set[i] = true;
        *differ += if other[i] { -1 } else { 1 };
        true
    };
    let mut check = PrefixCheck {
        even_prefixes: 0,
        mismatch_at: None,
        worst_filler: (0, 0),
        filler_within_ln: true,
        filler_within_log10: true,
    };
    let mut taken = 0usize;
    let mut filler = 0usize;
    for n in (2..=order.len()).step_by(2) {
        for &i in &order[n - 2..n] {
            flip(i, &mut image, &target, &mut differ);
        }
        let want = pairs_in_prefix(n).min(pairs.len());
        while taken < want {
            let (k, l) = pairs.pairs[taken];
            target_len += flip(k, &mut target, &image, &mut differ) as usize;
            target_len += flip(l, &mut target, &image, &mut differ) as usize;
            taken += 1;
        }
        while target_len < n && filler + 1 < size {
            filler += 1;
            target_len += flip(filler, &mut target, &image, &mut differ) as usize;
        }
        check.even_prefixes += 1;
        if differ != 0 && check.mismatch_at.is_none() {
            check.mismatch_at = Some(n);
        }
        if filler > check.worst_filler.1 {
            check.worst_filler = (n, filler);
        }
        let nf = n as f64;
        check.filler_within_ln &= filler as f64 <= 2.0 * nf.ln();
        check.filler_within_log10 &= filler as f64 <= 2.0 * nf.log10();
    }
    check
}
