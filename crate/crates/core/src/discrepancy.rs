//! Star and extreme discrepancy of finite point sets in `[0, 1)`.
//!
//! With the sorted points `x_(1) <= ... <= x_(N)`:
//!
//! ```text
//! D*_N = max_i max(i/N - x_(i), x_(i) - (i-1)/N)
//! D_N  = 1/N + max_i (i/N - x_(i)) - min_i (i/N - x_(i))
//! ```
//!
//! Intervals are half-open, `[a, b)`. [`brute_force_discrepancy`] evaluates the
//! supremum directly by enumerating critical intervals and is the oracle for
//! both closed forms.

use thiserror::Error;

/// Largest set accepted by [`brute_force_discrepancy`].
pub const BRUTE_FORCE_LIMIT: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum DiscrepancyError {
    #[error("point set is empty")]
    Empty,
    #[error("point {value} at position {index} is outside [0, 1)")]
    OutOfRange { index: usize, value: f64 },
    #[error("brute force is limited to {limit} points, got {n}")]
    TooLarge { n: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<f64>,
    sorted: Vec<f64>,
}

impl PointSet {
    pub fn new(points: Vec<f64>) -> Result<Self, DiscrepancyError> {
        if points.is_empty() {
            return Err(DiscrepancyError::Empty);
        }
        if let Some((index, &value)) = points
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..1.0).contains(*v))
        {
            return Err(DiscrepancyError::OutOfRange { index, value });
        }
        let mut sorted = points.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { points, sorted })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn discrepancy(&self) -> DiscrepancyValue {
        evaluate_sorted(&self.sorted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyValue {
    pub n: usize,
    pub star: f64,
    pub extreme: f64,
}

fn evaluate_sorted(sorted: &[f64]) -> DiscrepancyValue {
    let n = sorted.len() as f64;
    let mut star: f64 = 0.0;
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for (i, &x) in sorted.iter().enumerate() {
        let above = (i + 1) as f64 / n - x;
        let below = x - i as f64 / n;
        star = star.max(above).max(below);
        hi = hi.max(above);
        lo = lo.min(above);
    }
    DiscrepancyValue {
        n: sorted.len(),
        star,
        extreme: 1.0 / n + hi - lo,
    }
}

pub fn star_discrepancy(ps: &PointSet) -> f64 {
    ps.discrepancy().star
}

pub fn extreme_discrepancy(ps: &PointSet) -> f64 {
    ps.discrepancy().extreme
}

/// An interval endpoint `v` or its right limit `v+`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Endpoint {
    value: f64,
    above: bool,
}

impl Endpoint {
    /// Whether `x` lies at or beyond this endpoint.
    fn admits(&self, x: f64) -> bool {
        if self.above {
            x > self.value
        } else {
            x >= self.value
        }
    }
}

/// Supremum of `|#{x in [a, b)} / N - (b - a)|` over critical intervals.
pub fn brute_force_discrepancy(ps: &PointSet) -> Result<DiscrepancyValue, DiscrepancyError> {
    let n = ps.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(DiscrepancyError::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let at = |value, above| Endpoint { value, above };
    let mut lefts = vec![at(0.0, false)];
    let mut rights = vec![at(1.0, false)];
    for &x in ps.points() {
        lefts.extend([at(x, false), at(x, true)]);
        rights.extend([at(x, false), at(x, true)]);
    }
    let local = |a: &Endpoint, b: &Endpoint| {
        let inside = ps
            .points()
            .iter()
            .filter(|&&x| a.admits(x) && !b.admits(x))
            .count();
        (inside as f64 / n as f64 - (b.value - a.value)).abs()
    };
    let mut star: f64 = 0.0;
    let mut extreme: f64 = 0.0;
    for a in &lefts {
        for b in &rights {
            if b < a {
                continue;
            }
            let d = local(a, b);
            extreme = extreme.max(d);
            if *a == at(0.0, false) {
                star = star.max(d);
            }
        }
    }
    Ok(DiscrepancyValue { n, star, extreme })
}

/// Discrepancies of the prefixes `x_1..x_N` at each checkpoint `N`.
///
/// Points between checkpoints are sorted as a batch and merged into the
/// running sorted prefix. Checkpoints beyond the stream are ignored.
pub fn prefix_discrepancies(
    stream: impl IntoIterator<Item = f64>,
    checkpoints: &[usize],
) -> Vec<(usize, DiscrepancyValue)> {
    let mut stream = stream.into_iter();
    let mut sorted: Vec<f64> = Vec::new();
    let mut merged: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(checkpoints.len());
    for &target in checkpoints {
        if target < sorted.len() || target == 0 {
            continue;
        }
        let mut batch: Vec<f64> = stream.by_ref().take(target - sorted.len()).collect();
        batch.sort_by(f64::total_cmp);
        merged.clear();
        merged.reserve(sorted.len() + batch.len());
        let (mut i, mut j) = (0, 0);
        while i < sorted.len() && j < batch.len() {
            if sorted[i] <= batch[j] {
                merged.push(sorted[i]);
                i += 1;
            } else {
                merged.push(batch[j]);
                j += 1;
            }
        }
        merged.extend_from_slice(&sorted[i..]);
        merged.extend_from_slice(&batch[j..]);
        std::mem::swap(&mut sorted, &mut merged);
        if sorted.len() < target {
            break;
        }
        out.push((target, evaluate_sorted(&sorted)));
    }
    out
}
