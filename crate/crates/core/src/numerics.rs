//! Exact binary fixed-point arithmetic on `[0, 1)`.
//!
//! A sample point `x` is held as a `P`-bit mantissa `m`, representing
//! `m / 2^P`. Fractional parts `{n x}` are then `(n * m) mod 2^P`, which is
//! exact integer arithmetic. For `n = 2^k` the product is a left shift, so the
//! leading bits of `{2^k x}` are a plain bit-window read of `m`.
//!
//! The hot loop of the experiments only needs the leading 64 bits of each
//! `{n x}`. [`FracTerm`] precomputes a plan for one multiplier `n` and
//! returns those bits exactly: either from a handful of bit windows (when `n`
//! has a sparse signed-binary form, e.g. `2^k` or `2^k - 1`) or from a
//! truncated product, falling back to the full product in the rare case where
//! a carry from the discarded low part could reach the leading word.

use num_bigint::BigUint;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default number of guard bits kept below the largest operand.
pub const DEFAULT_GUARD_BITS: u64 = 64;

/// Smallest precision accepted by [`sample_unit`].
pub const MIN_SAMPLE_PRECISION: u64 = 128;

/// NAF weight above which a multiplier is treated as dense.
const SPARSE_WEIGHT_LIMIT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericsError {
    #[error("precision of {precision} bits is below the minimum of {minimum} bits")]
    PrecisionTooSmall { precision: u64, minimum: u64 },
    #[error("guard of {guard} bits does not fit in a precision of {precision} bits")]
    InvalidBudget { precision: u64, guard: u64 },
    #[error(
        "operand of {operand_bits} bits exceeds the budget of {budget_bits} bits \
         (precision of at least {required} bits required)"
    )]
    BudgetExceeded {
        operand_bits: u64,
        budget_bits: u64,
        required: u64,
    },
    #[error("mantissa has {bits} bits but the precision is {precision} bits")]
    MantissaOverflow { bits: u64, precision: u64 },
}

/// Precision `P` together with the guard `G`; operands may use `P - G` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionBudget {
    precision_bits: u64,
    guard_bits: u64,
}

impl PrecisionBudget {
    pub fn new(precision_bits: u64, guard_bits: u64) -> Result<Self, NumericsError> {
        if precision_bits == 0 || guard_bits > precision_bits {
            return Err(NumericsError::InvalidBudget {
                precision: precision_bits,
                guard: guard_bits,
            });
        }
        Ok(Self {
            precision_bits,
            guard_bits,
        })
    }

    /// Budget sized so that operands of `operand_bits` bits are admissible.
    pub fn for_operand_bits(operand_bits: u64, guard_bits: u64) -> Self {
        Self {
            precision_bits: (operand_bits + guard_bits).max(1),
            guard_bits,
        }
    }

    pub fn precision_bits(&self) -> u64 {
        self.precision_bits
    }

    pub fn guard_bits(&self) -> u64 {
        self.guard_bits
    }

    pub fn max_operand_bits(&self) -> u64 {
        self.precision_bits - self.guard_bits
    }

    pub fn check_operand(&self, operand_bits: u64) -> Result<(), NumericsError> {
        if operand_bits > self.max_operand_bits() {
            Err(NumericsError::BudgetExceeded {
                operand_bits,
                budget_bits: self.max_operand_bits(),
                required: operand_bits + self.guard_bits,
            })
        } else {
            Ok(())
        }
    }
}

/// A number `mantissa / 2^P` in `[0, 1)`.
///
/// Limbs are little-endian 64-bit words; bits at or above `P` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitFraction {
    limbs: Vec<u64>,
    budget: PrecisionBudget,
}

fn limb_count(bits: u64) -> usize {
    bits.div_ceil(64) as usize
}

impl UnitFraction {
    pub fn zero(budget: PrecisionBudget) -> Self {
        Self {
            limbs: vec![0; limb_count(budget.precision_bits)],
            budget,
        }
    }

    pub fn from_mantissa(mantissa: &BigUint, budget: PrecisionBudget) -> Result<Self, NumericsError> {
        let bits = mantissa.bits();
        if bits > budget.precision_bits {
            return Err(NumericsError::MantissaOverflow {
                bits,
                precision: budget.precision_bits,
            });
        }
        let mut limbs = mantissa.to_u64_digits();
        limbs.resize(limb_count(budget.precision_bits), 0);
        Ok(Self { limbs, budget })
    }

    fn from_limbs_masked(mut limbs: Vec<u64>, budget: PrecisionBudget) -> Self {
        let len = limb_count(budget.precision_bits);
        limbs.resize(len, 0);
        let spare = (len as u64) * 64 - budget.precision_bits;
        if spare > 0 {
            if let Some(top) = limbs.last_mut() {
                *top &= u64::MAX >> spare;
            }
        }
        Self { limbs, budget }
    }

    pub fn mantissa(&self) -> BigUint {
        let mut digits = Vec::with_capacity(self.limbs.len() * 2);
        for &limb in &self.limbs {
            digits.push(limb as u32);
            digits.push((limb >> 32) as u32);
        }
        BigUint::new(digits)
    }

    pub fn budget(&self) -> PrecisionBudget {
        self.budget
    }

    pub fn precision_bits(&self) -> u64 {
        self.budget.precision_bits
    }

    fn limb(&self, index: i64) -> u64 {
        if index < 0 {
            0
        } else {
            self.limbs.get(index as usize).copied().unwrap_or(0)
        }
    }

    /// Bits `[lo, lo + 128)` of the mantissa; positions outside `[0, P)` read as zero.
    pub fn bit_window(&self, lo: i64) -> u128 {
        let q = lo.div_euclid(64);
        let r = lo.rem_euclid(64) as u32;
        let (l0, l1, l2) = (self.limb(q), self.limb(q + 1), self.limb(q + 2));
        let (low, high) = if r == 0 {
            (l0, l1)
        } else {
            (
                (l0 >> r) | (l1 << (64 - r)),
                (l1 >> r) | (l2 << (64 - r)),
            )
        };
        (u128::from(high) << 64) | u128::from(low)
    }

    /// Leading 64 bits, i.e. `floor(x * 2^64)`.
    pub fn top_u64(&self) -> u64 {
        (self.bit_window(self.budget.precision_bits as i64 - 128) >> 64) as u64
    }

    /// Bits of the mantissa from position `shift` upward, as an integer.
    fn high_part(&self, shift: u64) -> BigUint {
        if shift == 0 {
            return self.mantissa();
        }
        let width = self.budget.precision_bits.saturating_sub(shift);
        let n = limb_count(width);
        let mut digits = Vec::with_capacity(n * 2);
        for i in 0..n {
            let w = self.bit_window(shift as i64 + 64 * i as i64) as u64;
            digits.push(w as u32);
            digits.push((w >> 32) as u32);
        }
        BigUint::new(digits)
    }

    pub fn to_real(&self) -> f64 {
        to_real(self)
    }
}

/// Deterministically draws a uniform point with `precision_bits` bits.
///
/// Bits are produced most-significant first from a ChaCha stream selected by
/// `index`, so the point drawn at precision `P + j` truncates to the one drawn
/// at precision `P`.
pub fn sample_unit(seed: u64, index: u64, precision_bits: u64) -> Result<UnitFraction, NumericsError> {
    sample_unit_with_budget(
        seed,
        index,
        PrecisionBudget::new(precision_bits, DEFAULT_GUARD_BITS.min(precision_bits))?,
    )
}

pub fn sample_unit_with_budget(
    seed: u64,
    index: u64,
    budget: PrecisionBudget,
) -> Result<UnitFraction, NumericsError> {
    let precision = budget.precision_bits;
    if precision < MIN_SAMPLE_PRECISION {
        return Err(NumericsError::PrecisionTooSmall {
            precision,
            minimum: MIN_SAMPLE_PRECISION,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let words = limb_count(precision);
    let mut limbs = vec![0u64; words];
    // word j of the stream fills limb (words - 1 - j) before the final shift
    for slot in limbs.iter_mut().rev() {
        *slot = rng.next_u64();
    }
    let excess = (words as u64 * 64 - precision) as u32;
    if excess > 0 {
        for i in 0..words {
            let next = if i + 1 < words { limbs[i + 1] } else { 0 };
            limbs[i] = (limbs[i] >> excess) | (next << (64 - excess));
        }
    }
    Ok(UnitFraction::from_limbs_masked(limbs, budget))
}

/// `{n x}`, computed exactly as `(n * mantissa) mod 2^P`.
pub fn frac_mul(n: &BigUint, x: &UnitFraction) -> Result<UnitFraction, NumericsError> {
    x.budget.check_operand(n.bits())?;
    let product = n * x.mantissa();
    Ok(UnitFraction::from_limbs_masked(product.to_u64_digits(), x.budget))
}

/// `{2^k x}` as a full-precision value.
pub fn frac_shift(x: &UnitFraction, k: u64) -> Result<UnitFraction, NumericsError> {
    check_shift(x, k)?;
    let limbs = (0..x.limbs.len())
        .map(|i| x.bit_window(64 * i as i64 - k as i64) as u64)
        .collect();
    Ok(UnitFraction::from_limbs_masked(limbs, x.budget))
}

/// Leading 64 bits of `{2^k x}`; a single window read.
pub fn frac_shift_top(x: &UnitFraction, k: u64) -> Result<u64, NumericsError> {
    check_shift(x, k)?;
    Ok((x.bit_window(x.budget.precision_bits as i64 - 128 - k as i64) >> 64) as u64)
}

fn check_shift(x: &UnitFraction, k: u64) -> Result<(), NumericsError> {
    if k > x.budget.max_operand_bits() {
        Err(NumericsError::BudgetExceeded {
            operand_bits: k,
            budget_bits: x.budget.max_operand_bits(),
            required: k + x.budget.guard_bits,
        })
    } else {
        Ok(())
    }
}

pub fn to_real(x: &UnitFraction) -> f64 {
    unit_real_from_top(x.top_u64())
}

/// Converts `t / 2^64` to `f64`, truncating so that the result stays below 1.
pub fn unit_real_from_top(top: u64) -> f64 {
    let significant = 64 - top.leading_zeros();
    let kept = if significant > 53 {
        top & !((1u64 << (significant - 53)) - 1)
    } else {
        top
    };
    kept as f64 * (1.0 / 18_446_744_073_709_551_616.0)
}

/// One signed binary digit `sign * 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignedDigit {
    pub negative: bool,
    pub exponent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TermRepr {
    Sparse(Vec<SignedDigit>),
    Dense(BigUint),
}

/// Precomputed evaluation plan for `x -> {n x}` at a fixed multiplier `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FracTerm {
    bits: u64,
    repr: TermRepr,
}

impl FracTerm {
    pub fn power_of_two(k: u64) -> Self {
        Self {
            bits: k + 1,
            repr: TermRepr::Sparse(vec![SignedDigit {
                negative: false,
                exponent: k,
            }]),
        }
    }

    /// Builds a plan from a signed-digit expansion; `bits` must be the bit length of the value.
    pub fn from_signed_digits(digits: Vec<SignedDigit>, bits: u64) -> Self {
        Self {
            bits,
            repr: TermRepr::Sparse(digits),
        }
    }

    pub fn from_biguint(n: &BigUint) -> Self {
        let bits = n.bits();
        match non_adjacent_form(n, SPARSE_WEIGHT_LIMIT) {
            Some(digits) => Self {
                bits,
                repr: TermRepr::Sparse(digits),
            },
            None => Self {
                bits,
                repr: TermRepr::Dense(n.clone()),
            },
        }
    }

    pub fn bit_length(&self) -> u64 {
        self.bits
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, TermRepr::Sparse(_))
    }

    pub fn value(&self) -> BigUint {
        match &self.repr {
            TermRepr::Dense(n) => n.clone(),
            TermRepr::Sparse(digits) => {
                let mut pos = BigUint::ZERO;
                let mut neg = BigUint::ZERO;
                for d in digits {
                    let p = BigUint::from(1u8) << d.exponent;
                    if d.negative {
                        neg += p;
                    } else {
                        pos += p;
                    }
                }
                pos - neg
            }
        }
    }

    /// Exact leading 64 bits of `{n x}` at the precision of `x`.
    pub fn top_bits(&self, x: &UnitFraction) -> Result<u64, NumericsError> {
        x.budget.check_operand(self.bits)?;
        let p = x.budget.precision_bits as i64;
        let fast = match &self.repr {
            TermRepr::Sparse(digits) => sparse_top(digits, x, p),
            TermRepr::Dense(n) => dense_top(n, self.bits, x),
        };
        match fast {
            Some(top) => Ok(top),
            None => Ok(frac_mul(&self.value(), x)?.top_u64()),
        }
    }
}

/// Sums 128-bit windows; `None` when a carry from below could reach the top word.
fn sparse_top(digits: &[SignedDigit], x: &UnitFraction, p: i64) -> Option<u64> {
    let mut acc = 0u128;
    let (mut pos, mut neg) = (0u64, 0u64);
    for d in digits {
        let w = x.bit_window(p - 128 - d.exponent as i64);
        if d.negative {
            acc = acc.wrapping_sub(w);
            neg += 1;
        } else {
            acc = acc.wrapping_add(w);
            pos += 1;
        }
    }
    let low = acc as u64;
    let up = pos.saturating_sub(1);
    if low >= neg && low <= u64::MAX - up {
        Some((acc >> 64) as u64)
    } else {
        None
    }
}

fn dense_top(n: &BigUint, bits: u64, x: &UnitFraction) -> Option<u64> {
    let p = x.budget.precision_bits;
    let shift = p.saturating_sub(bits + 128);
    let product = n * x.high_part(shift);
    let digits = product.to_u64_digits();
    let lo = p as i64 - 128 - shift as i64;
    let get = |i: i64| -> u64 {
        if i < 0 {
            0
        } else {
            digits.get(i as usize).copied().unwrap_or(0)
        }
    };
    let q = lo.div_euclid(64);
    let r = lo.rem_euclid(64) as u32;
    let (l0, l1, l2) = (get(q), get(q + 1), get(q + 2));
    let (low, high) = if r == 0 {
        (l0, l1)
    } else {
        ((l0 >> r) | (l1 << (64 - r)), (l1 >> r) | (l2 << (64 - r)))
    };
    let high = if p < 64 {
        high & (u64::MAX >> (64 - p))
    } else {
        high
    };
    if shift == 0 || low != u64::MAX {
        Some(high)
    } else {
        None
    }
}

/// Non-adjacent form of `n`, or `None` once more than `max_weight` digits are nonzero.
fn non_adjacent_form(n: &BigUint, max_weight: usize) -> Option<Vec<SignedDigit>> {
    let limbs = n.to_u64_digits();
    let bit = |i: u64| -> u64 {
        limbs
            .get((i / 64) as usize)
            .map_or(0, |limb| (limb >> (i % 64)) & 1)
    };
    let mut digits = Vec::new();
    let mut carry = 0u64;
    let total = n.bits() + 1;
    let mut i = 0;
    while i < total || carry != 0 {
        let t = bit(i) + carry;
        match t {
            0 => carry = 0,
            2 => carry = 1,
            _ => {
                if bit(i + 1) == 1 {
                    digits.push(SignedDigit {
                        negative: true,
                        exponent: i,
                    });
                    carry = 1;
                } else {
                    digits.push(SignedDigit {
                        negative: false,
                        exponent: i,
                    });
                    carry = 0;
                }
                if digits.len() > max_weight {
                    return None;
                }
            }
        }
        i += 1;
    }
    Some(digits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use rand::{Rng, SeedableRng};

    fn budget(p: u64, g: u64) -> PrecisionBudget {
        PrecisionBudget::new(p, g).unwrap()
    }

    fn unit(num: u64, p: u64) -> UnitFraction {
        UnitFraction::from_mantissa(&BigUint::from(num), budget(p, 0)).unwrap()
    }

    #[test]
    fn sample_is_deterministic_and_index_separated() {
        let a = sample_unit(1, 0, 256).unwrap();
        let b = sample_unit(1, 0, 256).unwrap();
        let c = sample_unit(1, 1, 256).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mantissa(), c.mantissa());
        assert!(a.mantissa().bits() <= 256);
    }

    #[test]
    fn sample_rejects_small_precision() {
        assert!(matches!(
            sample_unit(1, 0, 64),
            Err(NumericsError::PrecisionTooSmall { .. })
        ));
    }

    #[test]
    fn sample_mean_is_one_half() {
        let mean: f64 = (0..10_000)
            .map(|i| sample_unit(7, i, 128).unwrap().to_real())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn longer_samples_extend_shorter_ones() {
        for p in [128u64, 130, 191, 200, 1000] {
            let short = sample_unit(3, 9, p).unwrap();
            let long = sample_unit(3, 9, p + 64).unwrap();
            assert_eq!(long.mantissa() >> 64u32, short.mantissa());
            assert!((long.to_real() - short.to_real()).abs() < 2f64.powi(-63));
        }
    }

    #[test]
    fn frac_mul_hand_values() {
        let x = unit(5, 3);
        let y = frac_mul(&BigUint::from(3u8), &x).unwrap();
        assert_eq!(y.mantissa(), BigUint::from(7u8));
        assert_eq!(frac_mul(&BigUint::one(), &x).unwrap(), x);
    }

    #[test]
    fn frac_mul_rejects_oversized_operand() {
        let x = sample_unit(1, 0, 128).unwrap();
        let n = BigUint::one() << 100u32;
        match frac_mul(&n, &x) {
            Err(NumericsError::BudgetExceeded { required, .. }) => assert_eq!(required, 165),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frac_shift_hand_values() {
        let half = unit(128, 8);
        assert_eq!(frac_shift(&half, 1).unwrap().mantissa(), BigUint::ZERO);
        assert_eq!(frac_shift(&half, 0).unwrap(), half);
        let x = sample_unit(2, 2, 300).unwrap();
        assert!(frac_shift(&x, 237).is_err());
    }

    #[test]
    fn shift_matches_multiplication_by_powers_of_two() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let p = rng.random_range(128..700u64);
            let x = sample_unit(5, i, p).unwrap();
            let k = rng.random_range(0..=p - 65);
            let by_mul = frac_mul(&(BigUint::one() << k), &x).unwrap();
            assert_eq!(frac_shift(&x, k).unwrap(), by_mul);
            assert_eq!(frac_shift_top(&x, k).unwrap(), by_mul.top_u64());
        }
    }

    #[test]
    fn to_real_fixed_points() {
        assert_eq!(unit(0, 16).to_real(), 0.0);
        let half = UnitFraction::from_mantissa(&(BigUint::one() << 199u32), budget(200, 64)).unwrap();
        assert_eq!(half.to_real(), 0.5);
        assert!(unit_real_from_top(u64::MAX) < 1.0);
    }

    #[test]
    fn naf_reconstructs_value() {
        for v in [1u64, 2, 3, 7, 15, 1023, 0b1011_0110, (1 << 40) - 1, 3 << 20] {
            let n = BigUint::from(v);
            assert_eq!(FracTerm::from_biguint(&n).value(), n);
        }
        let m = (BigUint::one() << 5000u32) - 1u8;
        let t = FracTerm::from_biguint(&m);
        assert!(t.is_sparse());
        assert_eq!(t.value(), m);
    }

    #[test]
    fn term_top_bits_match_exact_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for i in 0..400 {
            let p = rng.random_range(128..2000u64);
            let x = sample_unit(9, i, p).unwrap();
            let nbits = rng.random_range(1..=p - 64);
            let n = match i % 3 {
                0 => (BigUint::one() << nbits) - 1u8,
                1 => BigUint::one() << (nbits - 1),
                _ => {
                    let mut words = vec![0u32; nbits.div_ceil(32) as usize];
                    for w in words.iter_mut() {
                        *w = rng.random();
                    }
                    let v = BigUint::new(words);
                    v % (BigUint::one() << nbits)
                }
            };
            let term = FracTerm::from_biguint(&n);
            let expected = frac_mul(&n, &x).unwrap().top_u64();
            assert_eq!(term.top_bits(&x).unwrap(), expected, "i={i} p={p} bits={nbits}");
        }
    }

    #[test]
    fn carry_ambiguity_falls_back_to_exact() {
        // x = 1 - 2^-P: every window of 2^k x - x has an all-ones tail
        let p = 256;
        let m = (BigUint::one() << p) - 1u8;
        let x = UnitFraction::from_mantissa(&m, budget(p, 64)).unwrap();
        for n in [
            (BigUint::one() << 100u32) - 1u8,
            BigUint::from(12345u32),
            BigUint::from(0xffff_ffff_ffffu64) * 977u32,
        ] {
            let term = FracTerm::from_biguint(&n);
            assert_eq!(term.top_bits(&x).unwrap(), frac_mul(&n, &x).unwrap().top_u64());
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn multiplication_composes(seed in any::<u64>(), a in 1u64..1 << 30, b in 1u64..1 << 30) {
                let x = sample_unit(seed, 0, 256).unwrap();
                let (na, nb) = (BigUint::from(a), BigUint::from(b));
                let lhs = frac_mul(&(&na * &nb), &x).unwrap();
                let rhs = frac_mul(&na, &frac_mul(&nb, &x).unwrap()).unwrap();
                prop_assert_eq!(lhs, rhs);
            }

            #[test]
            fn shifts_compose(seed in any::<u64>(), j in 0u64..200, k in 0u64..200) {
                let x = sample_unit(seed, 1, 512).unwrap();
                let twice = frac_shift(&frac_shift(&x, j).unwrap(), k).unwrap();
                prop_assert_eq!(frac_shift(&x, j + k).unwrap(), twice);
            }

            #[test]
            fn precision_ladder_agrees_on_leading_bits(seed in any::<u64>(), n in 1u64..1 << 32) {
                let n = BigUint::from(n);
                let p = 256u64;
                let lo = frac_mul(&n, &sample_unit(seed, 2, p).unwrap()).unwrap();
                let hi = frac_mul(&n, &sample_unit(seed, 2, p + 64).unwrap()).unwrap();
                // the two differ by less than n * 2^-P, so the top P - G bits only
                // disagree across a carry, which has probability below 2^(32 - G)
                let keep = p - 64;
                prop_assert_eq!(lo.mantissa() >> (p - keep), hi.mantissa() >> (p + 64 - keep));
            }
        }
    }
}
