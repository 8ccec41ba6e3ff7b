//! Fixed-point big-integer arithmetic for the alternating lineage-count series.
//!
//! For large samples the coefficients `c^{N,M,i}` reach ~2^93 while the
//! probability they sum to is at most 1. Coefficients and decay factors are
//! held as integers scaled by `2^bits`, so the only rounding is a few ulps at
//! `2^-bits`, far below f64 resolution of the final result.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// `floor(value * 2^bits)` for an exact rational.
pub(crate) fn to_fixed(value: &BigRational, bits: u32) -> BigInt {
    let scaled = value.numer() << bits as usize;
    scaled.div_floor(value.denom())
}

/// Exactly `x * 2^shift` truncated toward zero, for finite non-negative `x`.
fn f64_to_fixed(x: f64, shift: u32) -> BigInt {
    if x == 0.0 {
        return BigInt::zero();
    }
    let bits = x.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i64;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exp2) = if exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), exponent - 1075)
    };
    let m = BigInt::from(mantissa);
    let total = exp2 + shift as i64;
    if total >= 0 {
        m << total as usize
    } else {
        m >> (-total) as usize
    }
}

/// `e^{-k x}` scaled by `2^bits`, accurate to a few units in the last place.
///
/// The product `k x` is formed exactly; rounding it in f64 first would be
/// amplified by the size of the coefficients it later multiplies.
pub(crate) fn exp_neg_fixed(x: f64, k: u64, bits: u32) -> BigInt {
    debug_assert!(x >= 0.0 && x.is_finite());
    let one = BigInt::one() << bits as usize;
    if x == 0.0 || k == 0 {
        return one;
    }
    let x_approx = x * k as f64;
    if x_approx > (bits as f64 + 2.0) * std::f64::consts::LN_2 {
        return BigInt::zero();
    }
    // halve the argument s times so the Taylor series converges fast, then square back
    let s = (x_approx.log2().ceil().max(0.0) as u32) + 12;
    let work = bits + s + 32;
    let unit = BigInt::one() << work as usize;
    let y = f64_to_fixed(x, work - s) * k;

    let mut sum = unit.clone();
    let mut term = unit.clone();
    let mut n = 1u32;
    loop {
        term = -(&term * &y) >> work as usize;
        term /= n;
        if term.is_zero() {
            break;
        }
        sum += &term;
        n += 1;
    }
    for _ in 0..s {
        sum = (&sum * &sum) >> work as usize;
    }
    sum >> (work - bits) as usize
}

/// `e^{-i(i-1) x}` for `i = 1..=n`, scaled by `2^bits`.
///
/// One exponential `g = e^{-2x}` is enough: the factors obey
/// `q_{i+1} = q_i g^i`. Every product truncates one unit at the working
/// precision, so 32 guard bits absorb the `2n` roundings.
pub(crate) fn exp_neg_triangular(x: f64, n: usize, bits: u32) -> Vec<BigInt> {
    let work = bits + 32;
    let g = exp_neg_fixed(x, 2, work);
    let mut q = BigInt::one() << work as usize;
    let mut power = g.clone();
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        out.push(&q >> 32usize);
        if i < n {
            q = (&q * &power) >> work as usize;
            power = (&power * &g) >> work as usize;
        }
    }
    out
}

/// Convert `value / 2^bits` to the nearest f64.
pub(crate) fn fixed_to_f64(value: &BigInt, bits: u32) -> f64 {
    if value.is_zero() {
        return 0.0;
    }
    let negative = value.sign() == Sign::Minus;
    let mag = value.abs();
    let len = mag.bits();
    // keep 64 significant bits, then scale exactly
    let (top, shift) = if len > 64 {
        ((&mag >> (len - 64) as usize), len as i64 - 64)
    } else {
        (mag.clone(), 0)
    };
    let top = top.to_u64().expect("64 bits fit in u64") as f64;
    let v = top * 2f64.powi((shift - bits as i64) as i32);
    if negative {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_libm() {
        for &x in &[1e-12, 0.001, 0.5, 1.0, 3.75, 20.0, 60.0] {
            let v = fixed_to_f64(&exp_neg_fixed(x, 1, 200), 200);
            let expected = (-x).exp();
            assert!(((v - expected) / expected).abs() < 4e-16, "x = {x}: {v} vs {expected}");
        }
        let v = fixed_to_f64(&exp_neg_fixed(0.1, 90, 200), 200);
        assert!((v - (-9.0f64).exp()).abs() < 1e-18);
        assert_eq!(exp_neg_fixed(1e6, 1, 100), BigInt::zero());
        assert_eq!(exp_neg_fixed(0.0, 3, 10), BigInt::from(1024));
    }

    #[test]
    fn triangular_decays_match_direct_exponentials() {
        for &x in &[1e-9, 0.003, 0.2, 1.7] {
            let fast = exp_neg_triangular(x, 40, 180);
            for (k, v) in fast.iter().enumerate() {
                let i = (k + 1) as u64;
                let direct = exp_neg_fixed(x, i * (i - 1), 180);
                assert!((v - &direct).abs() < BigInt::from(1u64 << 8), "x = {x}, i = {i}");
            }
        }
    }

    #[test]
    fn rational_round_trip() {
        let third = BigRational::new(BigInt::from(1), BigInt::from(3));
        let v = fixed_to_f64(&to_fixed(&third, 120), 120);
        assert!((v - 1.0 / 3.0).abs() < 1e-16);
        let neg = BigRational::new(BigInt::from(-7), BigInt::from(2));
        assert!((fixed_to_f64(&to_fixed(&neg, 80), 80) + 3.5).abs() < 1e-15);
    }
}
