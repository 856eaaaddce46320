//! Exact Bessel values for arguments on the half-integer grid.
//!
//! With `x = h/2` the power series `Σ (-1)^k (x/2)^(2k+n) / (k! (k+n)!)` has
//! rational terms, so the partial sum is formed exactly over a common
//! denominator and rounded once.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

fn falling(top: u32, bottom: u32) -> BigInt {
    (bottom + 1..=top).fold(BigInt::from(1u32), |acc, v| acc * v)
}

/// Round `num / den` to the nearest double.
pub fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let e = num.bits() as i64 - den.bits() as i64;
    let shift = 64 - e;
    let q = if shift >= 0 { (num.abs() << shift as usize) / den } else { num.abs() / (den << (-shift) as usize) };
    let v = q.to_f64().unwrap() * 2f64.powi(-shift as i32);
    if num.is_negative() {
        -v
    } else {
        v
    }
}

/// `J_n(h/2)` from the exactly summed power series.
pub fn exact_bessel_half(n: u32, h: u32) -> f64 {
    if h == 0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let terms = 60 + h;
    let m = BigInt::from(h);
    let m2 = &m * &m;
    let mut sum = BigInt::zero();
    let mut m_pow = BigInt::from(1u32);
    for k in 0..=terms {
        let t = &m_pow * BigInt::from(16u32).pow(terms - k) * falling(terms, k) * falling(terms + n, k + n);
        if k % 2 == 0 {
            sum += t;
        } else {
            sum -= t;
        }
        m_pow *= &m2;
    }
    let num = sum * m.pow(n);
    let den = BigInt::from(4u32).pow(n) * BigInt::from(16u32).pow(terms) * falling(terms, 0) * falling(terms + n, 0);
    ratio_to_f64(&num, &den)
}
