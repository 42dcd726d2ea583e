//! Exact summation of `f64` values.
//!
//! [`ExactSum`] keeps the running sum as an integer multiple of `2^-1074`
//! split into base-`2^32` digits, so additions are exact and the result does
//! not depend on the order in which values or partial sums arrive. Ensemble
//! accumulators built on it merge bitwise-identically however the paths were
//! split across workers.

use alloc::vec::Vec;

const RADIX_BITS: i32 = 32;
const RADIX: i64 = 1 << RADIX_BITS;
const HALF: i64 = 1 << (RADIX_BITS - 1);
const MASK: u128 = (1 << RADIX_BITS) - 1;
/// Each addition changes a digit by less than `2^32`, so this many pending
/// additions cannot overflow an `i64` digit.
const MAX_PENDING: u32 = 1 << 29;

#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    /// Digit `i` has weight `2^(32 (lo + i) - 1074)`.
    lo: i32,
    digits: Vec<i64>,
    pending: u32,
    nan: bool,
    pos_inf: bool,
    neg_inf: bool,
}

fn pow2(k: i32) -> f64 {
    if k > 1023 {
        pow2(k - 600) * pow2(600)
    } else if k < -1022 {
        pow2(k + 600) * pow2(-600)
    } else {
        f64::from_bits(((k + 1023) as u64) << 52)
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_span(&mut self, first: i32, last: i32) {
        if self.digits.is_empty() {
            self.lo = first;
            self.digits.resize((last - first + 1) as usize, 0);
            return;
        }
        if first < self.lo {
            let extra = (self.lo - first) as usize;
            self.digits.splice(0..0, core::iter::repeat_n(0, extra));
            self.lo = first;
        }
        let hi = self.lo + self.digits.len() as i32 - 1;
        if last > hi {
            self.digits.resize(self.digits.len() + (last - hi) as usize, 0);
        }
    }

    pub fn add(&mut self, x: f64) {
        if x == 0.0 {
            return;
        }
        if !x.is_finite() {
            if x.is_nan() {
                self.nan = true;
            } else if x > 0.0 {
                self.pos_inf = true;
            } else {
                self.neg_inf = true;
            }
            return;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let fraction = bits & ((1 << 52) - 1);
        // x = ±m 2^(e - 1074)
        let (m, e) = if biased == 0 { (fraction, 0) } else { (fraction | (1 << 52), biased - 1) };
        let limb = e / RADIX_BITS;
        let wide = (m as u128) << (e % RADIX_BITS);
        let parts = [(wide & MASK) as i64, ((wide >> 32) & MASK) as i64, ((wide >> 64) & MASK) as i64];
        let first = parts.iter().position(|p| *p != 0).unwrap_or(0) as i32;
        let last = parts.iter().rposition(|p| *p != 0).unwrap_or(0) as i32;
        self.ensure_span(limb + first, limb + last);
        for j in first..=last {
            let d = &mut self.digits[(limb + j - self.lo) as usize];
            let p = parts[j as usize];
            *d += if negative { -p } else { p };
        }
        self.pending += 1;
        if self.pending >= MAX_PENDING {
            self.normalize();
        }
    }

    /// Carries into canonical form: low digits in `[0, 2^32)`, the top digit in
    /// `[-2^31, 2^31)`, no redundant top digit and no zero low digits.
    pub fn normalize(&mut self) {
        self.pending = 0;
        let mut carry: i64 = 0;
        for d in self.digits.iter_mut() {
            let v = *d + carry;
            *d = v.rem_euclid(RADIX);
            carry = v.div_euclid(RADIX);
        }
        while carry != 0 && carry != -1 {
            self.digits.push(carry.rem_euclid(RADIX));
            carry = carry.div_euclid(RADIX);
        }
        if let Some(top) = self.digits.last_mut() {
            if carry == -1 {
                if *top >= HALF {
                    *top -= RADIX;
                } else {
                    self.digits.push(-1);
                }
            } else if *top >= HALF {
                self.digits.push(0);
            }
        }
        loop {
            let n = self.digits.len();
            if n == 0 {
                break;
            }
            let top = self.digits[n - 1];
            let below = if n >= 2 { Some(self.digits[n - 2]) } else { None };
            match (top, below) {
                (0, None) => {
                    self.digits.pop();
                }
                (0, Some(b)) if b < HALF => {
                    self.digits.pop();
                }
                (-1, Some(b)) if b >= HALF => {
                    self.digits.pop();
                    self.digits[n - 2] -= RADIX;
                }
                _ => break,
            }
        }
        let zeros = self.digits.iter().take_while(|d| **d == 0).count();
        if zeros > 0 {
            self.digits.drain(..zeros);
            self.lo += zeros as i32;
        }
        if self.digits.is_empty() {
            self.lo = 0;
        }
    }

    /// Adds another exact sum.
    pub fn merge(&mut self, other: &ExactSum) {
        self.nan |= other.nan;
        self.pos_inf |= other.pos_inf;
        self.neg_inf |= other.neg_inf;
        let mut o = other.clone();
        o.normalize();
        self.normalize();
        if o.digits.is_empty() {
            return;
        }
        self.ensure_span(o.lo, o.lo + o.digits.len() as i32 - 1);
        for (i, d) in o.digits.iter().enumerate() {
            self.digits[(o.lo - self.lo) as usize + i] += d;
        }
        self.normalize();
    }

    /// The sum rounded to `f64`, accumulated from the most significant digit
    /// down. Non-finite inputs propagate as in ordinary addition.
    pub fn to_f64(&self) -> f64 {
        if self.nan || (self.pos_inf && self.neg_inf) {
            return f64::NAN;
        }
        if self.pos_inf {
            return f64::INFINITY;
        }
        if self.neg_inf {
            return f64::NEG_INFINITY;
        }
        let canonical;
        let s = if self.pending > 0 {
            let mut c = self.clone();
            c.normalize();
            canonical = c;
            &canonical
        } else {
            self
        };
        s.digits
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, d)| acc + *d as f64 * pow2(RADIX_BITS * (s.lo + i as i32) - 1074))
    }

    /// Canonical digits and their lowest weight index, for equality checks.
    pub fn canonical(&self) -> (i32, Vec<i64>) {
        let mut c = self.clone();
        c.normalize();
        (c.lo, c.digits)
    }
}

impl PartialEq for ExactSum {
    fn eq(&self, other: &Self) -> bool {
        (self.nan, self.pos_inf, self.neg_inf) == (other.nan, other.pos_inf, other.neg_inf)
            && self.canonical() == other.canonical()
    }
}
