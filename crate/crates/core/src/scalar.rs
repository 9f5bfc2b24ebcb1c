//! Numeric backends: `f64` for speed, `BigRational` for exact certification.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arithmetic needed by the channel dynamic programs.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    const BACKEND: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    /// Exact conversion for the rational backend.
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn to_f64(&self) -> f64;
    fn is_zero(&self) -> bool;
    fn is_finite(&self) -> bool;

    fn abs(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    /// Entry `j` is the probability that the success of rank `rank` (0-based)
    /// in an i.i.d. Bernoulli(`p`) sequence sits at index `j`, for `j < len`.
    fn rank_position_pmf(rank: usize, len: usize, p: f64) -> Vec<Self>;

    /// Pr[Bin(len, p) <= k].
    fn binomial_cdf(k: usize, len: usize, p: f64) -> Self;
}

impl Scalar for f64 {
    const BACKEND: &'static str = "f64";

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn rank_position_pmf(rank: usize, len: usize, p: f64) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if rank >= len {
            return out;
        }
        if p >= 1.0 {
            out[rank] = 1.0;
            return out;
        }
        let lp = p.ln();
        let lq = (1.0 - p).ln();
        let mut ln_binom = 0.0f64;
        for j in rank..len {
            if j > rank {
                ln_binom += (j as f64).ln() - ((j - rank) as f64).ln();
            }
            out[j] = (ln_binom + (rank + 1) as f64 * lp + (j - rank) as f64 * lq).exp();
        }
        out
    }

    fn binomial_cdf(k: usize, len: usize, p: f64) -> f64 {
        if k >= len {
            return 1.0;
        }
        if p <= 0.0 {
            return 1.0;
        }
        if p >= 1.0 {
            return 0.0;
        }
        let lp = p.ln();
        let lq = (1.0 - p).ln();
        let mut ln_binom = 0.0f64;
        let mut acc = 0.0;
        for m in 0..=k {
            if m > 0 {
                ln_binom += ((len - m + 1) as f64).ln() - (m as f64).ln();
            }
            acc += (ln_binom + m as f64 * lp + (len - m) as f64 * lq).exp();
        }
        acc.min(1.0)
    }
}

fn exact(p: f64) -> BigRational {
    BigRational::from_float(p).expect("finite probability")
}

fn pow(base: &BigRational, e: usize) -> BigRational {
    num_traits::pow(base.clone(), e)
}

impl Scalar for BigRational {
    const BACKEND: &'static str = "exact-rational";

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_f64(v: f64) -> Self {
        exact(v)
    }
    fn from_usize(v: usize) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_finite(&self) -> bool {
        true
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }

    fn rank_position_pmf(rank: usize, len: usize, p: f64) -> Vec<Self> {
        let mut out = vec![<BigRational as Zero>::zero(); len];
        if rank >= len {
            return out;
        }
        let p = exact(p);
        let q = <BigRational as One>::one() - p.clone();
        let mut binom = <BigInt as One>::one();
        let mut qpow = <BigRational as One>::one();
        let head = pow(&p, rank + 1);
        for j in rank..len {
            if j > rank {
                binom = binom * BigInt::from(j) / BigInt::from(j - rank);
                qpow = qpow * q.clone();
            }
            out[j] = BigRational::from_integer(binom.clone()) * head.clone() * qpow.clone();
        }
        out
    }

    fn binomial_cdf(k: usize, len: usize, p: f64) -> Self {
        if k >= len {
            return <BigRational as One>::one();
        }
        let p = exact(p);
        let q = <BigRational as One>::one() - p.clone();
        let mut binom = <BigInt as One>::one();
        let mut acc = <BigRational as Zero>::zero();
        for m in 0..=k {
            if m > 0 {
                binom = binom * BigInt::from(len - m + 1) / BigInt::from(m);
            }
            acc = acc + BigRational::from_integer(binom.clone()) * pow(&p, m) * pow(&q, len - m);
        }
        acc
    }
}
