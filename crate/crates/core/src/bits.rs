use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// A finite source string over {0,1}, read as if followed by infinitely many zeros.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: Vec<u8>,
}

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(invalid("x", "bit string must be non-empty"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid("x", format!("non-binary symbol {b}")));
        }
        Ok(Self { bits })
    }

    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![0; n] }
    }

    /// The `n`-bit string whose binary reading (x_0 most significant) is `value`.
    /// Enumerating `value` in increasing order enumerates strings lexicographically.
    pub fn from_index(value: u64, n: usize) -> Self {
        assert!(n >= 1 && n <= 64);
        let bits = (0..n).map(|i| ((value >> (n - 1 - i)) & 1) as u8).collect();
        Self { bits }
    }

    pub fn to_index(&self) -> u64 {
        assert!(self.len() <= 64);
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bit `i`, with zero padding past the end.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.bits.get(i).copied().unwrap_or(0)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn with_flipped(&self, i: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[i] ^= 1;
        Self { bits }
    }

    pub fn random<R: rand::Rng>(n: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..n).map(|_| rng.gen_range(0..2u8)).collect(),
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parse(format!("unexpected character {other:?} in bit string"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A pattern w ∈ {0,1}^len packed into an integer code, w_0 in the most
/// significant position so that code order is lexicographic order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    len: usize,
    code: u64,
}

impl Pattern {
    pub fn new(len: usize, code: u64) -> Self {
        assert!(len >= 1 && len <= 63, "pattern length {len} out of range");
        assert!(code < (1u64 << len), "pattern code out of range");
        Self { len, code }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let code = bits.iter().fold(0u64, |acc, &b| (acc << 1) | (b & 1) as u64);
        Self::new(bits.len(), code)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn code(&self) -> u64 {
        self.code
    }

    #[inline]
    pub fn bit(&self, k: usize) -> u8 {
        ((self.code >> (self.len - 1 - k)) & 1) as u8
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len).map(|k| self.bit(k)).collect()
    }

    pub fn weight(&self) -> u32 {
        self.code.count_ones()
    }

    pub fn all(len: usize) -> impl Iterator<Item = Pattern> {
        (0..(1u64 << len)).map(move |code| Pattern::new(len, code))
    }
}

/// Bit `k` of a window code of length `len`.
#[inline]
pub fn code_bit(code: u64, len: usize, k: usize) -> u8 {
    ((code >> (len - 1 - k)) & 1) as u8
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.len {
            f.write_str(if self.bit(k) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({self})")
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s.parse::<BitString>()?;
        if bits.len() > 63 {
            return Err(Error::Parse("pattern longer than 63 bits".into()));
        }
        Ok(Pattern::from_bits(bits.bits()))
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
