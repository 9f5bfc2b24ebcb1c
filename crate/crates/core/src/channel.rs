//! The deletion channel: parameters, trace sampling and the exact
//! position-tracking dynamic program behind every statistic in the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Deletion probability `delta`; each bit survives independently with `rho = 1 - delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub delta: f64,
}

impl ChannelParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("{delta} is not in (0, 1)")));
        }
        Ok(Self { delta })
    }

    pub fn rho(&self) -> f64 {
        1.0 - self.delta
    }
}

/// A channel output together with the source index of every surviving bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub bits: Vec<u8>,
    pub origin: Vec<usize>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bit `i` of the zero-padded trace.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.bits.get(i).copied().unwrap_or(0)
    }
}

pub fn sample_trace_with<R: Rng>(x: &BitString, ch: &ChannelParams, rng: &mut R) -> Trace {
    let rho = ch.rho();
    let mut bits = Vec::with_capacity(x.len());
    let mut origin = Vec::with_capacity(x.len());
    for (j, &b) in x.bits().iter().enumerate() {
        if rng.gen::<f64>() < rho {
            bits.push(b);
            origin.push(j);
        }
    }
    Trace { bits, origin }
}

/// One trace drawn with a dedicated seed.
pub fn sample_trace(x: &BitString, ch: &ChannelParams, seed: u64) -> Trace {
    sample_trace_with(x, ch, &mut stream_rng(seed, 0))
}

/// How trace positions past the end of the trace are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Missing positions read as 0.
    Padded,
    /// Every constrained position must lie inside the trace.
    InTrace,
}

/// A conjunction of single-bit constraints on a window of trace positions,
/// given as `(offset, bit)` pairs with distinct offsets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cylinder {
    constraints: Vec<(usize, u8)>,
}

impl Cylinder {
    pub fn new(mut constraints: Vec<(usize, u8)>) -> Result<Self> {
        constraints.sort_unstable();
        for w in constraints.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(invalid("cylinder", format!("offset {} constrained twice", w[0].0)));
            }
        }
        if constraints.iter().any(|&(_, b)| b > 1) {
            return Err(invalid("cylinder", "constraint bits must be 0 or 1"));
        }
        Ok(Self { constraints })
    }

    /// All positions `0..bits.len()` fixed to `bits`.
    pub fn contiguous(bits: &[u8]) -> Self {
        Self {
            constraints: bits.iter().enumerate().map(|(o, &b)| (o, b)).collect(),
        }
    }

    pub fn constraints(&self) -> &[(usize, u8)] {
        &self.constraints
    }

    /// Number of trace positions the constraint looks at (last offset + 1).
    pub fn span(&self) -> usize {
        self.constraints.last().map_or(0, |&(o, _)| o + 1)
    }

    pub fn accepts_zeros(&self) -> bool {
        self.constraints.iter().all(|&(_, b)| b == 0)
    }

    pub fn matches(&self, window: impl Fn(usize) -> u8) -> bool {
        self.constraints.iter().all(|&(o, b)| window(o) == b)
    }
}

/// Pr[r_i = s] for the source index r_i feeding trace position i, and
/// Pr[|y| <= i], tabulated for a fixed length and channel.
pub struct ChannelTables<T> {
    n: usize,
    rho: T,
    delta: T,
    delta_pow: Vec<T>,
    hit: Vec<Vec<T>>,
    len_le: Vec<T>,
}

impl<T: Scalar> ChannelTables<T> {
    pub fn new(n: usize, ch: &ChannelParams) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "length must be positive"));
        }
        let rho = ch.rho();
        let hit: Vec<Vec<T>> = (0..n).map(|i| T::rank_position_pmf(i, n, rho)).collect();
        let len_le: Vec<T> = (0..n).map(|i| T::binomial_cdf(i, n, rho)).collect();
        if hit.iter().flatten().chain(len_le.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel tables"));
        }
        let delta = T::from_f64(ch.delta);
        let mut delta_pow = Vec::with_capacity(n);
        let mut acc = T::one();
        for _ in 0..n {
            delta_pow.push(acc.clone());
            acc = acc * delta.clone();
        }
        Ok(Self {
            n,
            rho: T::from_f64(rho),
            delta,
            delta_pow,
            hit,
            len_le,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Pr[r_i = s].
    pub fn hit(&self, i: usize, s: usize) -> &T {
        &self.hit[i][s]
    }

    /// Pr[|y| <= i].
    pub fn len_at_most(&self, i: usize) -> &T {
        &self.len_le[i]
    }

    /// Pr[y_i = 1] for i in 0..n.
    pub fn one_bit_stats(&self, x: &BitString) -> Result<Vec<T>> {
        self.check_len(x)?;
        Ok((0..self.n)
            .map(|i| {
                let mut acc = T::zero();
                for s in i..self.n {
                    if x.get(s) == 1 {
                        acc = acc + self.hit[i][s].clone();
                    }
                }
                acc
            })
            .collect())
    }

    fn check_len(&self, x: &BitString) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.n,
            });
        }
        Ok(())
    }

    /// One step of the backward recursion: given the profile for offset o+1
    /// and its empty-tail flag, build the profile for offset o.
    fn step(&self, x: &BitString, want: Option<u8>, next: Option<(&[T], bool)>) -> Vec<T> {
        let n = self.n;
        let mut g = vec![T::zero(); n];
        match next {
            None => {
                for (s, gs) in g.iter_mut().enumerate() {
                    if want.map_or(true, |b| x.get(s) == b) {
                        *gs = T::one();
                    }
                }
            }
            Some((gn, zn)) => {
                // tail(s) = sum_{s' > s} rho delta^{s'-s-1} gn(s')
                let mut tail = T::zero();
                for s in (0..n).rev() {
                    if want.map_or(true, |b| x.get(s) == b) {
                        let mut v = tail.clone();
                        if zn {
                            v = v + self.delta_pow[n - 1 - s].clone();
                        }
                        g[s] = v;
                    }
                    tail = self.rho.clone() * gn[s].clone() + self.delta.clone() * tail;
                }
            }
        }
        g
    }

    /// Profile G(s) = Pr[cylinder holds | the window's first position comes from source index s],
    /// plus the flag saying whether an exhausted trace still satisfies it.
    pub fn cylinder_profile(&self, x: &BitString, cyl: &Cylinder, padding: Padding) -> Result<(Vec<T>, bool)> {
        self.check_len(x)?;
        let span = cyl.span();
        if span == 0 {
            return Ok((vec![T::one(); self.n], true));
        }
        let mut want = vec![None; span];
        for &(o, b) in cyl.constraints() {
            want[o] = Some(b);
        }
        let mut next: Option<(Vec<T>, bool)> = None;
        for o in (0..span).rev() {
            let g = self.step(x, want[o], next.as_ref().map(|(g, z)| (g.as_slice(), *z)));
            let tail_ok = next.as_ref().map_or(true, |(_, z)| *z);
            let z = match padding {
                Padding::Padded => tail_ok && want[o] != Some(1),
                Padding::InTrace => tail_ok && want[o].is_none(),
            };
            next = Some((g, z));
        }
        Ok(next.expect("span > 0"))
    }

    /// Combine a profile with the start position distribution.
    pub fn at_start(&self, start: usize, profile: &[T], tail_ok: bool) -> T {
        if start >= self.n {
            return if tail_ok { T::one() } else { T::zero() };
        }
        let mut acc = T::zero();
        for s in start..self.n {
            if !profile[s].is_zero() {
                acc = acc + self.hit[start][s].clone() * profile[s].clone();
            }
        }
        if tail_ok {
            acc = acc + self.len_le[start].clone();
        }
        acc
    }

    /// Pr[the cylinder holds on the trace window starting at `start`].
    pub fn cylinder_prob(&self, x: &BitString, start: usize, cyl: &Cylinder, padding: Padding) -> Result<T> {
        let (g, z) = self.cylinder_profile(x, cyl, padding)?;
        Ok(self.at_start(start, &g, z))
    }

    /// Every pattern of length `ell` at every start: `out[i][code]`.
    pub fn subword_table(&self, x: &BitString, ell: usize) -> Result<Vec<Vec<T>>> {
        if ell == 0 || ell > 24 {
            return Err(invalid("ell", format!("{ell} is outside 1..=24")));
        }
        let offsets: Vec<usize> = (0..ell).collect();
        self.offset_table(x, &offsets, Padding::Padded)
    }

    /// Joint law of the trace bits at `start + offsets[k]`, for every start:
    /// `out[start][code]` with bit k of the code read at `offsets[k]`.
    pub fn offset_table(&self, x: &BitString, offsets: &[usize], padding: Padding) -> Result<Vec<Vec<T>>> {
        self.check_len(x)?;
        if offsets.is_empty() || offsets.len() > 24 {
            return Err(invalid("offsets", "between 1 and 24 offsets are required"));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("offsets", "offsets must be strictly increasing"));
        }
        let span = offsets[offsets.len() - 1] + 1;
        let mut slot = vec![None; span];
        for (k, &o) in offsets.iter().enumerate() {
            slot[o] = Some(k);
        }
        let mut out = vec![vec![T::zero(); 1 << offsets.len()]; self.n];
        let walk = Walk {
            x,
            slot: &slot,
            ell: offsets.len(),
            padding,
        };
        self.fill(&walk, span - 1, None, 0, &mut out);
        Ok(out)
    }

    fn fill(&self, walk: &Walk<'_>, o: usize, next: Option<(&[T], bool)>, code: u64, out: &mut [Vec<T>]) {
        let tail_ok = next.map_or(true, |(_, z)| z);
        let choices: &[Option<u8>] = match walk.slot[o] {
            Some(_) => &[Some(0), Some(1)],
            None => &[None],
        };
        for &want in choices {
            let g = self.step(walk.x, want, next);
            let z = match walk.padding {
                Padding::Padded => tail_ok && want != Some(1),
                Padding::InTrace => tail_ok && want.is_none(),
            };
            let code = match (walk.slot[o], want) {
                (Some(k), Some(b)) => code | ((b as u64) << (walk.ell - 1 - k)),
                _ => code,
            };
            if o == 0 {
                for (i, row) in out.iter_mut().enumerate() {
                    row[code as usize] = self.at_start(i, &g, z);
                }
            } else {
                self.fill(walk, o - 1, Some((&g, z)), code, out);
            }
        }
    }
}

struct Walk<'a> {
    x: &'a BitString,
    slot: &'a [Option<usize>],
    ell: usize,
    padding: Padding,
}

/// Pr[y_i = 1] for i in 0..n, in double precision.
pub fn one_bit_stats(x: &BitString, ch: &ChannelParams) -> Result<Vec<f64>> {
    ChannelTables::<f64>::new(x.len(), ch)?.one_bit_stats(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn ch(d: f64) -> ChannelParams {
        ChannelParams::new(d).unwrap()
    }

    #[test]
    fn rejects_degenerate_delta() {
        assert!(ChannelParams::new(0.0).is_err());
        assert!(ChannelParams::new(1.0).is_err());
        assert!(ChannelParams::new(f64::NAN).is_err());
    }

    #[test]
    fn single_one_one_bit_stat() {
        let x: BitString = "1".parse().unwrap();
        let p = one_bit_stats(&x, &ch(0.3)).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn all_ones_matches_binomial_tail() {
        let x: BitString = "1111".parse().unwrap();
        let c = ch(0.5);
        let p = one_bit_stats(&x, &c).unwrap();
        // Pr[y_i = 1] = Pr[|y| > i]
        let expect = [15.0 / 16.0, 11.0 / 16.0, 5.0 / 16.0, 1.0 / 16.0];
        for i in 0..4 {
            assert!((p[i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_origin_is_increasing() {
        let x = BitString::from_index(0b1011_0110_1, 9);
        let t = sample_trace(&x, &ch(0.4), 11);
        assert!(t.origin.windows(2).all(|w| w[0] < w[1]));
        for (k, &j) in t.origin.iter().enumerate() {
            assert_eq!(t.bits[k], x.get(j));
        }
        assert_eq!(t.get(t.len() + 3), 0);
    }

    #[test]
    fn backends_agree_on_subwords() {
        let x: BitString = "1101001".parse().unwrap();
        let c = ch(0.375);
        let a = ChannelTables::<f64>::new(7, &c).unwrap().subword_table(&x, 3).unwrap();
        let b = ChannelTables::<BigRational>::new(7, &c).unwrap().subword_table(&x, 3).unwrap();
        for i in 0..7 {
            for w in 0..8 {
                assert!((a[i][w] - b[i][w].to_f64()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cylinder_matches_table_marginal() {
        let x: BitString = "1001101".parse().unwrap();
        let c = ch(0.45);
        let t = ChannelTables::<f64>::new(7, &c).unwrap();
        let tab = t.subword_table(&x, 3).unwrap();
        let cyl = Cylinder::new(vec![(0, 1), (2, 0)]).unwrap();
        for i in 0..7 {
            let marg: f64 = (0..8u64).filter(|w| (w >> 2) & 1 == 1 && w & 1 == 0).map(|w| tab[i][w as usize]).sum();
            let direct = t.cylinder_prob(&x, i, &cyl, Padding::Padded).unwrap();
            assert!((marg - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn in_trace_excludes_padding() {
        let x: BitString = "00".parse().unwrap();
        let c = ch(0.5);
        let t = ChannelTables::<f64>::new(2, &c).unwrap();
        let cyl = Cylinder::contiguous(&[0]);
        // y_1 = 0 always when padded; in-trace requires |y| = 2
        assert!((t.cylinder_prob(&x, 1, &cyl, Padding::Padded).unwrap() - 1.0).abs() < 1e-15);
        assert!((t.cylinder_prob(&x, 1, &cyl, Padding::InTrace).unwrap() - 0.25).abs() < 1e-15);
    }
}
