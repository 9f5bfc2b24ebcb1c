//! Polynomials attached to a source string and to its trace statistics.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bits::{code_bit, BitString, Pattern};
use crate::channel::{ChannelParams, ChannelTables, Padding};
use crate::error::{invalid, Error, Result};

/// Dense univariate polynomial with trailing zeros trimmed.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPoly {
    coeffs: Vec<Complex64>,
}

impl ComplexPoly {
    pub fn new(mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("polynomial coefficients"));
        }
        while coeffs.last().is_some_and(|c| *c == Complex64::new(0.0, 0.0)) {
            coeffs.pop();
        }
        Ok(Self { coeffs })
    }

    pub fn from_real(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }
}

impl Serialize for ComplexPoly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.coeffs.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexPoly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        ComplexPoly::new(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Coefficients p_{a,i} - p_{a2,i} of the one-bit statistic difference.
pub fn deletion_channel_poly(a: &BitString, a2: &BitString, ch: &ChannelParams) -> Result<ComplexPoly> {
    if a.len() != a2.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: a2.len(),
        });
    }
    let t = ChannelTables::<f64>::new(a.len(), ch)?;
    let pa = t.one_bit_stats(a)?;
    let pb = t.one_bit_stats(a2)?;
    let diff: Vec<f64> = pa.iter().zip(&pb).map(|(u, v)| u - v).collect();
    ComplexPoly::from_real(&diff)
}

/// rho * sum_j (a_j - a2_j) w^j with w = 1 - rho + rho z.
pub fn deletion_channel_closed_form(a: &BitString, a2: &BitString, ch: &ChannelParams, z: Complex64) -> Complex64 {
    let rho = ch.rho();
    let w = Complex64::new(ch.delta, 0.0) + z * rho;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in (0..a.len().max(a2.len())).rev() {
        acc = acc * w + (a.get(j) as f64 - a2.get(j) as f64);
    }
    acc * rho
}

/// Radical-inverse angle fraction of `k`; the first 2^m values form the 2^m-point grid.
fn van_der_corput(mut k: u64) -> f64 {
    let mut denom = 1.0;
    let mut v = 0.0;
    while k > 0 {
        denom *= 2.0;
        v += (k & 1) as f64 / denom;
        k >>= 1;
    }
    v
}

/// Points e^{2 pi i u_k}, k < samples, along a nested low-discrepancy sequence.
/// A power-of-two count gives the equispaced grid.
pub fn circle_samples(samples: usize) -> Vec<Complex64> {
    (0..samples as u64)
        .map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * van_der_corput(k)))
        .collect()
}

/// Largest |p(z)| over sampled points of the unit circle. Sample sets are
/// nested, so the result never decreases as `samples` grows.
pub fn circle_max(p: &ComplexPoly, samples: usize) -> Result<f64> {
    if samples < 64 {
        return Err(invalid("samples", format!("{samples} < 64")));
    }
    Ok(circle_samples(samples)
        .into_iter()
        .map(|z| p.eval(z).norm())
        .fold(0.0, f64::max))
}

fn check_pattern(x: &BitString, w: &Pattern) -> Result<()> {
    if w.len() > x.len() {
        return Err(invalid("w", format!("pattern length {} exceeds n = {}", w.len(), x.len())));
    }
    Ok(())
}

/// Sum over i_1 < .. < i_l with x_{i_k} = w_k of z^{i_1} t^{i_l - i_1 - (l - 1)}.
pub fn source_poly_p(x: &BitString, w: &Pattern, z: Complex64, t: Complex64) -> Result<Complex64> {
    check_pattern(x, w)?;
    let ell = w.len();
    let zero = Complex64::new(0.0, 0.0);
    // open[m]: weight of partial tuples with m symbols chosen, the last one already behind us
    let mut open = vec![zero; ell + 1];
    let mut total = zero;
    let mut zp = Complex64::new(1.0, 0.0);
    for p in 0..x.len() {
        let xp = x.get(p);
        let mut next = vec![zero; ell + 1];
        for m in 1..ell {
            next[m] += open[m] * t;
            if xp == w.bit(m) {
                next[m + 1] += open[m];
            }
        }
        if xp == w.bit(0) {
            next[1] += zp;
        }
        total += next[ell];
        next[ell] = zero;
        open = next;
        zp *= z;
    }
    Ok(total)
}

/// Visit every strictly increasing l-tuple from 0..n.
pub fn for_each_tuple(n: usize, ell: usize, mut f: impl FnMut(&[usize])) {
    if ell == 0 || ell > n {
        return;
    }
    let mut idx: Vec<usize> = (0..ell).collect();
    loop {
        f(&idx);
        let mut k = ell;
        while k > 0 && idx[k - 1] == n - ell + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return;
        }
        idx[k - 1] += 1;
        for m in k..ell {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// Direct tuple summation of the source polynomial.
pub fn source_poly_p_bruteforce(x: &BitString, w: &Pattern, z: Complex64, t: Complex64) -> Result<Complex64> {
    check_pattern(x, w)?;
    let ell = w.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for_each_tuple(x.len(), ell, |idx| {
        if (0..ell).all(|k| x.get(idx[k]) == w.bit(k)) {
            acc += z.powu(idx[0] as u32) * t.powu((idx[ell - 1] - idx[0] - (ell - 1)) as u32);
        }
    });
    Ok(acc)
}

/// Visit each offset set 0 = o_1 < .. < o_l with o_l - (l - 1) <= dmax and o_l < n.
pub fn for_each_offset_set(n: usize, ell: usize, dmax: usize, mut f: impl FnMut(&[usize], usize)) {
    if ell == 0 || ell > n {
        return;
    }
    if ell == 1 {
        f(&[0], 0);
        return;
    }
    let top = (dmax + ell - 1).min(n - 1);
    for_each_tuple(top, ell - 1, |rest| {
        let mut offs = Vec::with_capacity(ell);
        offs.push(0);
        offs.extend(rest.iter().map(|r| r + 1));
        let d = offs[ell - 1] - (ell - 1);
        f(&offs, d);
    });
}

/// Trace-side coefficients c[j_1][d] = sum of E[prod 1[y_{j_k} = w_k]] over
/// tuples starting at j_1 whose spread beyond contiguity is d.
#[derive(Clone, Debug)]
pub struct TraceCoeffs {
    pub ell: usize,
    pub rho: f64,
    pub coeffs: Vec<Vec<f64>>,
}

impl TraceCoeffs {
    /// rho^{-l} sum c[j1][d] zeta_1^{j1} zeta_2^d with zeta = (z - (1 - rho)) / rho.
    pub fn eval(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        self.eval_range(z1, z2, 0, usize::MAX)
    }

    /// Same sum restricted to lo <= d <= hi.
    pub fn eval_range(&self, z1: Complex64, z2: Complex64, lo: usize, hi: usize) -> Complex64 {
        let delta = 1.0 - self.rho;
        let zeta1 = (z1 - delta) / self.rho;
        let zeta2 = (z2 - delta) / self.rho;
        let mut acc = Complex64::new(0.0, 0.0);
        for row in self.coeffs.iter().rev() {
            let mut inner = Complex64::new(0.0, 0.0);
            let top = hi.min(row.len().saturating_sub(1));
            if lo <= top {
                for d in (lo..=top).rev() {
                    inner = inner * zeta2 + row[d];
                }
                inner *= zeta2.powu(lo as u32);
            }
            acc = acc * zeta1 + inner;
        }
        acc / self.rho.powi(self.ell as i32)
    }

    /// |sum of the terms of degree above d|.
    pub fn tail_beyond(&self, z1: Complex64, z2: Complex64, d: usize) -> f64 {
        self.eval_range(z1, z2, d + 1, usize::MAX).norm()
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.first().map_or(0, |r| r.len().saturating_sub(1))
    }
}

/// Coefficient tables for every pattern of length `ell`, indexed by pattern code.
pub fn trace_coeffs_all(
    x: &BitString,
    ch: &ChannelParams,
    ell: usize,
    dmax: usize,
    padding: Padding,
) -> Result<Vec<TraceCoeffs>> {
    let n = x.len();
    if ell == 0 || ell > n || ell > 16 {
        return Err(invalid("ell", format!("{ell} must be in 1..=min(n, 16)")));
    }
    let tables = ChannelTables::<f64>::new(n, ch)?;
    let dtop = dmax.min(n - ell);
    let mut out = vec![vec![vec![0.0; dtop + 1]; n]; 1 << ell];
    let mut err = None;
    for_each_offset_set(n, ell, dtop, |offs, d| {
        if err.is_some() {
            return;
        }
        match tables.offset_table(x, offs, padding) {
            Ok(tab) => {
                let last = offs[ell - 1];
                for j1 in 0..n - last {
                    for (code, v) in tab[j1].iter().enumerate() {
                        out[code][j1][d] += v;
                    }
                }
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(out
        .into_iter()
        .map(|coeffs| TraceCoeffs {
            ell,
            rho: ch.rho(),
            coeffs,
        })
        .collect())
}

/// Trace-side polynomial restricted to spread at most `dmax`.
pub fn trace_side_q(
    x: &BitString,
    ch: &ChannelParams,
    w: &Pattern,
    z1: Complex64,
    z2: Complex64,
    dmax: usize,
    padding: Padding,
) -> Result<Complex64> {
    check_pattern(x, w)?;
    let all = trace_coeffs_all(x, ch, w.len(), dmax, padding)?;
    Ok(all[w.code() as usize].eval(z1, z2))
}

/// |lhs - rhs| of the source/trace generating-function identity for a
/// window functional `f` and per-gap variables `z`.
pub fn check_mobius(x: &BitString, ch: &ChannelParams, f: &[Complex64], z: &[Complex64]) -> Result<f64> {
    let n = x.len();
    let ell = z.len();
    if ell == 0 || ell > n || ell > 12 {
        return Err(invalid("z", "need between 1 and min(n, 12) variables"));
    }
    if f.len() != 1 << ell {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: 1 << ell,
        });
    }
    let rho = ch.rho();
    let shifted: Vec<Complex64> = z.iter().map(|&zk| zk * rho + ch.delta).collect();
    let monomial = |vars: &[Complex64], idx: &[usize]| {
        let mut m = vars[0].powu(idx[0] as u32);
        for k in 1..ell {
            m *= vars[k].powu((idx[k] - idx[k - 1] - 1) as u32);
        }
        m
    };

    let mut lhs = Complex64::new(0.0, 0.0);
    for_each_tuple(n, ell, |idx| {
        let code = idx.iter().fold(0usize, |c, &i| (c << 1) | x.get(i) as usize);
        lhs += f[code] * monomial(&shifted, idx);
    });
    lhs *= rho.powi(ell as i32);

    let tables = ChannelTables::<f64>::new(n, ch)?;
    let mut rhs = Complex64::new(0.0, 0.0);
    let mut err = None;
    for_each_offset_set(n, ell, n, |offs, _| {
        if err.is_some() {
            return;
        }
        match tables.offset_table(x, offs, Padding::InTrace) {
            Ok(tab) => {
                for j1 in 0..n - offs[ell - 1] {
                    let idx: Vec<usize> = offs.iter().map(|o| j1 + o).collect();
                    let e: Complex64 = tab[j1].iter().zip(f).map(|(p, fv)| fv * p).sum();
                    rhs += e * monomial(z, &idx);
                }
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok((lhs - rhs).norm())
}

/// Evaluation domains for the two variables.
#[derive(Clone, Copy, Debug)]
pub struct EvalDomain {
    pub n: usize,
    pub rho: f64,
}

impl EvalDomain {
    pub fn new(n: usize, ch: &ChannelParams) -> Self {
        Self { n, rho: ch.rho() }
    }

    /// Half-width n^{-2/5} of the arc of the unit circle around 1.
    pub fn arc_halfwidth(&self) -> f64 {
        (self.n as f64).powf(-0.4)
    }

    pub fn segment(&self) -> (f64, f64) {
        (1.0 - self.rho, 1.0 - 0.75 * self.rho)
    }

    pub fn arc_points(&self, count: usize) -> Vec<Complex64> {
        let h = self.arc_halfwidth();
        spread(count, -h, h).into_iter().map(|th| Complex64::from_polar(1.0, th)).collect()
    }

    pub fn segment_points(&self, count: usize) -> Vec<f64> {
        let (lo, hi) = self.segment();
        spread(count, lo, hi)
    }

    pub fn contains_z(&self, z: Complex64) -> bool {
        let (lo, hi) = self.segment();
        let on_arc = (z.norm() - 1.0).abs() < 1e-12 && z.arg().abs() <= self.arc_halfwidth() + 1e-12;
        let on_segment = z.im == 0.0 && z.re >= lo - 1e-12 && z.re <= hi + 1e-12;
        on_arc || on_segment
    }

    pub fn contains_t(&self, t: f64) -> bool {
        let (lo, hi) = self.segment();
        t >= lo - 1e-12 && t <= hi + 1e-12
    }
}

pub(crate) fn spread(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Window functional obtained by marginalizing a table onto chosen bits.
pub fn marginal_code(code: u64, len: usize, offsets: &[usize]) -> usize {
    offsets
        .iter()
        .fold(0usize, |c, &o| (c << 1) | code_bit(code, len, o) as usize)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn source_poly_dp_matches_enumeration(
            bits in proptest::collection::vec(0u8..=1, 3..11),
            ell in 1usize..4,
            code in any::<u64>(),
            zr in -1.0f64..1.0, zi in -1.0f64..1.0, t in -1.0f64..1.0,
        ) {
            let x = BitString::new(bits).unwrap();
            let w = Pattern::new(ell, code & ((1 << ell) - 1));
            let z = Complex64::new(zr, zi);
            let t = Complex64::new(t, 0.0);
            let a = source_poly_p(&x, &w, z, t).unwrap();
            let b = source_poly_p_bruteforce(&x, &w, z, t).unwrap();
            prop_assert!((a - b).norm() < 1e-10);
        }
    }
}
