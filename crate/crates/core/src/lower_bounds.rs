//! Witnesses for the lower bounds: gappy string pairs built from ternary
//! polynomials that are tiny near 1, exact certification of how close their
//! statistics are, and the middle-bit argument for random strings.

use num_complex::Complex64;
use num_rational::BigRational;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Pattern};
use crate::channel::{ChannelParams, ChannelTables, Padding};
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GappyString {
    pub blocks: BitString,
    pub t: usize,
    pub expanded: BitString,
}

/// b_0 0^{t-1} b_1 0^{t-1} ...
pub fn build_gappy(b: &BitString, t: usize) -> Result<GappyString> {
    if t == 0 {
        return Err(invalid("t", "must be at least 1"));
    }
    let mut bits = vec![0u8; b.len() * t];
    for (j, &bj) in b.bits().iter().enumerate() {
        bits[j * t] = bj;
    }
    Ok(GappyString {
        blocks: b.clone(),
        t,
        expanded: BitString::new(bits)?,
    })
}

/// Whether `x` has length divisible by t and ones only at multiples of t.
pub fn is_gappy(x: &BitString, t: usize) -> bool {
    t >= 1 && x.len() % t == 0 && x.bits().iter().enumerate().all(|(p, &b)| b == 0 || p % t == 0)
}

/// Nonzero coefficient vector over {-1, 0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct TernaryVector {
    u: Vec<i8>,
}

impl TryFrom<Vec<i8>> for TernaryVector {
    type Error = Error;

    fn try_from(u: Vec<i8>) -> Result<Self> {
        Self::new(u)
    }
}

impl From<TernaryVector> for Vec<i8> {
    fn from(v: TernaryVector) -> Self {
        v.u
    }
}

impl TernaryVector {
    pub fn new(u: Vec<i8>) -> Result<Self> {
        if u.iter().any(|&c| !(-1..=1).contains(&c)) {
            return Err(invalid("u", "entries must be -1, 0 or 1"));
        }
        if u.iter().all(|&c| c == 0) {
            return Err(invalid("u", "vector must have a nonzero entry"));
        }
        Ok(Self { u })
    }

    pub fn coeffs(&self) -> &[i8] {
        &self.u
    }

    /// Degree bound k (length k + 1).
    pub fn k(&self) -> usize {
        self.u.len() - 1
    }

    pub fn eval(&self, w: Complex64) -> Complex64 {
        self.u
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeBudget {
    /// Boundary samples on the circle |w - 1| = r.
    pub samples: usize,
    /// Largest k searched exhaustively.
    pub exhaustive_max_k: usize,
    pub restarts: usize,
    pub moves: usize,
    pub seed: u64,
}

impl Default for BeBudget {
    fn default() -> Self {
        Self {
            samples: 1024,
            exhaustive_max_k: 12,
            restarts: 64,
            moves: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeResult {
    pub u: TernaryVector,
    pub radius: f64,
    /// Max of |u(w)| over the sampled circle, after local refinement near the peak.
    pub objective: f64,
    pub exhaustive: bool,
}

fn boundary(r: f64, samples: usize) -> Vec<Complex64> {
    (0..samples)
        .map(|s| Complex64::new(1.0, 0.0) + Complex64::from_polar(r, std::f64::consts::TAU * s as f64 / samples as f64))
        .collect()
}

/// Sampled boundary max of |u(w)| on |w - 1| = r, refined around the peak.
pub fn be_objective(u: &TernaryVector, r: f64, samples: usize) -> f64 {
    let step = std::f64::consts::TAU / samples as f64;
    let (mut best, mut arg) = (0.0, 0.0);
    for s in 0..samples {
        let phi = step * s as f64;
        let v = u.eval(Complex64::new(1.0, 0.0) + Complex64::from_polar(r, phi)).norm();
        if v > best {
            best = v;
            arg = phi;
        }
    }
    for k in -32i32..=32 {
        let phi = arg + step * k as f64 / 32.0;
        best = f64::max(best, u.eval(Complex64::new(1.0, 0.0) + Complex64::from_polar(r, phi)).norm());
    }
    best
}

struct Dfs<'a> {
    pow: &'a [Vec<Complex64>],
    k: usize,
    best: f64,
    best_u: Vec<i8>,
}

impl Dfs<'_> {
    fn run(&mut self, j: usize, u: &mut Vec<i8>, sums: &[Complex64], started: bool) {
        if j > self.k {
            if !started {
                return;
            }
            let mut m = 0.0f64;
            for s in sums {
                m = m.max(s.norm_sqr());
                if m >= self.best {
                    return;
                }
            }
            self.best = m;
            self.best_u = u.clone();
            return;
        }
        let choices: &[i8] = if started { &[0, 1, -1] } else { &[0, 1] };
        for &c in choices {
            u.push(c);
            if c == 0 {
                self.run(j + 1, u, sums, started);
            } else {
                let next: Vec<Complex64> = sums
                    .iter()
                    .zip(&self.pow[j])
                    .map(|(s, p)| if c > 0 { s + p } else { s - p })
                    .collect();
                self.run(j + 1, u, &next, true);
            }
            u.pop();
        }
    }
}

/// Ternary vector of length kmax + 1 minimizing the sampled boundary max on |w - 1| = r.
pub fn be_search(r: f64, kmax: usize, budget: &BeBudget) -> Result<BeResult> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid("radius", format!("{r} is not in (0, 1)")));
    }
    if budget.samples < 8 {
        return Err(invalid("samples", "at least 8 boundary samples are required"));
    }
    let pts = boundary(r, budget.samples);
    let pow: Vec<Vec<Complex64>> = (0..=kmax)
        .map(|j| pts.iter().map(|w| w.powu(j as u32)).collect())
        .collect();
    let exhaustive = kmax <= budget.exhaustive_max_k;
    let u = if exhaustive {
        exhaustive_search(&pow, kmax, budget.samples)
    } else {
        local_search(&pow, kmax, budget)
    };
    let u = TernaryVector::new(u)?;
    Ok(BeResult {
        objective: be_objective(&u, r, budget.samples),
        u,
        radius: r,
        exhaustive,
    })
}

fn exhaustive_search(pow: &[Vec<Complex64>], kmax: usize, samples: usize) -> Vec<i8> {
    // Fix a short prefix per task; the first nonzero coordinate is +1 by symmetry.
    let depth = (kmax + 1).min(4);
    let mut prefixes: Vec<Vec<i8>> = vec![Vec::new()];
    for _ in 0..depth {
        prefixes = prefixes
            .into_iter()
            .flat_map(|p| {
                let started = p.iter().any(|&c| c != 0);
                let choices: Vec<i8> = if started { vec![0, 1, -1] } else { vec![0, 1] };
                choices.into_iter().map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    let results: Vec<(f64, Vec<i8>)> = prefixes
        .par_iter()
        .map(|p| {
            let mut sums = vec![Complex64::new(0.0, 0.0); samples];
            for (j, &c) in p.iter().enumerate() {
                for (s, pw) in sums.iter_mut().zip(&pow[j]) {
                    *s += pw * c as f64;
                }
            }
            let mut dfs = Dfs {
                pow,
                k: kmax,
                best: f64::INFINITY,
                best_u: Vec::new(),
            };
            let mut u = p.clone();
            let started = p.iter().any(|&c| c != 0);
            dfs.run(depth, &mut u, &sums, started);
            (dfs.best, dfs.best_u)
        })
        .collect();
    results
        .into_iter()
        .filter(|(b, _)| b.is_finite())
        .fold((f64::INFINITY, Vec::new()), |acc, cur| if cur.0 < acc.0 { cur } else { acc })
        .1
}

fn sampled_max(u: &[i8], pow: &[Vec<Complex64>]) -> f64 {
    let samples = pow[0].len();
    (0..samples)
        .map(|s| {
            u.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (j, &c)| acc + pow[j][s] * c as f64)
                .norm()
        })
        .fold(0.0, f64::max)
}

fn local_search(pow: &[Vec<Complex64>], kmax: usize, budget: &BeBudget) -> Vec<i8> {
    let runs: Vec<(f64, Vec<i8>)> = (0..budget.restarts.max(1) as u64)
        .into_par_iter()
        .map(|run| {
            let mut rng = stream_rng(budget.seed, run);
            let mut u: Vec<i8> = (0..=kmax).map(|_| rng.gen_range(-1..=1)).collect();
            if u.iter().all(|&c| c == 0) {
                u[0] = 1;
            }
            let mut cur = sampled_max(&u, pow);
            for _ in 0..budget.moves {
                let j = rng.gen_range(0..=kmax);
                let old = u[j];
                let c = [-1i8, 0, 1][rng.gen_range(0..3)];
                if c == old {
                    continue;
                }
                u[j] = c;
                let v = if u.iter().all(|&c| c == 0) { f64::INFINITY } else { sampled_max(&u, pow) };
                if v < cur {
                    cur = v;
                } else {
                    u[j] = old;
                }
            }
            (cur, u)
        })
        .collect();
    runs.into_iter()
        .fold((f64::INFINITY, Vec::new()), |acc, cur| if cur.0 < acc.0 { cur } else { acc })
        .1
}

/// Multipliers for the hard-pair schedule, plus optional fixed choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardPairSchedule {
    /// ell = ceil(c_ell * m) with m = n^{1/5} / (log2 n)^{2/5}.
    pub c_ell: f64,
    /// t = smallest divisor of n at least c_t * ell * log2(n) / rho.
    pub c_t: f64,
    /// radius = c_r / m.
    pub c_r: f64,
    pub kmax: usize,
    pub budget: BeBudget,
    pub t: Option<usize>,
    pub u: Option<TernaryVector>,
}

impl Default for HardPairSchedule {
    fn default() -> Self {
        Self {
            c_ell: 1.0,
            c_t: 0.25,
            c_r: 0.8,
            kmax: 12,
            budget: BeBudget::default(),
            t: None,
            u: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardPair {
    pub a: BitString,
    pub a2: BitString,
    pub t: usize,
    pub ell: usize,
    pub u: TernaryVector,
    pub radius: f64,
    pub objective: f64,
}

/// m = n^{1/5} / (log2 n)^{2/5}.
pub fn schedule_m(n: usize) -> f64 {
    let nf = n as f64;
    nf.powf(0.2) / nf.log2().powf(0.4)
}

/// Two distinct t-gappy strings whose block difference is 0^{n/(2t)} || u.
pub fn construct_hard_pair(n: usize, ch: &ChannelParams, sched: &HardPairSchedule) -> Result<HardPair> {
    if n < 4 {
        return Err(invalid("n", "must be at least 4"));
    }
    let m = schedule_m(n);
    let ell = ((sched.c_ell * m).ceil() as usize).max(1);
    let t = match sched.t {
        Some(t) => t,
        None => {
            let target = sched.c_t * ell as f64 * (n as f64).log2() / ch.rho();
            (1..=n)
                .find(|&d| n % d == 0 && d as f64 >= target)
                .ok_or_else(|| invalid("t", "no divisor of n meets the schedule"))?
        }
    };
    if t == 0 || n % t != 0 || n / t < 2 || (n / t) % 2 != 0 {
        return Err(invalid("t", format!("t = {t} must divide n = {n} into an even number of blocks")));
    }
    let half = n / (2 * t);
    let radius = sched.c_r / m;
    let (u, objective) = match &sched.u {
        Some(u) => (u.clone(), f64::NAN),
        None => {
            if !(radius < 1.0) {
                return Err(invalid("c_r", format!("radius {radius} is not below 1")));
            }
            let k = (half - 1).min(sched.kmax);
            let r = be_search(radius, k, &sched.budget)?;
            (r.u, r.objective)
        }
    };
    if u.coeffs().len() > half {
        return Err(invalid("u", format!("length {} exceeds n/(2t) = {half}", u.coeffs().len())));
    }
    let mut b = vec![0u8; 2 * half];
    let mut b2 = vec![0u8; 2 * half];
    for (j, &c) in u.coeffs().iter().enumerate() {
        match c {
            1 => b[half + j] = 1,
            -1 => b2[half + j] = 1,
            _ => {}
        }
    }
    let a = build_gappy(&BitString::new(b)?, t)?.expanded;
    let a2 = build_gappy(&BitString::new(b2)?, t)?.expanded;
    Ok(HardPair {
        a,
        a2,
        t,
        ell,
        u,
        radius,
        objective,
    })
}

/// max_i |p_{a,i} - p_{a2,i}| in backend T.
pub fn one_bit_gap<T: Scalar>(a: &BitString, a2: &BitString, ch: &ChannelParams) -> Result<T> {
    if a.len() != a2.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: a2.len() });
    }
    let tab = ChannelTables::<T>::new(a.len(), ch)?;
    let (pa, pb) = (tab.one_bit_stats(a)?, tab.one_bit_stats(a2)?);
    Ok(pa
        .into_iter()
        .zip(pb)
        .map(|(u, v)| (u - v).abs())
        .fold(T::zero(), |m, d| if d > m { d } else { m }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCertificate {
    pub n: usize,
    pub ell: usize,
    pub t: usize,
    pub delta: f64,
    pub precision: String,
    pub one_bit_gap: f64,
    pub signature_gap: f64,
    /// max over |w| >= 2.
    pub heavy_gap: f64,
    /// max over |w| = 1.
    pub weight_one_gap: f64,
    /// max over w = 0^ell.
    pub zero_gap: f64,
    /// max_i sum_{|w| >= 2} |delta p_{i,w}|.
    pub heavy_gap_sum: f64,
    /// weight_one_gap <= one_bit_gap + heavy_gap_sum, checked exactly.
    pub weight_one_holds: bool,
    /// |delta p_{i,0}| <= (2^ell - 1) max_{w != 0} |delta p_{i,w}| for all i, checked exactly.
    pub last_string_holds: bool,
    /// signature_gap <= 2^ell one_bit_gap + (ell + 1) heavy_gap_sum, checked exactly.
    pub signature_bound_holds: bool,
}

fn maxr(a: BigRational, b: &BigRational) -> BigRational {
    if *b > a {
        b.clone()
    } else {
        a
    }
}

/// Exact comparison of two t-gappy strings' one-bit and subword statistics.
pub fn certify_pair(a: &BitString, a2: &BitString, ch: &ChannelParams, ell: usize, t: usize) -> Result<PairCertificate> {
    let n = a.len();
    if a2.len() != n {
        return Err(Error::LengthMismatch { left: n, right: a2.len() });
    }
    if !is_gappy(a, t) || !is_gappy(a2, t) {
        return Err(Error::NotGappy { t });
    }
    if ell == 0 || ell > 12 {
        return Err(invalid("ell", format!("{ell} is outside 1..=12")));
    }
    type R = BigRational;
    let tab = ChannelTables::<R>::new(n, ch)?;
    let (pa, pb) = (tab.one_bit_stats(a)?, tab.one_bit_stats(a2)?);
    let d1: Vec<R> = pa.into_iter().zip(pb).map(|(u, v)| u - v).collect();
    let one_bit = d1.iter().fold(R::zero(), |m, d| maxr(m, &d.clone().abs()));
    let (sa, sb) = (tab.subword_table(a, ell)?, tab.subword_table(a2, ell)?);
    let width = 1usize << ell;

    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let diff: Vec<R> = (0..width).map(|c| sa[i][c].clone() - sb[i][c].clone()).collect();
            let mut heavy = R::zero();
            let mut heavy_sum = R::zero();
            let mut one = R::zero();
            let mut nonzero = R::zero();
            for (c, d) in diff.iter().enumerate() {
                let ad = d.clone().abs();
                let wt = Pattern::new(ell, c as u64).weight();
                if wt >= 2 {
                    heavy_sum = heavy_sum + ad.clone();
                    heavy = maxr(heavy, &ad);
                } else if wt == 1 {
                    one = maxr(one, &ad);
                }
                if c != 0 {
                    nonzero = maxr(nonzero, &ad);
                }
            }
            let zero = diff[0].clone().abs();
            let last_ok = zero <= R::from_usize(width - 1) * nonzero;
            (heavy, heavy_sum, one, zero, last_ok)
        })
        .collect();
    let mut heavy = R::zero();
    let mut heavy_sum = R::zero();
    let mut one = R::zero();
    let mut zero = R::zero();
    let mut last_ok = true;
    for (h, hs, o, z, ok) in rows {
        heavy = maxr(heavy, &h);
        heavy_sum = maxr(heavy_sum, &hs);
        one = maxr(one, &o);
        zero = maxr(zero, &z);
        last_ok &= ok;
    }
    let sig = maxr(maxr(heavy.clone(), &one), &zero);
    let weight_one_holds = one <= one_bit.clone() + heavy_sum.clone();
    let signature_bound_holds =
        sig <= R::from_usize(width) * one_bit.clone() + R::from_usize(ell + 1) * heavy_sum.clone();
    Ok(PairCertificate {
        n,
        ell,
        t,
        delta: ch.delta,
        precision: R::BACKEND.to_string(),
        one_bit_gap: one_bit.to_f64(),
        signature_gap: sig.to_f64(),
        heavy_gap: heavy.to_f64(),
        weight_one_gap: one.to_f64(),
        zero_gap: zero.to_f64(),
        heavy_gap_sum: heavy_sum.to_f64(),
        weight_one_holds,
        last_string_holds: last_ok,
        signature_bound_holds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub pairs: usize,
    pub min_one_bit_gap: f64,
    pub median_one_bit_gap: f64,
}

/// One-bit gaps of uniformly random distinct pairs.
pub fn random_pair_baseline(n: usize, ch: &ChannelParams, pairs: usize, seed: u64) -> Result<Baseline> {
    if pairs == 0 {
        return Err(invalid("pairs", "must be positive"));
    }
    let mut gaps = (0..pairs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let a = BitString::random(n, &mut rng);
            let mut b = BitString::random(n, &mut rng);
            while b == a {
                b = BitString::random(n, &mut rng);
            }
            one_bit_gap::<f64>(&a, &b, ch)
        })
        .collect::<Result<Vec<f64>>>()?;
    gaps.sort_by(f64::total_cmp);
    Ok(Baseline {
        pairs,
        min_one_bit_gap: gaps[0],
        median_one_bit_gap: gaps[pairs / 2],
    })
}

/// A bounded function of the trace bits at sorted positions `indices`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuntaQuery {
    pub indices: Vec<usize>,
    pub table: Vec<f64>,
}

impl JuntaQuery {
    pub fn new(indices: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("indices", "must be non-empty and strictly increasing"));
        }
        if table.len() != 1 << indices.len() {
            return Err(Error::LengthMismatch {
                left: table.len(),
                right: 1 << indices.len(),
            });
        }
        if table.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(invalid("table", "values must lie in [-1, 1]"));
        }
        Ok(Self { indices, table })
    }

    pub fn random<R: Rng>(n: usize, ell: usize, rng: &mut R) -> Self {
        let mut idx = rand::seq::index::sample(rng, n, ell).into_vec();
        idx.sort_unstable();
        let table = (0..1 << ell).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self { indices: idx, table }
    }

    /// E[q] on the padded trace of `x`.
    pub fn expectation(&self, tab: &ChannelTables<f64>, x: &BitString) -> Result<f64> {
        let i1 = self.indices[0];
        let offs: Vec<usize> = self.indices.iter().map(|i| i - i1).collect();
        let joint = tab.offset_table(x, &offs, Padding::Padded)?;
        Ok(joint[i1].iter().zip(&self.table).map(|(p, v)| p * v).sum())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiddleBitGap {
    pub gap: f64,
    pub bound: f64,
}

/// |E q(x) - E q(x')| for x' = x with bit n/2 flipped, and 2 sum_j Pr[r_{i_j} = n/2].
pub fn middle_bit_gap(x: &BitString, ch: &ChannelParams, q: &JuntaQuery) -> Result<MiddleBitGap> {
    let n = x.len();
    if n % 2 != 0 {
        return Err(invalid("n", format!("{n} is odd")));
    }
    if q.indices.last().is_some_and(|&i| i >= n) {
        return Err(invalid("indices", "query positions must be below n"));
    }
    let tab = ChannelTables::<f64>::new(n, ch)?;
    let x2 = x.with_flipped(n / 2);
    let gap = (q.expectation(&tab, x)? - q.expectation(&tab, &x2)?).abs();
    let bound = 2.0 * q.indices.iter().map(|&i| *tab.hit(i, n / 2)).sum::<f64>();
    Ok(MiddleBitGap { gap, bound })
}

/// Largest Pr[r_i = n/2] over i, which scales like 1/sqrt(n).
pub fn middle_hit_peak(n: usize, ch: &ChannelParams) -> f64 {
    (0..=n / 2)
        .map(|i| f64::rank_position_pmf(i, n / 2 + 1, ch.rho())[n / 2])
        .fold(0.0, f64::max)
}
