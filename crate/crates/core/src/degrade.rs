//! Simulating statistics at a higher deletion rate from statistics at a
//! lower one: a second thinning with retention beta = (1 - delta2) / (1 - delta)
//! picks trace positions whose gaps are geometric.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{code_bit, BitString};
use crate::channel::{ChannelParams, Cylinder};
use crate::error::{invalid, Error, Result};
use crate::oracle::{ExactEvaluator, LocalQuery, Oracle};
use crate::poly::for_each_tuple;
use crate::scalar::Scalar;
use crate::signature::{brute_force_signature, SubwordSignature};

/// beta = (1 - delta2) / (1 - delta).
pub fn beta_r(delta: f64, delta2: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} is not in (0, 1)")));
    }
    if !(delta2 >= delta && delta2 < 1.0) {
        return Err(invalid("delta2", format!("{delta2} must lie in [delta, 1) with delta = {delta}")));
    }
    Ok(((1.0 - delta2) / (1.0 - delta)).min(1.0))
}

/// Law of the positions of the successes of rank k .. k + ell - 1 (0-based)
/// in an i.i.d. Bernoulli(p) sequence, with gap tuples of span above `s` lumped into `tail`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorDistribution {
    pub k: usize,
    pub ell: usize,
    pub p: f64,
    pub span_bound: usize,
    /// Gap tuples (g_1 .. g_{ell-1}), each g >= 1, with their probabilities.
    pub outcomes: Vec<(Vec<usize>, f64)>,
    pub tail: f64,
}

impl SelectorDistribution {
    /// Pr[i_k = j] for j < len.
    pub fn start_pmf(&self, len: usize) -> Vec<f64> {
        f64::rank_position_pmf(self.k, len, self.p)
    }

    /// Pr[i_k >= n] = Pr[at most k successes among the first n].
    pub fn start_at_or_beyond(&self, n: usize) -> f64 {
        f64::binomial_cdf(self.k, n, self.p)
    }

    pub fn enumerated_mass(&self) -> f64 {
        self.outcomes.iter().map(|(_, m)| m).sum()
    }

    /// Offsets (0, g_1, g_1 + g_2, ..) of an outcome.
    pub fn offsets(gaps: &[usize]) -> Vec<usize> {
        let mut offs = Vec::with_capacity(gaps.len() + 1);
        offs.push(0);
        let mut acc = 0;
        for g in gaps {
            acc += g;
            offs.push(acc);
        }
        offs
    }
}

pub fn selector_pmf(p: f64, k: usize, ell: usize, s: usize) -> Result<SelectorDistribution> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("{p} is not in (0, 1]")));
    }
    if ell == 0 {
        return Err(invalid("ell", "must be positive"));
    }
    let gaps = ell - 1;
    let mut outcomes = Vec::new();
    if gaps == 0 {
        outcomes.push((Vec::new(), 1.0));
    } else if s >= gaps {
        // choose the partial sums c_1 < .. < c_gaps in 1..=s
        let geo = |g: usize| p * (1.0 - p).powi(g as i32 - 1);
        for_each_tuple(s, gaps, |c| {
            let mut prev = 0;
            let mut g = Vec::with_capacity(gaps);
            let mut m = 1.0;
            for &ci in c {
                let gi = ci + 1 - prev;
                prev = ci + 1;
                g.push(gi);
                m *= geo(gi);
            }
            if m > 0.0 || p == 1.0 {
                outcomes.push((g, m));
            }
        });
        outcomes.retain(|(_, m)| *m > 0.0);
    }
    let mass: f64 = outcomes.iter().map(|(_, m)| m).sum();
    Ok(SelectorDistribution {
        k,
        ell,
        p,
        span_bound: s,
        outcomes,
        tail: (1.0 - mass).max(0.0),
    })
}

/// exp(-t m (1 - 1/t)^2 / 2), a bound on Pr[Negbin(m, p) > t m / p].
pub fn negbin_tail_bound(m: usize, _p: f64, t: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(invalid("t", format!("{t} must exceed 1")));
    }
    Ok((-t * m as f64 * (1.0 - 1.0 / t).powi(2) / 2.0).exp())
}

/// Pr[more than x trials are needed for m successes] = Pr[Bin(floor x, p) < m].
pub fn negbin_exact_tail(m: usize, p: f64, x: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let trials = x.floor().max(0.0) as usize;
    f64::binomial_cdf(m - 1, trials, p)
}

/// Span bound ceil(t (ell_out - 1) / beta) with t = max(2, 8 ln(1/xi) / (ell_out - 1)).
pub fn span_bound_for(beta: f64, ell_out: usize, xi: f64) -> Result<usize> {
    if ell_out < 2 {
        return Err(invalid("ell_out", "must be at least 2"));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(invalid("xi", format!("{xi} is not in (0, 1)")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("{beta} is not in (0, 1]")));
    }
    let m = (ell_out - 1) as f64;
    let t = (8.0 * (1.0 / xi).ln() / m).max(2.0);
    Ok((t * m / beta - 1e-9).ceil() as usize)
}

/// Smallest s with Pr[span of ell_out - 1 geometric gaps > s] <= xi.
pub fn exact_span_bound(beta: f64, ell_out: usize, xi: f64) -> Result<usize> {
    if !(xi > 0.0) {
        return Err(invalid("xi", "must be positive"));
    }
    if ell_out <= 1 {
        return Ok(0);
    }
    let m = ell_out - 1;
    let mut s = m;
    while negbin_exact_tail(m, beta, s as f64) > xi {
        s += 1;
        if s > 1_000_000 {
            return Err(invalid("xi", "span bound does not converge"));
        }
    }
    Ok(s)
}

/// Anything that answers "probability that the padded trace at `start` satisfies a cylinder".
pub trait WindowSource: Sync {
    fn n(&self) -> usize;
    fn delta(&self) -> f64;
    /// Longest window the source can answer.
    fn max_window(&self) -> usize;
    fn cylinder(&self, start: usize, cyl: &Cylinder) -> Result<f64>;
    /// Worst-case error of one `cylinder` answer.
    fn answer_error(&self, cyl: &Cylinder) -> f64;
}

/// A signature table, possibly noisy with per-entry error `entry_error`.
pub struct TableSource<'a> {
    pub sig: &'a SubwordSignature,
    pub entry_error: f64,
}

impl WindowSource for TableSource<'_> {
    fn n(&self) -> usize {
        self.sig.n
    }
    fn delta(&self) -> f64 {
        self.sig.delta
    }
    fn max_window(&self) -> usize {
        self.sig.ell
    }
    fn cylinder(&self, start: usize, cyl: &Cylinder) -> Result<f64> {
        let ell = self.sig.ell;
        if cyl.span() > ell {
            return Err(invalid("window", format!("span {} exceeds the table window {ell}", cyl.span())));
        }
        Ok(self
            .sig
            .row(start)
            .iter()
            .enumerate()
            .filter(|(code, _)| cyl.matches(|o| code_bit(*code as u64, ell, o)))
            .map(|(_, p)| p)
            .sum())
    }
    fn answer_error(&self, cyl: &Cylinder) -> f64 {
        self.entry_error * (1u64 << (self.sig.ell - cyl.constraints().len())) as f64
    }
}

/// Cylinder queries against an oracle at a fixed tolerance.
pub struct OracleSource<'a> {
    pub oracle: &'a Oracle,
    pub delta: f64,
    pub tau: f64,
    pub max_window: usize,
}

impl WindowSource for OracleSource<'_> {
    fn n(&self) -> usize {
        self.oracle.n()
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn max_window(&self) -> usize {
        self.max_window
    }
    fn cylinder(&self, start: usize, cyl: &Cylinder) -> Result<f64> {
        self.oracle.answer(&LocalQuery::cylinder(start, cyl.clone())?, self.tau)
    }
    fn answer_error(&self, _cyl: &Cylinder) -> f64 {
        self.tau
    }
}

/// Exact cylinder probabilities of a known string.
pub struct ExactSource<'a> {
    pub eval: &'a ExactEvaluator,
    pub delta: f64,
}

impl WindowSource for ExactSource<'_> {
    fn n(&self) -> usize {
        self.eval.x().len()
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn max_window(&self) -> usize {
        usize::MAX
    }
    fn cylinder(&self, start: usize, cyl: &Cylinder) -> Result<f64> {
        self.eval.cylinder_prob(start, cyl)
    }
    fn answer_error(&self, _cyl: &Cylinder) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub delta: f64,
    pub delta2: f64,
    pub ell_out: usize,
    /// Target tolerance of the simulated statistics.
    pub tau2: f64,
    /// Allowed selector tail mass.
    pub xi: f64,
    /// Fixed span bound; otherwise the smallest with exact tail <= xi.
    pub span: Option<usize>,
}

impl DegradeSpec {
    pub fn beta(&self) -> Result<f64> {
        beta_r(self.delta, self.delta2)
    }

    pub fn span_bound(&self) -> Result<usize> {
        match self.span {
            Some(s) => Ok(s),
            None => exact_span_bound(self.beta()?, self.ell_out, self.xi),
        }
    }

    /// Window length the input statistics must cover.
    pub fn required_window(&self) -> Result<usize> {
        Ok(if self.ell_out <= 1 { 1 } else { self.span_bound()? + 1 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeBudget {
    pub beta: f64,
    pub span: usize,
    pub window: usize,
    pub tail: f64,
    /// Worst-case contribution of input errors to one output entry.
    pub input_error: f64,
    /// tail + input_error.
    pub per_entry: f64,
    pub within_tau2: bool,
    /// Retained positions of the selector occur with probability beta (success = retained).
    pub convention: String,
}

pub struct Degraded {
    pub signature: SubwordSignature,
    pub budget: DegradeBudget,
}

/// Per-start mixtures sum over bounded gap tuples of Pr[tuple] * Pr[trace at j + offsets = w].
pub struct WindowMixture {
    pub selector: SelectorDistribution,
    pub beta: f64,
    pub span: usize,
    pub window: usize,
    /// mix[j][w] for j < n.
    pub mix: Vec<Vec<f64>>,
    /// Worst-case contribution of input errors to one mixture entry.
    pub input_error: f64,
}

pub fn window_mixture(src: &dyn WindowSource, spec: &DegradeSpec) -> Result<WindowMixture> {
    if (src.delta() - spec.delta).abs() > 0.0 {
        return Err(invalid("delta", "input statistics are at a different deletion rate"));
    }
    if spec.ell_out == 0 || spec.ell_out > 16 {
        return Err(invalid("ell_out", format!("{} is outside 1..=16", spec.ell_out)));
    }
    let beta = spec.beta()?;
    let span = spec.span_bound()?;
    let window = spec.required_window()?;
    if src.max_window() < window {
        return Err(Error::InvalidParam {
            field: "window",
            reason: format!(
                "input window {} is shorter than the {} positions the span bound needs",
                src.max_window(),
                window
            ),
        });
    }
    let selector = selector_pmf(beta, 0, spec.ell_out, span)?;
    let width = 1usize << spec.ell_out;
    let cyl_of = |offs: &[usize], code: usize| {
        Cylinder::new(
            offs.iter()
                .enumerate()
                .map(|(b, &o)| (o, code_bit(code as u64, spec.ell_out, b)))
                .collect(),
        )
    };
    let mut input_error = 0.0f64;
    for (gaps, m) in &selector.outcomes {
        let offs = SelectorDistribution::offsets(gaps);
        input_error += m * src.answer_error(&cyl_of(&offs, 0)?);
    }
    let mix: Vec<Vec<f64>> = (0..src.n())
        .into_par_iter()
        .map(|j| {
            let mut row = vec![0.0; width];
            for (gaps, m) in &selector.outcomes {
                let offs = SelectorDistribution::offsets(gaps);
                for (code, slot) in row.iter_mut().enumerate() {
                    *slot += m * src.cylinder(j, &cyl_of(&offs, code)?)?;
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(WindowMixture {
        selector,
        beta,
        span,
        window,
        mix,
        input_error,
    })
}

/// Simulated rows p'_{k,w} for every k < n and w of length ell_out.
pub fn degrade_signature(src: &dyn WindowSource, spec: &DegradeSpec) -> Result<Degraded> {
    let wm = window_mixture(src, spec)?;
    let n = src.n();
    let width = 1usize << spec.ell_out;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let sk = SelectorDistribution { k, ..wm.selector.clone() };
            let mut row = vec![0.0; width];
            for (j, pj) in sk.start_pmf(n).iter().enumerate() {
                if *pj == 0.0 {
                    continue;
                }
                for (slot, v) in row.iter_mut().zip(&wm.mix[j]) {
                    *slot += pj * v;
                }
            }
            row[0] += sk.start_at_or_beyond(n);
            row
        })
        .collect();
    let per_entry = wm.selector.tail + wm.input_error;
    Ok(Degraded {
        signature: SubwordSignature::from_rows(n, spec.ell_out, spec.delta2, rows)?,
        budget: DegradeBudget {
            beta: wm.beta,
            span: wm.span,
            window: wm.window,
            tail: wm.selector.tail,
            input_error: wm.input_error,
            per_entry,
            within_tau2: per_entry <= spec.tau2,
            convention: "0-based ranks; a selected position is a success of probability beta".into(),
        },
    })
}

/// Row k of the simulated signature.
pub fn degrade_subword_stats(sig: &SubwordSignature, spec: &DegradeSpec, k: usize) -> Result<(Vec<f64>, DegradeBudget)> {
    if k >= sig.n {
        return Err(invalid("k", format!("{k} is outside 0..{}", sig.n)));
    }
    let d = degrade_signature(&TableSource { sig, entry_error: 0.0 }, spec)?;
    Ok((d.signature.row(k).to_vec(), d.budget))
}

/// Total-variation distance between the first `ell_out` padded bits of a
/// delta2-trace and of a beta-thinned delta-trace, both by full enumeration.
pub fn compose_channels_check(x: &BitString, delta: f64, delta2: f64, ell_out: usize) -> Result<f64> {
    let n = x.len();
    if n > 12 {
        return Err(Error::Budget {
            what: "n for channel composition",
            got: n,
            max: 12,
        });
    }
    if ell_out == 0 || ell_out > 12 {
        return Err(invalid("ell_out", "must be in 1..=12"));
    }
    let beta = beta_r(delta, delta2)?;
    let direct = brute_force_signature(x, &ChannelParams::new(delta2)?, ell_out)?;
    let width = 1usize << ell_out;
    let mut composed = vec![0.0; width];
    let mut memo: HashMap<Vec<u8>, Vec<f64>> = HashMap::new();
    for mask in 0u32..1 << n {
        let z: Vec<u8> = (0..n).filter(|j| mask >> j & 1 == 1).map(|j| x.get(j)).collect();
        let m = z.len();
        let wz = (1.0 - delta).powi(m as i32) * delta.powi((n - m) as i32);
        let inner = memo.entry(z.clone()).or_insert_with(|| {
            let mut out = vec![0.0; width];
            for sel in 0u32..1 << m {
                let y: Vec<u8> = (0..m).filter(|j| sel >> j & 1 == 1).map(|j| z[j]).collect();
                let c = y.len();
                let wy = beta.powi(c as i32) * (1.0 - beta).powi((m - c) as i32);
                let code = (0..ell_out).fold(0usize, |a, k| (a << 1) | y.get(k).copied().unwrap_or(0) as usize);
                out[code] += wy;
            }
            out
        });
        for (a, b) in composed.iter_mut().zip(inner.iter()) {
            *a += wz * b;
        }
    }
    Ok(0.5 * direct.row(0).iter().zip(&composed).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signature::exact_subword_signature;

    #[test]
    fn deterministic_selector() {
        let s = selector_pmf(1.0, 3, 4, 10).unwrap();
        assert_eq!(s.outcomes, vec![(vec![1, 1, 1], 1.0)]);
        assert_eq!(s.tail, 0.0);
        let start = s.start_pmf(6);
        assert_eq!(start[3], 1.0);
    }

    #[test]
    fn single_gap_geometric() {
        let s = selector_pmf(0.5, 0, 2, 6).unwrap();
        for (g, m) in &s.outcomes {
            assert!((m - 0.5f64.powi(g[0] as i32)).abs() < 1e-15);
        }
        assert!((s.enumerated_mass() - (1.0 - 0.5f64.powi(6))).abs() < 1e-15);
        assert!((s.tail - 0.5f64.powi(6)).abs() < 1e-15);
    }

    #[test]
    fn span_mean_matches_negbin() {
        let (p, ell) = (0.4, 4);
        let s = selector_pmf(p, 0, ell, 120).unwrap();
        let mean: f64 = s.outcomes.iter().map(|(g, m)| g.iter().sum::<usize>() as f64 * m).sum();
        assert!(s.tail < 1e-12);
        assert!((mean - (ell - 1) as f64 / p).abs() < 1e-9);
    }

    #[test]
    fn tail_matches_exact_and_bound() {
        for &(p, ell, s) in &[(0.5, 3, 10usize), (0.3, 2, 12), (0.8, 4, 9)] {
            let sel = selector_pmf(p, 0, ell, s).unwrap();
            let exact = negbin_exact_tail(ell - 1, p, s as f64);
            assert!((sel.tail - exact).abs() < 1e-12);
        }
        let beta = 0.6;
        let xi = 1e-3;
        let s = span_bound_for(beta, 3, xi).unwrap();
        let sel = selector_pmf(beta, 0, 3, s).unwrap();
        assert!(sel.tail <= (-(s as f64 * beta) / 8.0).exp().max(xi));
    }

    #[test]
    fn negbin_examples() {
        let b = negbin_tail_bound(1, 0.5, 2.0).unwrap();
        assert!((b - (-0.25f64).exp()).abs() < 1e-15);
        assert!((negbin_exact_tail(1, 0.5, 4.0) - 0.0625).abs() < 1e-15);
        assert!(negbin_tail_bound(3, 0.5, 1.0 + 1e-9).unwrap() > 0.999);
        assert!(negbin_tail_bound(3, 0.5, 1.0).is_err());
        let t = 3.0;
        assert!(negbin_exact_tail(8, 0.3, t * 8.0 / 0.3) <= negbin_tail_bound(8, 0.3, t).unwrap());
    }

    #[test]
    fn span_bound_examples() {
        assert_eq!(span_bound_for(1.0, 2, (-2.0f64).exp()).unwrap(), 16);
        assert_eq!(span_bound_for(1.0, 3, 0.999).unwrap(), 4);
        assert_eq!(span_bound_for(0.5, 2, (-2.0f64).exp()).unwrap(), 32);
        assert!(span_bound_for(1.0, 2, 0.0).is_err());
        assert!(span_bound_for(1.0, 1, 0.5).is_err());
    }

    #[test]
    fn identity_degradation() {
        let x: BitString = "1101000111".parse().unwrap();
        let ch = ChannelParams::new(0.3).unwrap();
        let sig = exact_subword_signature(&x, &ch, 3).unwrap();
        let spec = DegradeSpec {
            delta: 0.3,
            delta2: 0.3,
            ell_out: 2,
            tau2: 1e-9,
            xi: 1e-12,
            span: None,
        };
        let d = degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).unwrap();
        let direct = exact_subword_signature(&x, &ch, 2).unwrap();
        assert!(d.signature.max_abs_diff(&direct) < 1e-12);
        assert_eq!(d.budget.tail, 0.0);
    }

    #[test]
    fn one_bit_degradation_within_budget() {
        let mut rng = stream_rng(8, 0);
        let x = BitString::random(10, &mut rng);
        let sig = exact_subword_signature(&x, &ChannelParams::new(0.2).unwrap(), 1).unwrap();
        let spec = DegradeSpec {
            delta: 0.2,
            delta2: 0.5,
            ell_out: 1,
            tau2: 1e-9,
            xi: 1e-12,
            span: None,
        };
        let d = degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).unwrap();
        let direct = exact_subword_signature(&x, &ChannelParams::new(0.5).unwrap(), 1).unwrap();
        assert!(d.signature.max_abs_diff(&direct) <= d.budget.per_entry + 1e-13);
    }

    #[test]
    fn two_bit_degradation_tight() {
        let mut rng = stream_rng(9, 0);
        let x = BitString::random(10, &mut rng);
        let spec = DegradeSpec {
            delta: 0.2,
            delta2: 0.4,
            ell_out: 2,
            tau2: 1e-8,
            xi: 1e-9,
            span: None,
        };
        let w = spec.required_window().unwrap();
        let sig = exact_subword_signature(&x, &ChannelParams::new(0.2).unwrap(), w).unwrap();
        let d = degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).unwrap();
        let direct = exact_subword_signature(&x, &ChannelParams::new(0.4).unwrap(), 2).unwrap();
        assert!(d.signature.max_abs_diff(&direct) <= 1e-8);
        assert!(d.budget.within_tau2);
    }

    #[test]
    fn window_too_small() {
        let x: BitString = "10110".parse().unwrap();
        let sig = exact_subword_signature(&x, &ChannelParams::new(0.2).unwrap(), 2).unwrap();
        let spec = DegradeSpec {
            delta: 0.2,
            delta2: 0.6,
            ell_out: 2,
            tau2: 1e-6,
            xi: 1e-9,
            span: None,
        };
        assert!(degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).is_err());
    }

    #[test]
    fn larger_span_never_hurts() {
        let x: BitString = "1001101011".parse().unwrap();
        let sig = exact_subword_signature(&x, &ChannelParams::new(0.3).unwrap(), 12).unwrap();
        let direct = exact_subword_signature(&x, &ChannelParams::new(0.5).unwrap(), 2).unwrap();
        let mut prev = f64::INFINITY;
        for s in 1..=11 {
            let spec = DegradeSpec {
                delta: 0.3,
                delta2: 0.5,
                ell_out: 2,
                tau2: 1.0,
                xi: 0.5,
                span: Some(s),
            };
            let d = degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).unwrap();
            let err = d.signature.max_abs_diff(&direct);
            assert!(err <= d.budget.tail + 1e-13);
            assert!(d.budget.tail <= prev);
            prev = d.budget.tail;
        }
    }

    #[test]
    fn composition_examples() {
        let x: BitString = "1011".parse().unwrap();
        assert!(compose_channels_check(&x, 0.3, 0.3, 3).unwrap() < 1e-14);
        assert!(compose_channels_check(&x, 0.3, 0.6, 3).unwrap() < 1e-10);
        assert!(compose_channels_check(&x, 0.6, 0.3, 3).is_err());
    }
}
