//! Average-case layer: a parameter schedule, expected k-mer counts of traces,
//! and estimates of SW_{x,w}(delta2) = E[#(w, y)] / (1 - delta2)^k for traces
//! y at deletion rates delta2 above the oracle's own.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Pattern};
use crate::channel::ChannelParams;
use crate::degrade::{beta_r, exact_span_bound, window_mixture, DegradeSpec, OracleSource, WindowSource};
use crate::error::{invalid, Error, Result};
use crate::oracle::Oracle;
use crate::signature::{exact_subword_table, SubwordSignature};
use crate::worst_case::mean_based_reconstruct;

/// Free constants of the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvgMultipliers {
    /// k = ceil(c_k log2(n / eta)), at least 2.
    pub c_k: f64,
    /// kappa = ((1/n) ((1-delta)/2)^k)^(c_kappa / (1-delta)).
    pub c_kappa: f64,
    /// The constant C in d = (C/theta)(ln n + k ln(C/theta)).
    pub c_big: f64,
    /// Scale of the closed-form locality estimate.
    pub c_ell: f64,
}

impl Default for AvgMultipliers {
    fn default() -> Self {
        Self {
            c_k: 0.25,
            c_kappa: 1.0,
            c_big: 2.0,
            c_ell: 1.0,
        }
    }
}

mod bigint_string {
    use num_bigint::BigInt;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgParams {
    pub n: usize,
    pub delta: f64,
    pub eta: f64,
    pub multipliers: AvgMultipliers,
    pub k: usize,
    pub kappa: f64,
    pub theta: f64,
    pub d: f64,
    /// Grid step.
    pub big_delta: f64,
    /// The grid is delta + i * big_delta for i = 0..=l.
    #[serde(with = "bigint_string")]
    pub l: BigInt,
    /// Error allowed on each expected count term.
    pub tau2: f64,
    /// Tolerance of each underlying oracle query, tau2 / 2.
    pub query_tolerance: f64,
    /// Selector tail mass allowed per start position, tau2 / 2.
    pub xi: f64,
    /// Window length actually needed at the top of the grid.
    pub ell: usize,
    /// Closed-form locality estimate, for comparison with `ell`.
    pub ell_formula: usize,
}

/// C(d + k - 2, k - 2) for real d, as prod_{i=1}^{k-2} (d + i) / i.
fn real_binomial(d: f64, k: usize) -> f64 {
    (1..k.saturating_sub(1)).map(|i| (d + i as f64) / i as f64).product()
}

pub fn avg_params(n: usize, eta: f64, ch: &ChannelParams, m: AvgMultipliers) -> Result<AvgParams> {
    if n < 2 {
        return Err(invalid("n", "must be at least 2"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", format!("{eta} is not in (0, 1)")));
    }
    if !(m.c_k > 0.0 && m.c_kappa > 0.0 && m.c_big > 0.0 && m.c_ell > 0.0) {
        return Err(invalid("multipliers", "must be positive"));
    }
    let delta = ch.delta;
    let rho = ch.rho();
    let nf = n as f64;
    let k = ((m.c_k * (nf / eta).log2()).ceil() as usize).max(2);
    let half_rho = rho / 2.0;
    let kappa = ((1.0 / nf) * half_rho.powi(k as i32)).powf(m.c_kappa / rho);
    let theta = rho * rho / 2.0;
    let ct = m.c_big / theta;
    let d = ct * (nf.ln() + k as f64 * ct.ln());
    let big_delta = kappa / (2.0 * d * d * nf * real_binomial(d, k));
    if !(big_delta > 0.0 && big_delta.is_finite()) {
        return Err(invalid("schedule", format!("grid step {big_delta} is not a positive finite number")));
    }
    let l = grid_count(delta, big_delta)?;
    if l < BigInt::from(1) {
        return Err(invalid("schedule", "grid has fewer than two points"));
    }
    let tau2 = kappa * half_rho.powi(k as i32) / nf;
    if !(tau2 > 0.0) {
        return Err(invalid("schedule", "count tolerance underflows"));
    }
    let xi = tau2 / 2.0;
    let ell = exact_span_bound(0.5, k, xi)? + 1;
    let ell_formula = (m.c_ell * (2.0 * k as f64 / rho * (2.0 / rho).ln() + 2.0 * nf.ln() / rho)).ceil() as usize;
    Ok(AvgParams {
        n,
        delta,
        eta,
        multipliers: m,
        k,
        kappa,
        theta,
        d,
        big_delta,
        l,
        tau2,
        query_tolerance: tau2 / 2.0,
        xi,
        ell,
        ell_formula,
    })
}

/// Largest L with delta + L * step <= (1 + delta) / 2, in exact arithmetic on the float inputs.
fn grid_count(delta: f64, step: f64) -> Result<BigInt> {
    let dr = BigRational::from_f64(delta).ok_or(Error::NonFinite("delta"))?;
    let sr = BigRational::from_f64(step).ok_or(Error::NonFinite("grid step"))?;
    let top = (BigRational::from_integer(1.into()) + &dr) / BigRational::from_integer(2.into());
    Ok(((top - dr) / sr).floor().to_integer())
}

impl AvgParams {
    pub fn grid_len(&self) -> BigInt {
        &self.l + 1
    }

    /// delta + i * big_delta.
    pub fn grid(&self, i: &BigInt) -> Result<f64> {
        if i < &BigInt::zero() || i > &self.l {
            return Err(invalid("grid index", format!("{i} is outside 0..={}", self.l)));
        }
        Ok(self.delta + i.to_f64().unwrap_or(f64::INFINITY) * self.big_delta)
    }

    /// `count` evenly spaced grid points including both ends.
    pub fn grid_sample(&self, count: usize) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(invalid("count", "must be positive"));
        }
        if count == 1 {
            return Ok(vec![self.delta]);
        }
        (0..count)
            .map(|s| self.grid(&(&self.l * BigInt::from(s) / BigInt::from(count - 1))))
            .collect()
    }

    /// The largest grid point.
    pub fn grid_top(&self) -> Result<f64> {
        self.grid(&self.l)
    }
}

/// E[#(w, y)] from the padded statistics of y: sum_j p'_{j,w}.
pub fn expected_kmer_count(sig2: &SubwordSignature, w: &Pattern) -> Result<f64> {
    if sig2.ell != w.len() {
        return Err(Error::LengthMismatch {
            left: sig2.ell,
            right: w.len(),
        });
    }
    Ok((0..sig2.n).map(|j| sig2.p(j, w)).sum())
}

/// SW_{x,w}(delta2) computed from the exact delta2 statistics of a known string.
pub fn exact_sw(x: &BitString, delta2: f64, k: usize) -> Result<Vec<f64>> {
    let ch = ChannelParams::new(delta2)?;
    let table = exact_subword_table::<f64>(x, &ch, k)?;
    let scale = (1.0 - delta2).powi(k as i32);
    let mut out = vec![0.0; 1 << k];
    for row in &table {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / scale).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwCell {
    pub w: Pattern,
    pub delta2: f64,
    pub estimate: f64,
    pub budget: f64,
    /// Set when `budget` exceeds the accuracy target.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SWEstimates {
    pub k: usize,
    pub kappa: f64,
    pub deltas: Vec<f64>,
    /// Row-major by delta2, then by pattern code.
    pub cells: Vec<SwCell>,
}

impl SWEstimates {
    pub fn get(&self, w: &Pattern, delta_index: usize) -> &SwCell {
        &self.cells[delta_index * (1 << self.k) + w.code() as usize]
    }

    pub fn max_budget(&self) -> f64 {
        self.cells.iter().map(|c| c.budget).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["w", "delta2", "estimate", "budget"])?;
        for c in &self.cells {
            out.write_record([
                c.w.to_string(),
                c.delta2.to_string(),
                c.estimate.to_string(),
                c.budget.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// SW estimates for every w of length k at one delta2, from statistics at the source's rate.
/// Uses sum_k Pr[i_k = j] = beta for j < n and sum_k Pr[i_k >= n] = n (1 - beta).
pub fn estimate_sw_row(src: &dyn WindowSource, k: usize, delta2: f64, xi: f64, kappa: f64) -> Result<Vec<SwCell>> {
    let spec = DegradeSpec {
        delta: src.delta(),
        delta2,
        ell_out: k,
        tau2: f64::INFINITY,
        xi,
        span: None,
    };
    let wm = window_mixture(src, &spec)?;
    let n = src.n() as f64;
    let beta = wm.beta;
    let scale = (1.0 - delta2).powi(k as i32);
    let budget = n * beta * (wm.selector.tail + wm.input_error) / scale;
    Ok(Pattern::all(k)
        .map(|w| {
            let mut count: f64 = beta * wm.mix.iter().map(|r| r[w.code() as usize]).sum::<f64>();
            if w.code() == 0 {
                count += n * (1.0 - beta);
            }
            SwCell {
                w,
                delta2,
                estimate: count / scale,
                budget,
                flagged: !(budget <= kappa),
            }
        })
        .collect())
}

pub fn estimate_sw_table(src: &dyn WindowSource, params: &AvgParams, deltas: &[f64]) -> Result<SWEstimates> {
    let top = (1.0 + params.delta) / 2.0;
    if let Some(bad) = deltas.iter().find(|&&d| !(d >= params.delta && d <= top)) {
        return Err(invalid("delta2", format!("{bad} is outside [{}, {top}]", params.delta)));
    }
    let rows = deltas
        .par_iter()
        .map(|&d2| estimate_sw_row(src, params.k, d2, params.xi, params.kappa))
        .collect::<Result<Vec<_>>>()?;
    Ok(SWEstimates {
        k: params.k,
        kappa: params.kappa,
        deltas: deltas.to_vec(),
        cells: rows.into_iter().flatten().collect(),
    })
}

fn oracle_source<'a>(oracle: &'a Oracle, params: &AvgParams, tau: f64) -> OracleSource<'a> {
    OracleSource {
        oracle,
        delta: params.delta,
        tau,
        max_window: params.ell,
    }
}

/// One SW value through the oracle at the schedule's query tolerance.
pub fn estimate_sw(oracle: &Oracle, n: usize, w: &Pattern, params: &AvgParams, delta2: f64) -> Result<SwCell> {
    if oracle.n() != n || params.n != n {
        return Err(Error::LengthMismatch { left: oracle.n(), right: n });
    }
    if w.len() != params.k {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: params.k,
        });
    }
    beta_r(params.delta, delta2)?;
    let src = oracle_source(oracle, params, params.query_tolerance);
    let row = estimate_sw_row(&src, params.k, delta2, params.xi, params.kappa)?;
    Ok(row[w.code() as usize].clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvgBackend {
    /// One-bit statistics and back-substitution; certified.
    ExactMeanBased,
    /// Prefix extension against SW estimates; experimental.
    SwConsistencyGreedy,
}

pub const GREEDY_MAX_N: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgOutcome {
    pub backend: AvgBackend,
    pub x: Option<BitString>,
    /// Reason the output was withheld.
    pub flag: Option<String>,
    /// Candidates whose predicted SW table is within budget of the estimates.
    pub consistent: Option<usize>,
    pub queries: u64,
}

/// Reconstruct with the chosen backend; `tau` is the tolerance of every oracle query.
/// The greedy backend evaluates SW at `grid_points` evenly spaced rates.
pub fn avg_reconstruct(
    oracle: &Oracle,
    n: usize,
    ch: &ChannelParams,
    params: &AvgParams,
    backend: AvgBackend,
    tau: f64,
    grid_points: usize,
) -> Result<AvgOutcome> {
    if oracle.n() != n {
        return Err(Error::LengthMismatch { left: oracle.n(), right: n });
    }
    let before = oracle.ledger().queries;
    let mut out = AvgOutcome {
        backend,
        x: None,
        flag: None,
        consistent: None,
        queries: 0,
    };
    match backend {
        AvgBackend::ExactMeanBased => match mean_based_reconstruct(oracle, n, ch, tau) {
            Ok(x) => out.x = Some(x),
            Err(Error::Failed(msg)) => out.flag = Some(msg),
            Err(e) => return Err(e),
        },
        AvgBackend::SwConsistencyGreedy => {
            if n > GREEDY_MAX_N {
                return Err(Error::Budget {
                    what: "n for candidate enumeration",
                    got: n,
                    max: GREEDY_MAX_N,
                });
            }
            if params.n != n || params.delta != ch.delta {
                return Err(invalid("params", "schedule was built for a different instance"));
            }
            let deltas = params.grid_sample(grid_points)?;
            let est = estimate_sw_table(&oracle_source(oracle, params, tau), params, &deltas)?;
            greedy_decide(n, &est, &mut out)?;
        }
    }
    out.queries = oracle.ledger().queries - before;
    Ok(out)
}

fn greedy_decide(n: usize, est: &SWEstimates, out: &mut AvgOutcome) -> Result<()> {
    let target: Vec<f64> = est.cells.iter().map(|c| c.estimate).collect();
    let budgets: Vec<f64> = est.cells.iter().map(|c| c.budget).collect();
    let scored: Vec<(f64, bool)> = (0..1u64 << n)
        .into_par_iter()
        .map(|idx| {
            let x = BitString::from_index(idx, n);
            let mut pred = Vec::with_capacity(target.len());
            for &d2 in &est.deltas {
                pred.extend(exact_sw(&x, d2, est.k)?);
            }
            let sse = pred.iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum();
            let ok = pred.iter().zip(&target).zip(&budgets).all(|((p, t), b)| (p - t).abs() <= *b);
            Ok((sse, ok))
        })
        .collect::<Result<_>>()?;

    // extend a prefix bit by bit, scoring each bit by its best completion
    let mut lo = 0usize;
    let mut hi = scored.len();
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let best = |r: std::ops::Range<usize>| scored[r].iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        if best(mid..hi) < best(lo..mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let consistent = scored.iter().filter(|s| s.1).count();
    out.consistent = Some(consistent);
    if !scored[lo].1 {
        out.flag = Some("greedy choice is not consistent with the estimates".into());
    } else if consistent > 1 {
        out.flag = Some(format!("{consistent} strings are consistent with the estimates"));
    } else {
        out.x = Some(BitString::from_index(lo as u64, n));
    }
    Ok(())
}
