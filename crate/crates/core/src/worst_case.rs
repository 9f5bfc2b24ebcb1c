//! Worst-case reconstruction: back-substitution on one-bit statistics, and
//! pairwise elimination driven by windowed estimates of trace polynomials.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Pattern};
use crate::channel::{ChannelParams, ChannelTables, Padding};
use crate::error::{invalid, Error, Result};
use crate::oracle::{LocalQuery, Oracle};
use crate::poly::{for_each_offset_set, marginal_code, source_poly_p, trace_coeffs_all, EvalDomain, TraceCoeffs};
use crate::scalar::Scalar;

/// Recover x from p_i = sum_j C(j,i) rho^{i+1} delta^{j-i} x_j, top index first.
pub fn back_substitute<T: Scalar>(p: &[T], ch: &ChannelParams) -> Result<BitString> {
    let n = p.len();
    let tables = ChannelTables::<T>::new(n, ch)?;
    let half = T::from_f64(0.5);
    let quarter = T::from_f64(0.25);
    let mut x = vec![0u8; n];
    for i in (0..n).rev() {
        let mut r = p[i].clone();
        for (j, &xj) in x.iter().enumerate().skip(i + 1) {
            if xj == 1 {
                r = r - tables.hit(i, j).clone();
            }
        }
        let lead = tables.hit(i, i).clone();
        let bit = r > half.clone() * lead.clone();
        let miss = if bit { r - lead.clone() } else { r };
        if miss.abs() > quarter.clone() * lead {
            return Err(Error::Failed(format!(
                "residual at index {i} is not close to 0 or rho^{}",
                i + 1
            )));
        }
        x[i] = bit as u8;
    }
    BitString::new(x)
}

/// Largest per-statistic error back-substitution provably absorbs at length n.
pub fn mean_based_noise_floor(n: usize, ch: &ChannelParams) -> f64 {
    0.25 * ch.rho().powi(n as i32)
}

/// Ask every one-bit statistic at tolerance `tau` and back-substitute.
pub fn mean_based_reconstruct(oracle: &Oracle, n: usize, ch: &ChannelParams, tau: f64) -> Result<BitString> {
    if oracle.n() != n {
        return Err(Error::LengthMismatch { left: oracle.n(), right: n });
    }
    let one: Pattern = Pattern::new(1, 1);
    let p = (0..n)
        .map(|i| oracle.answer(&LocalQuery::subword(i, one), tau))
        .collect::<Result<Vec<f64>>>()?;
    back_substitute(&p, ch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub arc: usize,
    pub segment: usize,
    pub t: usize,
}

impl GridSpec {
    pub fn uniform(k: usize) -> Self {
        Self { arc: k, segment: k, t: k }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseParams {
    pub ell: usize,
    /// Window length of the estimator's subword queries.
    pub d0: usize,
    pub tau0: f64,
    pub grid: GridSpec,
    pub refine: bool,
    /// Constant in the reference gap exp(-c n^{1/5} ln^5 n) used only for flagging.
    pub c_rho: f64,
}

impl WorstCaseParams {
    pub fn for_n(n: usize, ch: &ChannelParams) -> Self {
        let ell = default_ell(n);
        Self {
            ell,
            d0: calibrated_window(n, ch, ell, 1e-9),
            tau0: 1e-9,
            grid: GridSpec::uniform(33),
            refine: true,
            c_rho: 1.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.ell == 0 || self.ell > n {
            return Err(invalid("ell", format!("{} is outside 1..={n}", self.ell)));
        }
        if self.d0 < self.ell {
            return Err(invalid("d0", format!("{} < ell = {}", self.d0, self.ell)));
        }
        if self.d0 > 20 {
            return Err(invalid("d0", format!("{} windows of 2^{} patterns are too many", self.d0, self.d0)));
        }
        if !(self.tau0 > 0.0) {
            return Err(invalid("tau0", "must be positive"));
        }
        if self.grid.arc < 3 || self.grid.segment < 3 || self.grid.t < 3 {
            return Err(invalid("grid", "each grid count must be at least 3"));
        }
        Ok(())
    }

    fn reference_gap(&self, n: usize) -> f64 {
        let nf = n as f64;
        (-self.c_rho * nf.powf(0.2) * nf.ln().powi(5)).exp()
    }
}

/// round(2 n^{1/5}), clamped to 1..=n.
pub fn default_ell(n: usize) -> usize {
    ((2.0 * (n as f64).powf(0.2)).round() as usize).clamp(1, n.max(1))
}

/// Smallest window whose worst-case truncation tail over the evaluation
/// domain is below `tol`; n when no shorter window qualifies.
pub fn calibrated_window(n: usize, ch: &ChannelParams, ell: usize, tol: f64) -> usize {
    let dom = EvalDomain::new(n, ch);
    let rho = ch.rho();
    let h = dom.arc_halfwidth();
    let zeta1 = (Complex64::from_polar(1.0, h) - ch.delta).norm() / rho;
    let zeta2 = 0.25f64;
    let lead = zeta1.max(1.0).powi(n as i32) * n as f64 / rho.powi(ell as i32);
    for w in ell..n {
        let dtop = w - ell;
        let mut tail = 0.0;
        for d in dtop + 1..=n.saturating_sub(ell) {
            tail += binom(d + ell.saturating_sub(2), ell.saturating_sub(2)) * zeta2.powi(d as i32);
        }
        if lead * tail < tol {
            return w;
        }
    }
    n
}

fn binom(m: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Window-query answers p-hat[j][u] for every start j and window content u.
pub struct WindowEstimates {
    pub n: usize,
    pub window: usize,
    pub tau: f64,
    answers: Vec<Vec<f64>>,
}

impl WindowEstimates {
    pub fn fetch(oracle: &Oracle, window: usize, tau: f64) -> Result<Self> {
        let n = oracle.n();
        if window == 0 || window > 20 {
            return Err(invalid("d0", format!("{window} is outside 1..=20")));
        }
        let answers = (0..n)
            .into_par_iter()
            .map(|j| {
                Pattern::all(window)
                    .map(|u| oracle.answer(&LocalQuery::subword(j, u), tau))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, window, tau, answers })
    }

    /// Build from a precomputed table (rows indexed by start, then window code).
    pub fn from_table(window: usize, tau: f64, answers: Vec<Vec<f64>>) -> Result<Self> {
        if answers.iter().any(|r| r.len() != 1 << window) {
            return Err(invalid("answers", "every row needs 2^window entries"));
        }
        Ok(Self {
            n: answers.len(),
            window,
            tau,
            answers,
        })
    }

    /// Estimated trace-side coefficients for every pattern of length `ell`,
    /// covering spreads up to `window - ell`.
    pub fn coeffs(&self, ell: usize, ch: &ChannelParams) -> Result<Vec<TraceCoeffs>> {
        let (n, w) = (self.n, self.window);
        if ell == 0 || ell > w || ell > n {
            return Err(invalid("ell", format!("{ell} must be in 1..=min(n, d0)")));
        }
        let dtop = (w - ell).min(n - ell);
        let mut out = vec![vec![vec![0.0; dtop + 1]; n]; 1 << ell];
        for_each_offset_set(n, ell, dtop, |offs, d| {
            let last = offs[ell - 1];
            for j1 in 0..n - last {
                for (code, v) in self.answers[j1].iter().enumerate() {
                    out[marginal_code(code as u64, w, offs)][j1][d] += v;
                }
            }
        });
        Ok(out
            .into_iter()
            .map(|coeffs| TraceCoeffs { ell, rho: ch.rho(), coeffs })
            .collect())
    }

    /// Worst-case error of an estimate at (z, t) when every answer is within `tau`.
    pub fn budget(&self, ell: usize, ch: &ChannelParams, z: Complex64, t: Complex64) -> f64 {
        self.tau * amplification(self.n, ell, self.window, ch, z, t)
    }
}

/// Sum of |coefficient multipliers| mapping window answers to a trace-polynomial estimate.
pub fn amplification(n: usize, ell: usize, window: usize, ch: &ChannelParams, z: Complex64, t: Complex64) -> f64 {
    let rho = ch.rho();
    let a1 = ((z - ch.delta) / rho).norm();
    let a2 = ((t - ch.delta) / rho).norm();
    let dtop = (window - ell).min(n - ell);
    let mut total = 0.0;
    for_each_offset_set(n, ell, dtop, |offs, d| {
        let last = offs[ell - 1];
        let rowsum: f64 = (0..n - last).map(|j1| a1.powi(j1 as i32)).sum();
        total += rowsum * a2.powi(d as i32);
    });
    total * 2f64.powi((window - ell) as i32) / rho.powi(ell as i32)
}

/// n 2^{2 d0} tau0.
pub fn reference_estimator_bound(n: usize, d0: usize, tau0: f64) -> f64 {
    n as f64 * 4f64.powi(d0 as i32) * tau0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub re: f64,
    pub im: f64,
    pub budget: f64,
}

/// Windowed estimate of the spread-truncated trace polynomial for one pattern.
pub fn estimate_q_truncated(
    oracle: &Oracle,
    ch: &ChannelParams,
    w: &Pattern,
    z: Complex64,
    t: f64,
    params: &WorstCaseParams,
) -> Result<Estimate> {
    params.validate(oracle.n())?;
    let win = WindowEstimates::fetch(oracle, params.d0, params.tau0)?;
    let coeffs = win.coeffs(w.len(), ch)?;
    let t = Complex64::new(t, 0.0);
    let v = coeffs[w.code() as usize].eval(z, t);
    Ok(Estimate {
        re: v.re,
        im: v.im,
        budget: win.budget(w.len(), ch, z, t),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchCase {
    /// Prefixes differ; the first string's prefix is the pattern.
    Prefix,
    /// Equal prefixes; all patterns swept.
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherCertificate {
    pub w: Pattern,
    pub z0: [f64; 2],
    pub t0: f64,
    pub gap: f64,
    pub case: SearchCase,
    /// Set when the gap is below the reference bound or zero.
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug)]
struct GridPt {
    z: Complex64,
    t: f64,
    on_arc: bool,
}

fn grid_points(dom: &EvalDomain, g: &GridSpec) -> Vec<GridPt> {
    let zs: Vec<(Complex64, bool)> = dom
        .arc_points(g.arc)
        .into_iter()
        .map(|z| (z, true))
        .chain(dom.segment_points(g.segment).into_iter().map(|r| (Complex64::new(r, 0.0), false)))
        .collect();
    let ts = dom.segment_points(g.t);
    let mut out = Vec::with_capacity(zs.len() * ts.len());
    for &(z, on_arc) in &zs {
        for &t in &ts {
            out.push(GridPt { z, t, on_arc });
        }
    }
    out
}

fn case_patterns(x1: &BitString, x2: &BitString, ell: usize) -> (SearchCase, Vec<Pattern>) {
    let p1 = Pattern::from_bits(&x1.bits()[..ell]);
    let p2 = Pattern::from_bits(&x2.bits()[..ell]);
    if p1 != p2 {
        (SearchCase::Prefix, vec![p1])
    } else {
        (SearchCase::Sweep, Pattern::all(ell).collect())
    }
}

/// Grid search for a pattern and point where the source polynomials of two strings differ most.
pub fn find_distinguisher(
    x1: &BitString,
    x2: &BitString,
    ch: &ChannelParams,
    params: &WorstCaseParams,
) -> Result<DistinguisherCertificate> {
    let n = x1.len();
    if x2.len() != n {
        return Err(Error::LengthMismatch { left: n, right: x2.len() });
    }
    if x1 == x2 {
        return Err(invalid("x2", "strings must differ"));
    }
    params.validate(n)?;
    let dom = EvalDomain::new(n, ch);
    let (case, patterns) = case_patterns(x1, x2, params.ell);
    let gap_at = |w: &Pattern, z: Complex64, t: f64| -> Result<f64> {
        let tc = Complex64::new(t, 0.0);
        Ok((source_poly_p(x1, w, z, tc)? - source_poly_p(x2, w, z, tc)?).norm())
    };
    let pts = grid_points(&dom, &params.grid);
    let mut best: Option<(f64, Pattern, GridPt)> = None;
    for w in &patterns {
        let gaps = pts
            .par_iter()
            .map(|p| gap_at(w, p.z, p.t))
            .collect::<Result<Vec<f64>>>()?;
        for (g, p) in gaps.into_iter().zip(&pts) {
            if best.as_ref().map_or(true, |b| g > b.0) {
                best = Some((g, *w, *p));
            }
        }
    }
    let (mut gap, w, mut pt) = best.expect("grid is non-empty");
    if params.refine {
        let (lo, hi) = dom.segment();
        let h = dom.arc_halfwidth();
        let dz = if pt.on_arc {
            2.0 * h / (params.grid.arc - 1) as f64
        } else {
            (hi - lo) / (params.grid.segment - 1) as f64
        };
        let dt = (hi - lo) / (params.grid.t - 1) as f64;
        for a in -4i32..=4 {
            for b in -4i32..=4 {
                let t = (pt.t + dt * b as f64 / 4.0).clamp(lo, hi);
                let z = if pt.on_arc {
                    let th = (pt.z.arg() + dz * a as f64 / 4.0).clamp(-h, h);
                    Complex64::from_polar(1.0, th)
                } else {
                    Complex64::new((pt.z.re + dz * a as f64 / 4.0).clamp(lo, hi), 0.0)
                };
                let g = gap_at(&w, z, t)?;
                if g > gap {
                    gap = g;
                    pt = GridPt { z, t, on_arc: pt.on_arc };
                }
            }
        }
    }
    Ok(DistinguisherCertificate {
        w,
        z0: [pt.z.re, pt.z.im],
        t0: pt.t,
        gap,
        case,
        flagged: !(gap > 0.0) || gap < params.reference_gap(n),
    })
}

pub const PAIRWISE_MAX_N: usize = 14;

/// Predicted windowed-functional values for every candidate string on a fixed
/// grid, together with the smallest certified pairwise gap.
pub struct PairwiseCalibration {
    pub n: usize,
    pub ell: usize,
    pub window: usize,
    pub delta: f64,
    points: Vec<(usize, Complex64, f64)>,
    per_pattern: usize,
    predicted: Vec<Vec<Complex64>>,
    pub min_gap: f64,
    pub min_gap_pair: (BitString, BitString),
    pub min_gap_certificate: DistinguisherCertificate,
    /// Largest estimate error per unit of oracle tolerance over the grid.
    pub max_amplification: f64,
}

impl PairwiseCalibration {
    pub fn new(n: usize, ch: &ChannelParams, params: &WorstCaseParams) -> Result<Self> {
        if n > PAIRWISE_MAX_N {
            return Err(Error::Budget {
                what: "n for pairwise reconstruction",
                got: n,
                max: PAIRWISE_MAX_N,
            });
        }
        params.validate(n)?;
        let ell = params.ell;
        let window = params.d0.min(n);
        let dom = EvalDomain::new(n, ch);
        let grid = grid_points(&dom, &params.grid);
        let per_pattern = grid.len();
        let mut points = Vec::with_capacity(per_pattern << ell);
        for code in 0..1usize << ell {
            for p in &grid {
                points.push((code, p.z, p.t));
            }
        }
        let dmax = window - ell;
        let predicted = (0..1u64 << n)
            .into_par_iter()
            .map(|idx| {
                let x = BitString::from_index(idx, n);
                let tabs = trace_coeffs_all(&x, ch, ell, dmax, Padding::Padded)?;
                Ok(points
                    .iter()
                    .map(|&(code, z, t)| tabs[code].eval(z, Complex64::new(t, 0.0)))
                    .collect::<Vec<Complex64>>())
            })
            .collect::<Result<Vec<_>>>()?;

        let max_amplification = grid
            .iter()
            .map(|p| amplification(n, ell, window, ch, p.z, Complex64::new(p.t, 0.0)))
            .fold(0.0, f64::max);

        let cal = Self {
            n,
            ell,
            window,
            delta: ch.delta,
            points,
            per_pattern,
            predicted,
            min_gap: 0.0,
            min_gap_pair: (BitString::zeros(n), BitString::zeros(n)),
            min_gap_certificate: DistinguisherCertificate {
                w: Pattern::new(ell, 0),
                z0: [0.0, 0.0],
                t0: 0.0,
                gap: 0.0,
                case: SearchCase::Sweep,
                flagged: true,
            },
            max_amplification,
        };
        let worst = (0..1usize << n)
            .into_par_iter()
            .flat_map_iter(|a| (a + 1..1usize << n).map(move |b| (a, b)))
            .map(|(a, b)| {
                let (g, p) = cal.pair_gap(a, b);
                (g, a, b, p)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX, usize::MAX, usize::MAX),
                |u, v| if (v.0, v.1, v.2) < (u.0, u.1, u.2) { v } else { u },
            );
        let (g, a, b, p) = worst;
        let (code, z, t) = cal.points[p];
        let xa = BitString::from_index(a as u64, n);
        let xb = BitString::from_index(b as u64, n);
        let case = case_patterns(&xa, &xb, ell).0;
        Ok(Self {
            min_gap: g,
            min_gap_certificate: DistinguisherCertificate {
                w: Pattern::new(ell, code as u64),
                z0: [z.re, z.im],
                t0: t,
                gap: g,
                case,
                flagged: !(g > 0.0) || g < params.reference_gap(n),
            },
            min_gap_pair: (xa, xb),
            ..cal
        })
    }

    fn pattern_range(&self, a: usize, b: usize) -> std::ops::Range<usize> {
        let shift = self.n - self.ell;
        let (pa, pb) = (a >> shift, b >> shift);
        if pa != pb {
            pa * self.per_pattern..(pa + 1) * self.per_pattern
        } else {
            0..self.points.len()
        }
    }

    /// Certified gap between candidates `a` and `b` and the point achieving it.
    fn pair_gap(&self, a: usize, b: usize) -> (f64, usize) {
        let (va, vb) = (&self.predicted[a], &self.predicted[b]);
        let mut best = (-1.0, 0);
        for p in self.pattern_range(a, b) {
            let g = (va[p] - vb[p]).norm();
            if g > best.0 {
                best = (g, p);
            }
        }
        best
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn predicted(&self, x: &BitString) -> &[Complex64] {
        &self.predicted[x.to_index() as usize]
    }

    /// Oracle tolerance making every estimate accurate to `fraction` of the minimum gap.
    pub fn tolerance_for(&self, fraction: f64) -> f64 {
        fraction * self.min_gap / self.max_amplification
    }

    /// Estimates at every calibration point from window answers.
    pub fn estimates(&self, win: &WindowEstimates, ch: &ChannelParams) -> Result<Vec<Complex64>> {
        if win.n != self.n || win.window != self.window {
            return Err(invalid("window", "estimates do not match the calibration shape"));
        }
        let tabs = win.coeffs(self.ell, ch)?;
        Ok(self
            .points
            .iter()
            .map(|&(code, z, t)| tabs[code].eval(z, Complex64::new(t, 0.0)))
            .collect())
    }

    /// Keep candidates whose predictions are within half the minimum gap of every estimate.
    pub fn decide(&self, estimates: &[Complex64]) -> PairwiseOutcome {
        let radius = 0.5 * self.min_gap;
        let scored: Vec<(usize, f64)> = self
            .predicted
            .par_iter()
            .enumerate()
            .map(|(k, v)| {
                let r = v.iter().zip(estimates).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                (k, r)
            })
            .collect();
        let survivors: Vec<BitString> = scored
            .iter()
            .filter(|(_, r)| *r <= radius)
            .map(|&(k, _)| BitString::from_index(k as u64, self.n))
            .collect();
        let mut ranked = scored.clone();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let recovered = survivors.first().cloned();
        PairwiseOutcome {
            ambiguous: survivors.len() != 1,
            recovered,
            survivors: survivors.len(),
            best_residual: ranked[0].1,
            runner_up_residual: ranked.get(1).map_or(f64::INFINITY, |r| r.1),
            decision_radius: radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    /// Lexicographically smallest survivor; check `ambiguous` first.
    pub recovered: Option<BitString>,
    pub ambiguous: bool,
    pub survivors: usize,
    pub best_residual: f64,
    pub runner_up_residual: f64,
    pub decision_radius: f64,
}

/// Full pipeline against an oracle, keeping ambiguous outcomes as data.
pub fn pairwise_decide(oracle: &Oracle, ch: &ChannelParams, cal: &PairwiseCalibration, tau: f64) -> Result<PairwiseOutcome> {
    let win = WindowEstimates::fetch(oracle, cal.window, tau)?;
    Ok(cal.decide(&cal.estimates(&win, ch)?))
}

/// Pairwise elimination; zero or several survivors is an error.
pub fn pairwise_reconstruct(oracle: &Oracle, n: usize, ch: &ChannelParams, params: &WorstCaseParams) -> Result<BitString> {
    if oracle.n() != n {
        return Err(Error::LengthMismatch { left: oracle.n(), right: n });
    }
    let cal = PairwiseCalibration::new(n, ch, params)?;
    let out = pairwise_decide(oracle, ch, &cal, params.tau0)?;
    match (out.ambiguous, out.recovered) {
        (false, Some(x)) => Ok(x),
        (_, r) => Err(Error::Ambiguous(format!(
            "{} candidates survive{}",
            out.survivors,
            r.map(|x| format!("; smallest is {x}")).unwrap_or_default()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{NoiseMode, OracleConfig};
    use crate::rng::stream_rng;
    use num_rational::BigRational;
    use rand::Rng;

    fn ch(d: f64) -> ChannelParams {
        ChannelParams::new(d).unwrap()
    }

    fn exact_oracle(x: &BitString, c: &ChannelParams) -> Oracle {
        let cfg = OracleConfig {
            noise: NoiseMode::None,
            ..OracleConfig::default()
        };
        Oracle::new(x.clone(), c, cfg).unwrap()
    }

    #[test]
    fn mean_based_zero_string() {
        let c = ch(0.5);
        let x = BitString::zeros(7);
        assert_eq!(mean_based_reconstruct(&exact_oracle(&x, &c), 7, &c, 1e-3).unwrap(), x);
    }

    #[test]
    fn mean_based_exhaustive_n8() {
        let c = ch(0.5);
        for idx in 0..256 {
            let x = BitString::from_index(idx, 8);
            let o = exact_oracle(&x, &c);
            assert_eq!(mean_based_reconstruct(&o, 8, &c, 1e-3).unwrap(), x);
            assert_eq!(o.ledger().max_locality, 1);
        }
    }

    #[test]
    fn mean_based_with_small_noise_n16() {
        let c = ch(0.5);
        let mut rng = stream_rng(9, 0);
        for s in 0..100 {
            let x = BitString::random(16, &mut rng);
            let cfg = OracleConfig {
                noise: NoiseMode::UniformRandom,
                seed: s,
                ..OracleConfig::default()
            };
            let o = Oracle::new(x.clone(), &c, cfg).unwrap();
            assert_eq!(mean_based_reconstruct(&o, 16, &c, 1e-9).unwrap(), x);
        }
        assert!(mean_based_noise_floor(16, &c) > 1e-9);
    }

    #[test]
    fn back_substitution_flags_garbage() {
        let c = ch(0.5);
        let p = vec![0.3; 6];
        assert!(matches!(back_substitute(&p, &c), Err(Error::Failed(_))));
    }

    #[test]
    fn rational_back_substitution_n24() {
        let c = ch(0.5);
        let mut rng = stream_rng(10, 0);
        let x = BitString::random(24, &mut rng);
        let p = ChannelTables::<BigRational>::new(24, &c).unwrap().one_bit_stats(&x).unwrap();
        assert_eq!(back_substitute(&p, &c).unwrap(), x);
    }

    #[test]
    fn estimator_zero_string() {
        let c = ch(0.4);
        let x = BitString::zeros(6);
        let mut params = WorstCaseParams::for_n(6, &c);
        params.d0 = 4;
        let w = Pattern::new(params.ell, (1 << params.ell) - 1);
        let o = exact_oracle(&x, &c);
        let e = estimate_q_truncated(&o, &c, &w, Complex64::new(0.9, 0.0), 0.5, &params).unwrap();
        assert_eq!((e.re, e.im), (0.0, 0.0));
    }

    #[test]
    fn full_window_estimator_matches_source_poly() {
        let c = ch(0.5);
        let mut rng = stream_rng(11, 0);
        for _ in 0..5 {
            let n = rng.gen_range(4..=8);
            let x = BitString::random(n, &mut rng);
            let o = exact_oracle(&x, &c);
            let win = WindowEstimates::fetch(&o, n, 1e-9).unwrap();
            let ell = 2;
            let est = win.coeffs(ell, &c).unwrap();
            let exact = trace_coeffs_all(&x, &c, ell, n, Padding::Padded).unwrap();
            let dom = EvalDomain::new(n, &c);
            for z in dom.arc_points(5) {
                let t = Complex64::new(0.6, 0.0);
                for w in Pattern::all(ell) {
                    let e = est[w.code() as usize].eval(z, t);
                    assert!((e - exact[w.code() as usize].eval(z, t)).norm() < 1e-9);
                    if w.bit(ell - 1) == 1 {
                        assert!((e - source_poly_p(&x, &w, z, t).unwrap()).norm() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn estimator_noise_stays_in_budget() {
        let c = ch(0.5);
        let x: BitString = "1011001110".parse().unwrap();
        let cfg = OracleConfig {
            noise: NoiseMode::UniformRandom,
            seed: 4,
            ..OracleConfig::default()
        };
        let o = Oracle::new(x.clone(), &c, cfg).unwrap();
        let (ell, d0, tau) = (3, 6, 1e-6);
        let win = WindowEstimates::fetch(&o, d0, tau).unwrap();
        let est = win.coeffs(ell, &c).unwrap();
        let exact = trace_coeffs_all(&x, &c, ell, d0 - ell, Padding::Padded).unwrap();
        let dom = EvalDomain::new(10, &c);
        for z in dom.arc_points(7) {
            for t in dom.segment_points(3) {
                let t = Complex64::new(t, 0.0);
                let b = win.budget(ell, &c, z, t);
                for w in 0..8 {
                    let err = (est[w].eval(z, t) - exact[w].eval(z, t)).norm();
                    assert!(err <= b);
                    assert!(err <= reference_estimator_bound(10, d0, tau));
                }
            }
        }
        assert_eq!(o.ledger().max_locality, d0);
    }

    #[test]
    fn distinguisher_prefix_case() {
        let c = ch(0.5);
        let x1: BitString = "10110".parse().unwrap();
        let x2: BitString = "00110".parse().unwrap();
        let mut p = WorstCaseParams::for_n(5, &c);
        p.grid = GridSpec::uniform(9);
        let cert = find_distinguisher(&x1, &x2, &c, &p).unwrap();
        assert_eq!(cert.case, SearchCase::Prefix);
        assert!(cert.gap > 0.0);
        assert!(find_distinguisher(&x1, &x1, &c, &p).is_err());
    }

    #[test]
    fn distinguisher_all_pairs_n8() {
        let c = ch(0.5);
        let mut p = WorstCaseParams::for_n(8, &c);
        p.ell = 3;
        p.grid = GridSpec::uniform(5);
        p.refine = false;
        let gaps: Vec<f64> = (0..256u64)
            .into_par_iter()
            .flat_map_iter(|a| (a + 1..256).map(move |b| (a, b)))
            .map(|(a, b)| {
                find_distinguisher(&BitString::from_index(a, 8), &BitString::from_index(b, 8), &c, &p)
                    .unwrap()
                    .gap
            })
            .collect();
        assert!(gaps.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn pairwise_exhaustive_n6() {
        let c = ch(0.5);
        let mut p = WorstCaseParams::for_n(6, &c);
        p.grid = GridSpec::uniform(5);
        let cal = PairwiseCalibration::new(6, &c, &p).unwrap();
        assert!(cal.min_gap > 0.0);
        let tau = cal.tolerance_for(0.1);
        for idx in 0..64 {
            let x = BitString::from_index(idx, 6);
            let out = pairwise_decide(&exact_oracle(&x, &c), &c, &cal, tau).unwrap();
            assert!(!out.ambiguous);
            assert_eq!(out.recovered, Some(x));
        }
    }

    #[test]
    fn pairwise_survives_injected_noise() {
        let c = ch(0.5);
        let mut p = WorstCaseParams::for_n(5, &c);
        p.grid = GridSpec::uniform(5);
        let cal = PairwiseCalibration::new(5, &c, &p).unwrap();
        let g = cal.min_gap;
        let mut rng = stream_rng(12, 0);
        for idx in 0..32 {
            let x = BitString::from_index(idx, 5);
            let noisy: Vec<Complex64> = cal
                .predicted(&x)
                .iter()
                .map(|v| v + Complex64::from_polar(0.1 * g, rng.gen::<f64>() * std::f64::consts::TAU))
                .collect();
            let out = cal.decide(&noisy);
            assert_eq!(out.recovered, Some(x));
            assert!(!out.ambiguous);
        }
    }

    #[test]
    fn pairwise_rejects_large_n() {
        let c = ch(0.5);
        let p = WorstCaseParams::for_n(15, &c);
        assert!(matches!(PairwiseCalibration::new(15, &c, &p), Err(Error::Budget { .. })));
    }
}
