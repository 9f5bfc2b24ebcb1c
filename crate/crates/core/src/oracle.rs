//! Local statistical-query oracle over the traces of a hidden string.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{code_bit, BitString, Pattern};
use crate::channel::{sample_trace_with, ChannelParams, ChannelTables, Cylinder, Padding};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, StableHasher};

/// The function evaluated on a window of the padded trace.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryFn {
    /// Values in [-1, 1] for every window content, indexed by pattern code.
    Table(Vec<f64>),
    /// Indicator of a conjunction of bit constraints.
    Cylinder(Cylinder),
}

/// An `ell`-local query: a bounded function of trace bits `start .. start + ell`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalQuery {
    pub start: usize,
    pub ell: usize,
    pub func: QueryFn,
}

impl LocalQuery {
    pub fn table(start: usize, ell: usize, table: Vec<f64>) -> Result<Self> {
        if ell == 0 || ell > 24 {
            return Err(invalid("ell", format!("{ell} is outside 1..=24")));
        }
        if table.len() != 1 << ell {
            return Err(Error::LengthMismatch {
                left: table.len(),
                right: 1 << ell,
            });
        }
        if table.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(invalid("table", "query values must lie in [-1, 1]"));
        }
        Ok(Self {
            start,
            ell,
            func: QueryFn::Table(table),
        })
    }

    /// Indicator that the window equals `w`.
    pub fn subword(start: usize, w: Pattern) -> Self {
        Self {
            start,
            ell: w.len(),
            func: QueryFn::Cylinder(Cylinder::contiguous(&w.bits())),
        }
    }

    pub fn cylinder(start: usize, cyl: Cylinder) -> Result<Self> {
        if cyl.span() == 0 {
            return Err(invalid("cylinder", "at least one constraint is required"));
        }
        Ok(Self {
            start,
            ell: cyl.span(),
            func: QueryFn::Cylinder(cyl),
        })
    }

    /// Value of window bit `alpha`.
    pub fn dictator(start: usize, ell: usize, alpha: usize) -> Result<Self> {
        if alpha >= ell {
            return Err(invalid("alpha", format!("{alpha} is outside a window of {ell}")));
        }
        let table = (0..1u64 << ell).map(|c| code_bit(c, ell, alpha) as f64).collect();
        Self::table(start, ell, table)
    }

    /// Value of the query on a concrete window.
    pub fn eval_window(&self, window: impl Fn(usize) -> u8) -> f64 {
        match &self.func {
            QueryFn::Table(t) => {
                let code = (0..self.ell).fold(0usize, |c, k| (c << 1) | window(k) as usize);
                t[code]
            }
            QueryFn::Cylinder(c) => {
                if c.matches(window) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn fingerprint(&self) -> u64 {
        let mut h = StableHasher::default();
        h.u64(self.start as u64).u64(self.ell as u64);
        match &self.func {
            QueryFn::Table(t) => {
                h.u64(0);
                for v in t {
                    h.f64(*v);
                }
            }
            QueryFn::Cylinder(c) => {
                h.u64(1);
                for &(o, b) in c.constraints() {
                    h.u64(o as u64).u64(b as u64);
                }
            }
        }
        h.finish()
    }

    fn label(&self) -> QueryLabel {
        match &self.func {
            QueryFn::Table(_) => QueryLabel::TableHash(format!("{:016x}", self.fingerprint())),
            QueryFn::Cylinder(c) => {
                let mut s = vec!['*'; self.ell];
                for &(o, b) in c.constraints() {
                    s[o] = if b == 1 { '1' } else { '0' };
                }
                QueryLabel::W(s.into_iter().collect())
            }
        }
    }
}

/// Exact statistics of one string, with caches shared across callers.
pub struct ExactEvaluator {
    x: BitString,
    tables: ChannelTables<f64>,
    subword: Mutex<HashMap<usize, Arc<Vec<Vec<f64>>>>>,
    profiles: Mutex<HashMap<Cylinder, Arc<(Vec<f64>, bool)>>>,
}

impl ExactEvaluator {
    pub fn new(x: BitString, ch: &ChannelParams) -> Result<Self> {
        let tables = ChannelTables::new(x.len(), ch)?;
        Ok(Self {
            x,
            tables,
            subword: Mutex::new(HashMap::new()),
            profiles: Mutex::new(HashMap::new()),
        })
    }

    pub fn x(&self) -> &BitString {
        &self.x
    }

    pub fn subword_table(&self, ell: usize) -> Result<Arc<Vec<Vec<f64>>>> {
        if let Some(t) = self.subword.lock().unwrap().get(&ell) {
            return Ok(t.clone());
        }
        let t = Arc::new(self.tables.subword_table(&self.x, ell)?);
        self.subword.lock().unwrap().insert(ell, t.clone());
        Ok(t)
    }

    pub fn cylinder_prob(&self, start: usize, cyl: &Cylinder) -> Result<f64> {
        let cached = self.profiles.lock().unwrap().get(cyl).cloned();
        let prof = match cached {
            Some(p) => p,
            None => {
                let p = Arc::new(self.tables.cylinder_profile(&self.x, cyl, Padding::Padded)?);
                self.profiles.lock().unwrap().insert(cyl.clone(), p.clone());
                p
            }
        };
        Ok(self.tables.at_start(start, &prof.0, prof.1))
    }

    /// Exact P_q. Starts at or past n see only padding.
    pub fn value(&self, q: &LocalQuery) -> Result<f64> {
        let n = self.x.len();
        match &q.func {
            QueryFn::Cylinder(c) => self.cylinder_prob(q.start, c),
            QueryFn::Table(t) => {
                if q.start >= n {
                    return Ok(t[0]);
                }
                let tab = self.subword_table(q.ell)?;
                Ok(tab[q.start].iter().zip(t).map(|(p, v)| p * v).sum())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adversary {
    /// Each answer moves toward the midpoint of the confusion set, independently.
    Stateless,
    /// Candidates contradicted by an earlier answer leave the confusion set.
    Stateful,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    None,
    UniformRandom,
    AdversarialRounding,
}

impl NoiseMode {
    fn name(&self) -> &'static str {
        match self {
            NoiseMode::None => "none",
            NoiseMode::UniformRandom => "uniform-random",
            NoiseMode::AdversarialRounding => "adversarial-rounding",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub backend: Backend,
    pub noise: NoiseMode,
    pub tau0: f64,
    /// Refuse queries asking for a tolerance below `tau0`.
    pub enforce_floor: bool,
    pub seed: u64,
    /// Trace pool size for the Monte-Carlo backend.
    pub samples: u64,
    pub adversary: Adversary,
    pub log_queries: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Exact,
            noise: NoiseMode::UniformRandom,
            tau0: 1e-3,
            enforce_floor: false,
            seed: 0,
            samples: 100_000,
            adversary: Adversary::Stateless,
            log_queries: false,
        }
    }
}

/// Query count and the smallest tolerance requested so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub queries: u64,
    pub min_tolerance: f64,
    pub max_locality: usize,
}

impl Default for Ledger {
    fn default() -> Self {
        Self {
            queries: 0,
            min_tolerance: f64::INFINITY,
            max_locality: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryLabel {
    W(String),
    TableHash(String),
}

/// One line of the session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub i: usize,
    #[serde(flatten)]
    pub query: QueryLabel,
    pub tau: f64,
    pub answer: f64,
    pub mode: String,
    pub seed: u64,
}

struct TracePool {
    traces: Vec<Vec<u8>>,
}

impl TracePool {
    fn value(&self, q: &LocalQuery) -> f64 {
        let total: f64 = self
            .traces
            .iter()
            .map(|y| q.eval_window(|k| y.get(q.start + k).copied().unwrap_or(0)))
            .sum();
        total / self.traces.len() as f64
    }
}

/// Answers local queries about a hidden string within a requested tolerance.
pub struct Oracle {
    cfg: OracleConfig,
    n: usize,
    exact: ExactEvaluator,
    pool: Option<TracePool>,
    confusers: Vec<ExactEvaluator>,
    alive: Mutex<Vec<bool>>,
    ledger: Mutex<Ledger>,
    log: Mutex<Vec<LogRecord>>,
}

impl Oracle {
    pub fn new(x: BitString, ch: &ChannelParams, cfg: OracleConfig) -> Result<Self> {
        if !(cfg.tau0 > 0.0) {
            return Err(invalid("tau0", "must be positive"));
        }
        let pool = match cfg.backend {
            Backend::Exact => None,
            Backend::MonteCarlo => {
                if cfg.samples == 0 {
                    return Err(invalid("samples", "must be positive"));
                }
                let mut rng = stream_rng(cfg.seed, u64::MAX);
                let traces = (0..cfg.samples).map(|_| sample_trace_with(&x, ch, &mut rng).bits).collect();
                Some(TracePool { traces })
            }
        };
        Ok(Self {
            n: x.len(),
            exact: ExactEvaluator::new(x, ch)?,
            pool,
            confusers: Vec::new(),
            alive: Mutex::new(Vec::new()),
            ledger: Mutex::new(Ledger::default()),
            log: Mutex::new(Vec::new()),
            cfg,
        })
    }

    /// Strings the adversarial mode tries to make indistinguishable from the hidden one.
    pub fn with_confusion_set(mut self, set: Vec<BitString>, ch: &ChannelParams) -> Result<Self> {
        for c in &set {
            if c.len() != self.n {
                return Err(Error::LengthMismatch {
                    left: c.len(),
                    right: self.n,
                });
            }
        }
        self.confusers = set.into_iter().map(|c| ExactEvaluator::new(c, ch)).collect::<Result<_>>()?;
        self.alive = Mutex::new(vec![true; self.confusers.len()]);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> Ledger {
        *self.ledger.lock().unwrap()
    }

    /// A value within `tau` of P_q (exactly so for the exact backend).
    pub fn answer(&self, q: &LocalQuery, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        if self.cfg.enforce_floor && tau < self.cfg.tau0 {
            return Err(Error::ToleranceRefused {
                requested: tau,
                floor: self.cfg.tau0,
            });
        }
        if q.start >= self.n {
            return Err(invalid("start", format!("{} is outside 0..{}", q.start, self.n)));
        }
        let truth = match &self.pool {
            Some(pool) => pool.value(q),
            None => self.exact.value(q)?,
        };
        let answer = match self.cfg.noise {
            NoiseMode::None => truth,
            NoiseMode::UniformRandom => {
                let mut h = StableHasher::default();
                h.u64(self.cfg.seed).u64(q.fingerprint()).f64(tau);
                let mut rng = stream_rng(h.finish(), 1);
                truth + rng.gen_range(-tau..=tau)
            }
            NoiseMode::AdversarialRounding => self.adversarial(q, truth, tau)?,
        };
        {
            let mut l = self.ledger.lock().unwrap();
            l.queries += 1;
            l.min_tolerance = l.min_tolerance.min(tau);
            l.max_locality = l.max_locality.max(q.ell);
        }
        if self.cfg.log_queries {
            self.log.lock().unwrap().push(LogRecord {
                i: q.start,
                query: q.label(),
                tau,
                answer,
                mode: self.cfg.noise.name().to_string(),
                seed: self.cfg.seed,
            });
        }
        Ok(answer)
    }

    fn adversarial(&self, q: &LocalQuery, truth: f64, tau: f64) -> Result<f64> {
        if self.confusers.is_empty() {
            return Ok(truth);
        }
        let values = self.confusers.iter().map(|c| c.value(q)).collect::<Result<Vec<f64>>>()?;
        let toward = |alive: &[bool]| {
            let live = values.iter().zip(alive).filter(|(_, &a)| a).map(|(v, _)| *v);
            let (lo, hi) = live.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if lo.is_finite() {
                let target = 0.5 * (lo + hi);
                truth + (target - truth).clamp(-tau, tau)
            } else {
                truth
            }
        };
        match self.cfg.adversary {
            Adversary::Stateless => Ok(toward(&vec![true; values.len()])),
            Adversary::Stateful => {
                let mut alive = self.alive.lock().unwrap();
                let a = toward(&alive);
                for (flag, v) in alive.iter_mut().zip(&values) {
                    if (v - a).abs() > tau * (1.0 + 1e-12) {
                        *flag = false;
                    }
                }
                Ok(a)
            }
        }
    }

    /// Confusion-set members still consistent with every answer (stateful adversary).
    pub fn surviving_confusers(&self) -> Vec<BitString> {
        let alive = self.alive.lock().unwrap();
        self.confusers
            .iter()
            .zip(alive.iter())
            .filter(|(_, &a)| a)
            .map(|(c, _)| c.x().clone())
            .collect()
    }

    /// Logged queries in a canonical order independent of call interleaving.
    pub fn session_log(&self) -> Vec<LogRecord> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort_by(|a, b| {
            (a.i, format!("{:?}", a.query), a.tau.to_bits(), a.answer.to_bits())
                .cmp(&(b.i, format!("{:?}", b.query), b.tau.to_bits(), b.answer.to_bits()))
        });
        log
    }

    pub fn write_session_log<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.session_log() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A local query rewritten as weighted subword queries at tolerance `tau0 / 2^ell`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordDecomposition {
    pub start: usize,
    pub ell: usize,
    pub weights: Vec<f64>,
    pub sub_tolerance: f64,
}

impl SubwordDecomposition {
    pub fn queries(&self) -> impl Iterator<Item = (LocalQuery, f64)> + '_ {
        Pattern::all(self.ell).map(move |w| (LocalQuery::subword(self.start, w), self.sub_tolerance))
    }

    pub fn recombine(&self, answers: &[f64]) -> f64 {
        self.weights.iter().zip(answers).map(|(c, a)| c * a).sum()
    }

    /// Ask every subword query and recombine.
    pub fn answer_with(&self, oracle: &Oracle) -> Result<f64> {
        let answers = self
            .queries()
            .map(|(q, tau)| oracle.answer(&q, tau))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.recombine(&answers))
    }
}

pub fn reduce_to_subwords(q: &LocalQuery, tau0: f64) -> Result<SubwordDecomposition> {
    if !(tau0 > 0.0) {
        return Err(invalid("tau0", "must be positive"));
    }
    let weights = match &q.func {
        QueryFn::Table(t) => t.clone(),
        QueryFn::Cylinder(c) => (0..1u64 << q.ell)
            .map(|code| if c.matches(|k| code_bit(code, q.ell, k)) { 1.0 } else { 0.0 })
            .collect(),
    };
    Ok(SubwordDecomposition {
        start: q.start,
        ell: q.ell,
        weights,
        sub_tolerance: tau0 / (1u64 << q.ell) as f64,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn uniform_answers_stay_within_tolerance(
            bits in proptest::collection::vec(0u8..=1, 2..16),
            delta in 0.05f64..0.95,
            seed in any::<u64>(),
            tau in 1e-6f64..0.5,
            table in proptest::collection::vec(-1.0f64..=1.0, 4),
        ) {
            let x = BitString::new(bits).unwrap();
            let ch = ChannelParams::new(delta).unwrap();
            let o = Oracle::new(x.clone(), &ch, OracleConfig { seed, ..Default::default() }).unwrap();
            let q = LocalQuery::table(seed as usize % x.len(), 2, table).unwrap();
            let truth = ExactEvaluator::new(x, &ch).unwrap().value(&q).unwrap();
            let a = o.answer(&q, tau).unwrap();
            prop_assert!((a - truth).abs() <= tau);
            prop_assert_eq!(a, o.answer(&q, tau).unwrap());
        }
    }
}
