//! Subword signatures p_{x,i,w} = Pr[y_i .. y_{i+l-1} = w] on the padded trace.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Pattern};
use crate::channel::{sample_trace_with, ChannelParams, ChannelTables};
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Table of window probabilities indexed by start `i < n` and pattern code.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordSignature {
    pub n: usize,
    pub ell: usize,
    pub delta: f64,
    table: Vec<f64>,
}

impl SubwordSignature {
    pub fn from_rows(n: usize, ell: usize, delta: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::LengthMismatch { left: rows.len(), right: n });
        }
        let width = 1usize << ell;
        let mut table = Vec::with_capacity(n * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::LengthMismatch { left: r.len(), right: width });
            }
            table.extend(r);
        }
        Ok(Self { n, ell, delta, table })
    }

    #[inline]
    pub fn get(&self, i: usize, code: u64) -> f64 {
        self.table[(i << self.ell) + code as usize]
    }

    pub fn p(&self, i: usize, w: &Pattern) -> f64 {
        assert_eq!(w.len(), self.ell);
        self.get(i, w.code())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let width = 1usize << self.ell;
        &self.table[i * width..(i + 1) * width]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.n, self.ell), (other.n, other.ell));
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Marginalize each row onto a sub-window of offsets `0..ell2`.
    pub fn prefix_marginal(&self, ell2: usize) -> Result<Self> {
        if ell2 == 0 || ell2 > self.ell {
            return Err(invalid("ell", format!("cannot marginalize {} onto {}", self.ell, ell2)));
        }
        let shift = self.ell - ell2;
        let rows = (0..self.n)
            .map(|i| {
                let mut r = vec![0.0; 1 << ell2];
                for (code, v) in self.row(i).iter().enumerate() {
                    r[code >> shift] += v;
                }
                r
            })
            .collect();
        Self::from_rows(self.n, ell2, self.delta, rows)
    }

    pub fn to_doc(&self) -> SignatureDoc {
        let mut entries = Vec::with_capacity(self.table.len());
        for i in 0..self.n {
            for w in Pattern::all(self.ell) {
                entries.push(SignatureEntry { i, w, p: self.get(i, w.code()) });
            }
        }
        SignatureDoc {
            n: self.n,
            ell: self.ell,
            delta: self.delta,
            entries,
        }
    }

    pub fn from_doc(doc: &SignatureDoc) -> Result<Self> {
        if doc.ell == 0 || doc.ell > 24 {
            return Err(invalid("ell", format!("{} is outside 1..=24", doc.ell)));
        }
        let mut table = vec![f64::NAN; doc.n << doc.ell];
        for e in &doc.entries {
            if e.i >= doc.n || e.w.len() != doc.ell {
                return Err(Error::Parse(format!("entry ({}, {}) outside the declared shape", e.i, e.w)));
            }
            table[(e.i << doc.ell) + e.w.code() as usize] = e.p;
        }
        if table.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("signature is missing entries".into()));
        }
        Ok(Self {
            n: doc.n,
            ell: doc.ell,
            delta: doc.delta,
            table,
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_doc())?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let doc: SignatureDoc = serde_json::from_reader(r)?;
        Self::from_doc(&doc)
    }

    /// CSV rows `i,w,p`; the shape and delta must be supplied when reading back.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in self.to_doc().entries {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n: usize, ell: usize, delta: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let entries = rd.deserialize().collect::<std::result::Result<Vec<SignatureEntry>, _>>()?;
        Self::from_doc(&SignatureDoc { n, ell, delta, entries })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub i: usize,
    pub w: Pattern,
    pub p: f64,
}

/// Serialized form of a signature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureDoc {
    pub n: usize,
    pub ell: usize,
    pub delta: f64,
    pub entries: Vec<SignatureEntry>,
}

/// Exact table in an arbitrary backend.
pub fn exact_subword_table<T: Scalar>(x: &BitString, ch: &ChannelParams, ell: usize) -> Result<Vec<Vec<T>>> {
    ChannelTables::<T>::new(x.len(), ch)?.subword_table(x, ell)
}

/// Exact signature via the position-tracking recursion.
pub fn exact_subword_signature(x: &BitString, ch: &ChannelParams, ell: usize) -> Result<SubwordSignature> {
    let rows = exact_subword_table::<f64>(x, ch, ell)?;
    SubwordSignature::from_rows(x.len(), ell, ch.delta, rows)
}

pub const BRUTE_FORCE_MAX_N: usize = 24;

/// Signatures for every `ell` in `ells`, by summing over all 2^n retention sets.
pub fn brute_force_signatures(x: &BitString, ch: &ChannelParams, ells: &[usize]) -> Result<Vec<SubwordSignature>> {
    let n = x.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Budget {
            what: "n for brute force",
            got: n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    if let Some(&e) = ells.iter().find(|&&e| e == 0 || e > 16) {
        return Err(invalid("ell", format!("{e} is outside 1..=16")));
    }
    let rho = ch.rho();
    let weight: Vec<f64> = (0..=n)
        .map(|k| rho.powi(k as i32) * ch.delta.powi((n - k) as i32))
        .collect();
    let xbits: u32 = x.bits().iter().enumerate().fold(0, |a, (j, &b)| a | ((b as u32) << j));
    let sizes: Vec<usize> = ells.iter().map(|&e| n << e).collect();
    let zero = || sizes.iter().map(|&s| vec![0.0; s]).collect::<Vec<Vec<f64>>>();

    let chunk = 1u64 << n.saturating_sub(6);
    let partials: Vec<Vec<Vec<f64>>> = (0..(1u64 << n).div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = zero();
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(1u64 << n);
            for mask in lo..hi {
                let mask = mask as u32;
                let mut y: u64 = 0;
                let mut m = 0;
                for j in 0..n {
                    if mask >> j & 1 == 1 {
                        y |= ((xbits >> j & 1) as u64) << m;
                        m += 1;
                    }
                }
                let wgt = weight[m];
                for (t, &ell) in ells.iter().enumerate() {
                    let tab = &mut acc[t];
                    for i in 0..n {
                        let mut code = 0usize;
                        for k in 0..ell {
                            code = (code << 1) | ((y >> (i + k)) & 1) as usize;
                        }
                        tab[(i << ell) + code] += wgt;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = zero();
    for p in partials {
        for (t, tab) in p.into_iter().enumerate() {
            for (a, b) in total[t].iter_mut().zip(tab) {
                *a += b;
            }
        }
    }
    Ok(ells
        .iter()
        .zip(total)
        .map(|(&ell, table)| SubwordSignature { n, ell, delta: ch.delta, table })
        .collect())
}

pub fn brute_force_signature(x: &BitString, ch: &ChannelParams, ell: usize) -> Result<SubwordSignature> {
    Ok(brute_force_signatures(x, ch, &[ell])?.remove(0))
}

/// Empirical signature with per-entry standard error sqrt(p(1-p)/N).
pub struct MonteCarloSignature {
    pub signature: SubwordSignature,
    pub std_error: Vec<f64>,
    pub samples: u64,
}

const MC_CHUNK: u64 = 4096;

pub fn monte_carlo_signature(
    x: &BitString,
    ch: &ChannelParams,
    ell: usize,
    samples: u64,
    seed: u64,
) -> Result<MonteCarloSignature> {
    if samples == 0 {
        return Err(invalid("samples", "must be positive"));
    }
    if ell == 0 || ell > 20 {
        return Err(invalid("ell", format!("{ell} is outside 1..=20")));
    }
    let n = x.len();
    let width = 1usize << ell;
    let chunks = samples.div_ceil(MC_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let mut cnt = vec![0u64; n * width];
            let todo = MC_CHUNK.min(samples - c * MC_CHUNK);
            for _ in 0..todo {
                let y = sample_trace_with(x, ch, &mut rng);
                let mut code = 0usize;
                for k in 0..ell {
                    code = (code << 1) | y.get(k) as usize;
                }
                for i in 0..n {
                    cnt[i * width + code] += 1;
                    code = ((code << 1) & (width - 1)) | y.get(i + ell) as usize;
                }
            }
            cnt
        })
        .reduce(
            || vec![0u64; n * width],
            |mut a, b| {
                for (u, v) in a.iter_mut().zip(b) {
                    *u += v;
                }
                a
            },
        );
    let nf = samples as f64;
    let table: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let std_error = table.iter().map(|&p| (p * (1.0 - p) / nf).sqrt()).collect();
    Ok(MonteCarloSignature {
        signature: SubwordSignature { n, ell, delta: ch.delta, table },
        std_error,
        samples,
    })
}
