//! Command-line driver. Every artifact embeds the resolved configuration, the
//! tool version and the precision backend, and depends only on config and seed.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use num_rational::BigRational;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::avg_case::{avg_params, avg_reconstruct, estimate_sw_table, exact_sw, AvgBackend, AvgMultipliers, AvgParams};
use crate::bits::BitString;
use crate::channel::{ChannelParams, ChannelTables};
use crate::degrade::{compose_channels_check, degrade_signature, DegradeSpec, ExactSource, OracleSource, TableSource, WindowSource};
use crate::error::{invalid, Error, Result};
use crate::lower_bounds::{
    certify_pair, construct_hard_pair, middle_bit_gap, middle_hit_peak, one_bit_gap, random_pair_baseline, BeBudget,
    HardPairSchedule, JuntaQuery,
};
use crate::oracle::{Backend, ExactEvaluator, NoiseMode, Oracle, OracleConfig};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::signature::{brute_force_signature, exact_subword_signature, exact_subword_table, monte_carlo_signature, SubwordSignature};
use crate::worst_case::{
    back_substitute, default_ell, mean_based_noise_floor, mean_based_reconstruct, pairwise_decide, GridSpec,
    PairwiseCalibration, WorstCaseParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Thread count override.
pub const THREADS_ENV: &str = "SQTRACE_THREADS";

/// Flags struct with every field optional, plus a resolved struct with defaults filled in.
macro_rules! config_args {
    ($flags:ident => $resolved:ident {
        $( $(#[doc = $doc:literal])* $f:ident : $t:ty = $d:expr, )*
    } optional {
        $( $(#[doc = $odoc:literal])* $o:ident : $ot:ty, )*
    }) => {
        #[derive(clap::Args, Serialize, Deserialize, Default, Clone, Debug)]
        #[serde(default, rename_all = "kebab-case")]
        pub struct $flags {
            $( $(#[doc = $doc])* #[arg(long, num_args = 0..=1, default_missing_value = "true")] pub $f: Option<$t>, )*
            $( $(#[doc = $odoc])* #[arg(long)] pub $o: Option<$ot>, )*
        }

        #[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
        #[serde(rename_all = "kebab-case")]
        pub struct $resolved {
            $( pub $f: $t, )*
            $( pub $o: Option<$ot>, )*
        }

        impl $flags {
            pub fn resolve(self) -> $resolved {
                $resolved {
                    $( $f: self.$f.unwrap_or_else(|| $d), )*
                    $( $o: self.$o, )*
                }
            }
        }
    };
}

config_args!(StatsFlags => StatsConfig {
    n: usize = 10,
    delta: f64 = 0.5,
    ell: usize = 2,
    seed: u64 = 0,
    /// exact, exact-rational, brute-force or monte-carlo
    method: String = "exact".into(),
    samples: u64 = 100_000,
    /// json or csv
    format: String = "json".into(),
} optional {
    /// Input string; random of length n when absent
    x: String,
});

config_args!(MeanFlags => MeanConfig {
    n: usize = 10,
    delta: f64 = 0.5,
    /// none, uniform-random or adversarial-rounding
    noise: String = "uniform-random".into(),
    /// exact or monte-carlo
    backend: String = "exact".into(),
    samples: u64 = 100_000,
    seed: u64 = 0,
    /// Run every string of length n
    exhaustive: bool = false,
    trials: usize = 100,
    /// f64 or exact-rational
    precision: String = "f64".into(),
} optional {
    x: String,
    /// Query tolerance; half the certified floor when absent
    tau: f64,
});

config_args!(WorstFlags => WorstConfig {
    n: usize = 6,
    delta: f64 = 0.5,
    grid: usize = 5,
    /// Query tolerance as a fraction of the minimum certificate gap over the amplification
    noise_fraction: f64 = 0.1,
    noise: String = "uniform-random".into(),
    seed: u64 = 0,
    exhaustive: bool = false,
    trials: usize = 50,
} optional {
    x: String,
    ell: usize,
});

config_args!(AvgFlags => AvgConfig {
    n: usize = 12,
    delta: f64 = 0.3,
    eta: f64 = 0.1,
    c_k: f64 = AvgMultipliers::default().c_k,
    c_kappa: f64 = AvgMultipliers::default().c_kappa,
    c_big: f64 = AvgMultipliers::default().c_big,
    c_ell: f64 = AvgMultipliers::default().c_ell,
    /// exact-mean-based or sw-consistency-greedy
    avg_backend: String = "sw-consistency-greedy".into(),
    noise: String = "none".into(),
    grid_points: usize = 3,
    seed: u64 = 0,
    exhaustive: bool = false,
    trials: usize = 10,
} optional {
    x: String,
    tau: f64,
});

config_args!(SwFlags => SwConfig {
    n: usize = 12,
    delta: f64 = 0.3,
    eta: f64 = 0.1,
    c_k: f64 = AvgMultipliers::default().c_k,
    c_kappa: f64 = AvgMultipliers::default().c_kappa,
    c_big: f64 = AvgMultipliers::default().c_big,
    c_ell: f64 = AvgMultipliers::default().c_ell,
    grid_points: usize = 3,
    noise: String = "uniform-random".into(),
    /// oracle or exact
    source: String = "oracle".into(),
    seed: u64 = 0,
    format: String = "json".into(),
} optional {
    x: String,
});

config_args!(DegradeFlags => DegradeConfig {
    n: usize = 10,
    delta: f64 = 0.2,
    delta2: f64 = 0.5,
    ell_out: usize = 2,
    xi: f64 = 1e-6,
    tau2: f64 = 1e-5,
    seed: u64 = 0,
    /// Also run the channel composition check (n <= 12)
    compose: bool = true,
} optional {
    x: String,
    span: usize,
});

config_args!(LowerFlags => LowerConfig {
    /// hard-pair or middle-bit
    mode: String = "hard-pair".into(),
    n: usize = 64,
    delta: f64 = 0.5,
    c_ell: f64 = 1.0,
    c_t: f64 = 0.25,
    c_r: f64 = 0.8,
    kmax: usize = 12,
    baseline_pairs: usize = 100,
    certify: bool = true,
    queries: usize = 50,
    ell: usize = 2,
    seed: u64 = 0,
} optional {
    t: usize,
});

config_args!(CertifyFlags => CertifyConfig {
    delta: f64 = 0.5,
    ell: usize = 2,
} optional {
    a: String,
    b: String,
    /// Block length; the gappy structure is checked against it
    t: usize,
});

config_args!(SweepFlags => SweepConfig {
    /// mean, hard-pair or middle-bit
    what: String = "mean".into(),
    /// Comma-separated lengths
    ns: String = "8,10,12".into(),
    /// Comma-separated deletion rates
    deltas: String = "0.2,0.5,0.8".into(),
    trials: usize = 20,
    queries: usize = 50,
    ell: usize = 2,
    seed: u64 = 0,
    format: String = "csv".into(),
} optional {});

#[derive(Parser, Debug)]
#[command(name = "sqtrace", version, about = "Trace reconstruction experiments with local statistical queries")]
pub struct Cli {
    /// TOML file with defaults; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Subword statistics of a string
    Stats(StatsFlags),
    /// Back-substitution on one-bit statistics
    ReconstructMean(MeanFlags),
    /// Pairwise elimination with trace polynomials
    ReconstructWorst(WorstFlags),
    /// Average-case backends
    ReconstructAvg(AvgFlags),
    /// SW estimates over the deletion-rate grid
    SwTable(SwFlags),
    /// Simulate statistics at a higher deletion rate
    Degrade(DegradeFlags),
    /// Hard pairs and middle-bit gaps
    Lowerbound(LowerFlags),
    /// Exact certificate for a given pair
    Certify(CertifyFlags),
    /// Parameter sweeps as tables
    Sweep(SweepFlags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats(_) => "stats",
            Command::ReconstructMean(_) => "reconstruct-mean",
            Command::ReconstructWorst(_) => "reconstruct-worst",
            Command::ReconstructAvg(_) => "reconstruct-avg",
            Command::SwTable(_) => "sw-table",
            Command::Degrade(_) => "degrade",
            Command::Lowerbound(_) => "lowerbound",
            Command::Certify(_) => "certify",
            Command::Sweep(_) => "sweep",
        }
    }
}

/// Whether the pipeline completed cleanly or produced a flagged result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Flagged,
}

/// Parse, run and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match run(cli) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Flagged) => EXIT_FLAGGED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParam { .. }
        | Error::LengthMismatch { .. }
        | Error::Budget { .. }
        | Error::ToleranceRefused { .. }
        | Error::NotGappy { .. }
        | Error::Parse(_) => EXIT_CONFIG,
        Error::Ambiguous(_) => EXIT_FLAGGED,
        _ => EXIT_FAILURE,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = v
        .trim()
        .parse()
        .map_err(|_| invalid("SQTRACE_THREADS", format!("'{v}' is not a thread count")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<Status> {
    let file = match &cli.config {
        Some(p) => Some(load_config_file(p)?),
        None => None,
    };
    let name = cli.command.name();
    let file = file.as_ref();
    let mut sink = Sink::new(cli.out.as_ref())?;
    let status = match cli.command {
        Command::Stats(f) => cmd_stats(merge(f, file, name)?.resolve(), &mut sink),
        Command::ReconstructMean(f) => cmd_mean(merge(f, file, name)?.resolve(), &mut sink),
        Command::ReconstructWorst(f) => cmd_worst(merge(f, file, name)?.resolve(), &mut sink),
        Command::ReconstructAvg(f) => cmd_avg(merge(f, file, name)?.resolve(), &mut sink),
        Command::SwTable(f) => cmd_sw(merge(f, file, name)?.resolve(), &mut sink),
        Command::Degrade(f) => cmd_degrade(merge(f, file, name)?.resolve(), &mut sink),
        Command::Lowerbound(f) => cmd_lower(merge(f, file, name)?.resolve(), &mut sink),
        Command::Certify(f) => cmd_certify(merge(f, file, name)?.resolve(), &mut sink),
        Command::Sweep(f) => cmd_sweep(merge(f, file, name)?.resolve(), &mut sink),
    }?;
    sink.finish()?;
    Ok(status)
}

fn load_config_file(path: &PathBuf) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Top-level keys of the file, then its `[command]` table, then flags.
fn merge<F: Serialize + DeserializeOwned>(flags: F, file: Option<&toml::Table>, section: &str) -> Result<F> {
    let mut merged = Map::new();
    if let Some(table) = file {
        for (k, v) in table {
            if !v.is_table() {
                merged.insert(k.clone(), serde_json::to_value(v)?);
            }
        }
        if let Some(toml::Value::Table(sec)) = table.get(section) {
            for (k, v) in sec {
                merged.insert(k.clone(), serde_json::to_value(v)?);
            }
        }
    }
    if let Value::Object(given) = serde_json::to_value(&flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Parse(format!("config: {e}")))
}

enum Sink {
    Stdout(io::Stdout),
    File(BufWriter<File>),
}

impl Sink {
    fn new(path: Option<&PathBuf>) -> Result<Self> {
        Ok(match path {
            Some(p) => Sink::File(BufWriter::new(File::create(p)?)),
            None => Sink::Stdout(io::stdout()),
        })
    }

    fn writer(&mut self) -> &mut dyn Write {
        match self {
            Sink::Stdout(s) => s,
            Sink::File(f) => f,
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.writer().flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Artifact<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    precision: &'a str,
    config: &'a C,
    result: R,
}

fn write_json<C: Serialize, R: Serialize>(sink: &mut Sink, command: &str, precision: &str, config: &C, result: R) -> Result<()> {
    let art = Artifact {
        tool: "sqtrace",
        version: env!("CARGO_PKG_VERSION"),
        command,
        precision,
        config,
        result,
    };
    let w = sink.writer();
    serde_json::to_writer_pretty(&mut *w, &art)?;
    writeln!(w)?;
    Ok(())
}

/// CSV preceded by one comment line carrying the same metadata as JSON artifacts.
fn write_csv_header<C: Serialize>(sink: &mut Sink, command: &str, precision: &str, config: &C) -> Result<()> {
    writeln!(
        sink.writer(),
        "# sqtrace {} {command} precision={precision} config={}",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(config)?
    )?;
    Ok(())
}

fn parse_enum<T: DeserializeOwned>(field: &'static str, s: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| invalid(field, format!("unknown value '{s}'")))
}

fn check_format(format: &str) -> Result<()> {
    if format == "json" || format == "csv" {
        Ok(())
    } else {
        Err(invalid("format", format!("'{format}' is neither json nor csv")))
    }
}

fn input_string(x: &Option<String>, n: usize, seed: u64) -> Result<BitString> {
    match x {
        Some(s) => s.parse(),
        None => {
            if n == 0 {
                return Err(invalid("n", "must be positive"));
            }
            Ok(BitString::random(n, &mut stream_rng(seed, 0)))
        }
    }
}

/// The strings a reconstruction run covers: one given x, all 2^n, or seeded random draws.
fn instances(x: &Option<String>, n: usize, exhaustive: bool, trials: usize, seed: u64, max_exhaustive: usize) -> Result<Vec<BitString>> {
    if let Some(s) = x {
        return Ok(vec![s.parse()?]);
    }
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if exhaustive {
        if n > max_exhaustive {
            return Err(Error::Budget {
                what: "n for an exhaustive run",
                got: n,
                max: max_exhaustive,
            });
        }
        return Ok((0..1u64 << n).map(|i| BitString::from_index(i, n)).collect());
    }
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let mut rng = stream_rng(seed, 1);
    Ok((0..trials).map(|_| BitString::random(n, &mut rng)).collect())
}

fn oracle_for(x: &BitString, ch: &ChannelParams, noise: &str, backend: &str, samples: u64, seed: u64) -> Result<Oracle> {
    let cfg = OracleConfig {
        backend: parse_enum::<Backend>("backend", backend)?,
        noise: parse_enum::<NoiseMode>("noise", noise)?,
        seed,
        samples,
        ..Default::default()
    };
    Oracle::new(x.clone(), ch, cfg)
}

#[derive(Serialize)]
struct RecoveryReport {
    total: usize,
    recovered: usize,
    flagged: usize,
    wrong: usize,
    queries: u64,
    /// Up to 20 strings that were not recovered.
    failures: Vec<BitString>,
}

impl RecoveryReport {
    fn from_outcomes(outcomes: &[(BitString, Option<BitString>, u64)]) -> Self {
        let mut r = RecoveryReport {
            total: outcomes.len(),
            recovered: 0,
            flagged: 0,
            wrong: 0,
            queries: 0,
            failures: Vec::new(),
        };
        for (x, got, q) in outcomes {
            r.queries += q;
            match got {
                Some(y) if y == x => r.recovered += 1,
                Some(_) => r.wrong += 1,
                None => r.flagged += 1,
            }
            if got.as_ref() != Some(x) && r.failures.len() < 20 {
                r.failures.push(x.clone());
            }
        }
        r
    }

    fn status(&self) -> Status {
        if self.recovered == self.total {
            Status::Ok
        } else {
            Status::Flagged
        }
    }
}

#[derive(Serialize)]
struct StatsResult {
    x: BitString,
    max_row_sum_error: f64,
    signature: crate::signature::SignatureDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_std_error: Option<f64>,
}

fn cmd_stats(c: StatsConfig, sink: &mut Sink) -> Result<Status> {
    check_format(&c.format)?;
    let x = input_string(&c.x, c.n, c.seed)?;
    let ch = ChannelParams::new(c.delta)?;
    let mut precision = "f64";
    let mut max_std_error = None;
    let sig = match c.method.as_str() {
        "exact" => exact_subword_signature(&x, &ch, c.ell)?,
        "exact-rational" => {
            precision = "exact-rational";
            let table = exact_subword_table::<BigRational>(&x, &ch, c.ell)?;
            let rows = table.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect();
            SubwordSignature::from_rows(x.len(), c.ell, c.delta, rows)?
        }
        "brute-force" => brute_force_signature(&x, &ch, c.ell)?,
        "monte-carlo" => {
            let mc = monte_carlo_signature(&x, &ch, c.ell, c.samples, c.seed)?;
            max_std_error = Some(mc.std_error.iter().copied().fold(0.0, f64::max));
            mc.signature
        }
        other => return Err(invalid("method", format!("unknown method '{other}'"))),
    };
    if c.format == "csv" {
        write_csv_header(sink, "stats", precision, &c)?;
        sig.write_csv(sink.writer())?;
        return Ok(Status::Ok);
    }
    let max_row_sum_error = (0..sig.n)
        .map(|i| (sig.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let result = StatsResult {
        x,
        max_row_sum_error,
        signature: sig.to_doc(),
        max_std_error,
    };
    write_json(sink, "stats", precision, &c, result)?;
    Ok(Status::Ok)
}

fn cmd_mean(c: MeanConfig, sink: &mut Sink) -> Result<Status> {
    let ch = ChannelParams::new(c.delta)?;
    let xs = instances(&c.x, c.n, c.exhaustive, c.trials, c.seed, 16)?;
    let n = xs[0].len();
    let floor = mean_based_noise_floor(n, &ch);
    let tau = c.tau.unwrap_or(0.5 * floor);
    let (precision, outcomes) = match c.precision.as_str() {
        "f64" => {
            let out = xs
                .par_iter()
                .map(|x| {
                    let o = oracle_for(x, &ch, &c.noise, &c.backend, c.samples, c.seed)?;
                    let got = match mean_based_reconstruct(&o, n, &ch, tau) {
                        Ok(y) => Some(y),
                        Err(Error::Failed(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok((x.clone(), got, o.ledger().queries))
                })
                .collect::<Result<Vec<_>>>()?;
            ("f64", out)
        }
        "exact-rational" => {
            let tab = ChannelTables::<BigRational>::new(n, &ch)?;
            let out = xs
                .par_iter()
                .map(|x| {
                    let p = tab.one_bit_stats(x)?;
                    let got = match back_substitute(&p, &ch) {
                        Ok(y) => Some(y),
                        Err(Error::Failed(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok((x.clone(), got, n as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            ("exact-rational", out)
        }
        other => return Err(invalid("precision", format!("unknown precision '{other}'"))),
    };
    #[derive(Serialize)]
    struct MeanResult {
        n: usize,
        tau: f64,
        certified_floor: f64,
        #[serde(flatten)]
        report: RecoveryReport,
    }
    let report = RecoveryReport::from_outcomes(&outcomes);
    let status = report.status();
    write_json(
        sink,
        "reconstruct-mean",
        precision,
        &c,
        MeanResult {
            n,
            tau,
            certified_floor: floor,
            report,
        },
    )?;
    Ok(status)
}

fn cmd_worst(c: WorstConfig, sink: &mut Sink) -> Result<Status> {
    let ch = ChannelParams::new(c.delta)?;
    let xs = instances(&c.x, c.n, c.exhaustive, c.trials, c.seed, 10)?;
    let n = xs[0].len();
    let mut params = WorstCaseParams::for_n(n, &ch);
    params.ell = c.ell.unwrap_or_else(|| default_ell(n));
    params.grid = GridSpec::uniform(c.grid);
    params.validate(n)?;
    if !(c.noise_fraction > 0.0) {
        return Err(invalid("noise-fraction", "must be positive"));
    }
    let cal = PairwiseCalibration::new(n, &ch, &params)?;
    let tau = cal.tolerance_for(c.noise_fraction);
    let outcomes = xs
        .par_iter()
        .map(|x| {
            let o = oracle_for(x, &ch, &c.noise, "exact", 1, c.seed)?;
            let out = pairwise_decide(&o, &ch, &cal, tau)?;
            let got = if out.ambiguous { None } else { out.recovered };
            Ok((x.clone(), got, o.ledger().queries))
        })
        .collect::<Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct WorstResult<'a> {
        n: usize,
        params: &'a WorstCaseParams,
        grid_points: usize,
        min_gap: f64,
        min_gap_pair: (BitString, BitString),
        min_gap_certificate: &'a crate::worst_case::DistinguisherCertificate,
        max_amplification: f64,
        tau: f64,
        #[serde(flatten)]
        report: RecoveryReport,
    }
    let report = RecoveryReport::from_outcomes(&outcomes);
    let status = report.status();
    let result = WorstResult {
        n,
        params: &params,
        grid_points: cal.num_points(),
        min_gap: cal.min_gap,
        min_gap_pair: cal.min_gap_pair.clone(),
        min_gap_certificate: &cal.min_gap_certificate,
        max_amplification: cal.max_amplification,
        tau,
        report,
    };
    write_json(sink, "reconstruct-worst", "f64", &c, result)?;
    Ok(status)
}

fn multipliers(c_k: f64, c_kappa: f64, c_big: f64, c_ell: f64) -> AvgMultipliers {
    AvgMultipliers {
        c_k,
        c_kappa,
        c_big,
        c_ell,
    }
}

fn cmd_avg(c: AvgConfig, sink: &mut Sink) -> Result<Status> {
    let ch = ChannelParams::new(c.delta)?;
    let backend: AvgBackend = parse_enum("avg-backend", &c.avg_backend)?;
    let xs = instances(&c.x, c.n, c.exhaustive, c.trials, c.seed, 12)?;
    let n = xs[0].len();
    let params = avg_params(n, c.eta, &ch, multipliers(c.c_k, c.c_kappa, c.c_big, c.c_ell))?;
    let tau = c.tau.unwrap_or(match backend {
        AvgBackend::ExactMeanBased => params.query_tolerance.min(0.5 * mean_based_noise_floor(n, &ch)),
        AvgBackend::SwConsistencyGreedy => params.query_tolerance,
    });
    let outcomes = xs
        .iter()
        .map(|x| {
            let o = oracle_for(x, &ch, &c.noise, "exact", 1, c.seed)?;
            let r = avg_reconstruct(&o, n, &ch, &params, backend, tau, c.grid_points)?;
            Ok((x.clone(), r.x, r.queries))
        })
        .collect::<Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct AvgResult<'a> {
        params: &'a AvgParams,
        backend: AvgBackend,
        certified: bool,
        tau: f64,
        #[serde(flatten)]
        report: RecoveryReport,
    }
    let report = RecoveryReport::from_outcomes(&outcomes);
    let status = report.status();
    let result = AvgResult {
        params: &params,
        backend,
        certified: backend == AvgBackend::ExactMeanBased,
        tau,
        report,
    };
    write_json(sink, "reconstruct-avg", "f64", &c, result)?;
    Ok(status)
}

fn cmd_sw(c: SwConfig, sink: &mut Sink) -> Result<Status> {
    check_format(&c.format)?;
    let ch = ChannelParams::new(c.delta)?;
    let x = input_string(&c.x, c.n, c.seed)?;
    let n = x.len();
    let params = avg_params(n, c.eta, &ch, multipliers(c.c_k, c.c_kappa, c.c_big, c.c_ell))?;
    let deltas = params.grid_sample(c.grid_points)?;
    let est = match c.source.as_str() {
        "oracle" => {
            let o = oracle_for(&x, &ch, &c.noise, "exact", 1, c.seed)?;
            let src = OracleSource {
                oracle: &o,
                delta: c.delta,
                tau: params.query_tolerance,
                max_window: params.ell,
            };
            estimate_sw_table(&src, &params, &deltas)?
        }
        "exact" => {
            let ev = ExactEvaluator::new(x.clone(), &ch)?;
            estimate_sw_table(&ExactSource { eval: &ev, delta: c.delta }, &params, &deltas)?
        }
        other => return Err(invalid("source", format!("unknown source '{other}'"))),
    };
    let mut max_error = 0.0f64;
    for (di, &d2) in est.deltas.iter().enumerate() {
        let direct = exact_sw(&x, d2, est.k)?;
        for (code, v) in direct.iter().enumerate() {
            let cell = &est.cells[di * direct.len() + code];
            max_error = max_error.max((cell.estimate - v).abs());
        }
    }
    let flagged = est.cells.iter().any(|c| c.flagged);
    let status = if flagged { Status::Flagged } else { Status::Ok };
    if c.format == "csv" {
        write_csv_header(sink, "sw-table", "f64", &c)?;
        est.write_csv(sink.writer())?;
        return Ok(status);
    }
    #[derive(Serialize)]
    struct SwResult<'a> {
        x: &'a BitString,
        params: &'a AvgParams,
        max_error_vs_direct: f64,
        max_budget: f64,
        estimates: &'a crate::avg_case::SWEstimates,
    }
    let result = SwResult {
        x: &x,
        params: &params,
        max_error_vs_direct: max_error,
        max_budget: est.max_budget(),
        estimates: &est,
    };
    write_json(sink, "sw-table", "f64", &c, result)?;
    Ok(status)
}

fn cmd_degrade(c: DegradeConfig, sink: &mut Sink) -> Result<Status> {
    let x = input_string(&c.x, c.n, c.seed)?;
    let ch = ChannelParams::new(c.delta)?;
    let spec = DegradeSpec {
        delta: c.delta,
        delta2: c.delta2,
        ell_out: c.ell_out,
        tau2: c.tau2,
        xi: c.xi,
        span: c.span,
    };
    let window = spec.required_window()?;
    if window > 20 {
        return Err(Error::Budget {
            what: "input window",
            got: window,
            max: 20,
        });
    }
    let sig = exact_subword_signature(&x, &ch, window)?;
    let src: &dyn WindowSource = &TableSource { sig: &sig, entry_error: 0.0 };
    let d = degrade_signature(src, &spec)?;
    let direct = exact_subword_signature(&x, &ChannelParams::new(c.delta2)?, c.ell_out)?;
    let max_error = d.signature.max_abs_diff(&direct);
    let compose_tv = if c.compose && x.len() <= 12 {
        Some(compose_channels_check(&x, c.delta, c.delta2, c.ell_out.min(12))?)
    } else {
        None
    };
    #[derive(Serialize)]
    struct DegradeResult {
        x: BitString,
        budget: crate::degrade::DegradeBudget,
        max_error_vs_direct: f64,
        compose_tv: Option<f64>,
        signature: crate::signature::SignatureDoc,
    }
    let status = if max_error <= d.budget.per_entry + 1e-12 && d.budget.within_tau2 {
        Status::Ok
    } else {
        Status::Flagged
    };
    let result = DegradeResult {
        x,
        budget: d.budget,
        max_error_vs_direct: max_error,
        compose_tv,
        signature: d.signature.to_doc(),
    };
    write_json(sink, "degrade", "f64", &c, result)?;
    Ok(status)
}

#[derive(Serialize)]
struct MiddleBitSummary {
    n: usize,
    ell: usize,
    queries: usize,
    max_gap: f64,
    max_bound: f64,
    violations: usize,
    peak: f64,
    ell_over_sqrt_n: f64,
}

fn middle_bit_summary(n: usize, ch: &ChannelParams, ell: usize, queries: usize, seed: u64) -> Result<MiddleBitSummary> {
    if ell == 0 || ell > n {
        return Err(invalid("ell", format!("{ell} is outside 1..={n}")));
    }
    let gaps = (0..queries as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let x = BitString::random(n, &mut rng);
            let q = JuntaQuery::random(n, ell, &mut rng);
            middle_bit_gap(&x, ch, &q)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MiddleBitSummary {
        n,
        ell,
        queries,
        max_gap: gaps.iter().map(|g| g.gap).fold(0.0, f64::max),
        max_bound: gaps.iter().map(|g| g.bound).fold(0.0, f64::max),
        violations: gaps.iter().filter(|g| g.gap > g.bound + 1e-12).count(),
        peak: middle_hit_peak(n, ch),
        ell_over_sqrt_n: ell as f64 / (n as f64).sqrt(),
    })
}

fn cmd_lower(c: LowerConfig, sink: &mut Sink) -> Result<Status> {
    let ch = ChannelParams::new(c.delta)?;
    match c.mode.as_str() {
        "hard-pair" => {
            let sched = HardPairSchedule {
                c_ell: c.c_ell,
                c_t: c.c_t,
                c_r: c.c_r,
                kmax: c.kmax,
                budget: BeBudget {
                    seed: c.seed,
                    ..Default::default()
                },
                t: c.t,
                u: None,
            };
            let pair = construct_hard_pair(c.n, &ch, &sched)?;
            let gap = one_bit_gap::<f64>(&pair.a, &pair.a2, &ch)?;
            let baseline = random_pair_baseline(c.n, &ch, c.baseline_pairs, c.seed)?;
            let cert = if c.certify {
                Some(certify_pair(&pair.a, &pair.a2, &ch, pair.ell, pair.t)?)
            } else {
                None
            };
            let ok = cert
                .as_ref()
                .map_or(true, |k| k.weight_one_holds && k.last_string_holds && k.signature_bound_holds);
            #[derive(Serialize)]
            struct HardPairResult {
                pair: crate::lower_bounds::HardPair,
                one_bit_gap: f64,
                baseline: crate::lower_bounds::Baseline,
                baseline_ratio: f64,
                certificate: Option<crate::lower_bounds::PairCertificate>,
            }
            let precision = if c.certify { "exact-rational" } else { "f64" };
            let result = HardPairResult {
                baseline_ratio: baseline.min_one_bit_gap / gap,
                pair,
                one_bit_gap: gap,
                baseline,
                certificate: cert,
            };
            write_json(sink, "lowerbound", precision, &c, result)?;
            Ok(if ok { Status::Ok } else { Status::Flagged })
        }
        "middle-bit" => {
            let s = middle_bit_summary(c.n, &ch, c.ell, c.queries, c.seed)?;
            let status = if s.violations == 0 { Status::Ok } else { Status::Flagged };
            write_json(sink, "lowerbound", "f64", &c, s)?;
            Ok(status)
        }
        other => Err(invalid("mode", format!("unknown mode '{other}'"))),
    }
}

fn cmd_certify(c: CertifyConfig, sink: &mut Sink) -> Result<Status> {
    let a: BitString = c.a.as_deref().ok_or_else(|| invalid("a", "is required"))?.parse()?;
    let b: BitString = c.b.as_deref().ok_or_else(|| invalid("b", "is required"))?.parse()?;
    let t = c.t.ok_or_else(|| invalid("t", "is required"))?;
    let ch = ChannelParams::new(c.delta)?;
    let cert = certify_pair(&a, &b, &ch, c.ell, t)?;
    let ok = cert.weight_one_holds && cert.last_string_holds && cert.signature_bound_holds;
    write_json(sink, "certify", "exact-rational", &c, &cert)?;
    Ok(if ok { Status::Ok } else { Status::Flagged })
}

fn parse_list<T: std::str::FromStr>(field: &'static str, s: &str) -> Result<Vec<T>> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| invalid(field, format!("'{p}' does not parse"))))
        .collect::<Result<Vec<T>>>()?;
    if v.is_empty() {
        return Err(invalid(field, "is empty"));
    }
    Ok(v)
}

fn cmd_sweep(c: SweepConfig, sink: &mut Sink) -> Result<Status> {
    check_format(&c.format)?;
    let ns: Vec<usize> = parse_list("ns", &c.ns)?;
    let deltas: Vec<f64> = parse_list("deltas", &c.deltas)?;
    let mut header: Vec<&str> = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut status = Status::Ok;
    match c.what.as_str() {
        "mean" => {
            header.extend(["n", "delta", "trials", "recovered", "flagged", "wrong"]);
            for &n in &ns {
                for &d in &deltas {
                    let ch = ChannelParams::new(d)?;
                    let xs = instances(&None, n, false, c.trials, c.seed, 0)?;
                    let tau = 0.5 * mean_based_noise_floor(n, &ch);
                    let outs = xs
                        .par_iter()
                        .map(|x| {
                            let o = oracle_for(x, &ch, "uniform-random", "exact", 1, c.seed)?;
                            let got = match mean_based_reconstruct(&o, n, &ch, tau) {
                                Ok(y) => Some(y),
                                Err(Error::Failed(_)) => None,
                                Err(e) => return Err(e),
                            };
                            Ok((x.clone(), got, o.ledger().queries))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let r = RecoveryReport::from_outcomes(&outs);
                    if r.status() == Status::Flagged {
                        status = Status::Flagged;
                    }
                    rows.push(vec![
                        n.to_string(),
                        d.to_string(),
                        r.total.to_string(),
                        r.recovered.to_string(),
                        r.flagged.to_string(),
                        r.wrong.to_string(),
                    ]);
                }
            }
        }
        "hard-pair" => {
            header.extend(["n", "delta", "t", "ell", "k", "one_bit_gap", "baseline_min", "baseline_median"]);
            for &n in &ns {
                for &d in &deltas {
                    let ch = ChannelParams::new(d)?;
                    let sched = HardPairSchedule {
                        budget: BeBudget {
                            seed: c.seed,
                            ..Default::default()
                        },
                        ..Default::default()
                    };
                    let p = construct_hard_pair(n, &ch, &sched)?;
                    let gap = one_bit_gap::<f64>(&p.a, &p.a2, &ch)?;
                    let b = random_pair_baseline(n, &ch, c.trials, c.seed)?;
                    rows.push(vec![
                        n.to_string(),
                        d.to_string(),
                        p.t.to_string(),
                        p.ell.to_string(),
                        p.u.k().to_string(),
                        gap.to_string(),
                        b.min_one_bit_gap.to_string(),
                        b.median_one_bit_gap.to_string(),
                    ]);
                }
            }
        }
        "middle-bit" => {
            header.extend(["n", "delta", "ell", "queries", "max_gap", "max_bound", "violations", "ell_over_sqrt_n"]);
            for &n in &ns {
                for &d in &deltas {
                    let s = middle_bit_summary(n, &ChannelParams::new(d)?, c.ell, c.queries, c.seed)?;
                    if s.violations > 0 {
                        status = Status::Flagged;
                    }
                    rows.push(vec![
                        n.to_string(),
                        d.to_string(),
                        s.ell.to_string(),
                        s.queries.to_string(),
                        s.max_gap.to_string(),
                        s.max_bound.to_string(),
                        s.violations.to_string(),
                        s.ell_over_sqrt_n.to_string(),
                    ]);
                }
            }
        }
        other => return Err(invalid("what", format!("unknown sweep '{other}'"))),
    }
    if c.format == "csv" {
        write_csv_header(sink, "sweep", "f64", &c)?;
        let mut w = csv::Writer::from_writer(sink.writer());
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    } else {
        let table: Vec<Map<String, Value>> = rows
            .iter()
            .map(|r| header.iter().zip(r).map(|(h, v)| (h.to_string(), Value::String(v.clone()))).collect())
            .collect();
        write_json(sink, "sweep", "f64", &c, table)?;
    }
    Ok(status)
}
