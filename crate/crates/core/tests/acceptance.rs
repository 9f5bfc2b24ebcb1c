//! Acceptance criteria. Each prints one `[PASS]` or `[FAIL]` line; the process
//! exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use sqtrace::avg_case::{avg_params, estimate_sw_row, exact_sw, AvgMultipliers};
use sqtrace::bits::{BitString, Pattern};
use sqtrace::channel::{ChannelParams, ChannelTables, Padding};
use sqtrace::degrade::{
    compose_channels_check, degrade_signature, negbin_exact_tail, negbin_tail_bound, DegradeSpec, ExactSource,
    OracleSource, TableSource,
};
use sqtrace::lower_bounds::{
    certify_pair, construct_hard_pair, middle_bit_gap, one_bit_gap, random_pair_baseline, HardPairSchedule, JuntaQuery,
};
use sqtrace::oracle::{reduce_to_subwords, ExactEvaluator, LocalQuery, NoiseMode, Oracle, OracleConfig};
use sqtrace::poly::{
    check_mobius, deletion_channel_closed_form, deletion_channel_poly, source_poly_p, trace_coeffs_all, trace_side_q,
    EvalDomain,
};
use sqtrace::rng::stream_rng;
use sqtrace::signature::{brute_force_signatures, exact_subword_table};
use sqtrace::worst_case::{
    back_substitute, mean_based_noise_floor, mean_based_reconstruct, pairwise_decide, GridSpec, PairwiseCalibration,
    WorstCaseParams,
};

type Outcome = std::result::Result<String, String>;

fn ch(d: f64) -> ChannelParams {
    ChannelParams::new(d).unwrap()
}

fn rng(stream: u64) -> ChaCha20Rng {
    stream_rng(0xACCE, stream)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_disk<R: Rng>(r: &mut R) -> Complex64 {
    Complex64::from_polar(r.gen::<f64>().sqrt(), r.gen_range(0.0..std::f64::consts::TAU))
}

/// C1: exact subword statistics equal full enumeration of retention sets.
fn c1() -> Outcome {
    let mut worst = 0.0f64;
    let mut strings = 0usize;
    for &d in &[0.2, 0.5, 0.8] {
        let c = ch(d);
        for n in 1..=12usize {
            for idx in 0..1u64 << n {
                let x = BitString::from_index(idx, n);
                let ells: Vec<usize> = (1..=3).filter(|&e| e <= n).collect();
                let brute = brute_force_signatures(&x, &c, &ells).unwrap();
                for (sig, &ell) in brute.iter().zip(&ells) {
                    let exact = exact_subword_table::<f64>(&x, &c, ell).unwrap();
                    for (i, row) in exact.iter().enumerate() {
                        for (v, b) in row.iter().zip(sig.row(i)) {
                            worst = worst.max((v - b).abs());
                        }
                    }
                }
                strings += 1;
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e} > 1e-12"))?;
    Ok(format!("{strings} (x, delta) cases, max deviation {worst:.2e} (tol 1e-12)"))
}

/// C2: rows sum to one and single-position marginals match one-bit statistics.
fn c2() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.gen_range(4..=40);
        let ell = r.gen_range(1..=4usize);
        let d = r.gen_range(0.05..0.95);
        let c = ch(d);
        let x = BitString::random(n, &mut r);
        let tab = exact_subword_table::<f64>(&x, &c, ell).unwrap();
        let one = ChannelTables::<f64>::new(n, &c).unwrap().one_bit_stats(&x).unwrap();
        for (i, row) in tab.iter().enumerate() {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            for alpha in 0..ell {
                let marg: f64 = Pattern::all(ell)
                    .filter(|w| w.bit(alpha) == 1)
                    .map(|w| row[w.code() as usize])
                    .sum();
                let target = one.get(i + alpha).copied().unwrap_or(0.0);
                worst = worst.max((marg - target).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e} > 1e-12"))?;
    Ok(format!("200 instances, max deviation {worst:.2e} (tol 1e-12)"))
}

/// C3: local queries recombined from subword answers, exact and under worst-case sub-answer noise.
fn c3() -> Outcome {
    let mut r = rng(3);
    let tau0 = 1e-3;
    let (mut exact_err, mut noisy_ratio) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let n = r.gen_range(4..=16);
        let ell = r.gen_range(1..=4usize);
        let c = ch(r.gen_range(0.1..0.9));
        let x = BitString::random(n, &mut r);
        let ev = ExactEvaluator::new(x, &c).unwrap();
        let start = r.gen_range(0..n);
        let table: Vec<f64> = (0..1 << ell).map(|_| r.gen_range(-1.0..=1.0)).collect();
        let q = LocalQuery::table(start, ell, table).unwrap();
        let truth = ev.value(&q).unwrap();
        let dec = reduce_to_subwords(&q, tau0).unwrap();
        let answers: Vec<f64> = dec.queries().map(|(s, _)| ev.value(&s).unwrap()).collect();
        exact_err = exact_err.max((dec.recombine(&answers) - truth).abs());
        let pushed: Vec<f64> = answers
            .iter()
            .zip(&dec.weights)
            .map(|(a, w)| a + w.signum() * dec.sub_tolerance)
            .collect();
        noisy_ratio = noisy_ratio.max((dec.recombine(&pushed) - truth).abs() / tau0);
    }
    ensure(exact_err <= 1e-12, || format!("exact recombination error {exact_err:.3e}"))?;
    ensure(noisy_ratio <= 1.0 + 1e-9, || format!("noisy error {noisy_ratio:.4} x tau0"))?;
    Ok(format!(
        "500 queries, exact error {exact_err:.2e} (tol 1e-12), worst noisy error {noisy_ratio:.3} tau0 (tol 1 tau0)"
    ))
}

/// C4: channel polynomial closed form, the generating-function identity and source = trace side.
fn c4() -> Outcome {
    let mut r = rng(4);
    let (mut a_res, mut b_res, mut c_res) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.gen_range(3..=10);
        let ell = r.gen_range(1..=3usize);
        let d = r.gen_range(0.1..0.9);
        let c = ch(d);
        let x = BitString::random(n, &mut r);
        let x2 = BitString::random(n, &mut r);
        let z = unit_disk(&mut r);
        let p = deletion_channel_poly(&x, &x2, &c).unwrap();
        a_res = a_res.max((p.eval(z) - deletion_channel_closed_form(&x, &x2, &c, z)).norm());

        let f: Vec<Complex64> = (0..1 << ell).map(|_| unit_disk(&mut r)).collect();
        let zs: Vec<Complex64> = (0..ell).map(|_| unit_disk(&mut r)).collect();
        b_res = b_res.max(check_mobius(&x, &c, &f, &zs).unwrap());

        let dom = EvalDomain::new(n, &c);
        let z1 = dom.arc_points(9)[r.gen_range(0..9)];
        let t = dom.segment_points(9)[r.gen_range(0..9)];
        let w = Pattern::new(ell, r.gen_range(0..1u64 << ell));
        let tc = Complex64::new(t, 0.0);
        let lhs = source_poly_p(&x, &w, z1, tc).unwrap();
        let rhs = trace_side_q(&x, &c, &w, z1, tc, n, Padding::InTrace).unwrap();
        c_res = c_res.max((lhs - rhs).norm());
    }
    let worst = a_res.max(b_res).max(c_res);
    ensure(worst <= 1e-9, || format!("residuals {a_res:.2e} / {b_res:.2e} / {c_res:.2e}"))?;
    Ok(format!(
        "100 instances, residuals closed form {a_res:.1e}, generating function {b_res:.1e}, source vs trace {c_res:.1e} (tol 1e-9)"
    ))
}

/// C5: back-substitution recovers every string at n = 10 and rational arithmetic at n = 24.
fn c5() -> Outcome {
    let mut detail = Vec::new();
    for &d in &[0.2, 0.5, 0.8] {
        let c = ch(d);
        let tau = 0.5 * mean_based_noise_floor(10, &c);
        let mut ok = 0;
        for idx in 0..1u64 << 10 {
            let x = BitString::from_index(idx, 10);
            let o = Oracle::new(x.clone(), &c, OracleConfig::default()).unwrap();
            if mean_based_reconstruct(&o, 10, &c, tau).ok() == Some(x) {
                ok += 1;
            }
        }
        ensure(ok == 1024, || format!("delta {d}: {ok}/1024"))?;
        detail.push(format!("delta {d}: 1024/1024"));
    }
    let mut r = rng(5);
    let c = ch(0.5);
    let tab = ChannelTables::<BigRational>::new(24, &c).unwrap();
    for _ in 0..3 {
        let x = BitString::random(24, &mut r);
        let p = tab.one_bit_stats(&x).unwrap();
        let got = back_substitute(&p, &c).map_err(|e| e.to_string())?;
        ensure(got == x, || format!("rational n=24 returned {got} for {x}"))?;
    }
    detail.push("n=24 rational 3/3".into());
    Ok(format!("{} (noise at half the certified floor)", detail.join(", ")))
}

/// C6: pairwise elimination with noise at a tenth of the minimum certificate gap.
fn c6() -> Outcome {
    let c = ch(0.5);
    let mut detail = Vec::new();
    for &(n, count) in &[(6usize, 64usize), (10, 50)] {
        let mut params = WorstCaseParams::for_n(n, &c);
        params.grid = GridSpec::uniform(5);
        let cal = PairwiseCalibration::new(n, &c, &params).map_err(|e| e.to_string())?;
        let tau = cal.tolerance_for(0.1);
        let xs: Vec<BitString> = if count == 1 << n {
            (0..1u64 << n).map(|i| BitString::from_index(i, n)).collect()
        } else {
            let mut r = rng(6);
            (0..count).map(|_| BitString::random(n, &mut r)).collect()
        };
        let (mut ok, mut ambiguous) = (0, 0);
        for (k, x) in xs.iter().enumerate() {
            let cfg = OracleConfig {
                seed: k as u64,
                ..Default::default()
            };
            let o = Oracle::new(x.clone(), &c, cfg).unwrap();
            let out = pairwise_decide(&o, &c, &cal, tau).map_err(|e| e.to_string())?;
            if out.ambiguous {
                ambiguous += 1;
            } else if out.recovered.as_ref() == Some(x) {
                ok += 1;
            }
        }
        ensure(ok == count && ambiguous == 0, || {
            format!("n={n}: {ok}/{count} recovered, {ambiguous} ambiguous")
        })?;
        detail.push(format!("n={n}: {ok}/{count}, min gap {:.3e}, tau {:.2e}", cal.min_gap, tau));
    }
    Ok(format!("{}, 0 ambiguous", detail.join("; ")))
}

/// Smallest d with (1/4)(d + ell - 1)/(d + 1) <= 0.75, the coefficient-growth threshold for |zeta_2| <= 1/4.
fn envelope_threshold(ell: usize) -> usize {
    (0..).find(|&d| 0.25 * (d + ell) as f64 / (d + 1) as f64 <= 0.75 + 1e-15).unwrap()
}

/// C7: tails of the trace-side polynomial shrink geometrically on the evaluation domain.
fn c7() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..50 {
        let n = r.gen_range(6..=12);
        let ell = r.gen_range(1..=3usize);
        let c = ch([0.2, 0.5, 0.8][r.gen_range(0..3)]);
        let x = BitString::random(n, &mut r);
        let coeffs = trace_coeffs_all(&x, &c, ell, n, Padding::Padded).unwrap();
        let dom = EvalDomain::new(n, &c);
        let ts = dom.segment_points(7);
        let from = envelope_threshold(ell);
        for tc in &coeffs {
            for z in dom.arc_points(5) {
                for &t in &ts[1..6] {
                    let z2 = Complex64::new(t, 0.0);
                    for d in from..tc.max_degree() {
                        let (a, b) = (tc.tail_beyond(z, z2, d), tc.tail_beyond(z, z2, d + 1));
                        if a > 1e-13 {
                            worst = worst.max(b / a);
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    ensure(worst <= 0.75, || format!("worst tail ratio {worst:.4} > 0.75"))?;
    Ok(format!("50 instances, {checked} consecutive tail pairs, worst ratio {worst:.3} (tol 0.75)"))
}

/// C8: hard pairs shrink the one-bit gap and their exact certificates hold.
fn c8() -> Outcome {
    let c = ch(0.5);
    let mut gaps = Vec::new();
    for &n in &[32usize, 64, 128, 256] {
        let pair = construct_hard_pair(n, &c, &HardPairSchedule::default()).map_err(|e| e.to_string())?;
        let gap = one_bit_gap::<f64>(&pair.a, &pair.a2, &c).unwrap();
        let cert = certify_pair(&pair.a, &pair.a2, &c, pair.ell, pair.t).map_err(|e| e.to_string())?;
        ensure(cert.weight_one_holds && cert.last_string_holds, || {
            format!("n={n}: weight-one {} last-string {}", cert.weight_one_holds, cert.last_string_holds)
        })?;
        gaps.push((n, gap));
    }
    ensure(gaps.windows(2).all(|w| w[1].1 < w[0].1), || format!("gaps not decreasing: {gaps:?}"))?;
    let base = random_pair_baseline(256, &c, 100, 8).unwrap();
    let last = gaps[3].1;
    let ratio = base.min_one_bit_gap / last;
    ensure(ratio >= 10.0, || format!("baseline ratio {ratio:.2} < 10"))?;
    let listed: Vec<String> = gaps.iter().map(|(n, g)| format!("{n}:{g:.3e}")).collect();
    Ok(format!(
        "gaps {}, baseline min / gap at 256 = {ratio:.1} (need >= 10), certificate chains hold",
        listed.join(" ")
    ))
}

/// C9: middle-bit gaps obey their exact bound and the l/sqrt(n) envelope; the midpoint adversary hides the flip.
fn c9() -> Outcome {
    let mut r = rng(9);
    let c = ch(0.5);
    let ns = [16usize, 32, 64, 128, 256];
    let mut ratios = Vec::new();
    let mut violations = 0;
    for &n in &ns {
        let mut worst = 0.0f64;
        for ell in 1..=3usize {
            for k in 0..40 {
                let x = BitString::random(n, &mut r);
                let q = if k % 2 == 0 {
                    JuntaQuery::random(n, ell, &mut r)
                } else {
                    // positions where the middle bit most often lands
                    let centre = (c.rho() * n as f64 / 2.0).round() as usize;
                    let idx: Vec<usize> = (0..ell).map(|j| centre + j - ell / 2).collect();
                    let table = (0..1 << ell).map(|_| r.gen_range(-1.0..=1.0)).collect();
                    JuntaQuery::new(idx, table).unwrap()
                };
                let g = middle_bit_gap(&x, &c, &q).unwrap();
                if g.gap > g.bound + 1e-12 {
                    violations += 1;
                }
                worst = worst.max(g.gap / (ell as f64 / (n as f64).sqrt()));
            }
        }
        ratios.push(worst);
    }
    ensure(violations == 0, || format!("{violations} bound violations"))?;
    let fitted = ratios[..3].iter().copied().fold(0.0, f64::max);
    ensure(ratios[3..].iter().all(|&v| v <= fitted), || {
        format!("c fitted on n<=64 is {fitted:.3}; larger n reach {:?}", &ratios[3..])
    })?;

    let mut hidden = 0;
    let trials = 40;
    for k in 0..trials {
        let n = [16usize, 32][k % 2];
        let x = BitString::random(n, &mut r);
        let x2 = x.with_flipped(n / 2);
        let cfg = OracleConfig {
            noise: NoiseMode::AdversarialRounding,
            ..Default::default()
        };
        let set = vec![x.clone(), x2.clone()];
        let o1 = Oracle::new(x.clone(), &c, cfg.clone()).unwrap().with_confusion_set(set.clone(), &c).unwrap();
        let o2 = Oracle::new(x2.clone(), &c, cfg).unwrap().with_confusion_set(set, &c).unwrap();
        let ell = r.gen_range(1..=3usize);
        let start = r.gen_range(0..n);
        let table: Vec<f64> = (0..1 << ell).map(|_| r.gen_range(-1.0..=1.0)).collect();
        let q = LocalQuery::table(start, ell, table).unwrap();
        let (e1, e2) = (
            ExactEvaluator::new(x, &c).unwrap().value(&q).unwrap(),
            ExactEvaluator::new(x2, &c).unwrap().value(&q).unwrap(),
        );
        let tau = 1.5 * (e1 - e2).abs() + 1e-15;
        let (a1, a2) = (o1.answer(&q, tau).unwrap(), o2.answer(&q, tau).unwrap());
        if (a1 - a2).abs() <= 1e-12 && (a1 - e1).abs() <= tau && (a2 - e2).abs() <= tau {
            hidden += 1;
        }
    }
    ensure(hidden == trials, || format!("adversary hid the flip in {hidden}/{trials} queries"))?;
    let shown: Vec<String> = ns.iter().zip(&ratios).map(|(n, v)| format!("{n}:{v:.3}")).collect();
    Ok(format!(
        "120 (x, q) per n, 0 bound violations; gap / (l/sqrt n) by n {} with c = {fitted:.3} fitted on n <= 64; adversary hid the flip {hidden}/{trials}",
        shown.join(" ")
    ))
}

/// C10: channel composition, degraded statistics within budget, and the negative-binomial bound.
fn c10() -> Outcome {
    let mut r = rng(10);
    let x = BitString::random(10, &mut r);
    let mut tv = 0.0f64;
    for &d in &[0.1, 0.3, 0.5] {
        for &d2 in &[0.5, 0.7, 0.9] {
            tv = tv.max(compose_channels_check(&x, d, d2, 3).unwrap());
        }
    }
    ensure(tv <= 1e-10, || format!("composition TV {tv:.3e}"))?;

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_budget = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(6..=12);
        let d = r.gen_range(0.1..0.5);
        let d2 = r.gen_range(d..=(1.0 + d) / 2.0);
        let ell_out = r.gen_range(1..=3usize);
        let x = BitString::random(n, &mut r);
        let mut spec = DegradeSpec {
            delta: d,
            delta2: d2,
            ell_out,
            tau2: 1.0,
            xi: 10f64.powf(-r.gen_range(2.0..8.0)),
            span: None,
        };
        if spec.required_window().unwrap() > 14 {
            spec.span = Some(13);
        }
        let window = spec.required_window().unwrap();
        let sig = sqtrace::signature::exact_subword_signature(&x, &ch(d), window).unwrap();
        let out = degrade_signature(&TableSource { sig: &sig, entry_error: 0.0 }, &spec).unwrap();
        let direct = sqtrace::signature::exact_subword_signature(&x, &ch(d2), ell_out).unwrap();
        let err = out.signature.max_abs_diff(&direct);
        worst_excess = worst_excess.max(err - out.budget.per_entry);
        worst_budget = worst_budget.max(out.budget.per_entry);
    }
    ensure(worst_excess <= 1e-12, || format!("degraded error exceeds its budget by {worst_excess:.3e}"))?;

    let mut cells = 0;
    let mut slack = f64::INFINITY;
    for &m in &[1usize, 2, 4, 8, 16] {
        for &p in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &t in &[1.5, 2.0, 3.0, 5.0, 10.0] {
                let exact = negbin_exact_tail(m, p, t * m as f64 / p);
                let bound = negbin_tail_bound(m, p, t).unwrap();
                ensure(exact <= bound, || format!("m={m} p={p} t={t}: exact {exact:.3e} > bound {bound:.3e}"))?;
                slack = slack.min(bound - exact);
                cells += 1;
            }
        }
    }
    Ok(format!(
        "composition TV {tv:.1e} (tol 1e-10); 100 degradations within budget (largest budget {worst_budget:.1e}); negative-binomial bound holds on {cells} cells"
    ))
}

/// C11: SW values from degraded statistics match direct ones within kappa; noisy oracle runs stay within kappa.
fn c11() -> Outcome {
    let n = 64;
    let d = 0.3;
    let c = ch(d);
    let params = avg_params(n, 0.1, &c, AvgMultipliers::default()).unwrap();
    let mut r = rng(11);
    let grid = params.grid_sample(5).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = BitString::random(n, &mut r);
        let d2 = grid[r.gen_range(0..grid.len())];
        let ev = ExactEvaluator::new(x.clone(), &c).unwrap();
        let row = estimate_sw_row(&ExactSource { eval: &ev, delta: d }, params.k, d2, params.xi, params.kappa).unwrap();
        let direct = exact_sw(&x, d2, params.k).unwrap();
        for cell in &row {
            worst = worst.max((cell.estimate - direct[cell.w.code() as usize]).abs());
        }
    }
    ensure(worst <= params.kappa, || format!("two-path gap {worst:.3e} > kappa {:.3e}", params.kappa))?;

    let x = BitString::random(n, &mut r);
    let d2 = grid[2];
    let direct = exact_sw(&x, d2, params.k).unwrap();
    let mut within = 0;
    let mut worst_noisy = 0.0f64;
    for seed in 0..100 {
        let cfg = OracleConfig {
            seed,
            ..Default::default()
        };
        let o = Oracle::new(x.clone(), &c, cfg).unwrap();
        let src = OracleSource {
            oracle: &o,
            delta: d,
            tau: params.query_tolerance,
            max_window: params.ell,
        };
        let row = estimate_sw_row(&src, params.k, d2, params.xi, params.kappa).unwrap();
        let e = row
            .iter()
            .map(|cell| (cell.estimate - direct[cell.w.code() as usize]).abs())
            .fold(0.0, f64::max);
        worst_noisy = worst_noisy.max(e);
        if e <= params.kappa {
            within += 1;
        }
    }
    ensure(within >= 99, || format!("noisy runs within kappa: {within}/100"))?;
    Ok(format!(
        "n=64, k={}, window {}, kappa {:.2e}: two-path gap {worst:.2e}; noisy runs within kappa {within}/100 (worst {worst_noisy:.2e})",
        params.k, params.ell, params.kappa
    ))
}

fn run_cli(args: &[String], out: &PathBuf, threads: usize) -> (i32, Vec<u8>) {
    let _ = std::fs::remove_file(out);
    let status = Command::new(env!("CARGO_BIN_EXE_sqtrace"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SQTRACE_THREADS", threads.to_string())
        .output()
        .expect("binary runs");
    (status.status.code().unwrap_or(-1), std::fs::read(out).unwrap_or_default())
}

/// C12: every pipeline writes identical bytes across runs and thread counts.
fn c12() -> Outcome {
    let c = ch(0.5);
    let pair = construct_hard_pair(32, &c, &HardPairSchedule::default()).unwrap();
    let pipelines: Vec<Vec<String>> = [
        "stats --x 1011010011 --delta 0.4 --ell 3",
        "stats --n 12 --method monte-carlo --samples 20000 --seed 3 --format csv",
        "reconstruct-mean --n 8 --exhaustive",
        "reconstruct-worst --n 6 --exhaustive",
        "reconstruct-avg --n 10 --trials 3 --noise uniform-random",
        "sw-table --n 10 --format csv",
        "degrade --n 10",
        "lowerbound --n 64",
        "lowerbound --mode middle-bit --n 32",
        "sweep --what mean --ns 6,8 --deltas 0.3,0.6 --trials 5",
        "sweep --what hard-pair --ns 32,64 --deltas 0.5 --trials 20 --format json",
    ]
    .iter()
    .map(|s| s.split_whitespace().map(String::from).collect())
    .chain(std::iter::once(vec![
        "certify".into(),
        "--a".into(),
        pair.a.to_string(),
        "--b".into(),
        pair.a2.to_string(),
        "--t".into(),
        pair.t.to_string(),
        "--ell".into(),
        pair.ell.to_string(),
    ]))
    .collect();
    let dir = std::env::temp_dir().join(format!("sqtrace-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("artifact");
    for args in &pipelines {
        let (c1, a) = run_cli(args, &out, 1);
        let (c2, b) = run_cli(args, &out, 1);
        let (c3, e) = run_cli(args, &out, 8);
        let name = args[0].clone();
        ensure(!a.is_empty(), || format!("{name}: empty artifact (exit {c1})"))?;
        ensure(c1 == 0, || format!("{} exited {c1}", args.join(" ")))?;
        ensure(c1 == c2 && c1 == c3, || format!("{name}: exit codes {c1} {c2} {c3}"))?;
        ensure(a == b, || format!("{name}: repeated run differs"))?;
        ensure(a == e, || format!("{name}: 1 vs 8 threads differ"))?;
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("{} pipelines byte-identical over 2 runs and threads {{1, 8}}", pipelines.len()))
}

fn main() {
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("C1", "signature oracle equivalence", c1),
        ("C2", "row-stochasticity and marginals", c2),
        ("C3", "subword reduction of local queries", c3),
        ("C4", "polynomial identities", c4),
        ("C5", "mean-based reconstruction", c5),
        ("C6", "pairwise worst-case reconstruction", c6),
        ("C7", "truncation envelope", c7),
        ("C8", "hard-pair certification", c8),
        ("C9", "middle-bit lower bound", c9),
        ("C10", "degradation correctness", c10),
        ("C11", "SW estimation", c11),
        ("C12", "CLI determinism", c12),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| s == id) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
