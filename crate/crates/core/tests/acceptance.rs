//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rorqual::codec::{rs_decode, rs_encode};
use rorqual::harness::{
    loglog_slope, run_scenario, AdversaryConfig, AdversaryKind, Backend, RunOutcome, ScenarioConfig,
};
use rorqual::node::Observation;
use rorqual::simnet::DelayModel;
use rorqual::types::{to_ticks, to_units, PeerId, Round, Time};

const DELTA: Time = 1000;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn run(cfg: &ScenarioConfig) -> RunOutcome {
    run_scenario(cfg).expect("acceptance configs are valid")
}

fn run_all(cfgs: &[ScenarioConfig]) -> Vec<RunOutcome> {
    cfgs.par_iter().map(run).collect()
}

fn adversary(kind: AdversaryKind) -> AdversaryConfig {
    AdversaryConfig { kind, ..AdversaryConfig::default() }
}

fn max_f(n: usize) -> usize {
    (n - 1) / 3
}

/// Violations across runs, formatted for the detail column.
fn violations(outs: &[RunOutcome]) -> Vec<String> {
    outs.iter()
        .flat_map(|o| o.violations.iter().map(move |v| format!("seed {}: {v}", o.config.seed)))
        .collect()
}

fn good_case(backend: Backend) -> Vec<ScenarioConfig> {
    [4, 7, 10]
        .into_iter()
        .map(|n| ScenarioConfig {
            n,
            f: max_f(n),
            backend,
            max_round: Some(50),
            duration: 120.0,
            ordering: false,
            ..ScenarioConfig::default()
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let mut worst = 0;
    let mut slowest = 0.0f64;
    let mut rounds = Round::MAX;
    let mut bad = Vec::new();
    for cfg in good_case(Backend::Rorqual) {
        let t = Instant::now();
        let out = run(&cfg);
        slowest = slowest.max(t.elapsed().as_secs_f64());
        rounds = rounds.min(out.metrics.max_round);
        let lat: Vec<Time> = out.metrics.vertices.iter().map(|v| v.payload_latency.unwrap_or(Time::MAX)).collect();
        worst = worst.max(lat.iter().copied().max().unwrap_or(Time::MAX));
        bad.extend(out.violations);
    }
    verdict(
        worst <= DELTA && slowest < 5.0 && rounds >= 50 && bad.is_empty(),
        format!("max payload latency {:.3}, rounds {rounds}, slowest run {slowest:.2}s, violations {}", to_units(worst), bad.len()),
    )
}

fn criterion_2() -> Verdict {
    let outs = run_all(&good_case(Backend::Pull));
    let mut payload = 0;
    let mut cert = 0;
    for o in &outs {
        for v in &o.metrics.vertices {
            payload = payload.max(v.payload_latency.unwrap_or(Time::MAX));
            cert = cert.max(v.cert_latency.unwrap_or(Time::MAX));
        }
    }
    let bad = violations(&outs);
    verdict(
        payload <= 2 * DELTA && cert <= 2 * DELTA && bad.is_empty(),
        format!("max payload latency {:.3}, max cert latency {:.3}, violations {}", to_units(payload), to_units(cert), bad.len()),
    )
}

/// Pull under the omission scheduler. Latency here is admission at the last
/// correct peer: the (f+1)-th admission is bounded by 3Δ in this schedule.
fn criterion_3() -> Verdict {
    let cfg = ScenarioConfig {
        backend: Backend::Pull,
        duration: 40.0,
        ordering: false,
        adversary: adversary(AdversaryKind::Omission),
        ..ScenarioConfig::default()
    };
    let out = run(&cfg);
    let mut per_round: BTreeMap<Round, Time> = BTreeMap::new();
    let mut unsettled = 0;
    for v in out.metrics.vertices.iter().filter(|v| v.byzantine_source) {
        match v.full_latency {
            Some(l) => {
                let e = per_round.entry(v.vertex.round).or_insert(0);
                *e = (*e).max(l);
            }
            None => unsettled += 1,
        }
    }
    let in_band = per_round.values().filter(|&&l| (4 * DELTA - 1..=5 * DELTA).contains(&l)).count();
    let max = per_round.values().copied().max().unwrap_or(0);
    let min = per_round.values().copied().min().unwrap_or(0);
    verdict(
        per_round.len() >= 10 && in_band == per_round.len() && max + 1 >= 5 * DELTA && max <= 5 * DELTA && unsettled <= 1,
        format!(
            "{} adversarial rounds, {in_band} in [4Δ,5Δ] (min {:.3}, max {:.3}), unsettled {unsettled}, violations {}",
            per_round.len(),
            to_units(min),
            to_units(max),
            out.violations.len()
        ),
    )
}

fn criterion_4() -> Verdict {
    let cfgs: Vec<ScenarioConfig> = [4, 7, 10]
        .into_iter()
        .map(|n| ScenarioConfig {
            n,
            f: max_f(n),
            max_round: Some(200),
            duration: 300.0,
            ordering: false,
            adversary: adversary(AdversaryKind::Omission),
            ..ScenarioConfig::default()
        })
        .collect();
    let outs = run_all(&cfgs);
    let mut worst_tail = 0;
    let mut rounds = Round::MAX;
    let mut ldr_raised = true;
    for o in &outs {
        rounds = rounds.min(o.metrics.max_round);
        for &(_, r, d) in &o.metrics.round_durations {
            if r > 20 {
                worst_tail = worst_tail.max(d);
            }
        }
        for ldr in o.metrics.final_ldr.iter().flatten() {
            ldr_raised &= o.byzantine.iter().all(|b| ldr[b.idx()] > 0);
        }
    }
    let bad = violations(&outs);
    verdict(
        worst_tail <= DELTA && rounds >= 200 && ldr_raised && bad.is_empty(),
        format!(
            "max round duration after round 20: {:.3}, rounds {rounds}, byzantine LDR raised {ldr_raised}, violations {}",
            to_units(worst_tail),
            bad.len()
        ),
    )
}

fn criterion_5() -> Verdict {
    let cfgs: Vec<ScenarioConfig> = (0..20)
        .map(|seed| ScenarioConfig {
            seed,
            duration: 40.0,
            ordering: false,
            delay_model: DelayModel::Uniform,
            adversary: AdversaryConfig {
                kind: AdversaryKind::Delayer,
                victims: Some(vec![0, 1]),
                stop_at: Some(25.0),
                ..AdversaryConfig::default()
            },
            ..ScenarioConfig::default()
        })
        .collect();
    let outs = run_all(&cfgs);
    let mut cases = 0;
    let mut held = 0;
    for o in &outs {
        let gst = to_ticks(o.config.gst);
        let correct: Vec<PeerId> = PeerId::all(o.config.n).filter(|p| o.is_correct(*p)).collect();
        let mut stored: BTreeMap<(PeerId, Round), BTreeMap<PeerId, Time>> = BTreeMap::new();
        for (t, p, obs) in &o.log.observations {
            if let Observation::Stored { vertex } = obs {
                stored.entry((vertex.source, vertex.round)).or_default().entry(*p).or_insert(*t);
            }
        }
        for v in o.metrics.vertices.iter().filter(|v| v.byzantine_source && v.sent >= gst) {
            let seen = stored.get(&(v.vertex.source, v.vertex.round));
            let reached = correct
                .iter()
                .all(|p| seen.and_then(|m| m.get(p)).is_some_and(|&t| t <= v.sent + 2 * DELTA));
            if reached {
                continue;
            }
            cases += 1;
            let ok = o
                .metrics
                .final_ldr
                .iter()
                .flatten()
                .all(|ldr| ldr[v.vertex.source.idx()] >= v.vertex.round);
            held += ok as usize;
        }
    }
    let bad = violations(&outs);
    verdict(
        cases > 0 && held == cases && bad.is_empty(),
        format!("{held}/{cases} late Byzantine vertices accounted in LDR over 20 seeds, violations {}", bad.len()),
    )
}

fn random_schedule(seed: u64, kinds: &[AdversaryKind], n: usize, ordering: bool) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce_97ed);
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let f = max_f(n);
    let restarts = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(3.0..20.0)).collect();
    ScenarioConfig {
        n,
        f,
        seed,
        duration: 25.0,
        ordering,
        gst: rng.gen_range(0.0..8.0),
        pre_gst_cap: 4.0,
        actual_delta: Some(rng.gen_range(0.2..=1.0)),
        delay_model: DelayModel::Uniform,
        adversary: AdversaryConfig {
            kind,
            restarts,
            at: rng.gen_range(0.0..20.0),
            ..AdversaryConfig::default()
        },
        ..ScenarioConfig::default()
    }
}

fn criterion_6() -> Verdict {
    use AdversaryKind::*;
    let cfgs: Vec<ScenarioConfig> =
        (0..500).map(|s| random_schedule(s, &[Replayer, Replayer, Omission, Delayer, Crash, None], 4, false)).collect();
    let outs = run_all(&cfgs);
    let conflicts: usize =
        outs.iter().map(|o| o.violations.iter().filter(|v| v.starts_with("consistency")).count()).sum();
    let replays = outs.iter().filter(|o| o.config.adversary.kind == Replayer).count();
    let rejected: u64 = outs
        .iter()
        .filter(|o| o.config.adversary.kind == Replayer)
        .map(|o| o.metrics.rejections.get("bad vertex signature").copied().unwrap_or(0))
        .sum();
    let bad = violations(&outs);
    verdict(
        conflicts == 0 && rejected > 0 && bad.is_empty(),
        format!(
            "500 schedules ({replays} with restarts): {conflicts} conflicting slots, {rejected} restarted-key vertices rejected, violations {}",
            bad.len()
        ),
    )
}

/// DAG equality and containment over every run of the suite. Runs the
/// randomized schedules for both backends with ordering enabled.
fn criterion_7() -> Verdict {
    use AdversaryKind::*;
    let mut cfgs: Vec<ScenarioConfig> =
        (0..60).map(|s| random_schedule(1000 + s, &[None, Crash, Omission, Delayer, Replayer], 4, true)).collect();
    cfgs.extend((0..40).map(|s| {
        let mut c = random_schedule(2000 + s, &[None, Crash, Omission, Delayer], 7, false);
        if s % 2 == 0 {
            c.backend = Backend::Pull;
        }
        c
    }));
    let outs = run_all(&cfgs);
    let bad: Vec<String> = violations(&outs)
        .into_iter()
        .filter(|v| v.contains("dag equality") || v.contains("containment"))
        .collect();
    let first = bad.first().cloned().unwrap_or_default();
    verdict(bad.is_empty(), format!("{} runs, {} equality or containment violations {first}", outs.len(), bad.len()))
}

fn criterion_8() -> Verdict {
    use AdversaryKind::*;
    let cfgs: Vec<ScenarioConfig> = (0..200)
        .map(|s| {
            let mut c = random_schedule(5000 + s, &[None, Crash, Omission, Delayer, Replayer], 4, true);
            if s % 4 == 3 && c.adversary.kind != Replayer {
                c.backend = Backend::Pull;
            }
            c
        })
        .collect();
    let outs = run_all(&cfgs);
    let prefix: usize = outs.iter().map(|o| o.violations.iter().filter(|v| v.starts_with("prefix")).count()).sum();
    let bad = violations(&outs);

    let live: Vec<ScenarioConfig> = [(4, Backend::Rorqual), (7, Backend::Rorqual), (4, Backend::Pull)]
        .into_iter()
        .flat_map(|(n, backend)| {
            (0..3).map(move |seed| ScenarioConfig { n, f: max_f(n), seed, backend, duration: 100.0, ..ScenarioConfig::default() })
        })
        .collect();
    let live_outs = run_all(&live);
    let mut slowest = 0;
    for o in &live_outs {
        for t in o.metrics.tenth_commit.iter().flatten() {
            slowest = slowest.max(*t);
        }
        if o.metrics.tenth_commit.iter().any(Option::is_none) {
            slowest = Time::MAX;
        }
    }
    let live_bad = violations(&live_outs);
    verdict(
        prefix == 0 && bad.is_empty() && slowest <= to_ticks(100.0) && live_bad.is_empty(),
        format!(
            "200 mixed runs: {prefix} prefix conflicts, {} violations; fault-free: 10th commit by {}",
            bad.len(),
            if slowest == Time::MAX { "never".into() } else { format!("{:.3}", to_units(slowest)) }
        ),
    )
}

fn criterion_9() -> Verdict {
    let cfgs: Vec<ScenarioConfig> = [4, 7, 10, 13, 16]
        .into_iter()
        .map(|n| ScenarioConfig { n, f: max_f(n), duration: 12.0, ordering: false, ..ScenarioConfig::default() })
        .collect();
    let outs = run_all(&cfgs);
    let pts: Vec<(f64, f64)> = outs.iter().map(|o| (o.config.n as f64, o.metrics.bytes_per_vertex)).collect();
    let slope = loglog_slope(&pts);
    let series: Vec<String> = pts.iter().map(|(n, b)| format!("{n}:{b:.0}")).collect();
    verdict(slope <= 2.3, format!("fitted exponent {slope:.3} over bytes/vertex {}", series.join(" ")))
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0u64;
    let mut failures = 0u64;
    for n in 1..=7 {
        for k in 1..=n {
            let mut payload = vec![0u8; rng.gen_range(0..200)];
            rng.fill_bytes(&mut payload);
            let shares = rs_encode(&payload, n, k).expect("valid parameters");
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let subset: Vec<(usize, Vec<u8>)> =
                    (0..n).filter(|i| mask & (1 << i) != 0).map(|i| (i, shares[i].clone())).collect();
                checked += 1;
                if rs_decode(&subset, n, k).ok().as_deref() != Some(&payload[..]) {
                    failures += 1;
                }
            }
        }
    }
    for _ in 0..400 {
        let n = rng.gen_range(8..=31);
        let k = rng.gen_range(1..=n);
        let mut payload = vec![0u8; rng.gen_range(0..2000)];
        rng.fill_bytes(&mut payload);
        let shares = rs_encode(&payload, n, k).expect("valid parameters");
        let subset: Vec<(usize, Vec<u8>)> =
            sample(&mut rng, n, k).into_iter().map(|i| (i, shares[i].clone())).collect();
        checked += 1;
        if rs_decode(&subset, n, k).ok().as_deref() != Some(&payload[..]) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{checked} subsets decoded, {failures} mismatches"))
}

fn criterion_11() -> Verdict {
    let fault_free: Vec<ScenarioConfig> = [4, 7, 10]
        .into_iter()
        .map(|n| ScenarioConfig { n, f: max_f(n), duration: 30.0, ordering: false, ..ScenarioConfig::default() })
        .collect();
    let adversarial: Vec<ScenarioConfig> = [4, 7, 10]
        .into_iter()
        .flat_map(|n| {
            [AdversaryKind::Omission, AdversaryKind::Delayer].into_iter().flat_map(move |kind| {
                [Backend::Rorqual, Backend::Pull].into_iter().map(move |backend| ScenarioConfig {
                    n,
                    f: max_f(n),
                    backend,
                    duration: 30.0,
                    ordering: false,
                    adversary: adversary(kind),
                    ..ScenarioConfig::default()
                })
            })
        })
        .collect();
    let ff = run_all(&fault_free);
    let adv = run_all(&adversarial);
    let coverage_ok = ff.iter().all(|o| {
        let (n, f) = (o.config.n as f64, o.config.f as f64);
        o.metrics.causal_coverage >= (n - f) / n
    });
    let quality_ok = adv.iter().all(|o| {
        let (n, f) = (o.config.n as f64, o.config.f as f64);
        o.metrics.chain_quality >= (n - 2.0 * f) / (n - f)
    });
    let min_cov = ff.iter().map(|o| o.metrics.causal_coverage).fold(1.0, f64::min);
    let min_q = adv.iter().map(|o| o.metrics.chain_quality).fold(1.0, f64::min);
    verdict(coverage_ok && quality_ok, format!("min causal coverage {min_cov:.3}, min correct-sourced fraction {min_q:.3}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("good-case rorqual latency", criterion_1),
        ("good-case pull latency", criterion_2),
        ("bad-case pull latency", criterion_3),
        ("graceful degradation", criterion_4),
        ("accountability", criterion_5),
        ("consistency under restarts", criterion_6),
        ("dag equality and containment", criterion_7),
        ("bullshark safety and liveness", criterion_8),
        ("communication scaling", criterion_9),
        ("codec oracle", criterion_10),
        ("chain quality and causality", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name}: {} ({:.1}s)", i + 1, v.detail, t.elapsed().as_secs_f64());
        failed += !v.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
