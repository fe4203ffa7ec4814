//! Scenario configuration, metric extraction and invariant checks.
//!
//! Config files are TOML. All times in the file are in sim-time units
//! (Δ = 1.0 by default) and converted to ticks on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{keygen, KeyDomain, SchemeKind};
use crate::node::{Observation, ParentPolicy, ProtocolConfig, Replica};
use crate::pull::PullNode;
use crate::rorqual::RorqualNode;
use crate::simnet::{AdversarySpec, Behavior, DelayModel, NetConfig, RunLog, Simulation};
use crate::types::{to_ticks, to_units, Committee, PeerId, Round, Time, VertexRef};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("n = {n} is below 3f+1 for f = {f}")]
    Resilience { n: usize, f: usize },
    #[error("actual delay bound {actual} exceeds delta {delta}")]
    DeltaBound { actual: f64, delta: f64 },
    #[error("rho must be at least 1")]
    Rho,
    #[error("{0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Rorqual,
    Pull,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Rorqual => "rorqual",
            Backend::Pull => "pull",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    None,
    Crash,
    Omission,
    Delayer,
    Replayer,
}

impl std::str::FromStr for AdversaryKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => AdversaryKind::None,
            "crash" => AdversaryKind::Crash,
            "omission" => AdversaryKind::Omission,
            "delayer" => AdversaryKind::Delayer,
            "replayer" => AdversaryKind::Replayer,
            other => return Err(ConfigError::Invalid(format!("unknown adversary `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub kind: AdversaryKind,
    /// Byzantine peers. Defaults to the last f ids.
    pub byzantine: Option<Vec<u16>>,
    /// Targets of omission or delay. Defaults to the first f correct ids.
    pub victims: Option<Vec<u16>>,
    /// Crash time.
    pub at: f64,
    /// Enclave restart times.
    pub restarts: Vec<f64>,
    pub min_hold: f64,
    pub max_hold: f64,
    /// Byzantine peers go silent at this time.
    pub stop_at: Option<f64>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            kind: AdversaryKind::None,
            byzantine: None,
            victims: None,
            at: 0.0,
            restarts: Vec::new(),
            min_hold: 2.0,
            max_hold: 4.0,
            stop_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub f: usize,
    pub delta: f64,
    /// Actual post-GST bound. Defaults to `delta`.
    pub actual_delta: Option<f64>,
    pub gst: f64,
    /// Proposals stop after this time.
    pub duration: f64,
    /// Extra time after `duration` for messages to settle.
    pub drain: f64,
    /// Proposals stop above this round.
    pub max_round: Option<Round>,
    pub backend: Backend,
    pub parent_policy: ParentPolicy,
    pub rho: Round,
    pub ordering: bool,
    pub seed: u64,
    pub block_size: usize,
    pub delay_model: DelayModel,
    pub pre_gst_cap: f64,
    pub scheme: SchemeKind,
    pub trace: bool,
    pub adversary: AdversaryConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 4,
            f: 1,
            delta: 1.0,
            actual_delta: None,
            gst: 0.0,
            duration: 50.0,
            drain: 20.0,
            max_round: None,
            backend: Backend::Rorqual,
            parent_policy: ParentPolicy::Alg5,
            rho: 2,
            ordering: true,
            seed: 1,
            block_size: 64,
            delay_model: DelayModel::Fixed,
            pre_gst_cap: 10.0,
            scheme: SchemeKind::SimMac,
            trace: false,
            adversary: AdversaryConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn byzantine(&self) -> Vec<PeerId> {
        match (&self.adversary.kind, &self.adversary.byzantine) {
            (AdversaryKind::None, _) => Vec::new(),
            (_, Some(ids)) => ids.iter().map(|&i| PeerId(i)).collect(),
            (_, None) => (self.n - self.f..self.n).map(|i| PeerId(i as u16)).collect(),
        }
    }

    pub fn victims(&self) -> Vec<PeerId> {
        let byz = self.byzantine();
        match &self.adversary.victims {
            Some(ids) => ids.iter().map(|&i| PeerId(i)).collect(),
            None => PeerId::all(self.n).filter(|p| !byz.contains(p)).take(self.f).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n <= 3 * self.f {
            return Err(ConfigError::Resilience { n: self.n, f: self.f });
        }
        let actual = self.actual_delta.unwrap_or(self.delta);
        if actual > self.delta || actual <= 0.0 {
            return Err(ConfigError::DeltaBound { actual, delta: self.delta });
        }
        if self.rho < 1 {
            return Err(ConfigError::Rho);
        }
        if self.backend == Backend::Pull && self.parent_policy == ParentPolicy::Alg7 {
            return Err(ConfigError::Invalid("parent_policy applies to the rorqual backend only".into()));
        }
        let byz = self.byzantine();
        if byz.len() > self.f || byz.iter().any(|p| p.idx() >= self.n) {
            return Err(ConfigError::Invalid("byzantine set must be at most f valid peers".into()));
        }
        let victims = self.victims();
        if victims.iter().any(|p| byz.contains(p) || p.idx() >= self.n) {
            return Err(ConfigError::Invalid("victims must be valid correct peers".into()));
        }
        if self.adversary.kind == AdversaryKind::Omission && victims.len() > self.f {
            return Err(ConfigError::Invalid("omission victims are limited to f peers".into()));
        }
        if self.adversary.kind == AdversaryKind::Replayer && self.backend != Backend::Rorqual {
            return Err(ConfigError::Invalid("enclave restarts need the rorqual backend".into()));
        }
        if self.adversary.min_hold > self.adversary.max_hold {
            return Err(ConfigError::Invalid("min_hold exceeds max_hold".into()));
        }
        Ok(())
    }

    fn adversary_spec(&self) -> AdversarySpec {
        let a = &self.adversary;
        let behavior = match a.kind {
            AdversaryKind::None => Behavior::None,
            AdversaryKind::Crash => Behavior::Crash { at: to_ticks(a.at * self.delta) },
            AdversaryKind::Omission => Behavior::SelectiveOmission { victims: self.victims() },
            AdversaryKind::Delayer => Behavior::Delayer {
                victims: self.victims(),
                min_hold: to_ticks(a.min_hold * self.delta),
                max_hold: to_ticks(a.max_hold * self.delta),
            },
            AdversaryKind::Replayer => Behavior::Replayer {
                restarts: a.restarts.iter().map(|&t| to_ticks(t)).collect(),
            },
        };
        AdversarySpec { byzantine: self.byzantine(), behavior, stop_at: a.stop_at.map(to_ticks) }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let delta = to_ticks(self.delta);
        let mut p = ProtocolConfig::new(Committee::new(self.n, self.f), delta);
        p.rho = self.rho;
        p.parent_policy = self.parent_policy;
        p.ordering = self.ordering;
        p.block_size = self.block_size;
        p.scheme = self.scheme;
        p.propose_until = to_ticks(self.duration);
        p.max_round = self.max_round.unwrap_or(Round::MAX);
        p.coin_seed = self.seed;
        p
    }

    pub fn end_time(&self) -> Time {
        to_ticks(self.duration + self.drain)
    }
}

/// Per-vertex timing and traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexMetric {
    pub vertex: VertexRef,
    pub byzantine_source: bool,
    pub sent: Time,
    /// Send to admission at the (f+1)-th correct peer.
    pub payload_latency: Option<Time>,
    /// Send to admission at the last correct peer.
    pub full_latency: Option<Time>,
    /// Send to the first correct certificate.
    pub cert_latency: Option<Time>,
    /// Send to the first correct peer that knows its content.
    pub first_stored: Option<Time>,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub vertices: Vec<VertexMetric>,
    /// (peer, round, duration) for every round a correct peer completed.
    pub round_durations: Vec<(PeerId, Round, Time)>,
    /// Leaders committed per peer (correct peers only; Byzantine are None).
    pub commits: Vec<Option<usize>>,
    /// Time at which each correct peer committed its 10th leader.
    pub tenth_commit: Vec<Option<Time>>,
    pub delivered: Vec<Option<usize>>,
    pub total_bytes: u64,
    pub setup_bytes: u64,
    pub bytes_per_vertex: f64,
    pub causal_coverage: f64,
    /// Minimum correct-sourced fraction over all nonempty causal reads.
    pub chain_quality: f64,
    pub final_ldr: Vec<Option<Vec<Round>>>,
    pub max_round: Round,
    pub rejections: BTreeMap<&'static str, u64>,
}

impl RunMetrics {
    pub fn max_payload_latency(&self) -> Option<Time> {
        self.vertices.iter().filter_map(|v| v.payload_latency).max()
    }

    pub fn max_cert_latency(&self) -> Option<Time> {
        self.vertices.iter().filter_map(|v| v.cert_latency).max()
    }
}

pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub metrics: RunMetrics,
    pub log: RunLog,
    pub nodes: Vec<Box<dyn Replica>>,
    pub byzantine: Vec<PeerId>,
    pub violations: Vec<String>,
}

impl RunOutcome {
    pub fn is_correct(&self, p: PeerId) -> bool {
        !self.byzantine.contains(&p)
    }

    pub fn correct_nodes(&self) -> impl Iterator<Item = &dyn Replica> + '_ {
        self.nodes.iter().filter(|n| !self.byzantine.contains(&n.id())).map(|n| n.as_ref())
    }
}

fn build_nodes(cfg: &ScenarioConfig) -> Vec<Box<dyn Replica>> {
    let mut setup = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let keys: Vec<_> = (0..cfg.n).map(|_| keygen(&mut setup, cfg.scheme, KeyDomain::NormalWorld)).collect();
    let publics: Vec<_> = keys.iter().map(|k| k.public()).collect();
    let pc = cfg.protocol_config();
    keys.into_iter()
        .enumerate()
        .map(|(i, key)| {
            let id = PeerId(i as u16);
            let node: Box<dyn Replica> = match cfg.backend {
                Backend::Rorqual => Box::new(RorqualNode::new(id, pc.clone(), key, publics.clone(), &mut setup)),
                Backend::Pull => Box::new(PullNode::new(id, pc.clone(), key, publics.clone())),
            };
            node
        })
        .collect()
}

/// Runs one scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome, ConfigError> {
    cfg.validate()?;
    let net = NetConfig {
        n: cfg.n,
        delta: to_ticks(cfg.delta),
        actual_delta: to_ticks(cfg.actual_delta.unwrap_or(cfg.delta)),
        gst: to_ticks(cfg.gst),
        pre_gst_cap: to_ticks(cfg.pre_gst_cap),
        delay_model: cfg.delay_model,
        trace: cfg.trace,
    };
    let spec = cfg.adversary_spec();
    let byzantine = spec.byzantine.clone();
    let sim = Simulation::new(net, spec, build_nodes(cfg), cfg.seed);
    let (log, nodes) = sim.run(cfg.end_time());
    let mut out = RunOutcome {
        config: cfg.clone(),
        metrics: RunMetrics::default(),
        log,
        nodes,
        byzantine,
        violations: Vec::new(),
    };
    out.metrics = measure(&out);
    out.violations = check_invariants(&out);
    Ok(out)
}

fn measure(out: &RunOutcome) -> RunMetrics {
    let cfg = &out.config;
    let f = cfg.f;
    let mut m = RunMetrics::default();

    let mut sent: BTreeMap<VertexRef, Time> = BTreeMap::new();
    let mut admitted: BTreeMap<VertexRef, Vec<Time>> = BTreeMap::new();
    let mut stored: BTreeMap<VertexRef, Time> = BTreeMap::new();
    let mut certified: BTreeMap<VertexRef, Time> = BTreeMap::new();
    let mut starts: BTreeMap<PeerId, Vec<(Round, Time)>> = BTreeMap::new();

    for (t, p, o) in &out.log.observations {
        let correct = out.is_correct(*p);
        match o {
            Observation::Dispersed { vertex, .. } => {
                sent.entry(*vertex).or_insert(*t);
            }
            Observation::Admitted { vertex } if correct => admitted.entry(*vertex).or_default().push(*t),
            Observation::Stored { vertex } if correct => {
                stored.entry(*vertex).or_insert(*t);
            }
            Observation::Certified { source, round, digest } if correct => {
                certified.entry(VertexRef { source: *source, round: *round, digest: *digest }).or_insert(*t);
            }
            Observation::RoundStarted { round } if correct => starts.entry(*p).or_default().push((*round, *t)),
            Observation::Rejected { reason, .. } if correct => *m.rejections.entry(reason).or_default() += 1,
            _ => {}
        }
    }

    let correct_count = cfg.n - out.byzantine.len();
    for (v, &t0) in &sent {
        let mut times = admitted.get(v).cloned().unwrap_or_default();
        times.sort_unstable();
        let bytes = out.log.bytes.per_slot.get(&(v.source, v.round)).copied().unwrap_or(0);
        m.vertices.push(VertexMetric {
            vertex: *v,
            byzantine_source: !out.is_correct(v.source),
            sent: t0,
            payload_latency: times.get(f).map(|t| t.saturating_sub(t0)),
            full_latency: (times.len() >= correct_count).then(|| times[correct_count - 1].saturating_sub(t0)),
            cert_latency: certified.get(v).map(|t| t.saturating_sub(t0)),
            first_stored: stored.get(v).map(|t| t.saturating_sub(t0)),
            bytes,
        });
    }

    for (p, series) in &starts {
        for w in series.windows(2) {
            m.round_durations.push((*p, w[0].0, w[1].1 - w[0].1));
        }
    }

    m.total_bytes = out.log.bytes.total;
    m.setup_bytes = out.log.bytes.setup;
    let dispersed_slots: BTreeSet<(PeerId, Round)> = sent.keys().map(|v| (v.source, v.round)).collect();
    let vertex_bytes: u64 = out.log.bytes.per_slot.values().sum();
    m.bytes_per_vertex = if dispersed_slots.is_empty() {
        0.0
    } else {
        vertex_bytes as f64 / dispersed_slots.len() as f64
    };

    for node in &out.nodes {
        let correct = out.is_correct(node.id());
        m.max_round = m.max_round.max(node.current_round());
        m.commits.push(correct.then(|| node.ordering().map_or(0, |b| b.leaders().len())));
        m.delivered.push(correct.then(|| node.ordering().map_or(0, |b| b.log().len())));
        m.final_ldr.push(if correct { node.ldr().map(|l| l.to_vec()) } else { None });
    }
    m.tenth_commit = tenth_commit_times(out);

    let (coverage, quality) = causal_stats(out, &sent);
    m.causal_coverage = coverage;
    m.chain_quality = quality;
    m
}

/// Time of each correct peer's tenth leader commit, read off its delivered
/// stream: a leader is delivered last in its segment.
fn tenth_commit_times(out: &RunOutcome) -> Vec<Option<Time>> {
    let mut result = Vec::new();
    for node in &out.nodes {
        if !out.is_correct(node.id()) {
            result.push(None);
            continue;
        }
        let Some(b) = node.ordering() else {
            result.push(None);
            continue;
        };
        let tenth = b.leaders().get(9).copied();
        let time = tenth.and_then(|leader| {
            out.log.observations.iter().find_map(|(t, p, o)| match o {
                Observation::Delivered { vertex } if *p == node.id() && *vertex == leader => Some(*t),
                _ => None,
            })
        });
        result.push(time);
    }
    result
}

/// Coverage: fraction of vertices dispersed up to two rounds below the top
/// that lie in the history of the top round at a correct peer. Quality: the
/// minimum correct-sourced fraction over every nonempty causal read.
fn causal_stats(out: &RunOutcome, sent: &BTreeMap<VertexRef, Time>) -> (f64, f64) {
    let Some(node) = out.correct_nodes().next() else {
        return (0.0, 0.0);
    };
    let dag = node.dag();
    let top = dag.max_round();
    let top_refs: Vec<VertexRef> = dag.round_refs(top).collect();
    let covered = dag.covered_by(top_refs.iter());
    let eligible: Vec<&VertexRef> = sent.keys().filter(|v| v.round + 2 <= top && v.round > 0).collect();
    let hit = eligible.iter().filter(|v| dag.contains(v) && dag.is_covered(&covered, v.source, v.round)).count();
    let coverage = if eligible.is_empty() { 1.0 } else { hit as f64 / eligible.len() as f64 };

    let mut quality: f64 = 1.0;
    for v in dag.references() {
        if v.round == 0 || !out.is_correct(v.source) {
            continue;
        }
        let Ok(history) = dag.read_causal(&v) else { continue };
        if history.is_empty() {
            continue;
        }
        let good = history.iter().filter(|h| out.is_correct(h.source)).count();
        quality = quality.min(good as f64 / history.len() as f64);
    }
    (coverage, quality)
}

/// Vertices from correct sources together with their causal histories.
/// A Byzantine vertex that no correct vertex references may legitimately
/// stay at a single peer, so it is left out of the equality check.
pub fn settled_vertices(out: &RunOutcome, node: &dyn Replica) -> BTreeSet<VertexRef> {
    let dag = node.dag();
    let roots: Vec<VertexRef> =
        dag.references().into_iter().filter(|r| r.round > 0 && out.is_correct(r.source)).collect();
    let covered = dag.covered_by(roots.iter());
    dag.references().into_iter().filter(|r| r.round > 0 && dag.is_covered(&covered, r.source, r.round)).collect()
}

/// Safety checks over the final state and the observation log.
pub fn check_invariants(out: &RunOutcome) -> Vec<String> {
    let mut v = Vec::new();
    for (t, p, o) in &out.log.observations {
        if let Observation::Alarm { what } = o {
            if out.is_correct(*p) {
                v.push(format!("alarm at {p} t={t}: {what}"));
            }
        }
    }

    let mut slots: BTreeMap<(PeerId, Round), (PeerId, crate::codec::Digest)> = BTreeMap::new();
    for node in out.correct_nodes() {
        for (source, round, digest) in node.known_vertices() {
            match slots.get(&(source, round)) {
                Some((other, d)) if *d != digest => {
                    v.push(format!("consistency: {} and {other} differ at ({source},{round})", node.id()));
                }
                Some(_) => {}
                None => {
                    slots.insert((source, round), (node.id(), digest));
                }
            }
        }
        if let Err(e) = node.dag().check_containment() {
            v.push(format!("containment at {}: {e}", node.id()));
        }
    }

    let correct: Vec<&dyn Replica> = out.correct_nodes().collect();
    if let Some(first) = correct.first() {
        let base = settled_vertices(out, *first);
        for other in &correct[1..] {
            let set = settled_vertices(out, *other);
            if set != base {
                let diff = set.symmetric_difference(&base).count();
                v.push(format!("dag equality: {} and {} differ in {diff} vertices", first.id(), other.id()));
            }
        }
        for (i, a) in correct.iter().enumerate() {
            for b in &correct[i + 1..] {
                if let (Some(x), Some(y)) = (a.ordering(), b.ordering()) {
                    let k = x.log().len().min(y.log().len());
                    if x.log()[..k] != y.log()[..k] {
                        v.push(format!("prefix safety: {} and {} diverge", a.id(), b.id()));
                    }
                }
            }
        }
    }

    let b = &out.log.bytes;
    if b.setup + b.per_slot.values().sum::<u64>() != b.total {
        v.push("byte ledger does not reconcile".into());
    }
    if out.log.late_deliveries > 0 {
        v.push(format!("{} post-GST deliveries exceeded the delay bound", out.log.late_deliveries));
    }
    v
}

pub const SUMMARY_HEADER: &str = "backend,policy,n,f,adversary,seed,max_round,vertices,max_payload_latency,mean_payload_latency,max_full_latency,max_cert_latency,bytes_per_vertex,setup_bytes,total_bytes,min_commits,causal_coverage,chain_quality,violations";

fn fmt_opt(t: Option<Time>) -> String {
    t.map(|t| format!("{:.3}", to_units(t))).unwrap_or_default()
}

/// One CSV row summarising a run.
pub fn summary_row(out: &RunOutcome) -> String {
    let c = &out.config;
    let m = &out.metrics;
    let lat: Vec<Time> = m.vertices.iter().filter_map(|v| v.payload_latency).collect();
    let mean = if lat.is_empty() { None } else { Some(lat.iter().sum::<Time>() / lat.len() as Time) };
    let full = m.vertices.iter().filter_map(|v| v.full_latency).max();
    let min_commits = m.commits.iter().flatten().min().copied().unwrap_or(0);
    format!(
        "{},{:?},{},{},{:?},{},{},{},{},{},{},{},{:.1},{},{},{},{:.4},{:.4},{}",
        c.backend.name(),
        c.parent_policy,
        c.n,
        c.f,
        c.adversary.kind,
        c.seed,
        m.max_round,
        m.vertices.len(),
        fmt_opt(m.max_payload_latency()),
        fmt_opt(mean),
        fmt_opt(full),
        fmt_opt(m.max_cert_latency()),
        m.bytes_per_vertex,
        m.setup_bytes,
        m.total_bytes,
        min_commits,
        m.causal_coverage,
        m.chain_quality,
        out.violations.len()
    )
    .to_lowercase()
}

pub const VERTEX_HEADER: &str =
    "source,round,byzantine_source,sent,payload_latency,full_latency,cert_latency,bytes";

pub fn vertex_csv(m: &RunMetrics) -> String {
    let mut s = String::from(VERTEX_HEADER);
    s.push('\n');
    for v in &m.vertices {
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{},{},{},{}",
            v.vertex.source.0,
            v.vertex.round,
            v.byzantine_source,
            to_units(v.sent),
            fmt_opt(v.payload_latency),
            fmt_opt(v.full_latency),
            fmt_opt(v.cert_latency),
            v.bytes
        );
    }
    s
}

pub fn rounds_csv(m: &RunMetrics) -> String {
    let mut s = String::from("peer,round,duration\n");
    for (p, r, d) in &m.round_durations {
        let _ = writeln!(s, "{},{r},{:.3}", p.0, to_units(*d));
    }
    s
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

/// The four Table 1 cases: each backend under the good and bad case.
pub fn table1_configs(n: usize, f: usize, seed: u64) -> Vec<(String, ScenarioConfig)> {
    let mut v = Vec::new();
    for backend in [Backend::Rorqual, Backend::Pull] {
        for (case, kind) in [("good", AdversaryKind::None), ("bad", AdversaryKind::Omission)] {
            let cfg = ScenarioConfig {
                n,
                f,
                backend,
                seed,
                duration: 30.0,
                ordering: false,
                adversary: AdversaryConfig { kind, ..AdversaryConfig::default() },
                ..ScenarioConfig::default()
            };
            v.push((case.to_string(), cfg));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_low_resilience() {
        let cfg = ScenarioConfig { n: 3, f: 1, ..ScenarioConfig::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::Resilience { .. })));
    }

    #[test]
    fn rejects_actual_delta_above_bound() {
        let cfg = ScenarioConfig { actual_delta: Some(1.5), ..ScenarioConfig::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::DeltaBound { .. })));
    }

    #[test]
    fn parses_toml() {
        let cfg = ScenarioConfig::from_toml(
            "n = 7\nf = 2\nbackend = \"pull\"\n[adversary]\nkind = \"omission\"\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 7);
        assert_eq!(cfg.byzantine(), vec![PeerId(5), PeerId(6)]);
        assert_eq!(cfg.victims(), vec![PeerId(0), PeerId(1)]);
    }

    #[test]
    fn slope_of_square_is_two() {
        let pts: Vec<(f64, f64)> = (1..6).map(|x| (x as f64, 3.0 * (x * x) as f64)).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rorqual_fault_free_smoke() {
        let cfg = ScenarioConfig { duration: 20.0, ..ScenarioConfig::default() };
        let out = run_scenario(&cfg).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        assert!(out.metrics.max_round >= 10, "round {}", out.metrics.max_round);
        assert!(out.metrics.max_payload_latency().unwrap() <= to_ticks(1.0));
    }

    #[test]
    fn pull_fault_free_smoke() {
        let cfg = ScenarioConfig { duration: 20.0, backend: Backend::Pull, ..ScenarioConfig::default() };
        let out = run_scenario(&cfg).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        assert!(out.metrics.max_round >= 5, "round {}", out.metrics.max_round);
    }
}
