//! Coupled continuous-time simulation.
//!
//! Any number of systems, each running its own policy, are driven by a
//! single event stream: arrivals at rate `λ_N = N − β√N` carrying one shared
//! permutation draw, and potential departures from one shared rate-`N` clock
//! carrying a uniform stack position. Marginally each system is the plain
//! Markov chain of its policy; jointly their sample paths are ordered.

use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::ensemble::{dominates, Capacity, OccupancyVector, Placement};
use crate::error::{domain, Error, Result};
use crate::policy::{dispatch, prop2_admissible, Dispatch, PermutationDraw, PolicySpec};
use crate::seed::{self, SeedTree};

/// `λ_N = N − β√N`; fails unless `β > 0` and `λ_N > 0`.
pub fn arrival_rate(n: usize, beta: f64) -> Result<f64> {
    if n == 0 {
        return domain("number of servers must be positive");
    }
    if !(beta.is_finite() && beta > 0.0) {
        return domain(format!("beta must be positive and finite, got {beta}"));
    }
    let nf = n as f64;
    let lambda = nf - beta * nf.sqrt();
    if lambda <= 0.0 {
        return domain(format!("arrival rate N - beta*sqrt(N) = {lambda} is not positive (N = {n}, beta = {beta})"));
    }
    Ok(lambda)
}

#[derive(Clone, Debug)]
pub enum EventKind {
    Arrival { draw: PermutationDraw },
    PotentialDeparture { position: usize },
}

#[derive(Clone, Debug)]
pub struct CoupledEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// The merged Poisson event stream on `[0, horizon]`.
///
/// Inter-event times are exponential with rate `λ_N + N`; each event is an
/// arrival with probability `λ_N / (λ_N + N)`. Times, kinds, departure
/// positions and permutations each come from their own substream, and each
/// arrival's permutation from its own ChaCha stream, so how much of one draw
/// gets revealed never affects later events.
#[derive(Clone, Debug)]
pub struct RandomEvents {
    n: usize,
    horizon: f64,
    clock: f64,
    arrival_prob: f64,
    gap: Exp<f64>,
    times: ChaCha8Rng,
    kinds: ChaCha8Rng,
    departures: ChaCha8Rng,
    permutations: ChaCha8Rng,
    arrivals: u64,
}

impl RandomEvents {
    pub fn new(n: usize, beta: f64, horizon: f64, seed: u64) -> Result<Self> {
        let lambda = arrival_rate(n, beta)?;
        if !(horizon.is_finite() && horizon >= 0.0) {
            return domain(format!("horizon must be finite and non-negative, got {horizon}"));
        }
        let total = lambda + n as f64;
        let tree = SeedTree::new(seed);
        Ok(Self {
            n,
            horizon,
            clock: 0.0,
            arrival_prob: lambda / total,
            gap: Exp::new(total).expect("positive rate"),
            times: tree.rng(seed::EVENT_TIMES, 0),
            kinds: tree.rng(seed::EVENT_KINDS, 0),
            departures: tree.rng(seed::DEPARTURES, 0),
            permutations: tree.rng(seed::PERMUTATIONS, 0),
            arrivals: 0,
        })
    }
}

impl Iterator for RandomEvents {
    type Item = CoupledEvent;

    fn next(&mut self) -> Option<CoupledEvent> {
        self.clock += self.gap.sample(&mut self.times);
        if self.clock > self.horizon {
            self.clock = f64::INFINITY;
            return None;
        }
        let kind = if self.kinds.random::<f64>() < self.arrival_prob {
            let mut rng = self.permutations.clone();
            rng.set_stream(self.arrivals);
            rng.set_word_pos(0);
            self.arrivals += 1;
            EventKind::Arrival { draw: PermutationDraw::lazy(self.n, rng) }
        } else {
            EventKind::PotentialDeparture { position: self.departures.random_range(1..=self.n) }
        };
        Some(CoupledEvent { time: self.clock, kind })
    }
}

/// What happened to one system at an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventRecord {
    Start,
    /// `height` is the queue length of the chosen server before the task
    /// joined, `None` when the dispatcher discarded the task outright.
    Arrival { height: Option<usize>, overflowed: bool },
    /// `level` is the decremented `Q` level, `None` for an idle server.
    Departure { position: usize, level: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub state: OccupancyVector,
    pub overflow: u64,
    pub event: EventRecord,
}

/// Identifies the event stream a path was generated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamTag {
    Seeded(u64),
    Scripted(u64),
}

/// Piecewise-constant trajectory of `(Q, L)` for one policy, recorded at
/// every event epoch of the shared stream (including no-op epochs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemPath {
    pub policy: PolicySpec,
    pub n: usize,
    pub beta: f64,
    pub stream: StreamTag,
    pub jumps: Vec<Jump>,
}

impl SystemPath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.jumps.iter().map(|j| j.time)
    }

    pub fn last(&self) -> &Jump {
        self.jumps.last().expect("paths start with an initial jump")
    }

    /// Overflow count at the end of the run.
    pub fn final_overflow(&self) -> u64 {
        self.last().overflow
    }

    /// State in force at time `t` (right-continuous).
    pub fn at(&self, t: f64) -> &Jump {
        let idx = self.jumps.partition_point(|j| j.time <= t);
        &self.jumps[idx.saturating_sub(1)]
    }

    /// Largest number of stored levels along the path.
    pub fn depth(&self) -> usize {
        self.jumps.iter().map(|j| j.state.depth()).max().unwrap_or(0)
    }

    /// `time,Q1,…,Qb,L` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let depth = self.depth();
        let mut header = String::from("time");
        for i in 1..=depth {
            header.push_str(&format!(",Q{i}"));
        }
        writeln!(out, "{header},L")?;
        for j in &self.jumps {
            write!(out, "{}", j.time)?;
            for i in 1..=depth {
                write!(out, ",{}", j.state.level(i))?;
            }
            writeln!(out, ",{}", j.overflow)?;
        }
        Ok(())
    }

    fn same_stream(&self, other: &SystemPath) -> bool {
        self.stream == other.stream
            && self.n == other.n
            && self.jumps.len() == other.jumps.len()
            && self.times().zip(other.times()).all(|(a, b)| a == b)
    }
}

/// Diffusion-scaled path: `X₁ = (Q₁ − N)/√N`, `X_i = Q_i/√N` for `i ≥ 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledPath {
    pub n: usize,
    pub times: Vec<f64>,
    /// `values[j][i-1]` is `X_i` at epoch `j`.
    pub values: Vec<Vec<f64>>,
}

impl ScaledPath {
    /// `X_i` at epoch `j`; zero past the stored levels for `i ≥ 2`.
    pub fn value(&self, j: usize, i: usize) -> f64 {
        match self.values[j].get(i - 1) {
            Some(&x) => x,
            None if i == 1 => -(self.n as f64).sqrt(),
            None => 0.0,
        }
    }

    pub fn coordinate(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.times.len()).map(move |j| self.value(j, i))
    }

    /// `sup_t |X_i(t)|` over the recorded epochs.
    pub fn sup_abs(&self, i: usize) -> f64 {
        self.coordinate(i).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Value of `X_i` in force at time `t`.
    pub fn at(&self, t: f64, i: usize) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.value(idx, i)
    }

    /// `time,X1,…,Xb` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let depth = self.values.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut header = String::from("time");
        for i in 1..=depth {
            header.push_str(&format!(",X{i}"));
        }
        writeln!(out, "{header}")?;
        for (j, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for i in 1..=depth {
                write!(out, ",{}", self.value(j, i))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn scale_state(q: &OccupancyVector) -> Vec<f64> {
    let n = q.n_servers() as f64;
    let root = n.sqrt();
    let depth = q.depth().max(1);
    (1..=depth)
        .map(|i| {
            let v = q.level(i) as f64;
            if i == 1 {
                (v - n) / root
            } else {
                v / root
            }
        })
        .collect()
}

pub fn scale(path: &SystemPath) -> ScaledPath {
    ScaledPath {
        n: path.n,
        times: path.times().collect(),
        values: path.jumps.iter().map(|j| scale_state(&j.state)).collect(),
    }
}

/// Deterministic initial state with `⌊γ₁√N⌋` idle servers, `⌊γ₂√N⌋` servers
/// holding two tasks and everyone else holding one.
pub fn halfin_whitt_init(n: usize, gamma1: f64, gamma2: f64, cap: Capacity) -> Result<OccupancyVector> {
    if !(gamma1 >= 0.0 && gamma2 >= 0.0 && gamma1.is_finite() && gamma2.is_finite()) {
        return domain(format!("gammas must be finite and non-negative, got ({gamma1}, {gamma2})"));
    }
    let root = (n as f64).sqrt();
    let idle = (gamma1 * root).floor() as usize;
    let doubles = (gamma2 * root).floor() as usize;
    if idle + doubles > n {
        return domain(format!("{idle} idle plus {doubles} doubly loaded servers exceed N = {n}"));
    }
    OccupancyVector::new(n, cap, vec![n - idle, doubles])
}

/// Several systems advanced in lockstep by one event stream.
#[derive(Clone, Debug)]
pub struct CoupledRun {
    policies: Vec<PolicySpec>,
    states: Vec<OccupancyVector>,
    overflow: Vec<u64>,
    jumps: Vec<Vec<Jump>>,
    n: usize,
    last_time: f64,
}

impl CoupledRun {
    /// `init` holds one state per policy, or a single state shared by all
    /// (re-bounded to each policy's buffer size).
    pub fn new(policies: &[PolicySpec], init: &[OccupancyVector]) -> Result<Self> {
        let Some(first) = policies.first() else {
            return domain("at least one policy is required");
        };
        let n = first.n_servers();
        if let Some(p) = policies.iter().find(|p| p.n_servers() != n) {
            return domain(format!("policy {} has N = {}, expected {n}", p.name(), p.n_servers()));
        }
        let states = match init.len() {
            1 => policies.iter().map(|p| init[0].with_cap(p.cap())).collect::<Result<Vec<_>>>()?,
            len if len == policies.len() => policies
                .iter()
                .zip(init)
                .map(|(p, q)| q.with_cap(p.cap()))
                .collect::<Result<Vec<_>>>()?,
            len => return domain(format!("{len} initial states for {} policies", policies.len())),
        };
        if let Some(q) = states.iter().find(|q| q.n_servers() != n) {
            return domain(format!("initial state {q} has N = {}, expected {n}", q.n_servers()));
        }
        let jumps = states
            .iter()
            .map(|q| vec![Jump { time: 0.0, state: q.clone(), overflow: 0, event: EventRecord::Start }])
            .collect();
        Ok(Self {
            policies: policies.to_vec(),
            overflow: vec![0; states.len()],
            states,
            jumps,
            n,
            last_time: 0.0,
        })
    }

    pub fn states(&self) -> &[OccupancyVector] {
        &self.states
    }

    pub fn overflow(&self) -> &[u64] {
        &self.overflow
    }

    /// Applies one event to every system.
    pub fn apply(&mut self, event: CoupledEvent) -> Result<()> {
        if !(event.time > self.last_time || (event.time == 0.0 && self.last_time == 0.0)) {
            return domain(format!("event time {} does not advance past {}", event.time, self.last_time));
        }
        self.last_time = event.time;
        match event.kind {
            EventKind::Arrival { mut draw } => {
                if draw.n_servers() != self.n {
                    return domain(format!("permutation over {} servers, expected {}", draw.n_servers(), self.n));
                }
                for s in 0..self.states.len() {
                    let record = match dispatch(&self.policies[s], &self.states[s], &mut draw)? {
                        Dispatch::Discard => {
                            self.overflow[s] += 1;
                            EventRecord::Arrival { height: None, overflowed: true }
                        }
                        Dispatch::Stack(pos) => {
                            let height = self.states[s].index_of_stack(pos)?;
                            let placement = self.states[s].add_at(pos)?;
                            if placement == Placement::Overflow {
                                self.overflow[s] += 1;
                            }
                            EventRecord::Arrival { height: Some(height), overflowed: placement.overflowed() }
                        }
                    };
                    self.record(s, event.time, record);
                }
            }
            EventKind::PotentialDeparture { position } => {
                for s in 0..self.states.len() {
                    let level = self.states[s].remove_at(position)?;
                    self.record(s, event.time, EventRecord::Departure { position, level });
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, s: usize, time: f64, event: EventRecord) {
        self.jumps[s].push(Jump { time, state: self.states[s].clone(), overflow: self.overflow[s], event });
    }

    pub fn into_paths(self, beta: f64, stream: StreamTag) -> Vec<SystemPath> {
        let n = self.n;
        self.policies
            .into_iter()
            .zip(self.jumps)
            .map(|(policy, jumps)| SystemPath { policy, n, beta, stream, jumps })
            .collect()
    }
}

/// Runs all `policies` under one seeded event stream on `[0, horizon]`.
pub fn run_coupled(
    policies: &[PolicySpec],
    n: usize,
    beta: f64,
    horizon: f64,
    init: &[OccupancyVector],
    seed: u64,
) -> Result<Vec<SystemPath>> {
    let events = RandomEvents::new(n, beta, horizon, seed)?;
    let mut run = CoupledRun::new(policies, init)?;
    if run.n != n {
        return domain(format!("policies are for N = {}, run requested N = {n}", run.n));
    }
    for event in events {
        run.apply(event)?;
    }
    Ok(run.into_paths(beta, StreamTag::Seeded(seed)))
}

/// Runs all `policies` under an explicit event list.
pub fn run_scripted(
    policies: &[PolicySpec],
    init: &[OccupancyVector],
    events: impl IntoIterator<Item = CoupledEvent>,
    beta: f64,
    tag: u64,
) -> Result<Vec<SystemPath>> {
    let mut run = CoupledRun::new(policies, init)?;
    for event in events {
        run.apply(event)?;
    }
    Ok(run.into_paths(beta, StreamTag::Scripted(tag)))
}

/// Parses a line-delimited event script for `n` servers.
///
/// Each non-empty line not starting with `#` is either
/// `<time> A [σ1,σ2,…,σN]` or `<time> D <position>`. An arrival without an
/// explicit permutation uses the identity permutation, which sends every
/// policy to stack position 1.
pub fn parse_script(text: &str, n: usize) -> Result<Vec<CoupledEvent>> {
    let mut events = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::Parse(format!("script line {}: {why}: {raw:?}", lineno + 1));
        let mut fields = line.split_whitespace();
        let time = fields
            .next()
            .and_then(|t| f64::from_str(t).ok())
            .ok_or_else(|| bad("missing or invalid time"))?;
        let kind = match fields.next() {
            Some("A" | "a" | "arr") => {
                let perm = match fields.next() {
                    Some(list) => list
                        .split(',')
                        .map(|v| v.trim().parse::<usize>().map_err(|_| bad("invalid permutation entry")))
                        .collect::<Result<Vec<_>>>()?,
                    None => (1..=n).collect(),
                };
                if perm.len() != n {
                    return Err(bad("permutation length differs from N"));
                }
                EventKind::Arrival { draw: PermutationDraw::from_permutation(perm)? }
            }
            Some("D" | "d" | "dep") => {
                let position = fields
                    .next()
                    .and_then(|v| v.parse::<usize>().ok())
                    .filter(|&k| (1..=n).contains(&k))
                    .ok_or_else(|| bad("departure position must be in 1..=N"))?;
                EventKind::PotentialDeparture { position }
            }
            _ => return Err(bad("event kind must be A or D")),
        };
        if fields.next().is_some() {
            return Err(bad("trailing fields"));
        }
        events.push(CoupledEvent { time, kind });
    }
    Ok(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub epoch: usize,
    pub time: f64,
    pub detail: String,
}

/// Outcome of checking the three pathwise ordering claims on a coupled pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub hypothesis_holds: bool,
    pub initial_order_holds: bool,
    pub epochs: usize,
    /// (i) `Q_i^A ≤ Q_i^B` for every level.
    pub ordering: Option<Violation>,
    /// (ii) `ΣQ^A + L^A ≥ ΣQ^B + L^B`.
    pub totals: Option<Violation>,
    /// (iii) `L^A − L^B ≥ Σ_{i>b} Q_i^B`.
    pub overflow_gap: Option<Violation>,
}

impl Prop2Report {
    pub fn passed(&self) -> bool {
        self.ordering.is_none() && self.totals.is_none() && self.overflow_gap.is_none()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        [&self.ordering, &self.totals, &self.overflow_gap]
            .into_iter()
            .flatten()
            .min_by_key(|v| v.epoch)
    }
}

/// Checks (i)–(iii) at every epoch of a coupled pair. The hypothesis and the
/// time-zero ordering are reported, not enforced, so that inadmissible pairs
/// can still be probed.
pub fn check_prop2(a: &SystemPath, b: &SystemPath) -> Result<Prop2Report> {
    if !a.same_stream(b) {
        return domain("paths come from different event streams");
    }
    let hypothesis_holds = prop2_admissible(&a.policy, &b.policy);
    let a_cap = a.policy.cap().finite();
    let beyond = |q: &OccupancyVector| -> usize {
        match a_cap {
            Some(cap) => (cap + 1..=q.depth()).map(|i| q.level(i)).sum(),
            None => 0,
        }
    };
    let mut report = Prop2Report {
        hypothesis_holds,
        initial_order_holds: true,
        epochs: a.jumps.len(),
        ordering: None,
        totals: None,
        overflow_gap: None,
    };
    for (epoch, (ja, jb)) in a.jumps.iter().zip(&b.jumps).enumerate() {
        let ordered = dominates(&ja.state, &jb.state)?;
        let total_a = ja.state.total() as i64 + ja.overflow as i64;
        let total_b = jb.state.total() as i64 + jb.overflow as i64;
        let gap = ja.overflow as i64 - jb.overflow as i64;
        let excess = beyond(&jb.state) as i64;
        if epoch == 0 {
            report.initial_order_holds = ordered && total_a >= total_b && gap >= excess;
        }
        let v = |detail: String| Violation { epoch, time: ja.time, detail };
        if !ordered && report.ordering.is_none() {
            report.ordering = Some(v(format!("Q^A = {} not below Q^B = {}", ja.state, jb.state)));
        }
        if total_a < total_b && report.totals.is_none() {
            report.totals = Some(v(format!("sum Q^A + L^A = {total_a} < sum Q^B + L^B = {total_b}")));
        }
        if gap < excess && report.overflow_gap.is_none() {
            report.overflow_gap = Some(v(format!("L^A - L^B = {gap} < {excess} tasks above level b in B")));
        }
    }
    Ok(report)
}

/// Checks overflow bookkeeping epoch by epoch: `L` moves by exactly one at
/// arrivals flagged as overflowing and never otherwise; every overflow hits a
/// server at capacity (or a full system); and for an idle-first policy no
/// overflow happens while an idle server exists (`Q₁ < N`).
pub fn verify_overflow_accounting(path: &SystemPath) -> Option<Violation> {
    let cap = path.policy.cap();
    let idle_first = path.policy.in_idle_first_class();
    for (epoch, pair) in path.jumps.windows(2).enumerate() {
        let (before, after) = (&pair[0], &pair[1]);
        let v = |detail: String| Some(Violation { epoch: epoch + 1, time: after.time, detail });
        let step = after.overflow as i64 - before.overflow as i64;
        let flagged = matches!(after.event, EventRecord::Arrival { overflowed: true, .. });
        if step != i64::from(flagged) {
            return v(format!("overflow moved by {step}, event {:?}", after.event));
        }
        if !flagged {
            continue;
        }
        if idle_first && before.state.level(1) != path.n {
            return v(format!("overflow with an idle server present in {}", before.state));
        }
        let ok = match after.event {
            EventRecord::Arrival { height: Some(h), .. } => cap.is_reached_by(h),
            EventRecord::Arrival { height: None, .. } => before.state.is_full(),
            _ => false,
        };
        if !ok {
            return v(format!("overflow at event {:?} from {}", after.event, before.state));
        }
    }
    None
}
