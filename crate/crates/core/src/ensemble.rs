//! Stack calculus on occupancy vectors.
//!
//! Servers are pictured as stacks of tasks sorted by non-decreasing height,
//! so stack position `1` is (one of) the shortest queues and position `N` the
//! longest. The `i`-th horizontal bar of that picture has length `Q_i`, the
//! number of servers holding at least `i` tasks. Server identities are never
//! stored: a sorted ensemble is fully described by `(Q_1, …, Q_b)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Per-server buffer size `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Capacity {
    Finite(usize),
    Unbounded,
}

impl Capacity {
    pub fn finite(self) -> Option<usize> {
        match self {
            Capacity::Finite(b) => Some(b),
            Capacity::Unbounded => None,
        }
    }

    /// `true` when a queue of length `height` has no room left.
    pub fn is_reached_by(self, height: usize) -> bool {
        matches!(self, Capacity::Finite(b) if height >= b)
    }

    fn le(self, other: Capacity) -> bool {
        match (self, other) {
            (_, Capacity::Unbounded) => true,
            (Capacity::Unbounded, Capacity::Finite(_)) => false,
            (Capacity::Finite(a), Capacity::Finite(b)) => a <= b,
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Finite(b) => write!(f, "{b}"),
            Capacity::Unbounded => f.write_str("inf"),
        }
    }
}

/// Result of dropping one item onto a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// The item was accepted; `Q_level` was incremented.
    Added { level: usize },
    /// The target stack was already at capacity and the item was dropped.
    Overflow,
}

impl Placement {
    pub fn overflowed(self) -> bool {
        matches!(self, Placement::Overflow)
    }
}

/// The vector `Q = (Q_1, …, Q_b)` with `N ≥ Q_1 ≥ Q_2 ≥ … ≥ Q_b ≥ 0`.
///
/// For a finite buffer the stored vector has exactly `b` entries. For an
/// unbounded buffer it grows on demand and never carries trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OccupancyVector {
    n: usize,
    cap: Capacity,
    counts: Vec<usize>,
}

impl OccupancyVector {
    pub fn new(n: usize, cap: Capacity, counts: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return domain("number of servers must be positive");
        }
        let mut counts = counts;
        match cap {
            Capacity::Finite(b) => {
                if b < 2 {
                    return domain(format!("buffer size must be at least 2, got {b}"));
                }
                if counts.len() > b {
                    if counts[b..].iter().any(|&q| q != 0) {
                        return domain(format!(
                            "occupancy {counts:?} has non-zero levels beyond buffer size {b}"
                        ));
                    }
                    counts.truncate(b);
                }
                counts.resize(b, 0);
            }
            Capacity::Unbounded => {
                while counts.last() == Some(&0) {
                    counts.pop();
                }
            }
        }
        let mut prev = n;
        for (i, &q) in counts.iter().enumerate() {
            if q > prev {
                return domain(format!(
                    "chain invariant violated at level {}: {counts:?} with N = {n}",
                    i + 1
                ));
            }
            prev = q;
        }
        Ok(Self { n, cap, counts })
    }

    pub fn empty(n: usize, cap: Capacity) -> Result<Self> {
        Self::new(n, cap, Vec::new())
    }

    /// Builds the occupancy vector of an explicit list of queue lengths.
    pub fn from_queue_lengths(cap: Capacity, lengths: &[usize]) -> Result<Self> {
        let top = lengths.iter().copied().max().unwrap_or(0);
        if cap.finite().is_some_and(|b| top > b) {
            return domain(format!("queue length {top} exceeds buffer size {cap}"));
        }
        let counts = (1..=top)
            .map(|i| lengths.iter().filter(|&&h| h >= i).count())
            .collect();
        Self::new(lengths.len(), cap, counts)
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> Capacity {
        self.cap
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `Q_i` for 1-indexed `i`; zero past the stored levels.
    pub fn level(&self, i: usize) -> usize {
        if i == 0 {
            return self.n;
        }
        self.counts.get(i - 1).copied().unwrap_or(0)
    }

    /// Number of stored levels (equals `b` for finite buffers).
    pub fn depth(&self) -> usize {
        self.counts.len()
    }

    /// Total number of tasks in the system, `Σ Q_i`.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Same occupancy under a different buffer size.
    pub fn with_cap(&self, cap: Capacity) -> Result<Self> {
        Self::new(self.n, cap, self.counts.clone())
    }

    fn check_position(&self, c: usize) -> Result<()> {
        if c == 0 || c > self.n {
            return domain(format!("stack position {c} outside 1..={}", self.n));
        }
        Ok(())
    }

    /// `I(c) = max{i : Q_i ≥ N − c + 1}`, or 0 if no level qualifies: the
    /// height of the `c`-th stack in non-decreasing order.
    pub fn index_of_stack(&self, c: usize) -> Result<usize> {
        self.check_position(c)?;
        Ok(self.height_at(c))
    }

    #[inline]
    fn height_at(&self, c: usize) -> usize {
        let threshold = self.n + 1 - c;
        self.counts.partition_point(|&q| q >= threshold)
    }

    /// Height of the shortest stack, `#{i : Q_i = N}`.
    pub fn min_stack_height(&self) -> usize {
        self.counts.partition_point(|&q| q == self.n)
    }

    /// Every stack is at capacity.
    pub fn is_full(&self) -> bool {
        self.cap.is_reached_by(self.min_stack_height())
    }

    /// Removes the top item of stack `k`. Returns the decremented level, or
    /// `None` when that stack was empty.
    pub fn remove_at(&mut self, k: usize) -> Result<Option<usize>> {
        self.check_position(k)?;
        let level = self.height_at(k);
        if level == 0 {
            return Ok(None);
        }
        self.counts[level - 1] -= 1;
        if self.cap == Capacity::Unbounded {
            while self.counts.last() == Some(&0) {
                self.counts.pop();
            }
        }
        Ok(Some(level))
    }

    /// Puts an item on stack `l`; the item is dropped if that stack is full.
    pub fn add_at(&mut self, l: usize) -> Result<Placement> {
        self.check_position(l)?;
        let height = self.height_at(l);
        if self.cap.is_reached_by(height) {
            return Ok(Placement::Overflow);
        }
        if height == self.counts.len() {
            // only reachable for unbounded buffers
            self.counts.push(0);
        }
        self.counts[height] += 1;
        Ok(Placement::Added { level: height + 1 })
    }

    /// Value-returning form of [`remove_at`](Self::remove_at).
    pub fn removed(&self, k: usize) -> Result<Self> {
        let mut next = self.clone();
        next.remove_at(k)?;
        Ok(next)
    }

    /// Value-returning form of [`add_at`](Self::add_at); the flag reports an
    /// overflow.
    pub fn added(&self, l: usize) -> Result<(Self, bool)> {
        let mut next = self.clone();
        let placement = next.add_at(l)?;
        Ok((next, placement.overflowed()))
    }
}

impl fmt::Display for OccupancyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, q) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{q}")?;
        }
        f.write_str(")")
    }
}

/// `true` iff `Q_i^A ≤ Q_i^B` for every level, missing levels read as zero.
pub fn dominates(a: &OccupancyVector, b: &OccupancyVector) -> Result<bool> {
    if a.n != b.n {
        return domain(format!("server counts differ: {} vs {}", a.n, b.n));
    }
    let depth = a.depth().max(b.depth());
    Ok((1..=depth).all(|i| a.level(i) <= b.level(i)))
}

/// Stack positions used by one step of the coupled rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleParams {
    /// Removal target.
    pub k: usize,
    /// Addition target while the minimum height is below `b − 1`.
    pub l: usize,
    /// Ensemble A's addition target at minimum height `b − 1` or more.
    pub l_a: usize,
    /// Ensemble B's addition target at minimum height `b − 1` or more.
    pub l_b: usize,
}

impl RuleParams {
    pub fn new(k: usize, l: usize, l_a: usize, l_b: usize) -> Self {
        Self { k, l, l_a, l_b }
    }

    /// `l_A ≥ l_B` and (`l = 1` or `l ≥ l_B`): the condition under which a
    /// step is guaranteed to preserve component-wise ordering.
    pub fn is_admissible(&self) -> bool {
        self.l_a >= self.l_b && (self.l == 1 || self.l >= self.l_b)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("k", self.k), ("l", self.l), ("l_A", self.l_a), ("l_B", self.l_b)] {
            if v == 0 || v > n {
                return domain(format!("{name} = {v} outside 1..={n}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    /// Synchronized removal from stack `k` in both ensembles.
    Removal,
    /// Removal from stack `k` in A only; B is left untouched.
    RemovalAOnly,
    Addition,
}

/// Applies one step of the coupled rule to the pair `(A, B)`.
///
/// A has buffer `b`, B has buffer `b' ≥ b`. On addition, A targets `l` while
/// its minimum height is below `b − 1` and `l_A` otherwise; B targets `l`
/// while its minimum height is below `b − 1` and `l_B` otherwise (this
/// includes the case where B's minimum height is already `b` or more).
/// Admissibility of `params` is not enforced here.
pub fn apply_rule(
    a: &OccupancyVector,
    b: &OccupancyVector,
    step: Step,
    params: RuleParams,
) -> Result<(OccupancyVector, OccupancyVector)> {
    if a.n != b.n {
        return domain(format!("server counts differ: {} vs {}", a.n, b.n));
    }
    if !a.cap.le(b.cap) {
        return domain(format!("ensemble A buffer {} exceeds ensemble B buffer {}", a.cap, b.cap));
    }
    params.validate(a.n)?;
    let mut next_a = a.clone();
    let mut next_b = b.clone();
    match step {
        Step::Removal => {
            next_a.remove_at(params.k)?;
            next_b.remove_at(params.k)?;
        }
        Step::RemovalAOnly => {
            next_a.remove_at(params.k)?;
        }
        Step::Addition => {
            // `b − 1` for A's buffer; an unbounded A never switches targets.
            let switch = a.cap.finite().map(|cap| cap - 1);
            let below = |h: usize| switch.is_none_or(|s| h < s);
            let target_a = if below(a.min_stack_height()) { params.l } else { params.l_a };
            let target_b = if below(b.min_stack_height()) { params.l } else { params.l_b };
            next_a.add_at(target_a)?;
            next_b.add_at(target_b)?;
        }
    }
    Ok((next_a, next_b))
}
