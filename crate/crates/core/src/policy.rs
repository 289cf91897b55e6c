//! Selection-size policies `Π(d₀, …, d_{b−1})` and the shared permutation
//! draw that couples their dispatch decisions.
//!
//! When the shortest queue in the system has length `k`, the dispatcher
//! samples `d_k` servers uniformly without replacement and joins the
//! shortest of them. With servers sorted by queue length that is the same as
//! joining stack position `σ₍d_k₎ = min(σ₁, …, σ_{d_k})` for a uniform random
//! permutation `σ`. Reusing one `σ` across systems couples them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Capacity, OccupancyVector};
use crate::error::{domain, Error, Result};

/// Buffer size used by the `jsq`/`jiq` descriptors when none is given.
pub const DEFAULT_CAP: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    name: String,
    n: usize,
    sizes: Vec<usize>,
    cap: Capacity,
}

impl PolicySpec {
    /// `sizes` holds `(d₀, …, d_{b−1})` for a finite buffer. For an unbounded
    /// buffer its last entry is applied to every level at or beyond its index.
    pub fn new(name: impl Into<String>, n: usize, sizes: Vec<usize>, cap: Capacity) -> Result<Self> {
        if n == 0 {
            return domain("number of servers must be positive");
        }
        match cap {
            Capacity::Finite(b) if b < 2 => {
                return domain(format!("buffer size must be at least 2, got {b}"));
            }
            Capacity::Finite(b) if sizes.len() != b => {
                return domain(format!(
                    "{} selection sizes given for buffer size {b}",
                    sizes.len()
                ));
            }
            Capacity::Unbounded if sizes.is_empty() => {
                return domain("at least one selection size is required");
            }
            _ => {}
        }
        if let Some(&d) = sizes.iter().find(|&&d| d == 0 || d > n) {
            return domain(format!("selection size {d} outside 1..={n}"));
        }
        Ok(Self { name: name.into(), n, sizes, cap })
    }

    /// `Π(d₀, …, d_{b−1})` with `b` equal to the number of sizes.
    pub fn pi(n: usize, sizes: Vec<usize>) -> Result<Self> {
        let name = format!(
            "pi:{}",
            sizes.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        );
        let b = sizes.len();
        Self::new(name, n, sizes, Capacity::Finite(b))
    }

    /// Join-the-shortest-queue: every `d_k = N`.
    pub fn jsq(n: usize, cap: Capacity) -> Result<Self> {
        Self::new("jsq", n, uniform_sizes(n, cap), cap)
    }

    /// Join-the-idle-queue: an idle server if any, otherwise a uniformly
    /// random one.
    pub fn jiq(n: usize, cap: Capacity) -> Result<Self> {
        let mut sizes = uniform_sizes(1, cap);
        sizes[0] = n;
        Self::new("jiq", n, sizes, cap)
    }

    /// An idle server if any, otherwise the shortest of `d` sampled servers.
    pub fn jiq_d(n: usize, d: usize, cap: Capacity) -> Result<Self> {
        let mut sizes = uniform_sizes(d, cap);
        sizes[0] = n;
        Self::new(format!("jiq:{d}"), n, sizes, cap)
    }

    /// Plain power-of-`d`: shortest of `d` sampled servers at every level.
    /// Outside the idle-first class unless `d = N`.
    pub fn jsq_d(n: usize, d: usize, cap: Capacity) -> Result<Self> {
        Self::new(format!("jsq:{d}"), n, uniform_sizes(d, cap), cap)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> Capacity {
        self.cap
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `d_k`, the number of servers sampled when the shortest queue has
    /// length `k`.
    pub fn selection_size(&self, k: usize) -> usize {
        self.sizes[k.min(self.sizes.len() - 1)]
    }

    /// Member of the idle-first class (`d₀ = N`).
    pub fn in_idle_first_class(&self) -> bool {
        self.sizes[0] == self.n
    }

    pub fn empty_state(&self) -> OccupancyVector {
        OccupancyVector::empty(self.n, self.cap).expect("validated policy")
    }
}

fn uniform_sizes(d: usize, cap: Capacity) -> Vec<usize> {
    match cap {
        Capacity::Finite(b) => vec![d; b.max(1)],
        Capacity::Unbounded => vec![d, d],
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[N={}, d={:?}, b={}]", self.name, self.n, self.sizes, self.cap)
    }
}

/// One uniform random permutation of `{1, …, N}`, revealed lazily.
///
/// Only the prefix actually queried is sampled (sparse Fisher–Yates), and
/// `σ₍N₎ = 1` is answered without sampling. Queries in any order see the same
/// underlying permutation.
#[derive(Clone, Debug)]
pub struct PermutationDraw {
    n: usize,
    source: Source,
    prefix: Vec<usize>,
    minima: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Source {
    Explicit(Vec<usize>),
    Lazy { rng: ChaCha8Rng, swaps: HashMap<usize, usize> },
}

impl PermutationDraw {
    pub fn lazy(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            n,
            source: Source::Lazy { rng, swaps: HashMap::new() },
            prefix: Vec::new(),
            minima: Vec::new(),
        }
    }

    /// A draw fixed to the given permutation (values `1..=N`).
    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n + 1];
        for &v in &perm {
            if v == 0 || v > n || seen[v] {
                return domain(format!("{perm:?} is not a permutation of 1..={n}"));
            }
            seen[v] = true;
        }
        if n == 0 {
            return domain("empty permutation");
        }
        Ok(Self { n, source: Source::Explicit(perm), prefix: Vec::new(), minima: Vec::new() })
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    /// Number of permutation entries sampled so far.
    pub fn revealed(&self) -> usize {
        self.prefix.len()
    }

    /// `σ₍m₎ = min(σ₁, …, σ_m)`.
    pub fn prefix_min(&mut self, m: usize) -> Result<usize> {
        if m == 0 || m > self.n {
            return domain(format!("prefix length {m} outside 1..={}", self.n));
        }
        if m == self.n {
            return Ok(1);
        }
        while self.prefix.len() < m {
            self.extend();
        }
        Ok(self.minima[m - 1])
    }

    fn extend(&mut self) {
        let j = self.prefix.len();
        let value = match &mut self.source {
            Source::Explicit(perm) => perm[j],
            Source::Lazy { rng, swaps } => {
                let r = rng.random_range(j..self.n);
                let picked = swaps.get(&r).copied().unwrap_or(r);
                let displaced = swaps.get(&j).copied().unwrap_or(j);
                swaps.insert(r, displaced);
                picked + 1
            }
        };
        let min = self.minima.last().map_or(value, |&m| m.min(value));
        self.prefix.push(value);
        self.minima.push(min);
    }

    /// The sampled prefix `(σ₁, …, σ_len)`.
    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }
}

/// Outcome of dispatching one arrival.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dispatch {
    /// Join the stack at this sorted position.
    Stack(usize),
    /// Every queue is full; the task is discarded.
    Discard,
}

/// Chooses the target stack for one arrival.
pub fn dispatch(policy: &PolicySpec, q: &OccupancyVector, draw: &mut PermutationDraw) -> Result<Dispatch> {
    if q.n_servers() != policy.n || draw.n_servers() != policy.n {
        return domain(format!(
            "policy for N = {} applied to state with N = {} and draw with N = {}",
            policy.n,
            q.n_servers(),
            draw.n_servers()
        ));
    }
    let k = q.min_stack_height();
    if policy.cap.is_reached_by(k) {
        return Ok(Dispatch::Discard);
    }
    Ok(Dispatch::Stack(draw.prefix_min(policy.selection_size(k))?))
}

/// Whether the pair `(A, B)` satisfies the hypothesis of the coupled
/// stochastic ordering: `b ≤ b'`, `l₀ = … = l_{b−2} = d₀ = … = d_{b−2} = d`,
/// `l_{b−1} ≤ d_{b−1}`, and `d = N` or `d ≤ d_{b−1}`.
pub fn prop2_admissible(a: &PolicySpec, b: &PolicySpec) -> bool {
    if a.n != b.n {
        return false;
    }
    let n = a.n;
    let Some(cap_a) = a.cap.finite() else {
        // b = ∞ on both sides: the hypothesis reduces to identical sizes.
        let depth = a.sizes.len().max(b.sizes.len());
        return b.cap == Capacity::Unbounded
            && (0..depth).all(|k| a.selection_size(k) == b.selection_size(k));
    };
    if b.cap.finite().is_some_and(|cap_b| cap_b < cap_a) {
        return false;
    }
    let d = a.selection_size(0);
    let common = (0..cap_a - 1).all(|k| a.selection_size(k) == d && b.selection_size(k) == d);
    let top_a = a.selection_size(cap_a - 1);
    let top_b = b.selection_size(cap_a - 1);
    common && top_a <= top_b && (d == n || d <= top_b)
}

/// One entry of a `pi:` descriptor: a literal size or the symbol `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeTerm {
    All,
    Fixed(usize),
}

impl SizeTerm {
    fn resolve(self, n: usize) -> usize {
        match self {
            SizeTerm::All => n,
            SizeTerm::Fixed(d) => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    Jsq,
    Jiq,
    JiqD(usize),
    JsqD(usize),
    Pi(Vec<SizeTerm>),
}

/// A policy described independently of `N`, as written on the command line:
/// `jsq`, `jiq`, `jiq:<d>`, `jsq:<d>`, or `pi:<d0>,<d1>,…`, each optionally
/// followed by `:cap=<b>` or `:cap=inf`. In `pi:` lists the symbol `N` stands
/// for the number of servers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    pub cap: Option<Capacity>,
}

impl PolicyDescriptor {
    pub fn instantiate(&self, n: usize) -> Result<PolicySpec> {
        let default_cap = Capacity::Finite(DEFAULT_CAP);
        let label = self.to_string();
        let spec = match &self.kind {
            PolicyKind::Jsq => PolicySpec::jsq(n, self.cap.unwrap_or(default_cap))?,
            PolicyKind::Jiq => PolicySpec::jiq(n, self.cap.unwrap_or(default_cap))?,
            PolicyKind::JiqD(d) => PolicySpec::jiq_d(n, *d, self.cap.unwrap_or(default_cap))?,
            PolicyKind::JsqD(d) => PolicySpec::jsq_d(n, *d, self.cap.unwrap_or(default_cap))?,
            PolicyKind::Pi(terms) => {
                let mut sizes: Vec<usize> = terms.iter().map(|t| t.resolve(n)).collect();
                let cap = self.cap.unwrap_or(Capacity::Finite(sizes.len()));
                if let Capacity::Finite(b) = cap {
                    if sizes.len() > b {
                        return domain(format!("{} selection sizes for buffer size {b}", sizes.len()));
                    }
                    let last = *sizes.last().expect("parser guarantees one entry");
                    sizes.resize(b, last);
                }
                PolicySpec::new(label.clone(), n, sizes, cap)?
            }
        };
        Ok(PolicySpec { name: label, ..spec })
    }
}

impl FromStr for PolicyDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Parse(format!("policy descriptor {s:?}: {why}"));
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default().to_ascii_lowercase();
        let mut arg = None;
        let mut cap = None;
        for part in parts {
            if let Some(value) = part.strip_prefix("cap=") {
                if cap.is_some() {
                    return Err(bad("cap given twice"));
                }
                cap = Some(match value {
                    "inf" => Capacity::Unbounded,
                    v => Capacity::Finite(v.parse().map_err(|_| bad("cap must be an integer or inf"))?),
                });
            } else if arg.is_none() && cap.is_none() {
                arg = Some(part);
            } else {
                return Err(bad("unexpected segment"));
            }
        }
        let int = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(d) if d > 0 => Ok(d),
                _ => Err(bad("selection size must be a positive integer")),
            }
        };
        let kind = match (head.as_str(), arg) {
            ("jsq", None) => PolicyKind::Jsq,
            ("jsq", Some(d)) => PolicyKind::JsqD(int(d)?),
            ("jiq", None) => PolicyKind::Jiq,
            ("jiq", Some(d)) => PolicyKind::JiqD(int(d)?),
            ("pi", Some(list)) if !list.trim().is_empty() => {
                let terms = list
                    .split(',')
                    .map(|t| match t.trim() {
                        "N" | "n" => Ok(SizeTerm::All),
                        v => int(v).map(SizeTerm::Fixed),
                    })
                    .collect::<Result<Vec<_>>>()?;
                PolicyKind::Pi(terms)
            }
            ("pi", _) => return Err(bad("missing selection sizes")),
            _ => return Err(bad("unknown policy")),
        };
        Ok(Self { kind, cap })
    }
}

impl fmt::Display for PolicyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PolicyKind::Jsq => f.write_str("jsq")?,
            PolicyKind::Jiq => f.write_str("jiq")?,
            PolicyKind::JiqD(d) => write!(f, "jiq:{d}")?,
            PolicyKind::JsqD(d) => write!(f, "jsq:{d}")?,
            PolicyKind::Pi(terms) => {
                f.write_str("pi:")?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match t {
                        SizeTerm::All => f.write_str("N")?,
                        SizeTerm::Fixed(d) => write!(f, "{d}")?,
                    }
                }
            }
        }
        if let Some(cap) = self.cap {
            write!(f, ":cap={cap}")?;
        }
        Ok(())
    }
}
