//! Randomized search over coupled rule steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{apply_rule, dominates, Capacity, OccupancyVector, RuleParams, Step};
use crate::error::{domain, Result};
use crate::seed::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub trials: u64,
    pub n: usize,
    /// Largest buffer for either ensemble (at least 2).
    pub max_cap: usize,
    /// Largest `N` for the inadmissible search.
    pub search_n: usize,
    pub search_trials: u64,
    pub seed: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self { trials: 100_000, n: 10, max_cap: 5, search_n: 6, search_trials: 100_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub cap_a: usize,
    pub cap_b: usize,
    pub step: Step,
    pub params: RuleParams,
    pub a_next: Vec<usize>,
    pub b_next: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub trials: u64,
    pub violations: Vec<Counterexample>,
    pub search_trials: u64,
    pub search_hits: u64,
    /// First few counterexamples from the inadmissible search.
    pub search_examples: Vec<Counterexample>,
}

impl FuzzReport {
    /// No admissible violation and a non-vacuous inadmissible search.
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.search_hits > 0
    }
}

/// Random pair `A ≤ B`: sorted lengths of B, then A pointwise below B.
pub fn random_pair<R: Rng>(rng: &mut R, n: usize, cap_a: usize, cap_b: usize) -> Result<(OccupancyVector, OccupancyVector)> {
    let mut lb: Vec<usize> = (0..n).map(|_| rng.random_range(0..=cap_b)).collect();
    lb.sort_unstable();
    let mut la: Vec<usize> = lb.iter().map(|&h| rng.random_range(0..=h.min(cap_a))).collect();
    la.sort_unstable();
    Ok((
        OccupancyVector::from_queue_lengths(Capacity::Finite(cap_a), &la)?,
        OccupancyVector::from_queue_lengths(Capacity::Finite(cap_b), &lb)?,
    ))
}

fn random_params<R: Rng>(rng: &mut R, n: usize) -> RuleParams {
    RuleParams::new(rng.random_range(1..=n), rng.random_range(1..=n), rng.random_range(1..=n), rng.random_range(1..=n))
}

fn probe(a: &OccupancyVector, b: &OccupancyVector, step: Step, params: RuleParams) -> Result<Option<Counterexample>> {
    let (a2, b2) = apply_rule(a, b, step, params)?;
    if dominates(&a2, &b2)? {
        return Ok(None);
    }
    Ok(Some(Counterexample {
        a: a.counts().to_vec(),
        b: b.counts().to_vec(),
        cap_a: a.cap().finite().unwrap_or(0),
        cap_b: b.cap().finite().unwrap_or(0),
        step,
        params,
        a_next: a2.counts().to_vec(),
        b_next: b2.counts().to_vec(),
    }))
}

/// Admissible steps must preserve ordering; inadmissible additions are
/// searched for a counterexample.
pub fn run(config: &FuzzConfig) -> Result<FuzzReport> {
    if config.n == 0 || config.search_n < 2 || config.max_cap < 2 {
        return domain("fuzzing needs n >= 1, search_n >= 2 and max_cap >= 2");
    }
    let tree = SeedTree::new(config.seed);
    let mut rng = tree.rng("rule-fuzz", 0);
    let mut violations = Vec::new();
    let mut done = 0;
    while done < config.trials {
        let cap_a = rng.random_range(2..=config.max_cap);
        let cap_b = rng.random_range(cap_a..=config.max_cap);
        let (a, b) = random_pair(&mut rng, config.n, cap_a, cap_b)?;
        let params = random_params(&mut rng, config.n);
        if !params.is_admissible() {
            continue;
        }
        let step = if rng.random_bool(0.5) { Step::Addition } else { Step::Removal };
        violations.extend(probe(&a, &b, step, params)?);
        done += 1;
    }

    let mut rng = tree.rng("rule-search", 0);
    let mut search_hits = 0;
    let mut search_examples = Vec::new();
    let mut done = 0;
    while done < config.search_trials {
        let n = rng.random_range(2..=config.search_n);
        let cap_a = rng.random_range(2..=config.max_cap.min(3));
        let cap_b = rng.random_range(cap_a..=config.max_cap.min(4).max(cap_a));
        let (a, b) = random_pair(&mut rng, n, cap_a, cap_b)?;
        let params = random_params(&mut rng, n);
        if params.is_admissible() {
            continue;
        }
        if let Some(c) = probe(&a, &b, Step::Addition, params)? {
            search_hits += 1;
            if search_examples.len() < 5 {
                search_examples.push(c);
            }
        }
        done += 1;
    }
    Ok(FuzzReport { trials: config.trials, violations, search_trials: config.search_trials, search_hits, search_examples })
}
