//! Independent reference implementations used across integration tests.
//! Nothing here calls into the stack calculus it is checking.
#![allow(dead_code)]

use balance_core::ensemble::{Capacity, OccupancyVector};

/// Queue lengths sorted non-decreasingly, rebuilt from level counts.
pub fn sorted_lengths(q: &OccupancyVector) -> Vec<usize> {
    let n = q.n_servers();
    let counts = q.counts();
    let mut out = Vec::with_capacity(n);
    let mut prev = n;
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i, prev - c));
        prev = c;
    }
    out.extend(std::iter::repeat_n(counts.len(), prev));
    out
}

pub fn from_lengths(cap: Capacity, lengths: &[usize]) -> Vec<usize> {
    let depth = match cap {
        Capacity::Finite(b) => b,
        Capacity::Unbounded => lengths.iter().copied().max().unwrap_or(0),
    };
    (1..=depth).map(|i| lengths.iter().filter(|&&h| h >= i).count()).collect()
}

pub fn brute_remove(lengths: &[usize], k: usize) -> Vec<usize> {
    let mut v = lengths.to_vec();
    if v[k - 1] > 0 {
        v[k - 1] -= 1;
    }
    v.sort_unstable();
    v
}

/// Returns the new lengths and whether the task was dropped.
pub fn brute_add(lengths: &[usize], l: usize, cap: Capacity) -> (Vec<usize>, bool) {
    let mut v = lengths.to_vec();
    if let Capacity::Finite(b) = cap {
        if v[l - 1] >= b {
            return (v, true);
        }
    }
    v[l - 1] += 1;
    v.sort_unstable();
    (v, false)
}

/// Every non-decreasing length vector of `n` servers with entries in `0..=cap`.
pub fn all_length_vectors(n: usize, cap: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, cap: usize, lo: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for h in lo..=cap {
            cur.push(h);
            go(n, cap, h, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, cap, 0, &mut Vec::new(), &mut out);
    out
}

pub fn all_states(n: usize, cap: usize) -> Vec<OccupancyVector> {
    all_length_vectors(n, cap)
        .into_iter()
        .map(|l| {
            OccupancyVector::new(n, Capacity::Finite(cap), from_lengths(Capacity::Finite(cap), &l)).unwrap()
        })
        .collect()
}

/// Zero-padded component-wise `a ≤ b`, computed from the length lists.
pub fn brute_dominates(a: &OccupancyVector, b: &OccupancyVector) -> bool {
    let (la, lb) = (sorted_lengths(a), sorted_lengths(b));
    let depth = la.iter().chain(&lb).copied().max().unwrap_or(0);
    (1..=depth).all(|i| la.iter().filter(|&&h| h >= i).count() <= lb.iter().filter(|&&h| h >= i).count())
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

pub mod prop1 {
    use balance_core::ensemble::{apply_rule, dominates, Capacity, OccupancyVector, RuleParams, Step};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{all_states, from_lengths};

    #[derive(Debug, Default)]
    pub struct Tally {
        pub checked: u64,
        pub violations: Vec<String>,
    }

    fn check(tally: &mut Tally, a: &OccupancyVector, b: &OccupancyVector, step: Step, p: RuleParams) {
        let (a2, b2) = apply_rule(a, b, step, p).unwrap();
        tally.checked += 1;
        if !super::brute_dominates(&a2, &b2) || !dominates(&a2, &b2).unwrap() {
            tally.violations.push(format!("{a} <= {b}, {step:?} {p:?} -> {a2} vs {b2}"));
        }
    }

    /// Every dominated pair with `N ≤ max_n`, `2 ≤ b ≤ max_b`, `b ≤ b' ≤ max_b2`,
    /// both step types and every admissible parameter tuple.
    pub fn exhaustive(max_n: usize, max_b: usize, max_b2: usize) -> Tally {
        let mut tally = Tally::default();
        for n in 1..=max_n {
            for b in 2..=max_b {
                for b2 in b..=max_b2 {
                    let states_a = all_states(n, b);
                    let states_b = all_states(n, b2);
                    for a in &states_a {
                        for bb in states_b.iter().filter(|bb| super::brute_dominates(a, bb)) {
                            for k in 1..=n {
                                let p = RuleParams::new(k, 1, 1, 1);
                                check(&mut tally, a, bb, Step::Removal, p);
                            }
                            for l in 1..=n {
                                for l_a in 1..=n {
                                    for l_b in 1..=n {
                                        let p = RuleParams::new(1, l, l_a, l_b);
                                        if p.is_admissible() {
                                            check(&mut tally, a, bb, Step::Addition, p);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        tally
    }

    /// Random pair `A ≤ B` built from pointwise-dominated sorted length lists.
    pub fn random_pair(rng: &mut ChaCha8Rng, n: usize, b: usize, b2: usize) -> (OccupancyVector, OccupancyVector) {
        let mut lb: Vec<usize> = (0..n).map(|_| rng.random_range(0..=b2)).collect();
        lb.sort_unstable();
        let mut la: Vec<usize> = lb.iter().map(|&h| rng.random_range(0..=h.min(b))).collect();
        la.sort_unstable();
        let a = OccupancyVector::new(n, Capacity::Finite(b), from_lengths(Capacity::Finite(b), &la)).unwrap();
        let bb = OccupancyVector::new(n, Capacity::Finite(b2), from_lengths(Capacity::Finite(b2), &lb)).unwrap();
        (a, bb)
    }

    fn random_params(rng: &mut ChaCha8Rng, n: usize) -> RuleParams {
        RuleParams::new(
            rng.random_range(1..=n),
            rng.random_range(1..=n),
            rng.random_range(1..=n),
            rng.random_range(1..=n),
        )
    }

    /// Admissible random steps at `N = n` with `b ≤ max_b` and `b' ≤ max_b`.
    pub fn fuzz(trials: u64, n: usize, max_b: usize, seed: u64) -> Tally {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tally = Tally::default();
        while tally.checked < trials {
            let b = rng.random_range(2..=max_b);
            let b2 = rng.random_range(b..=max_b);
            let (a, bb) = random_pair(&mut rng, n, b, b2);
            let p = random_params(&mut rng, n);
            if !p.is_admissible() {
                continue;
            }
            let step = if rng.random_bool(0.5) { Step::Addition } else { Step::Removal };
            check(&mut tally, &a, &bb, step, p);
        }
        tally
    }

    /// Inadmissible additions at random `N ≤ max_n`; returns the violations found.
    pub fn inadmissible_search(trials: u64, max_n: usize, seed: u64) -> Tally {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tally = Tally::default();
        while tally.checked < trials {
            let n = rng.random_range(2..=max_n);
            let b = rng.random_range(2..=3);
            let b2 = rng.random_range(b..=4);
            let (a, bb) = random_pair(&mut rng, n, b, b2);
            let p = random_params(&mut rng, n);
            if p.is_admissible() {
                continue;
            }
            check(&mut tally, &a, &bb, Step::Addition, p);
        }
        tally
    }
}

pub mod closed_form {
    /// Noise-free solution from `(0, 0)`: never reflects.
    pub fn from_origin(beta: f64, t: f64) -> (f64, f64, f64) {
        (-beta * (1.0 - (-t).exp()), 0.0, 0.0)
    }

    /// Noise-free solution from `(0, 2)` with `β = 1`: pinned at zero while
    /// `x₂ = 2 − t > 1`, then free.
    pub fn from_zero_two(t: f64) -> (f64, f64, f64) {
        if t <= 1.0 {
            (0.0, 2.0 - t, t - t * t / 2.0)
        } else {
            let s = t - 1.0;
            ((1.0 + s) * (-s).exp() - 1.0, (-s).exp(), 0.5)
        }
    }

    /// Largest deviation in `x₁`, `x₂` and `U₁` along a path.
    pub fn max_error(path: &balance_core::diffusion::DiffusionPath, exact: impl Fn(f64) -> (f64, f64, f64)) -> f64 {
        path.states
            .iter()
            .map(|s| {
                let (x1, x2, u1) = exact(s.t);
                (s.x1 - x1).abs().max((s.x2 - x2).abs()).max((s.u1 - u1).abs())
            })
            .fold(0.0, f64::max)
    }
}
