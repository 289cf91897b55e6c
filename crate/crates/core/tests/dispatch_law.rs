mod common;

use balance_core::ensemble::{Capacity, OccupancyVector};
use balance_core::policy::{dispatch, Dispatch, PermutationDraw, PolicySpec};
use balance_core::seed::SeedTree;
use common::binomial;
use itertools::Itertools;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    (1..=n).permutations(n).collect()
}

/// Pearson statistic and its upper-tail p-value. Cells with zero expectation
/// must be empty.
fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    for (&o, &e) in observed.iter().zip(expected) {
        assert!(e > 0.0 || o == 0, "observed {o} in an impossible cell");
    }
    let cells: Vec<(f64, f64)> = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o as f64, e))
        .collect();
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    if cells.len() < 2 {
        return (stat, 1.0);
    }
    let df = (cells.len() - 1) as f64;
    (stat, 1.0 - ChiSquared::new(df).unwrap().cdf(stat))
}

#[test]
fn prefix_min_over_all_permutations() {
    let (n, m) = (4, 2);
    let perms = permutations(n);
    assert_eq!(perms.len(), 24);
    let mut counts = vec![0u64; n + 1];
    for p in &perms {
        let mut draw = PermutationDraw::from_permutation(p.clone()).unwrap();
        let v = draw.prefix_min(m).unwrap();
        assert_eq!(v, p[0].min(p[1]));
        counts[v] += 1;
    }
    // P(min ≥ j) = C(N−j+1, m) / C(N, m)
    for j in 1..=n {
        let tail: u64 = counts[j..].iter().sum();
        let exact = binomial(n - j + 1, m) / binomial(n, m);
        assert!((tail as f64 / 24.0 - exact).abs() < 1e-12);
    }
    assert_eq!(counts, [0, 12, 8, 4, 0]);

    let tree = SeedTree::new(5);
    let draws = 120_000;
    let mut lazy = vec![0u64; n + 1];
    for i in 0..draws {
        lazy[PermutationDraw::lazy(n, tree.rng("prefix-min", i)).prefix_min(m).unwrap()] += 1;
    }
    let expected: Vec<f64> = counts.iter().map(|&c| c as f64 / 24.0 * draws as f64).collect();
    let (_, p) = chi_square(&lazy[1..], &expected[1..]);
    assert!(p > 0.01, "p = {p}, counts {lazy:?}");
}

#[test]
fn prefix_minima_are_monotone() {
    let tree = SeedTree::new(8);
    for i in 0..500 {
        let n = 1 + (i as usize % 9);
        let mut draw = PermutationDraw::lazy(n, tree.rng("monotone", i));
        let mins: Vec<usize> = (1..=n).map(|m| draw.prefix_min(m).unwrap()).collect();
        assert!(mins.windows(2).all(|w| w[0] >= w[1]), "{mins:?}");
        assert_eq!(mins[n - 1], 1);
        let mut prefix = draw.prefix().to_vec();
        prefix.sort_unstable();
        prefix.dedup();
        assert_eq!(prefix.len(), draw.prefix().len());
    }
}

#[test]
fn full_sample_needs_no_randomness() {
    let mut draw = PermutationDraw::lazy(6, SeedTree::new(1).rng("x", 0));
    assert_eq!(draw.prefix_min(6).unwrap(), 1);
    assert_eq!(draw.revealed(), 0);
}

fn q(n: usize, cap: usize, counts: &[usize]) -> OccupancyVector {
    OccupancyVector::new(n, Capacity::Finite(cap), counts.to_vec()).unwrap()
}

#[test]
fn dispatched_level_follows_the_hypergeometric_law() {
    let tree = SeedTree::new(21);
    let cases = [
        (PolicySpec::pi(8, vec![8, 3, 2]).unwrap(), q(8, 3, &[8, 5, 2])),
        (PolicySpec::pi(8, vec![8, 2, 3]).unwrap(), q(8, 3, &[8, 8, 3])),
        (PolicySpec::jiq(6, Capacity::Finite(3)).unwrap(), q(6, 3, &[6, 4, 1])),
        (PolicySpec::jiq_d(7, 4, Capacity::Finite(4)).unwrap(), q(7, 4, &[7, 6, 3, 1])),
        (PolicySpec::pi(5, vec![5, 5]).unwrap(), q(5, 2, &[5, 2])),
    ];
    let draws = 100_000u64;
    for (case, (policy, state)) in cases.iter().enumerate() {
        let n = state.n_servers();
        let cap = state.cap().finite().unwrap();
        let k = state.min_stack_height();
        let d = policy.selection_size(k);
        let mut observed = vec![0u64; cap + 1];
        for i in 0..draws {
            let mut draw = PermutationDraw::lazy(n, tree.rng("dispatch", case as u64 * draws + i));
            match dispatch(policy, state, &mut draw).unwrap() {
                Dispatch::Stack(pos) => observed[state.index_of_stack(pos).unwrap()] += 1,
                Dispatch::Discard => panic!("state {state} is not full"),
            }
        }
        // P(level ≥ i) = C(Q_i, d) / C(N, d), with Q_0 = N.
        let tail = |i: usize| if i > cap { 0.0 } else { binomial(state.level(i), d) / binomial(n, d) };
        let expected: Vec<f64> = (0..=cap).map(|i| (tail(i) - tail(i + 1)) * draws as f64).collect();
        let (stat, p) = chi_square(&observed, &expected);
        assert!(p > 0.01, "case {case}: chi2 = {stat}, p = {p}, {observed:?} vs {expected:?}");
    }
}

#[test]
fn idle_first_never_picks_a_busy_server() {
    let tree = SeedTree::new(2);
    let policy = PolicySpec::jiq(8, Capacity::Finite(3)).unwrap();
    let state = q(8, 3, &[7, 4, 1]);
    for i in 0..5_000 {
        let mut draw = PermutationDraw::lazy(8, tree.rng("idle", i));
        let Dispatch::Stack(pos) = dispatch(&policy, &state, &mut draw).unwrap() else { panic!() };
        assert_eq!(state.index_of_stack(pos).unwrap(), 0);
    }
}

#[test]
fn full_system_discards() {
    let policy = PolicySpec::jsq(3, Capacity::Finite(2)).unwrap();
    let mut draw = PermutationDraw::from_permutation(vec![3, 1, 2]).unwrap();
    assert_eq!(dispatch(&policy, &q(3, 2, &[3, 3]), &mut draw).unwrap(), Dispatch::Discard);
    assert_eq!(draw.revealed(), 0);
}
