//! Exact finite-state Markov chain of one policy at small `N`.
//!
//! States are occupancy vectors (exchangeability makes server labels
//! irrelevant), so the state space has `C(N + b, b)` elements. Overflow is
//! not a coordinate: it only shows up as self-loops.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::engine::{arrival_rate, SystemPath};
use crate::ensemble::{Capacity, OccupancyVector};
use crate::error::{domain, Error, Result};
use crate::policy::PolicySpec;

pub const DEFAULT_STATE_BUDGET: usize = 200_000;
/// Largest chain solved by dense LU; bigger ones use power iteration.
pub const DENSE_LIMIT: usize = 5_000;
pub const RESIDUAL_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-12;

/// All chain-ordered occupancy vectors for given `(N, b)`.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    cap: usize,
    states: Vec<OccupancyVector>,
    index: HashMap<Vec<usize>, usize>,
}

/// `C(N + b, b)` without overflow; saturates at `u128::MAX`.
pub fn state_count(n: usize, cap: usize) -> u128 {
    let mut acc: u128 = 1;
    for j in 1..=cap as u128 {
        acc = match acc.checked_mul(n as u128 + j) {
            Some(v) => v / j,
            None => return u128::MAX,
        };
    }
    acc
}

impl StateSpace {
    pub fn new(n: usize, cap: usize, budget: usize) -> Result<Self> {
        let count = state_count(n, cap);
        if count > budget as u128 {
            return Err(Error::Capacity(format!(
                "state space for N = {n}, b = {cap} has {count} states, budget is {budget}"
            )));
        }
        let mut states = Vec::with_capacity(count as usize);
        let mut current = Vec::with_capacity(cap);
        enumerate(cap, n, &mut current, &mut |counts| {
            states.push(OccupancyVector::new(n, Capacity::Finite(cap), counts.to_vec()).expect("chain ordered"));
        });
        let index = states.iter().enumerate().map(|(i, q)| (q.counts().to_vec(), i)).collect();
        Ok(Self { n, cap, states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn states(&self) -> &[OccupancyVector] {
        &self.states
    }

    pub fn index_of(&self, q: &OccupancyVector) -> Option<usize> {
        if q.n_servers() != self.n {
            return None;
        }
        self.index.get(q.counts()).copied()
    }
}

fn enumerate(cap: usize, bound: usize, current: &mut Vec<usize>, emit: &mut impl FnMut(&[usize])) {
    if current.len() == cap {
        emit(current);
        return;
    }
    for v in (0..=bound).rev() {
        current.push(v);
        enumerate(cap, v, current, emit);
        current.pop();
    }
}

/// `C(a, m) / C(N, m)`: probability that `m` servers drawn without
/// replacement from `N` all fall in a given set of `a`.
pub fn subset_ratio(a: usize, n: usize, m: usize) -> f64 {
    if a < m {
        return 0.0;
    }
    (0..m).map(|j| (a - j) as f64 / (n - j) as f64).product()
}

/// Probability that an arrival joins a server currently holding exactly `i`
/// tasks, for `i = 0..=depth`, when `m` servers are sampled.
pub fn arrival_split(q: &OccupancyVector, m: usize) -> Vec<f64> {
    let n = q.n_servers();
    let depth = q.depth();
    (0..=depth)
        .map(|i| subset_ratio(q.level(i), n, m) - subset_ratio(q.level(i + 1), n, m))
        .collect()
}

/// Sparse rate matrix over a [`StateSpace`]; each row stores its diagonal.
#[derive(Clone, Debug)]
pub struct Generator {
    space: StateSpace,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Generator {
    /// Validates non-negative off-diagonals and zero row sums (relative
    /// tolerance `1e-12`).
    pub fn new(space: StateSpace, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != space.len() {
            return domain(format!("{} rows for {} states", rows.len(), space.len()));
        }
        for (r, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            let mut scale: f64 = 0.0;
            for &(c, rate) in row {
                if c >= space.len() {
                    return domain(format!("row {r} references state {c}"));
                }
                if c != r && rate < 0.0 {
                    return domain(format!("negative rate {rate} from {r} to {c}"));
                }
                sum += rate;
                scale = scale.max(rate.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
                return domain(format!("row {r} sums to {sum:e}, expected 0"));
            }
        }
        Ok(Self { space, rows })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rate from state `from` to state `to` (diagonal included).
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rows[from].iter().filter(|(c, _)| *c == to).map(|(_, r)| r).sum()
    }

    /// `‖πG‖_∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out = vec![0.0; self.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, rate) in row {
                out[c] += pi[r] * rate;
            }
        }
        out.into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, rate) in row {
                m[(r, c)] += rate;
            }
        }
        m
    }
}

/// Generator of `policy` in the Halfin-Whitt parametrisation with `β`.
pub fn build_generator(policy: &PolicySpec, beta: f64) -> Result<Generator> {
    build_generator_with_budget(policy, beta, DEFAULT_STATE_BUDGET)
}

pub fn build_generator_with_budget(policy: &PolicySpec, beta: f64, budget: usize) -> Result<Generator> {
    let Some(cap) = policy.cap().finite() else {
        return domain("the exact chain requires a finite buffer");
    };
    let n = policy.n_servers();
    let lambda = arrival_rate(n, beta)?;
    let space = StateSpace::new(n, cap, budget)?;
    let mut rows = Vec::with_capacity(space.len());
    for q in space.states() {
        let me = space.index_of(q).expect("own state");
        let mut out: HashMap<usize, f64> = HashMap::new();
        let k = q.min_stack_height();
        if k < cap {
            let split = arrival_split(q, policy.selection_size(k));
            for (height, p) in split.into_iter().enumerate() {
                if p <= 0.0 || height >= cap {
                    continue;
                }
                let mut counts = q.counts().to_vec();
                counts[height] += 1;
                let next = OccupancyVector::new(n, policy.cap(), counts)?;
                let to = space.index_of(&next).expect("closed state space");
                *out.entry(to).or_default() += lambda * p;
            }
        }
        for i in 1..=cap {
            let exact = q.level(i) - q.level(i + 1);
            if exact == 0 {
                continue;
            }
            let mut counts = q.counts().to_vec();
            counts[i - 1] -= 1;
            let next = OccupancyVector::new(n, policy.cap(), counts)?;
            let to = space.index_of(&next).expect("closed state space");
            *out.entry(to).or_default() += exact as f64;
        }
        let mut row: Vec<(usize, f64)> = out.into_iter().collect();
        row.sort_by_key(|&(c, _)| c);
        let total: f64 = row.iter().map(|&(_, r)| r).sum();
        row.push((me, -total));
        rows.push(row);
    }
    Generator::new(space, rows)
}

/// Stationary law `π` with `πG = 0`, `Σπ = 1`.
pub fn stationary(gen: &Generator) -> Result<Vec<f64>> {
    let pi = if gen.len() <= DENSE_LIMIT {
        stationary_dense(gen)?
    } else {
        stationary_power(gen, 5_000_000)?
    };
    let residual = gen.residual(&pi);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::Numerical { message: "stationary solve missed tolerance".into(), residual });
    }
    Ok(pi)
}

/// Direct solve of `Gᵀπ = 0` with the last equation replaced by `Σπ = 1`.
pub fn stationary_dense(gen: &Generator) -> Result<Vec<f64>> {
    let n = gen.len();
    if n == 0 {
        return domain("empty generator");
    }
    let mut a = gen.to_dense().transpose();
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let solution = a.lu().solve(&rhs).ok_or_else(|| Error::Numerical {
        message: "singular generator".into(),
        residual: f64::INFINITY,
    })?;
    Ok(solution.iter().copied().collect())
}

/// Power iteration on the uniformised chain `P = I + G/Λ`.
pub fn stationary_power(gen: &Generator, max_iter: usize) -> Result<Vec<f64>> {
    let n = gen.len();
    if n == 0 {
        return domain("empty generator");
    }
    let uniform = gen
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| row.iter().filter(|(c, _)| *c == r).map(|(_, v)| -v).sum::<f64>())
        .fold(0.0, f64::max)
        * 1.05;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        next.copy_from_slice(&pi);
        for (r, row) in gen.rows.iter().enumerate() {
            for &(c, rate) in row {
                next[c] += pi[r] * rate / uniform;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        std::mem::swap(&mut pi, &mut next);
        if iter % 64 == 0 {
            residual = gen.residual(&pi);
            if residual <= RESIDUAL_TOL {
                return Ok(pi);
            }
        }
    }
    Err(Error::Numerical { message: format!("power iteration did not converge in {max_iter} steps"), residual })
}

/// Total-variation distance `½ Σ|p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return domain(format!("distributions have lengths {} and {}", p.len(), q.len()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || d.iter().any(|&v| v < -1e-12) {
            return domain(format!("{name} is not a probability vector (sum {sum})"));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Fraction of `[0, horizon]` a path spends in each state.
pub fn occupancy_time_average(path: &SystemPath, space: &StateSpace, horizon: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let mut acc = vec![0.0; space.len()];
    for (j, jump) in path.jumps.iter().enumerate() {
        let end = path.jumps.get(j + 1).map_or(horizon, |next| next.time).min(horizon);
        let dt = end - jump.time;
        if dt <= 0.0 {
            continue;
        }
        let idx = space
            .index_of(&jump.state)
            .ok_or_else(|| Error::Domain(format!("state {} outside the state space", jump.state)))?;
        acc[idx] += dt;
    }
    acc.iter_mut().for_each(|v| *v /= horizon);
    Ok(acc)
}

/// `E[Q_i]` under `pi` for `i = 1..=b`.
pub fn mean_levels(space: &StateSpace, pi: &[f64]) -> Vec<f64> {
    (1..=space.cap())
        .map(|i| space.states().iter().zip(pi).map(|(q, p)| q.level(i) as f64 * p).sum())
        .collect()
}

/// `Q1,…,Qb,probability` rows.
pub fn write_distribution_csv<W: Write>(space: &StateSpace, pi: &[f64], mut out: W) -> io::Result<()> {
    let header: Vec<String> = (1..=space.cap()).map(|i| format!("Q{i}")).collect();
    writeln!(out, "{},probability", header.join(","))?;
    for (q, p) in space.states().iter().zip(pi) {
        let cells: Vec<String> = q.counts().iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{p}", cells.join(","))?;
    }
    Ok(())
}
