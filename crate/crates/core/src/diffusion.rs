//! Projected Euler–Maruyama scheme for the reflected limit process
//!
//! ```text
//! X₁(t) = X₁(0) + √2 W(t) − βt + ∫(−X₁ + X₂) ds − U₁(t)
//! X₂(t) = X₂(0) + U₁(t) − ∫X₂ ds
//! ```
//!
//! where `U₁` is the minimal non-decreasing regulator keeping `X₁ ≤ 0`. Each
//! step takes the unconstrained update of `X₁`, pushes any positive part into
//! `U₁` (so `X₁` lands exactly on 0), and feeds the same amount into `X₂`.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::seed::{self, SeedTree};

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub u1: f64,
}

/// States on the uniform grid `t_j = j·dt`, with the regulator increment
/// applied in each step (`regulator[j]` moves state `j` to `j + 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPath {
    pub dt: f64,
    pub states: Vec<DiffusionState>,
    pub regulator: Vec<f64>,
}

impl DiffusionPath {
    pub fn last(&self) -> &DiffusionState {
        self.states.last().expect("paths hold the initial state")
    }

    /// Grid index of time `t`, if `t` lies on the grid.
    pub fn grid_index(&self, t: f64) -> Option<usize> {
        grid_index(self.dt, self.states.len(), t)
    }

    /// `t,x1,x2,u1` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x1,x2,u1")?;
        for s in &self.states {
            writeln!(out, "{},{},{},{}", s.t, s.x1, s.x2, s.u1)?;
        }
        Ok(())
    }
}

fn grid_index(dt: f64, len: usize, t: f64) -> Option<usize> {
    if !(t >= 0.0) {
        return None;
    }
    let j = (t / dt).round();
    if (j * dt - t).abs() > 1e-9 * t.max(1.0) || j as usize >= len {
        return None;
    }
    Some(j as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    Gaussian,
    /// Deterministic skeleton (`ξ ≡ 0`).
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub beta: f64,
    pub dt: f64,
    pub noise: Noise,
}

impl Integrator {
    pub fn new(beta: f64, dt: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return domain(format!("beta must be positive, got {beta}"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return domain(format!("dt must be positive, got {dt}"));
        }
        Ok(Self { beta, dt, noise: Noise::Gaussian })
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = Noise::Off;
        self
    }

    fn steps(&self, x0: (f64, f64), horizon: f64) -> Result<usize> {
        let (x1, x2) = x0;
        if !(x1 <= 0.0 && x2 >= 0.0 && x1.is_finite() && x2.is_finite()) {
            return domain(format!("initial point ({x1}, {x2}) needs x1 <= 0 <= x2"));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return domain(format!("horizon must be non-negative, got {horizon}"));
        }
        let steps = (horizon / self.dt).round();
        if (steps * self.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return domain(format!("horizon {horizon} is not a multiple of dt = {}", self.dt));
        }
        Ok(steps as usize)
    }

    /// One projected step; returns the new state and the regulator push.
    fn step(&self, s: DiffusionState, t: f64, xi: f64) -> (DiffusionState, f64) {
        let dt = self.dt;
        let shock = match self.noise {
            Noise::Gaussian => (2.0 * dt).sqrt() * xi,
            Noise::Off => 0.0,
        };
        let free = s.x1 + (-s.x1 + s.x2 - self.beta) * dt + shock;
        let push = free.max(0.0);
        let next = DiffusionState { t, x1: free - push, x2: (s.x2 + push - s.x2 * dt).max(0.0), u1: s.u1 + push };
        (next, push)
    }

    /// Integrates with standard normal increments drawn by `xi`.
    pub fn integrate_with(&self, x0: (f64, f64), horizon: f64, mut xi: impl FnMut() -> f64) -> Result<DiffusionPath> {
        let steps = self.steps(x0, horizon)?;
        let mut states = Vec::with_capacity(steps + 1);
        let mut regulator = Vec::with_capacity(steps);
        let mut s = DiffusionState { t: 0.0, x1: x0.0, x2: x0.1, u1: 0.0 };
        states.push(s);
        for j in 1..=steps {
            let (next, push) = self.step(s, j as f64 * self.dt, xi());
            s = next;
            regulator.push(push);
            states.push(s);
        }
        Ok(DiffusionPath { dt: self.dt, states, regulator })
    }

    /// Final state of path `index` without storing the trajectory. Same
    /// noise stream as [`Integrator::integrate`], so `terminal(..).x1` equals
    /// `integrate(..).last().x1`. With `mirrored` the shocks are negated.
    pub fn terminal(&self, x0: (f64, f64), horizon: f64, seed: u64, index: u64, mirrored: bool) -> Result<DiffusionState> {
        let steps = self.steps(x0, horizon)?;
        let mut rng = SeedTree::new(seed).rng(seed::DIFFUSION_NOISE, index);
        let sign = if mirrored { -1.0 } else { 1.0 };
        let mut s = DiffusionState { t: 0.0, x1: x0.0, x2: x0.1, u1: 0.0 };
        for j in 1..=steps {
            let xi: f64 = rng.sample(StandardNormal);
            s = self.step(s, j as f64 * self.dt, sign * xi).0;
        }
        Ok(s)
    }

    /// Final states of `count` paths, in antithetic pairs when asked.
    pub fn terminal_ensemble(
        &self,
        x0: (f64, f64),
        horizon: f64,
        count: usize,
        seed: u64,
        antithetic: bool,
        exec: Execution,
    ) -> Result<Vec<DiffusionState>> {
        try_map_indexed(count, exec, |i| {
            if antithetic {
                self.terminal(x0, horizon, seed, (i / 2) as u64, i % 2 == 1)
            } else {
                self.terminal(x0, horizon, seed, i as u64, false)
            }
        })
    }

    /// Path `index` of the ensemble seeded by `seed`.
    pub fn integrate(&self, x0: (f64, f64), horizon: f64, seed: u64, index: u64) -> Result<DiffusionPath> {
        let mut rng = SeedTree::new(seed).rng(seed::DIFFUSION_NOISE, index);
        self.integrate_with(x0, horizon, || rng.sample(StandardNormal))
    }

    /// Two paths driven by `ξ` and `−ξ`.
    pub fn integrate_antithetic(
        &self,
        x0: (f64, f64),
        horizon: f64,
        seed: u64,
        index: u64,
    ) -> Result<(DiffusionPath, DiffusionPath)> {
        let mut rng = SeedTree::new(seed).rng(seed::DIFFUSION_NOISE, index);
        let shocks: Vec<f64> = (0..self.steps(x0, horizon)?).map(|_| rng.sample(StandardNormal)).collect();
        let mut plus = shocks.iter();
        let mut minus = shocks.iter();
        Ok((
            self.integrate_with(x0, horizon, || *plus.next().expect("one shock per step"))?,
            self.integrate_with(x0, horizon, || -*minus.next().expect("one shock per step"))?,
        ))
    }

    /// `count` independent paths (or `count` paths in antithetic pairs).
    pub fn ensemble(
        &self,
        x0: (f64, f64),
        horizon: f64,
        count: usize,
        seed: u64,
        antithetic: bool,
        exec: Execution,
    ) -> Result<Vec<DiffusionPath>> {
        if antithetic {
            let pairs = try_map_indexed(count.div_ceil(2), exec, |i| {
                self.integrate_antithetic(x0, horizon, seed, i as u64)
            })?;
            let mut out: Vec<DiffusionPath> = pairs.into_iter().flat_map(|(a, b)| [a, b]).collect();
            out.truncate(count);
            Ok(out)
        } else {
            try_map_indexed(count, exec, |i| self.integrate(x0, horizon, seed, i as u64))
        }
    }
}

/// Single path with default stream index 0.
pub fn integrate(beta: f64, x0: (f64, f64), horizon: f64, dt: f64, seed: u64) -> Result<DiffusionPath> {
    Integrator::new(beta, dt)?.integrate(x0, horizon, seed, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub t: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub var_x1: f64,
    pub var_x2: f64,
    pub paths: usize,
}

/// Sample means and unbiased variances of `(x1, x2)` at grid time `t`.
pub fn moments(paths: &[DiffusionPath], t: f64) -> Result<Moments> {
    if paths.len() < 2 {
        return domain(format!("need at least 2 paths, got {}", paths.len()));
    }
    let dt = paths[0].dt;
    let mut x1 = Vec::with_capacity(paths.len());
    let mut x2 = Vec::with_capacity(paths.len());
    for p in paths {
        if p.dt != dt {
            return domain("paths use different step sizes");
        }
        let Some(j) = p.grid_index(t) else {
            return domain(format!("t = {t} is not on the grid of every path"));
        };
        x1.push(p.states[j].x1);
        x2.push(p.states[j].x2);
    }
    let (mean_x1, var_x1) = mean_var(&x1);
    let (mean_x2, var_x2) = mean_var(&x2);
    Ok(Moments { t, mean_x1, mean_x2, var_x1, var_x2, paths: paths.len() })
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}
