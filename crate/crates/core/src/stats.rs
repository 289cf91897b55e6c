//! Cross-policy and cross-scale studies built on coupled runs.

use serde::{Deserialize, Serialize};

use crate::diffusion::{mean_var, Integrator};
use crate::engine::{halfin_whitt_init, run_coupled, scale, scale_state, ScaledPath, SystemPath, Violation};
use crate::ensemble::Capacity;
use crate::error::{domain, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::policy::{PolicyDescriptor, PolicySpec};
use crate::seed::SeedTree;

/// `sup_t |X_i^a(t) − X_i^b(t)|` over the shared epochs.
pub fn sup_distance(a: &ScaledPath, b: &ScaledPath, coordinate: usize) -> Result<f64> {
    if coordinate == 0 {
        return domain("coordinates are 1-indexed");
    }
    if a.n != b.n || a.times != b.times {
        return domain("paths do not share the same epochs");
    }
    Ok((0..a.times.len())
        .map(|j| (a.value(j, coordinate) - b.value(j, coordinate)).abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub epochs: usize,
    /// Largest `|Q_i^Π − Q_i^{Π₂}|` seen on the path.
    pub max_difference: usize,
    /// Smallest `2L^{Π₂} − |Q_i^Π − Q_i^{Π₂}|` seen on the path.
    pub min_slack: i64,
    pub violation: Option<Violation>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// `true` for `Π(N, 1)` with buffer 2, the comparison scheme of the bound.
pub fn is_jiq_cap2(p: &PolicySpec) -> bool {
    p.cap() == Capacity::Finite(2) && p.sizes() == [p.n_servers(), 1]
}

/// Checks `|Q_i^Π(t) − Q_i^{Π₂}(t)| ≤ 2 L^{Π₂}(t)` for every level and epoch.
pub fn sandwich_check(path: &SystemPath, jiq: &SystemPath) -> Result<SandwichReport> {
    if !is_jiq_cap2(&jiq.policy) {
        return domain(format!("comparison path must run pi:N,1 with buffer 2, got {}", jiq.policy));
    }
    if !path.policy.in_idle_first_class() {
        return domain(format!("{} does not send to idle servers first", path.policy));
    }
    if path.stream != jiq.stream || path.jumps.len() != jiq.jumps.len() {
        return domain("paths come from different event streams");
    }
    let mut report = SandwichReport { epochs: path.jumps.len(), max_difference: 0, min_slack: i64::MAX, violation: None };
    for (epoch, (p, r)) in path.jumps.iter().zip(&jiq.jumps).enumerate() {
        if p.time != r.time {
            return domain("paths come from different event streams");
        }
        let bound = 2 * r.overflow as i64;
        let depth = p.state.depth().max(r.state.depth());
        for i in 1..=depth {
            let diff = p.state.level(i).abs_diff(r.state.level(i));
            report.max_difference = report.max_difference.max(diff);
            let slack = bound - diff as i64;
            report.min_slack = report.min_slack.min(slack);
            if slack < 0 && report.violation.is_none() {
                report.violation = Some(Violation {
                    epoch,
                    time: p.time,
                    detail: format!("|Q_{i}| gap {diff} exceeds 2L = {bound} ({} vs {})", p.state, r.state),
                });
            }
        }
    }
    Ok(report)
}

/// Parameters shared by the multi-`N` studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_grid: Vec<usize>,
    pub beta: f64,
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
    /// Initial state `(⌊γ₁√N⌋ idle, ⌊γ₂√N⌋ doubly loaded)`.
    pub gamma: (f64, f64),
}

/// Seed of replication `rep` at system size `n`.
pub fn replication_seed(seed: u64, n: usize, rep: usize) -> u64 {
    SeedTree::new(seed).child("system-size", n as u64).replication(rep as u64)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub seeds: Vec<u64>,
    /// `L^{Π₂}(T)` per replication.
    pub overflow: Vec<u64>,
    pub median_overflow: f64,
    pub median_scaled_overflow: f64,
    /// `sup_t X₃(t)` of the companion policy per replication (if any).
    pub sup_x3: Vec<f64>,
    pub median_sup_x3: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub config: StudyConfig,
    pub policy: String,
    pub companion: Option<String>,
    pub rows: Vec<ScalingRow>,
}

impl ScalingStudy {
    pub fn scaled_overflow_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].median_scaled_overflow <= w[0].median_scaled_overflow)
    }

    pub fn sup_x3_decreasing(&self) -> Option<bool> {
        let medians: Option<Vec<f64>> = self.rows.iter().map(|r| r.median_sup_x3).collect();
        medians.map(|m| m.windows(2).all(|w| w[1] < w[0]))
    }
}

/// Distribution of the overflow count `L(T)` across system sizes. When a
/// companion policy is given it is coupled into the same runs and its
/// `sup_t X₃(t)` is recorded as well.
pub fn overflow_scaling(
    policy: &PolicyDescriptor,
    companion: Option<&PolicyDescriptor>,
    config: &StudyConfig,
    exec: Execution,
) -> Result<ScalingStudy> {
    let mut rows = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let mut policies = vec![policy.instantiate(n)?];
        if let Some(c) = companion {
            policies.push(c.instantiate(n)?);
        }
        let init = [halfin_whitt_init(n, config.gamma.0, config.gamma.1, Capacity::Unbounded)?];
        let seeds: Vec<u64> = (0..config.reps).map(|r| replication_seed(config.seed, n, r)).collect();
        let per_rep = try_map_indexed(config.reps, exec, |r| -> Result<(u64, Option<f64>)> {
            let paths = run_coupled(&policies, n, config.beta, config.horizon, &init, seeds[r])?;
            let sup_x3 = paths.get(1).map(|p| scale(p).sup_abs(3));
            Ok((paths[0].final_overflow(), sup_x3))
        })?;
        let overflow: Vec<u64> = per_rep.iter().map(|r| r.0).collect();
        let sup_x3: Vec<f64> = per_rep.iter().filter_map(|r| r.1).collect();
        let as_f64: Vec<f64> = overflow.iter().map(|&l| l as f64).collect();
        let median_overflow = median(&as_f64);
        rows.push(ScalingRow {
            n,
            seeds,
            median_scaled_overflow: median_overflow / (n as f64).sqrt(),
            median_overflow,
            overflow,
            median_sup_x3: companion.map(|_| median(&sup_x3)),
            sup_x3,
        });
    }
    Ok(ScalingStudy {
        config: config.clone(),
        policy: policy.to_string(),
        companion: companion.map(ToString::to_string),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalityRow {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub sup_distance: Vec<f64>,
    pub mean_sup_distance: f64,
    /// `2L^{Π₂}(T)/√N` when the second policy is `Π(N,1)` with buffer 2.
    pub mean_scaled_bound: Option<f64>,
}

/// Coupled sup-distance of coordinate `X_i` between two policies across
/// system sizes.
pub fn universality_study(
    a: &PolicyDescriptor,
    b: &PolicyDescriptor,
    coordinate: usize,
    config: &StudyConfig,
    exec: Execution,
) -> Result<Vec<UniversalityRow>> {
    let mut rows = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let policies = [a.instantiate(n)?, b.instantiate(n)?];
        let init = [halfin_whitt_init(n, config.gamma.0, config.gamma.1, Capacity::Unbounded)?];
        let seeds: Vec<u64> = (0..config.reps).map(|r| replication_seed(config.seed, n, r)).collect();
        let per_rep = try_map_indexed(config.reps, exec, |r| -> Result<(f64, Option<f64>)> {
            let paths = run_coupled(&policies, n, config.beta, config.horizon, &init, seeds[r])?;
            let d = sup_distance(&scale(&paths[0]), &scale(&paths[1]), coordinate)?;
            let bound = is_jiq_cap2(&paths[1].policy)
                .then(|| 2.0 * paths[1].final_overflow() as f64 / (n as f64).sqrt());
            Ok((d, bound))
        })?;
        let sup_distance: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
        let bounds: Vec<f64> = per_rep.iter().filter_map(|r| r.1).collect();
        rows.push(UniversalityRow {
            n,
            seeds,
            mean_sup_distance: sup_distance.iter().sum::<f64>() / sup_distance.len().max(1) as f64,
            mean_scaled_bound: (!bounds.is_empty()).then(|| bounds.iter().sum::<f64>() / bounds.len() as f64),
            sup_distance,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub mean_x1: f64,
    pub sd_x1: f64,
    pub mean_x2: f64,
    pub sd_x2: f64,
    pub reps: usize,
}

impl SideSummary {
    fn from_samples(x1: &[f64], x2: &[f64]) -> Self {
        let (mean_x1, var_x1) = mean_var(x1);
        let (mean_x2, var_x2) = mean_var(x2);
        Self { mean_x1, sd_x1: var_x1.sqrt(), mean_x2, sd_x2: var_x2.sqrt(), reps: x1.len() }
    }

    /// Normal-approximation 95% interval of the mean of `X_i`.
    pub fn ci95(&self, i: usize) -> (f64, f64) {
        let (m, sd) = if i == 1 { (self.mean_x1, self.sd_x1) } else { (self.mean_x2, self.sd_x2) };
        let half = 1.96 * sd / (self.reps as f64).sqrt();
        (m - half, m + half)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtmcSdeReport {
    pub policy: String,
    pub n: usize,
    pub beta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub x0: (f64, f64),
    pub antithetic: bool,
    pub engine: SideSummary,
    pub diffusion: SideSummary,
    pub delta_mean_x1: f64,
    pub delta_mean_x2: f64,
    pub ci_overlap_x1: bool,
    pub ci_overlap_x2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtmcSdeConfig {
    pub n: usize,
    pub beta: f64,
    pub horizon: f64,
    pub reps: usize,
    pub dt: f64,
    pub seed: u64,
    pub x0: (f64, f64),
    /// Drive the diffusion side with antithetic shock pairs.
    #[serde(default)]
    pub antithetic: bool,
}

/// Compares `(X₁(T), X₂(T))` of the scaled chain against the reflected
/// diffusion started from the same point.
pub fn ctmc_vs_sde(policy: &PolicyDescriptor, config: &CtmcSdeConfig, exec: Execution) -> Result<CtmcSdeReport> {
    let n = config.n;
    let root = (n as f64).sqrt();
    if root.fract() != 0.0 {
        return domain(format!("N = {n} is not a perfect square"));
    }
    if config.reps < 2 {
        return domain("need at least 2 replications per side");
    }
    let (x1, x2) = config.x0;
    if !(x1 <= 0.0 && x2 >= 0.0) {
        return domain(format!("initial point ({x1}, {x2}) needs x1 <= 0 <= x2"));
    }
    let spec = policy.instantiate(n)?;
    let init = halfin_whitt_init(n, -x1, x2, spec.cap())?;
    let scaled = scale_state(&init);
    if (scaled[0] - x1).abs() > 1e-12 || (scaled.get(1).copied().unwrap_or(0.0) - x2).abs() > 1e-12 {
        return domain(format!(
            "initial point ({x1}, {x2}) is not on the 1/sqrt(N) lattice; scaled start would be {scaled:?}"
        ));
    }
    let policies = [spec];
    let samples = try_map_indexed(config.reps, exec, |r| -> Result<(f64, f64)> {
        let seed = replication_seed(config.seed, n, r);
        let paths = run_coupled(&policies, n, config.beta, config.horizon, std::slice::from_ref(&init), seed)?;
        let x = scale_state(&paths[0].last().state);
        Ok((x[0], x.get(1).copied().unwrap_or(0.0)))
    })?;
    let ex1: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ex2: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let engine = SideSummary::from_samples(&ex1, &ex2);

    let integrator = Integrator::new(config.beta, config.dt)?;
    let ends = integrator.terminal_ensemble(config.x0, config.horizon, config.reps, config.seed, config.antithetic, exec)?;
    let dx1: Vec<f64> = ends.iter().map(|s| s.x1).collect();
    let dx2: Vec<f64> = ends.iter().map(|s| s.x2).collect();
    let diffusion = SideSummary::from_samples(&dx1, &dx2);
    let overlap = |i: usize| {
        let (a_lo, a_hi) = engine.ci95(i);
        let (b_lo, b_hi) = diffusion.ci95(i);
        a_lo <= b_hi && b_lo <= a_hi
    };
    Ok(CtmcSdeReport {
        policy: policy.to_string(),
        n,
        beta: config.beta,
        horizon: config.horizon,
        dt: config.dt,
        seed: config.seed,
        x0: config.x0,
        antithetic: config.antithetic,
        delta_mean_x1: (engine.mean_x1 - diffusion.mean_x1).abs(),
        delta_mean_x2: (engine.mean_x2 - diffusion.mean_x2).abs(),
        ci_overlap_x1: overlap(1),
        ci_overlap_x2: overlap(2),
        engine,
        diffusion,
    })
}
