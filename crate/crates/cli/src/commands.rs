use balance_core::diffusion::{moments, Integrator};
use balance_core::engine::{
    check_prop2, halfin_whitt_init, parse_script, run_coupled, run_scripted, scale, verify_overflow_accounting,
    SystemPath,
};
use balance_core::ensemble::{Capacity, OccupancyVector};
use balance_core::exec::{try_map_indexed, Execution};
use balance_core::fuzz;
use balance_core::oracle::{
    build_generator, mean_levels, occupancy_time_average, stationary, tv_distance, write_distribution_csv,
};
use balance_core::policy::{PolicyDescriptor, PolicySpec};
use balance_core::stats::{
    ctmc_vs_sde, is_jiq_cap2, overflow_scaling, replication_seed, sandwich_check, universality_study, CtmcSdeConfig,
    StudyConfig,
};
use serde::Serialize;

use crate::artifacts::Artifacts;
use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;

/// Property checks that did not hold; the run still writes everything.
pub type Failures = Vec<String>;

pub fn run(command: Command, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    match command {
        Command::Simulate => simulate(config, out),
        Command::Couple => couple(config, out),
        Command::OracleCompare => oracle_compare(config, out),
        Command::Diffusion => diffusion(config, out),
        Command::ScalingStudy => scaling_study(config, out),
        Command::Prop1Fuzz => prop1_fuzz(config, out),
    }
}

fn exec(config: &ExperimentConfig) -> Execution {
    if config.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn descriptors(config: &ExperimentConfig, min: usize) -> Result<Vec<PolicyDescriptor>, CliError> {
    if config.policies.len() < min {
        return Err(CliError::Config(format!("this command needs at least {min} entries in `policies`")));
    }
    config.policies.iter().map(|p| p.parse().map_err(CliError::from)).collect()
}

fn instantiate(descs: &[PolicyDescriptor], n: usize) -> Result<Vec<PolicySpec>, CliError> {
    descs.iter().map(|d| d.instantiate(n).map_err(CliError::from)).collect()
}

fn initial_state(config: &ExperimentConfig, n: usize) -> Result<OccupancyVector, CliError> {
    Ok(match config.gamma {
        Some([g1, g2]) => halfin_whitt_init(n, g1, g2, Capacity::Unbounded)?,
        None => OccupancyVector::empty(n, Capacity::Unbounded)?,
    })
}

fn write_paths(out: &mut Artifacts, rep: usize, paths: &[SystemPath]) -> Result<(), CliError> {
    for (i, p) in paths.iter().enumerate() {
        out.write(&format!("paths/rep{rep:04}_p{i}.csv"), |w| p.write_csv(w))?;
        out.write(&format!("scaled/rep{rep:04}_p{i}.csv"), |w| scale(p).write_csv(w))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SystemRecord<'a> {
    rep: usize,
    seed: Option<u64>,
    n: usize,
    beta: f64,
    horizon: f64,
    policy_index: usize,
    policy: &'a str,
    sizes: &'a [usize],
    cap: Capacity,
    events: usize,
    final_state: &'a [usize],
    overflow: u64,
    overflow_accounting_ok: bool,
}

fn simulate(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let n = config.require_n()?;
    let descs = descriptors(config, 1)?;
    let policies = instantiate(&descs, n)?;
    let init = [initial_state(config, n)?];
    let runs: Vec<(Option<u64>, Vec<SystemPath>)> = match &config.events {
        Some(script) => {
            let text = std::fs::read_to_string(script).map_err(|e| CliError::io(script, e))?;
            let events = parse_script(&text, n)?;
            vec![(None, run_scripted(&policies, &init, events, config.beta, 0)?)]
        }
        None => try_map_indexed(config.reps, exec(config), |r| {
            let seed = replication_seed(config.seed, n, r);
            run_coupled(&policies, n, config.beta, config.horizon, &init, seed).map(|p| (Some(seed), p))
        })?,
    };
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (rep, (seed, paths)) in runs.iter().enumerate() {
        if config.write_paths {
            write_paths(out, rep, paths)?;
        }
        for (i, p) in paths.iter().enumerate() {
            let violation = verify_overflow_accounting(p);
            if let Some(v) = &violation {
                failures.push(format!("rep {rep} policy {}: overflow accounting: {}", p.policy.name(), v.detail));
            }
            records.push(SystemRecord {
                rep,
                seed: *seed,
                n,
                beta: config.beta,
                horizon: config.horizon,
                policy_index: i,
                policy: p.policy.name(),
                sizes: p.policy.sizes(),
                cap: p.policy.cap(),
                events: p.jumps.len() - 1,
                final_state: p.last().state.counts(),
                overflow: p.final_overflow(),
                overflow_accounting_ok: violation.is_none(),
            });
        }
    }
    out.jsonl("summary.jsonl", &records)?;
    Ok(failures)
}

#[derive(Serialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
enum CoupleRecord {
    Ordering {
        rep: usize,
        seed: u64,
        n: usize,
        pair: [String; 2],
        hypothesis_holds: bool,
        initial_order_holds: bool,
        passed: bool,
        epochs: usize,
        overflow: [u64; 2],
        violation: Option<balance_core::engine::Violation>,
    },
    Sandwich {
        rep: usize,
        seed: u64,
        n: usize,
        pair: [String; 2],
        passed: bool,
        max_difference: usize,
        min_slack: i64,
        violation: Option<balance_core::engine::Violation>,
    },
}

fn couple(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let n = config.require_n()?;
    let descs = descriptors(config, 2)?;
    let policies = instantiate(&descs, n)?;
    let init = [initial_state(config, n)?];
    let reference = policies.iter().position(is_jiq_cap2);
    let runs = try_map_indexed(config.reps, exec(config), |r| {
        let seed = replication_seed(config.seed, n, r);
        run_coupled(&policies, n, config.beta, config.horizon, &init, seed).map(|p| (seed, p))
    })?;
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (rep, (seed, paths)) in runs.iter().enumerate() {
        let seed = *seed;
        if config.write_paths {
            write_paths(out, rep, paths)?;
        }
        for pair in paths.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let report = check_prop2(a, b)?;
            let names = [a.policy.name().to_string(), b.policy.name().to_string()];
            if report.hypothesis_holds && report.initial_order_holds && !report.passed() {
                let detail = report.first_violation().map_or(String::new(), |v| v.detail.clone());
                failures.push(format!("rep {rep} seed {seed} {} vs {}: {detail}", names[0], names[1]));
            }
            records.push(CoupleRecord::Ordering {
                rep,
                seed,
                n,
                pair: names,
                hypothesis_holds: report.hypothesis_holds,
                initial_order_holds: report.initial_order_holds,
                passed: report.passed(),
                epochs: report.epochs,
                overflow: [a.final_overflow(), b.final_overflow()],
                violation: report.first_violation().cloned(),
            });
        }
        let Some(j) = reference else { continue };
        for (i, p) in paths.iter().enumerate() {
            if i == j || !p.policy.in_idle_first_class() {
                continue;
            }
            let report = sandwich_check(p, &paths[j])?;
            let names = [p.policy.name().to_string(), paths[j].policy.name().to_string()];
            if let Some(v) = &report.violation {
                failures.push(format!("rep {rep} seed {seed} sandwich {}: {}", names[0], v.detail));
            }
            records.push(CoupleRecord::Sandwich {
                rep,
                seed,
                n,
                pair: names,
                passed: report.passed(),
                max_difference: report.max_difference,
                min_slack: report.min_slack,
                violation: report.violation,
            });
        }
    }
    out.jsonl("summary.jsonl", &records)?;
    Ok(failures)
}

#[derive(Serialize)]
struct OracleRecord<'a> {
    n: usize,
    beta: f64,
    horizon: f64,
    reps: usize,
    policy_index: usize,
    policy: &'a str,
    states: usize,
    residual: f64,
    tv: f64,
    tolerance: f64,
    within_tolerance: bool,
    mean_levels_exact: Vec<f64>,
    mean_levels_engine: Vec<f64>,
}

fn oracle_compare(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let n = config.require_n()?;
    let descs = descriptors(config, 1)?;
    let policies = instantiate(&descs, n)?;
    let init = initial_state(config, n)?;
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (i, policy) in policies.iter().enumerate() {
        let gen = build_generator(policy, config.beta)?;
        let pi = stationary(&gen)?;
        let start = [init.with_cap(policy.cap())?];
        let per_rep = try_map_indexed(config.reps, exec(config), |r| {
            let seed = replication_seed(config.seed, n, r);
            let paths = run_coupled(std::slice::from_ref(policy), n, config.beta, config.horizon, &start, seed)?;
            occupancy_time_average(&paths[0], gen.space(), config.horizon)
        })?;
        let empirical: Vec<f64> = (0..pi.len())
            .map(|s| per_rep.iter().map(|v| v[s]).sum::<f64>() / config.reps as f64)
            .collect();
        let tv = tv_distance(&empirical, &pi)?;
        let within = tv <= config.tolerances.tv;
        if !within {
            failures.push(format!("{}: TV {tv} exceeds {}", policy.name(), config.tolerances.tv));
        }
        out.write(&format!("oracle/p{i}_exact.csv"), |w| write_distribution_csv(gen.space(), &pi, w))?;
        out.write(&format!("oracle/p{i}_engine.csv"), |w| write_distribution_csv(gen.space(), &empirical, w))?;
        records.push(OracleRecord {
            n,
            beta: config.beta,
            horizon: config.horizon,
            reps: config.reps,
            policy_index: i,
            policy: policy.name(),
            states: gen.len(),
            residual: gen.residual(&pi),
            tv,
            tolerance: config.tolerances.tv,
            within_tolerance: within,
            mean_levels_exact: mean_levels(gen.space(), &pi),
            mean_levels_engine: mean_levels(gen.space(), &empirical),
        });
    }
    out.jsonl("summary.jsonl", &records)?;
    Ok(failures)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum DiffusionRecord {
    Moments {
        beta: f64,
        dt: f64,
        x0: [f64; 2],
        reps: usize,
        seed: u64,
        moments: balance_core::diffusion::Moments,
        complementarity_ok: bool,
    },
    CtmcVsSde {
        report: balance_core::stats::CtmcSdeReport,
        tolerance: f64,
        within_tolerance: bool,
    },
}

fn diffusion(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let integrator = Integrator::new(config.beta, config.dt)?;
    let x0 = (config.x0[0], config.x0[1]);
    let mut failures = Vec::new();
    let mut records = Vec::new();
    if config.write_paths || config.reps >= 2 {
        let paths = integrator.ensemble(x0, config.horizon, config.reps, config.seed, config.antithetic, exec(config))?;
        let complementarity_ok = paths.iter().all(|p| {
            p.regulator.iter().zip(&p.states[1..]).all(|(&push, s)| push >= 0.0 && (push == 0.0 || s.x1 == 0.0))
        });
        if !complementarity_ok {
            failures.push("regulator increased away from the boundary".into());
        }
        if config.write_paths {
            for (r, p) in paths.iter().enumerate() {
                out.write(&format!("diffusion/path{r:04}.csv"), |w| p.write_csv(w))?;
            }
        }
        if paths.len() >= 2 {
            records.push(DiffusionRecord::Moments {
                beta: config.beta,
                dt: config.dt,
                x0: config.x0,
                reps: config.reps,
                seed: config.seed,
                moments: moments(&paths, config.horizon)?,
                complementarity_ok,
            });
        }
    }
    if let Some(policy) = &config.ctmc_policy {
        let desc: PolicyDescriptor = policy.parse()?;
        let sde = CtmcSdeConfig {
            n: config.require_n()?,
            beta: config.beta,
            horizon: config.horizon,
            reps: config.reps,
            dt: config.dt,
            seed: config.seed,
            x0,
            antithetic: config.antithetic,
        };
        let report = ctmc_vs_sde(&desc, &sde, exec(config))?;
        let tol = config.tolerances.moment_gap;
        let within = report.delta_mean_x1 <= tol && report.delta_mean_x2 <= tol;
        if !within {
            failures.push(format!(
                "engine vs diffusion mean gaps {} and {} exceed {tol}",
                report.delta_mean_x1, report.delta_mean_x2
            ));
        }
        records.push(DiffusionRecord::CtmcVsSde { report, tolerance: tol, within_tolerance: within });
    }
    out.jsonl("summary.jsonl", &records)?;
    Ok(failures)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum ScalingRecord<'a> {
    Replication {
        n: usize,
        rep: usize,
        seed: u64,
        pair: [&'a str; 2],
        beta: f64,
        horizon: f64,
        overflow: u64,
        scaled_overflow: f64,
        sup_x3: Option<f64>,
    },
    Size {
        n: usize,
        pair: [&'a str; 2],
        reps: usize,
        median_overflow: f64,
        median_scaled_overflow: f64,
        median_sup_x3: Option<f64>,
    },
    Trend {
        n_grid: &'a [usize],
        scaled_overflow_non_increasing: bool,
        sup_x3_decreasing: Option<bool>,
    },
    Universality {
        n: usize,
        pair: [&'a str; 2],
        reps: usize,
        mean_sup_distance_x2: f64,
        mean_scaled_bound: Option<f64>,
        sup_distance_x2: &'a [f64],
    },
}

fn scaling_study(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let grid = config.n_grid.clone().ok_or_else(|| CliError::Config("scaling-study needs `n_grid`".into()))?;
    let descs = descriptors(config, 1)?;
    let reference = descs[0].instantiate(grid[0])?;
    if !is_jiq_cap2(&reference) {
        return Err(CliError::Config(format!("the first policy must be pi:N,1 with buffer 2, got {}", descs[0])));
    }
    let [g1, g2] = config.gamma.unwrap_or([0.0, 0.0]);
    let study_config = StudyConfig {
        n_grid: grid.clone(),
        beta: config.beta,
        horizon: config.horizon,
        reps: config.reps,
        seed: config.seed,
        gamma: (g1, g2),
    };
    let study = overflow_scaling(&descs[0], descs.get(1), &study_config, exec(config))?;
    let first = config.policies[0].as_str();
    let companion = config.policies.get(1).map_or("", String::as_str);
    let pair = [first, companion];
    let mut records = Vec::new();
    for row in &study.rows {
        for (rep, (&seed, &overflow)) in row.seeds.iter().zip(&row.overflow).enumerate() {
            records.push(ScalingRecord::Replication {
                n: row.n,
                rep,
                seed,
                pair,
                beta: config.beta,
                horizon: config.horizon,
                overflow,
                scaled_overflow: overflow as f64 / (row.n as f64).sqrt(),
                sup_x3: row.sup_x3.get(rep).copied(),
            });
        }
    }
    for row in &study.rows {
        records.push(ScalingRecord::Size {
            n: row.n,
            pair,
            reps: config.reps,
            median_overflow: row.median_overflow,
            median_scaled_overflow: row.median_scaled_overflow,
            median_sup_x3: row.median_sup_x3,
        });
    }
    records.push(ScalingRecord::Trend {
        n_grid: &grid,
        scaled_overflow_non_increasing: study.scaled_overflow_non_increasing(),
        sup_x3_decreasing: study.sup_x3_decreasing(),
    });
    out.write("scaling/overflow.csv", |w| {
        use std::io::Write;
        writeln!(w, "n,rep,seed,overflow,sup_x3")?;
        for row in &study.rows {
            for (rep, (&seed, &overflow)) in row.seeds.iter().zip(&row.overflow).enumerate() {
                let x3 = row.sup_x3.get(rep).map_or(String::new(), |v| v.to_string());
                writeln!(w, "{},{rep},{seed},{overflow},{x3}", row.n)?;
            }
        }
        Ok(())
    })?;

    let universality;
    if let Some(pair) = &config.universality {
        let [a, b] = pair.as_slice() else {
            return Err(CliError::Config("`universality` takes exactly two policies".into()));
        };
        let (da, db): (PolicyDescriptor, PolicyDescriptor) = (a.parse()?, b.parse()?);
        universality = universality_study(&da, &db, 2, &study_config, exec(config))?;
        for row in &universality {
            records.push(ScalingRecord::Universality {
                n: row.n,
                pair: [a.as_str(), b.as_str()],
                reps: config.reps,
                mean_sup_distance_x2: row.mean_sup_distance,
                mean_scaled_bound: row.mean_scaled_bound,
                sup_distance_x2: &row.sup_distance,
            });
        }
    }
    out.jsonl("summary.jsonl", &records)?;
    Ok(Vec::new())
}

fn prop1_fuzz(config: &ExperimentConfig, out: &mut Artifacts) -> Result<Failures, CliError> {
    let report = fuzz::run(&config.fuzz_config())?;
    let mut failures: Failures = report
        .violations
        .iter()
        .take(10)
        .map(|c| format!("admissible step broke ordering: {c:?}"))
        .collect();
    if report.search_hits == 0 {
        failures.push("inadmissible search found no counterexample".into());
    }
    out.jsonl("counterexamples.jsonl", &report.search_examples)?;
    out.jsonl("summary.jsonl", &[&report])?;
    Ok(failures)
}
