use balance_core::engine::{
    arrival_rate, check_prop2, run_coupled, scale, verify_overflow_accounting, EventKind, EventRecord, RandomEvents,
};
use balance_core::ensemble::Capacity;
use balance_core::policy::{PolicyDescriptor, PolicySpec};
use balance_core::stats::{sandwich_check, sup_distance};

#[test]
fn event_stream_law() {
    let (n, beta, horizon) = (25, 1.0, 2_000.0);
    let lambda = arrival_rate(n, beta).unwrap();
    assert_eq!(lambda, 20.0);
    let mut arrivals = 0u64;
    let mut departures = vec![0u64; n + 1];
    let mut last = 0.0;
    let mut events = 0u64;
    for e in RandomEvents::new(n, beta, horizon, 77).unwrap() {
        assert!(e.time > last && e.time <= horizon);
        last = e.time;
        events += 1;
        match e.kind {
            EventKind::Arrival { .. } => arrivals += 1,
            EventKind::PotentialDeparture { position } => departures[position] += 1,
        }
    }
    let within = |observed: f64, mean: f64, sd: f64| (observed - mean).abs() <= 3.0 * sd;
    // Poisson counts: variance equals the mean.
    let (ea, ed) = (lambda * horizon, n as f64 * horizon);
    assert!(within(arrivals as f64, ea, ea.sqrt()), "{arrivals} vs {ea}");
    let total_dep: u64 = departures.iter().sum();
    assert!(within(total_dep as f64, ed, ed.sqrt()), "{total_dep} vs {ed}");
    // Given the total, the arrival count is binomial.
    let p = lambda / (lambda + n as f64);
    let ev = events as f64;
    assert!(within(arrivals as f64, ev * p, (ev * p * (1.0 - p)).sqrt()));
    // Departure positions are uniform: each count is binomial(total, 1/N).
    let per = total_dep as f64 / n as f64;
    let sd = (per * (1.0 - 1.0 / n as f64)).sqrt();
    let outside = departures[1..].iter().filter(|&&c| !within(c as f64, per, sd)).count();
    assert!(outside <= 1, "{departures:?}");
}

#[test]
fn event_stream_rejects_bad_parameters() {
    assert!(RandomEvents::new(4, 2.0, 1.0, 0).is_err());
    assert!(RandomEvents::new(4, 0.0, 1.0, 0).is_err());
    assert!(RandomEvents::new(4, 1.0, -1.0, 0).is_err());
    assert_eq!(RandomEvents::new(4, 1.0, 0.0, 0).unwrap().count(), 0);
}

fn policies(n: usize) -> Vec<PolicySpec> {
    ["jsq", "jiq", "jiq:3", "jsq:2", "pi:N,2,2", "pi:N,4,1,2:cap=4", "jiq:cap=inf", "jsq:cap=3"]
        .iter()
        .map(|s| s.parse::<PolicyDescriptor>().unwrap().instantiate(n).unwrap())
        .collect()
}

#[test]
fn overflow_bookkeeping_on_random_runs() {
    let n = 30;
    let ps = policies(n);
    let init = [ps[0].empty_state().with_cap(Capacity::Unbounded).unwrap()];
    for seed in 0..20 {
        for path in run_coupled(&ps, n, 0.5, 20.0, &init, seed).unwrap() {
            assert_eq!(verify_overflow_accounting(&path), None, "{} seed {seed}", path.policy);
            let flagged = path
                .jumps
                .iter()
                .filter(|j| matches!(j.event, EventRecord::Arrival { overflowed: true, .. }))
                .count() as u64;
            assert_eq!(flagged, path.final_overflow());
            for w in path.jumps.windows(2) {
                assert!(w[1].overflow >= w[0].overflow);
                assert!(w[1].state.total().abs_diff(w[0].state.total()) <= 1);
            }
            if path.policy.cap() == Capacity::Unbounded {
                assert_eq!(path.final_overflow(), 0);
            }
            let x = scale(&path);
            assert!(x.coordinate(1).all(|v| v <= 0.0));
            assert!((2..=path.depth()).all(|i| x.coordinate(i).all(|v| v >= 0.0)));
        }
    }
}

#[test]
fn ordering_on_small_systems() {
    let n = 10;
    let pairs = [
        (PolicySpec::jiq(n, Capacity::Finite(2)).unwrap(), PolicySpec::jsq(n, Capacity::Finite(2)).unwrap()),
        (PolicySpec::jiq_d(n, 3, Capacity::Finite(2)).unwrap(), PolicySpec::pi(n, vec![n, 3, 1]).unwrap()),
        (PolicySpec::pi(n, vec![n, n, 2]).unwrap(), PolicySpec::pi(n, vec![n, n, 2, 4]).unwrap()),
        (PolicySpec::jiq(n, Capacity::Finite(2)).unwrap(), PolicySpec::jiq(n, Capacity::Unbounded).unwrap()),
    ];
    for (a, b) in &pairs {
        let init = [a.empty_state()];
        for seed in 0..30 {
            let paths = run_coupled(&[a.clone(), b.clone()], n, 0.3, 30.0, &init, seed).unwrap();
            let report = check_prop2(&paths[0], &paths[1]).unwrap();
            assert!(report.hypothesis_holds, "{a} vs {b}");
            assert!(report.passed(), "{a} vs {b}, seed {seed}: {:?}", report.first_violation());
        }
    }
}

#[test]
fn unbounded_power_of_d_samples_at_every_level() {
    let p = PolicySpec::jsq_d(10, 2, Capacity::Unbounded).unwrap();
    assert_eq!(p.sizes(), [2, 2]);
    assert!(!p.in_idle_first_class());
    assert_eq!(PolicySpec::jiq_d(10, 2, Capacity::Unbounded).unwrap().sizes(), [10, 2]);
}

#[test]
fn sandwich_and_distance_bound() {
    let n = 100;
    let jsq = PolicySpec::jsq(n, Capacity::Finite(2)).unwrap();
    let jiq = PolicySpec::jiq(n, Capacity::Finite(2)).unwrap();
    let init = [jiq.empty_state()];
    for seed in 0..10 {
        let paths = run_coupled(&[jsq.clone(), jiq.clone()], n, 1.0, 10.0, &init, seed).unwrap();
        let report = sandwich_check(&paths[0], &paths[1]).unwrap();
        assert!(report.passed(), "{:?}", report.violation);
        let bound = 2.0 * paths[1].final_overflow() as f64 / 10.0;
        for i in 1..=2 {
            let d = sup_distance(&scale(&paths[0]), &scale(&paths[1]), i).unwrap();
            assert!(d <= bound + 1e-12, "X_{i}: {d} > {bound}");
        }
    }
}
