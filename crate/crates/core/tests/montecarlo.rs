use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use gff_core::lattice::{BoxSpec, Site};
use gff_core::montecarlo::verify::verify_conditional;
use gff_core::montecarlo::{run_experiment, ExperimentKind, ExperimentSpec};
use gff_core::par::Execution;
use gff_core::stats::{fit_power_law, fit_proportions, EstimateRecord, FitPoint, RecordParams, Z95};
use gff_core::Error;

fn small_spec(kind: ExperimentKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(kind, 3, vec![2, 3], 150, 42);
    s.batch_size = 16;
    match kind {
        ExperimentKind::Crossing => s.inner = vec![1],
        ExperimentKind::Volume => s.m_grid = vec![1, 2],
        ExperimentKind::Captail => {
            // Spanning clusters need large capacity solves; keep them few.
            s.scales = vec![1, 2];
            s.box_factor = 2;
            s.trials = 40;
            s.batch_size = 8;
            s.thresholds = vec![1.0, 2.0];
        }
        ExperimentKind::TwoArm => s.chi = vec![0.5, 3.0],
        _ => {}
    }
    s
}

fn without_time(mut rs: Vec<EstimateRecord>) -> Vec<EstimateRecord> {
    rs.iter_mut().for_each(|r| r.wall_time = None);
    rs
}

#[test]
fn results_do_not_depend_on_threads_or_batching() {
    for kind in ExperimentKind::ALL {
        let spec = small_spec(kind);
        let seq = without_time(run_experiment(&spec, Execution::Sequential).unwrap());
        assert!(!seq.is_empty(), "{}", kind.name());
        for threads in [2, 3] {
            let par = without_time(run_experiment(&spec, Execution::Parallel { threads }).unwrap());
            assert_eq!(seq, par, "{} with {threads} threads", kind.name());
        }
        let mut rebatched = spec.clone();
        rebatched.batch_size = 2 * spec.batch_size + 1;
        let other = without_time(run_experiment(&rebatched, Execution::Sequential).unwrap());
        assert_eq!(seq, other, "{} with another batch size", kind.name());
    }
}

#[test]
fn distinct_points_use_distinct_streams() {
    let mut streams = Vec::new();
    for kind in ExperimentKind::ALL {
        let spec = small_spec(kind);
        streams.extend(spec.points().iter().map(|p| spec.stream(p)));
    }
    let n = streams.len();
    streams.sort_unstable();
    streams.dedup();
    assert_eq!(streams.len(), n);
}

#[test]
fn zero_trials_give_empty_estimates() {
    let mut spec = small_spec(ExperimentKind::OneArm);
    spec.trials = 0;
    let rs = run_experiment(&spec, Execution::Sequential).unwrap();
    assert!(!rs.is_empty());
    for r in rs {
        assert_eq!((r.trials, r.successes), (0, 0));
        assert_eq!(r.estimate, None);
        assert_eq!(r.std_error, None);
    }
}

#[test]
fn invalid_grids_are_refused_before_sampling() {
    let mut s = small_spec(ExperimentKind::Crossing);
    s.inner = vec![3];
    assert!(matches!(s.plan(Execution::Sequential), Err(Error::Domain(_))));
    s.inner.clear();
    assert!(matches!(s.plan(Execution::Sequential), Err(Error::Domain(_))));

    let mut s = small_spec(ExperimentKind::TwoArm);
    s.chi = vec![4.0];
    assert!(matches!(s.plan(Execution::Sequential), Err(Error::Domain(_))));

    let mut s = small_spec(ExperimentKind::OneArm);
    s.scales = vec![64];
    s.memory_budget = 1 << 30;
    assert!(matches!(s.plan(Execution::Parallel { threads: 8 }), Err(Error::Planning(_))));
}

fn wilson_half_width(k: f64, n: f64) -> f64 {
    let p = k / n;
    let z2 = Z95 * Z95;
    Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

#[test]
fn record_errors_follow_from_counts() {
    let params = RecordParams {
        d: 3,
        n: 8,
        box_factor: 4,
        ..Default::default()
    };
    let r = EstimateRecord::from_counts("one-arm", params.clone(), 400, 1000, 0, 0, (0, 1000));
    assert!((r.std_error.unwrap() - (0.4f64 * 0.6 / 1000.0).sqrt()).abs() < 1e-15);
    assert_eq!(r.estimate, Some(0.4));

    let r = EstimateRecord::from_counts("one-arm", params.clone(), 7, 1000, 0, 0, (0, 1000));
    let se = wilson_half_width(7.0, 1000.0) / Z95;
    assert!((r.std_error.unwrap() - se).abs() < 1e-12);
    let (lo, hi) = r.interval.unwrap();
    assert!(lo > 0.0 && lo < 0.007 && hi > 0.007);

    let r = EstimateRecord::from_counts("one-arm", params, 0, 500, 0, 0, (0, 500));
    assert_eq!(r.interval.unwrap().0, 0.0);
    assert!(r.std_error.unwrap() > 0.0);
}

#[test]
fn exact_power_law_is_recovered() {
    let points: Vec<FitPoint> = [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&x: &f64| FitPoint {
            x,
            y: 3.0 * x.powf(-1.5),
            se: 0.0,
        })
        .collect();
    let fit = fit_power_law(&points, |_, usable| usable.iter().map(|p| p.y).collect()).unwrap();
    assert!((fit.slope + 1.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn bootstrap_interval_covers_the_true_slope() {
    let xs = [4.0, 8.0, 16.0, 32.0];
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let datasets = 200;
    let mut covered = 0;
    for _ in 0..datasets {
        let counts: Vec<(f64, u64, u64)> = xs
            .iter()
            .map(|&x: &f64| {
                let p = 0.8 / x;
                (x, Binomial::new(n, p).unwrap().sample(&mut rng), n)
            })
            .collect();
        if fit_proportions(&counts).unwrap().contains(-1.0) {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.9 * datasets as f64, "coverage {covered}/{datasets}");
}

#[test]
fn too_few_scales_cannot_be_fitted() {
    assert!(matches!(fit_proportions(&[(8.0, 10, 100)]), Err(Error::Fit(_))));
    assert!(matches!(fit_proportions(&[(8.0, 10, 100), (16.0, 5, 100)]), Err(Error::Fit(_))));
    // A zero count leaves two usable scales.
    assert!(matches!(
        fit_proportions(&[(8.0, 10, 100), (16.0, 5, 100), (32.0, 0, 100)]),
        Err(Error::Fit(_))
    ));
    let fit = fit_proportions(&[(4.0, 40, 100), (8.0, 10, 100), (16.0, 5, 100), (32.0, 0, 100)]).unwrap();
    assert_eq!(fit.excluded, vec![32.0]);
}

#[test]
fn zero_pin_never_connects() {
    let b = BoxSpec::new(3, 2).unwrap();
    let (v, w) = (Site::origin(3), Site::unit(3, 0));
    let r = verify_conditional(&b, &v, &w, &[(0.0, 1.0), (1.0, 0.0)], 2000, 3, Execution::Sequential).unwrap();
    for c in &r.checks {
        assert_eq!(c.expected, 0.0);
        assert_eq!(c.successes, 0);
    }
    assert!(r.pass);
}
