use nalgebra::DVector;

use robust_itr::experiment::{run_cv, run_experiment, CvConfig, ExperimentConfig};
use robust_itr::learn::{build_objective, LearnConfig, Method};
use robust_itr::simgen::generate;
use robust_itr::{fit_km, fit_sampled, Criterion, Error, ScenarioId, ScenarioSpec, SolverConfig};

fn quick_learn() -> LearnConfig {
    let mut learn = LearnConfig::default();
    learn.solver.max_outer = 15;
    learn
}

#[test]
fn sampled_fits_repeat_exactly_and_depend_on_the_seed() {
    let data = generate(&ScenarioSpec::new(ScenarioId::S1, 120, 4)).unwrap();
    let censor = fit_km(&data).unwrap();
    let obj = build_objective(
        &data,
        Criterion::Cvar { gamma: 0.5 },
        &quick_learn(),
        &censor,
    )
    .unwrap();
    let beta0 = DVector::zeros(obj.len());
    let cfg = |seed| SolverConfig {
        seed,
        max_outer: 15,
        ..SolverConfig::default()
    };
    let a = fit_sampled(&obj, &cfg(3), &beta0).unwrap();
    let b = fit_sampled(&obj, &cfg(3), &beta0).unwrap();
    let c = fit_sampled(&obj, &cfg(4), &beta0).unwrap();
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.trace, b.trace);
    assert_ne!(a.beta, c.beta);
    // the sample grows by the configured increment until it covers n
    let step = cfg(3).sample_increment(obj.len());
    for (k, e) in a.trace.iter().enumerate() {
        assert_eq!(e.sample_size, (k + 1) * step);
    }
}

#[test]
fn experiment_results_do_not_depend_on_worker_count() {
    let base = ExperimentConfig {
        n: 80,
        repeats: 3,
        n_test: 2000,
        seed: 17,
        learn: quick_learn(),
        ..ExperimentConfig::default()
    };
    let one = run_experiment(&ExperimentConfig {
        workers: 1,
        ..base.clone()
    })
    .unwrap();
    let two = run_experiment(&ExperimentConfig {
        workers: 2,
        ..base.clone()
    })
    .unwrap();
    assert_eq!(one.rows, two.rows);
    assert_eq!(one.rows.len(), 3 * Method::ALL.len());
    assert_eq!(one.summaries.len(), Method::ALL.len());
    let plot = one.plot_data();
    assert_eq!(plot.len(), 3 * Method::ALL.len());
    assert!(plot
        .iter()
        .all(|p| p.stats.min <= p.stats.median && p.stats.median <= p.stats.max));
    // constant rules need no fitting
    assert!(one
        .rows
        .iter()
        .filter(|r| r.method == Method::AllTreated)
        .all(|r| r.iterations == 0));
}

#[test]
fn cross_validation_covers_every_fold() {
    let data = generate(&ScenarioSpec::new(ScenarioId::S1, 90, 8)).unwrap();
    let cfg = CvConfig {
        folds: 3,
        repeats: 2,
        methods: vec![Method::Mean, Method::AllControl],
        learn: quick_learn(),
        ..CvConfig::default()
    };
    let report = run_cv(&data, &cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 2);
    for r in 0..2 {
        for f in 0..3 {
            assert_eq!(
                report
                    .rows
                    .iter()
                    .filter(|row| row.repeat == r && row.fold == f)
                    .count(),
                2
            );
        }
    }
    assert!(report
        .rows
        .iter()
        .all(|r| r.v.is_finite() && r.v1.is_finite() && r.m2 >= 0.0));
    assert_eq!(report.summaries[0].v.count, 2);
}

#[test]
fn invalid_harness_settings_are_rejected() {
    let data = generate(&ScenarioSpec::new(ScenarioId::S1, 10, 8)).unwrap();
    let too_many_folds = CvConfig {
        folds: 11,
        ..CvConfig::default()
    };
    assert!(matches!(
        run_cv(&data, &too_many_folds),
        Err(Error::InvalidInput(_))
    ));
    let bad_gamma = ExperimentConfig {
        gamma: 1.5,
        ..ExperimentConfig::default()
    };
    assert!(matches!(
        run_experiment(&bad_gamma),
        Err(Error::InvalidInput(_))
    ));
}
