use chromident::cmaes::{
    default_lambda, optimize_with_restarts, rank, Cma, CmaError, CmaParams, CmaRng, EvalMode,
    FirstGeneration, RestartConfig, StartConfig,
};
use nalgebra::DVector;
use rand::SeedableRng;

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

#[test]
fn ask_tell_minimizes_an_ellipsoid() {
    let n = 4;
    let params = CmaParams::default_for(n, None).unwrap();
    let mut cma = Cma::new(params, DVector::from_element(n, 1.0), 0.5).unwrap();
    let mut rng = CmaRng::seed_from_u64(7);
    let f = |x: &DVector<f64>| -> f64 {
        x.iter().enumerate().map(|(i, v)| 10f64.powi(i as i32) * v * v).sum()
    };
    let mut best = f64::INFINITY;
    for _ in 0..400 {
        let pts = cma.ask(&mut rng);
        let fit: Vec<f64> = pts.iter().map(f).collect();
        best = fit.iter().cloned().fold(best, f64::min);
        cma.tell(&pts, &fit).unwrap();
    }
    assert!(best < 1e-10, "best {best}");
}

#[test]
fn restarts_solve_rosenbrock() {
    let mut start = StartConfig::new(3);
    start.bounds = (-2.0, 2.0);
    let restart = RestartConfig::scaled(start.sigma0, 1e-10);
    let report =
        optimize_with_restarts(&rosenbrock, 5, &start, &restart, EvalMode::Sequential).unwrap();
    assert!(report.reached_target, "{}", report.best_fitness);
    for v in &report.best_x {
        assert!((v - 1.0).abs() < 1e-4);
    }
    assert_eq!(report.evaluations_to_target, Some(report.evaluations));
}

#[test]
fn same_seed_same_run() {
    let start = StartConfig::new(42);
    let mut restart = RestartConfig::scaled(0.3, 1e-8);
    restart.max_restarts = 1;
    let a = optimize_with_restarts(&rosenbrock, 3, &start, &restart, EvalMode::Sequential).unwrap();
    let b = optimize_with_restarts(&rosenbrock, 3, &start, &restart, EvalMode::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn population_doubles_on_every_restart() {
    let start = StartConfig::new(1);
    let mut restart = RestartConfig::scaled(0.3, f64::NEG_INFINITY);
    restart.max_restarts = 3;
    let report =
        optimize_with_restarts(&|_: &[f64]| 1.0, 2, &start, &restart, EvalMode::Sequential).unwrap();
    let lambdas: Vec<usize> = report.runs.iter().map(|r| r.lambda).collect();
    let l0 = default_lambda(2);
    assert_eq!(lambdas, vec![l0, 2 * l0, 4 * l0, 8 * l0]);
    assert_eq!(report.restarts, 3);
    assert!(!report.reached_target);
}

#[test]
fn infeasible_objective_fails_initialization() {
    let mut start = StartConfig::new(5);
    start.lambda_override = Some(4);
    start.first_generation = FirstGeneration {
        feasibility_threshold: Some(1.0),
        ..FirstGeneration::default()
    };
    let restart = RestartConfig::scaled(0.3, 0.0);
    let err = optimize_with_restarts(&|_: &[f64]| 2.0, 2, &start, &restart, EvalMode::Sequential)
        .unwrap_err();
    assert_eq!(err, CmaError::InitializationFailure { draws: 400 });
}

#[test]
fn ranking_is_stable_and_puts_nan_last() {
    assert_eq!(rank(&[3.0, f64::NAN, 1.0, 3.0]), vec![2, 0, 3, 1]);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(CmaParams::default_for(0, None).is_err());
    let mut start = StartConfig::new(0);
    start.initial_mean = Some(vec![0.0; 3]);
    let restart = RestartConfig::scaled(0.3, 0.0);
    let err = optimize_with_restarts(&rosenbrock, 2, &start, &restart, EvalMode::Sequential);
    assert_eq!(err.unwrap_err(), CmaError::InvalidDimension(3));
}
