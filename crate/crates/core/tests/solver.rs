use approx::assert_relative_eq;
use chromident::transport::{
    calibrate_grid, simulate, ColumnConfig, GridConfig, InitialProfile, InjectionProfile,
};
use chromident::{IsothermModelF32, IsothermModelF64, SolverError};
use proptest::prelude::*;

fn column() -> ColumnConfig<f64> {
    ColumnConfig::new(1.0, 1.0, 0.5).unwrap()
}

fn langmuir_run(k: f64, n_star: f64, c: f64) -> Result<Vec<f64>, SolverError> {
    let model = IsothermModelF64::langmuir(vec![k], n_star);
    let injection = InjectionProfile::pulse(0.0, 1.0, vec![c], 8.0).unwrap();
    let grid = calibrate_grid(&model, &column(), 8.0, 0.02, 0.9, &[2.0 * c])?;
    let out = simulate(&model, &column(), &grid, &injection, &InitialProfile::Clean)?;
    Ok(out.values().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn calibrated_runs_stay_bounded_and_nonnegative(
        k in 0.001f64..0.5,
        n_star in 10.0f64..200.0,
        c in 0.1f64..20.0,
    ) {
        let values = langmuir_run(k, n_star, c).unwrap();
        for v in values {
            prop_assert!(v >= -1e-12 * c, "{v}");
            prop_assert!(v <= c * (1.0 + 1e-12), "{v} exceeds the inlet {c}");
        }
    }
}

fn centroid(k: f64) -> f64 {
    let model = IsothermModelF64::langmuir(vec![k], 100.0);
    let injection = InjectionProfile::pulse(0.0, 0.5, vec![1e-3], 40.0).unwrap();
    let grid = calibrate_grid(&model, &column(), 40.0, 0.02, 0.8, &[2e-3]).unwrap();
    let out = simulate(&model, &column(), &grid, &injection, &InitialProfile::Clean).unwrap();
    let (mut moment, mut mass) = (0.0, 0.0);
    for n in 0..out.rows() {
        moment += out.time(n) * out.row(n)[0];
        mass += out.row(n)[0];
    }
    moment / mass
}

#[test]
fn stronger_affinity_elutes_later() {
    let times: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&k| centroid(k)).collect();
    assert!(times[0] < times[1] && times[1] < times[2], "{times:?}");
}

#[test]
fn uniform_initial_profile_without_injection_washes_out() {
    let model = IsothermModelF64::langmuir(vec![0.02], 50.0);
    let injection = InjectionProfile::pulse(0.0, 1.0, vec![0.0], 30.0).unwrap();
    let grid = calibrate_grid(&model, &column(), 30.0, 0.02, 0.8, &[2.0]).unwrap();
    let initial = InitialProfile::Uniform(vec![1.0]);
    let out = simulate(&model, &column(), &grid, &injection, &initial).unwrap();
    assert_relative_eq!(out.row(0)[0], 1.0, max_relative = 1e-12);
    assert!(out.row(out.n_time())[0] < 1e-3);
}

#[test]
fn single_precision_tracks_double_precision() {
    let model64 = IsothermModelF64::langmuir(vec![0.0388], 107.0);
    let model32 = IsothermModelF32::langmuir(vec![0.0388], 107.0);
    let grid64 = calibrate_grid(&model64, &column(), 10.0, 0.02, 0.8, &[20.0]).unwrap();
    let grid32 = GridConfig::<f32>::from_steps(1.0, 10.0, 0.02, grid64.dz as f32).unwrap();
    let inj64 = InjectionProfile::pulse(0.0, 1.0, vec![10.0], 10.0).unwrap();
    let inj32 = InjectionProfile::pulse(0.0f32, 1.0, vec![10.0], 10.0).unwrap();
    let col32 = ColumnConfig::new(1.0f32, 1.0, 0.5).unwrap();
    let a = simulate(&model64, &column(), &grid64, &inj64, &InitialProfile::Clean).unwrap();
    let b = simulate(&model32, &col32, &grid32, &inj32, &InitialProfile::Clean).unwrap();
    assert_eq!(a.rows(), b.rows());
    let peak = a.values().iter().cloned().fold(0.0, f64::max);
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - f64::from(*y)).abs() < 1e-3 * peak);
    }
}

#[test]
fn mismatched_injection_species_is_rejected() {
    let model = IsothermModelF64::langmuir(vec![0.01, 0.02], 100.0);
    let injection = InjectionProfile::pulse(0.0, 1.0, vec![1.0], 4.0).unwrap();
    let grid = GridConfig::from_steps(1.0, 4.0, 0.01, 0.001).unwrap();
    let err = simulate(&model, &column(), &grid, &injection, &InitialProfile::Clean).unwrap_err();
    assert!(matches!(err, SolverError::InvalidInjection(_)));
}
