use nonlinear_n2n::loss::{closed_form_minimizer, LossKind, LossSpec, Moments, Placement};
use nonlinear_n2n::noise_models::{Family, NoiseModel};
use nonlinear_n2n::oracle::{minimize_on_samples, run_battery, OracleSearch};
use nonlinear_n2n::ToneMap;

#[test]
fn rmse_closed_form_matches_grid_argmin_on_ten_million_samples() {
    let spec = LossSpec::untonemapped(LossKind::Rmse, 0.01).unwrap();
    let model = NoiseModel::with_relative_variance(Family::Lognormal, 1.0, 1.0).unwrap();
    let samples = model.sample(3, 10_000_000);
    let closed = closed_form_minimizer(&spec, &Moments::from_samples(&spec, &samples)).unwrap().value;
    let r = minimize_on_samples(&spec, &model, &samples, &OracleSearch::default()).unwrap();
    assert!((closed - r.empirical_argmin).abs() <= 5e-3 * r.empirical_argmin, "{closed} vs {}", r.empirical_argmin);
    // The minimizer is biased well below the mean for this heavy a relative variance.
    assert!(closed < 0.5);
}

#[test]
fn unbiased_specs_recover_the_mean_and_concave_maps_bias_down() {
    let specs = vec![
        LossSpec::untonemapped(LossKind::L2, 0.01).unwrap(),
        LossSpec::untonemapped(LossKind::HdrStar, 0.01).unwrap(),
        LossSpec::new(LossKind::L2, Placement::Both, ToneMap::Reinhard, 0.01).unwrap(),
        LossSpec::new(LossKind::L2, Placement::Both, ToneMap::Gamma, 0.01).unwrap(),
        LossSpec::new(LossKind::L2, Placement::Both, ToneMap::ReinhardGamma, 0.01).unwrap(),
    ];
    let cells = run_battery(&specs, &[1.0], 5, 200_000, &OracleSearch::default()).unwrap();
    assert_eq!(cells.len(), 25);
    for c in &cells {
        let r = &c.result;
        let tol = 3.0 * r.mc_standard_error;
        if c.spec.placement() == Placement::None {
            assert!((r.empirical_argmin - c.y).abs() <= tol, "{} {}: {} vs {}", c.spec, c.family, r.empirical_argmin, c.y);
        } else {
            assert!(r.empirical_argmin <= c.y + tol, "{} {}: {} above {}", c.spec, c.family, r.empirical_argmin, c.y);
        }
        assert!(r.empirical_argmin >= 0.0);
        assert!(c.pass(), "{} {}", c.spec, c.family);
    }
}
