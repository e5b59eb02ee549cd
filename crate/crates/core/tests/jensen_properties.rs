use nonlinear_n2n::jensen::{j_bounds, PhiFunction};
use nonlinear_n2n::oracle::{battery_models, BATTERY_Y};
use nonlinear_n2n::search::log_grid;

const EPS: f64 = 0.01;

#[test]
fn sampled_gap_lies_within_variance_bounds() {
    let phis = PhiFunction::table(EPS).unwrap();
    for (iy, &y) in BATTERY_Y.iter().enumerate() {
        for (im, model) in battery_models(y).unwrap().into_iter().enumerate() {
            let samples = model.sample_stream(99, (iy * 16 + im) as u64, 1_000_000);
            let n = samples.len() as f64;
            let v = model.variance();
            for phi in &phis {
                let vals: Vec<f64> = samples.iter().map(|&s| phi.value(s)).collect();
                let mean = vals.iter().sum::<f64>() / n;
                let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let se = sd / n.sqrt();
                let gap = mean - phi.value(y);
                let b = j_bounds(phi, y).unwrap();
                assert!(
                    gap >= b.minus * v - 3.0 * se && gap <= b.plus * v + 3.0 * se,
                    "{phi} {} y={y}: gap {gap} outside [{}, {}] (se {se})",
                    model.family(),
                    b.minus * v,
                    b.plus * v
                );
            }
        }
    }
}

#[test]
fn lower_bound_never_exceeds_upper() {
    let mut phis = PhiFunction::table(EPS).unwrap();
    phis.extend([PhiFunction::identity(), PhiFunction::square()]);
    for phi in &phis {
        for y in log_grid(1e-3, 1e3, 97) {
            let b = j_bounds(phi, y).unwrap();
            assert!(b.minus <= b.plus, "{phi} y={y}: {} > {}", b.minus, b.plus);
        }
    }
}
