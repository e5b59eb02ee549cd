//! Brute-force minimization of the sampled expected loss, checked against the closed forms and the
//! bias intervals, plus the finite-data error decomposition.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::jensen::{bias_interval, BiasInterval, EpsilonMode, PhiFunction, Shape};
use crate::loss::{closed_form_minimizer, LossKind, LossSpec, Moments, Placement};
use crate::noise_models::{Family, NoiseModel};
use crate::search::{golden_min, log_grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSearch {
    pub grid_points: usize,
    /// The grid spans `[y / span, y · span]`.
    pub span: f64,
    pub rel_tol: f64,
}

impl Default for OracleSearch {
    fn default() -> Self {
        OracleSearch { grid_points: 2048, span: 1e6, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResult {
    pub empirical_argmin: f64,
    /// Closed form fed with the same sample moments.
    pub closed_form: f64,
    /// Closed form fed with the model's exact moments.
    pub closed_form_exact: f64,
    pub interval: BiasInterval,
    /// Interval with `ε → 0` inside the sub-nonlinearities.
    pub interval_vanishing: BiasInterval,
    pub mc_standard_error: f64,
    pub excluded_points: usize,
    pub local_minima: usize,
}

/// Placed targets and, for RMSE, their weights `1/(b+ε)²`.
struct Placed {
    b: Vec<f64>,
    w: Vec<f64>,
}

impl Placed {
    fn new(spec: &LossSpec, samples: &[f64]) -> Self {
        let e = spec.epsilon();
        let b: Vec<f64> = samples.iter().map(|&y| spec.target_side(y)).collect();
        let w = if spec.kind() == LossKind::Rmse {
            b.iter().map(|&v| 1.0 / ((v + e) * (v + e))).collect()
        } else {
            Vec::new()
        };
        Placed { b, w }
    }
}

const LANES: usize = 8;

/// `Σ f(b_i, w_i)` with independent accumulators so the loop vectorizes.
#[inline]
fn lane_sum(p: &Placed, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let n = p.b.len();
    let full = n - n % LANES;
    let weighted = !p.w.is_empty();
    for c in (0..full).step_by(LANES) {
        #[allow(clippy::needless_range_loop)]
        for l in 0..LANES {
            let w = if weighted { p.w[c + l] } else { 1.0 };
            acc[l] += f(p.b[c + l], w);
        }
    }
    let mut tail = 0.0;
    for i in full..n {
        tail += f(p.b[i], if weighted { p.w[i] } else { 1.0 });
    }
    acc.iter().sum::<f64>() + tail
}

/// `Σ (a − b_i)²`.
#[inline]
fn sum_sq(a: f64, b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = b.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&v| (a - v) * (a - v)).sum();
    for c in chunks {
        for l in 0..LANES {
            let d = a - c[l];
            acc[l] += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `Σ w_i (a − b_i)²`.
#[inline]
fn sum_wsq(a: f64, b: &[f64], w: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (bc, wc) = (b.chunks_exact(LANES), w.chunks_exact(LANES));
    let tail: f64 = bc.remainder().iter().zip(wc.remainder()).map(|(&v, &u)| u * (a - v) * (a - v)).sum();
    for (c, u) in bc.zip(wc) {
        for l in 0..LANES {
            let d = a - c[l];
            acc[l] += u[l] * d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn output_tone(spec: &LossSpec, x: f64) -> (f64, f64) {
    match spec.placement() {
        Placement::None => (x, 1.0),
        _ => (spec.tonemap().value(x), spec.tonemap().derivative(x)),
    }
}

fn hdr_weight(spec: &LossSpec, a: f64) -> f64 {
    let e = spec.epsilon();
    1.0 / ((a + e) * (a + e))
}

/// Sum of per-sample losses at output tone `a` over the slices `b`, `w`.
#[inline]
fn loss_sum(spec: &LossSpec, a: f64, b: &[f64], w: &[f64]) -> f64 {
    match spec.kind() {
        LossKind::L2 => sum_sq(a, b),
        LossKind::Rmse => sum_wsq(a, b, w),
        LossKind::Hdr | LossKind::HdrStar => sum_sq(a, b) * hdr_weight(spec, a),
    }
}

/// Sampled mean loss at model output `x` (radiance).
fn mean_loss(spec: &LossSpec, p: &Placed, x: f64) -> f64 {
    loss_sum(spec, output_tone(spec, x).0, &p.b, &p.w) / p.b.len() as f64
}

const BLOCK: usize = 2048;

/// Mean of `per_block(a, b, w)` over all samples at every grid tone `a`. Samples are streamed
/// in cache-sized blocks so each block is reused across the whole grid.
fn grid_means(p: &Placed, tones: &[f64], per_block: impl Fn(f64, &[f64], &[f64]) -> f64) -> Vec<f64> {
    let mut sums = vec![0.0; tones.len()];
    let n = p.b.len();
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let b = &p.b[start..end];
        let w = if p.w.is_empty() { &p.w[..] } else { &p.w[start..end] };
        for (s, &a) in sums.iter_mut().zip(tones) {
            *s += per_block(a, b, w);
        }
    }
    sums.iter().map(|s| s / n as f64).collect()
}

fn grid_losses(spec: &LossSpec, p: &Placed, xs: &[f64]) -> Vec<f64> {
    let tones: Vec<f64> = xs.iter().map(|&x| output_tone(spec, x).0).collect();
    grid_means(p, &tones, |a, b, w| loss_sum(spec, a, b, w))
}

/// `Σ (a − b_i)`.
#[inline]
fn sum_diff(a: f64, b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = b.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&v| a - v).sum();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += a - c[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Sampled mean surrogate gradient `2(a − b)/(a+ε)²` at every grid point, summed per sample.
fn grid_surrogate(spec: &LossSpec, p: &Placed, xs: &[f64]) -> Vec<f64> {
    let tones: Vec<f64> = xs.iter().map(|&x| output_tone(spec, x).0).collect();
    let mean_diff = grid_means(p, &tones, |a, b, _| sum_diff(a, b));
    tones.iter().zip(mean_diff).map(|(&a, d)| 2.0 * d * hdr_weight(spec, a)).collect()
}

/// Sampled mean of d loss / d x (the surrogate gradient for `HDR_STAR`) and its per-sample variance.
fn mean_gradient(spec: &LossSpec, p: &Placed, x: f64) -> (f64, f64) {
    let (a, da) = output_tone(spec, x);
    let n = p.b.len() as f64;
    let g = |b: f64, w: f64| {
        let base = if spec.kind() == LossKind::Rmse {
            2.0 * (a - b) * w
        } else {
            spec.gradient_placed(a, b)
        };
        base * da
    };
    let s1 = lane_sum(p, g);
    let mean = s1 / n;
    let s2 = lane_sum(p, |b, w| (g(b, w) - mean).powi(2));
    (mean, s2 / (n - 1.0))
}

/// Counts local minima of a sequence, ignoring relative changes below `1e-12`.
fn count_local_minima(values: &[f64]) -> usize {
    let signs: Vec<i8> = values
        .windows(2)
        .filter_map(|w| {
            let d = w[1] - w[0];
            if d.abs() <= 1e-12 * w[0].abs().max(w[1].abs()) {
                None
            } else {
                Some(if d > 0.0 { 1 } else { -1 })
            }
        })
        .collect();
    if signs.is_empty() {
        return 1;
    }
    let mut count = signs.windows(2).filter(|w| w[0] < 0 && w[1] > 0).count();
    if signs[0] > 0 {
        count += 1;
    }
    if *signs.last().unwrap() < 0 {
        count += 1;
    }
    count
}

fn refine_argmin(f: impl Fn(f64) -> f64, xs: &[f64], i: usize, rel_tol: f64) -> f64 {
    let (lo, hi) = if i == 0 { descend_bracket(&f, xs[0], xs[1]) } else { (xs[i - 1], xs[(i + 1).min(xs.len() - 1)]) };
    let (u, fu) = golden_min(|u| f(u.exp()), lo.ln(), hi.ln(), rel_tol);
    let (best, f_best) = if fu <= f(xs[i]) { (u.exp(), fu) } else { (xs[i], f(xs[i])) };
    if i == 0 && f(0.0) < f_best {
        0.0
    } else {
        best
    }
}

/// Steps below the grid by decades until the loss rises again, so the minimizer stays bracketed
/// in relative terms when it sits under the first grid point.
fn descend_bracket(f: &impl Fn(f64) -> f64, first: f64, second: f64) -> (f64, f64) {
    let (mut hi, mut mid, mut f_mid) = (second, first, f(first));
    loop {
        let next = 0.1 * mid;
        let f_next = f(next);
        if !(f_next <= f_mid) || next < 1e-290 {
            return (next, hi);
        }
        (hi, mid, f_mid) = (mid, next, f_next);
    }
}

/// Root of the mean surrogate gradient, bisected from the first sign change on the grid.
fn surrogate_root(spec: &LossSpec, p: &Placed, xs: &[f64], grads: &[f64], rel_tol: f64) -> Option<f64> {
    let g = |x: f64| grid_surrogate(spec, p, &[x])[0];
    let i = grads.iter().position(|&v| v >= 0.0)?;
    if i == 0 {
        return Some(xs[0]);
    }
    let (mut lo, mut hi) = (xs[i - 1], xs[i]);
    while hi - lo > rel_tol * lo {
        let mid = (lo * hi).sqrt();
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn uses_numeric_j(spec: &LossSpec) -> bool {
    spec.kind() == LossKind::Rmse
        && PhiFunction::new(Shape::ShiftedRatio, spec.tonemap(), spec.epsilon())
            .map(|p| p.numeric_only_upper())
            .unwrap_or(false)
}

/// Tolerance for the containment check: `1e-9` plus the numeric-J search tolerance.
pub fn containment_tolerance(spec: &LossSpec, value: f64) -> f64 {
    let numeric = if uses_numeric_j(spec) { 1e-7 * value.abs() } else { 0.0 };
    1e-9 + numeric
}

/// Minimizes the sampled mean loss over a log grid of outputs, using one shared sample set.
pub fn empirical_minimizer(
    spec: &LossSpec,
    model: &NoiseModel,
    seed: u64,
    n_samples: usize,
    search: &OracleSearch,
) -> Result<OracleResult> {
    if n_samples < 10_000 {
        return Err(domain("n_samples", n_samples as f64, "must be >= 10^4"));
    }
    let samples = model.sample(seed, n_samples);
    minimize_on_samples(spec, model, &samples, search)
}

/// As [`empirical_minimizer`] on caller-supplied samples drawn from `model`.
pub fn minimize_on_samples(
    spec: &LossSpec,
    model: &NoiseModel,
    samples: &[f64],
    search: &OracleSearch,
) -> Result<OracleResult> {
    let y = model.mean();
    let p = Placed::new(spec, samples);
    let xs = log_grid(y / search.span, y * search.span, search.grid_points);
    let (empirical_argmin, excluded_points, local_minima) = if spec.kind() == LossKind::HdrStar {
        // The surrogate gradient is not the derivative of any sampled loss, so the scan looks for
        // its upward zero crossings instead of loss minima.
        let grads = grid_surrogate(spec, &p, &xs);
        let finite: Vec<f64> = grads.iter().copied().filter(|g| g.is_finite()).collect();
        let crossings = finite.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count()
            + usize::from(finite.first().is_some_and(|&g| g >= 0.0));
        let root = surrogate_root(spec, &p, &xs, &grads, search.rel_tol)
            .ok_or_else(|| Error::Contract(format!("{spec}: surrogate gradient has no root on the grid")))?;
        (root, xs.len() - finite.len(), crossings)
    } else {
        let losses = grid_losses(spec, &p, &xs);
        let finite: Vec<(usize, f64)> = losses
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .collect();
        let (i, _) = finite
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Contract(format!("{spec}: mean loss is not finite anywhere on the grid")))?;
        let argmin = refine_argmin(|x| mean_loss(spec, &p, x), &xs, *i, search.rel_tol);
        let minima = count_local_minima(&finite.iter().map(|p| p.1).collect::<Vec<_>>());
        (argmin, xs.len() - finite.len(), minima)
    };

    let (_, var_g) = mean_gradient(spec, &p, empirical_argmin);
    let h = 1e-4 * empirical_argmin;
    let curvature = (mean_gradient(spec, &p, empirical_argmin + h).0
        - mean_gradient(spec, &p, (empirical_argmin - h).max(0.0)).0)
        / (empirical_argmin + h - (empirical_argmin - h).max(0.0));
    let mc_standard_error = (var_g / samples.len() as f64).sqrt() / curvature.abs();

    let closed_form = closed_form_minimizer(spec, &Moments::from_samples(spec, samples))?.value;
    let exact = Moments::from_expectation(spec, |g| model.expect(g));
    let closed_form_exact = closed_form_minimizer(spec, &exact)?.value;
    let var = model.variance();
    Ok(OracleResult {
        empirical_argmin,
        closed_form,
        closed_form_exact,
        interval: bias_interval(spec, y, var, EpsilonMode::Exact)?,
        interval_vanishing: bias_interval(spec, y, var, EpsilonMode::Vanishing)?,
        mc_standard_error,
        excluded_points,
        local_minima,
    })
}

/// The noise models of the battery at clean value `y`.
pub fn battery_models(y: f64) -> Result<Vec<NoiseModel>> {
    Ok(vec![
        NoiseModel::gamma(y, 2.0)?,
        NoiseModel::lognormal(y, 0.75)?,
        NoiseModel::scaled_bernoulli(y, 4.0 * y)?,
        NoiseModel::two_point(y, 1.0)?,
        NoiseModel::clipped_lognormal(y, 1.5, 30.0 * y)?,
    ])
}

pub const BATTERY_Y: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCell {
    pub spec: LossSpec,
    pub family: Family,
    pub y: f64,
    pub variance: f64,
    pub result: OracleResult,
}

impl OracleCell {
    pub fn agrees(&self) -> bool {
        let r = &self.result;
        (r.empirical_argmin - r.closed_form).abs() <= 3.0 * r.mc_standard_error
    }

    pub fn contained(&self) -> bool {
        let r = &self.result;
        r.interval.contains(r.closed_form_exact, containment_tolerance(&self.spec, r.closed_form_exact))
    }

    pub fn unimodal(&self) -> bool {
        self.result.local_minima == 1
    }

    pub fn pass(&self) -> bool {
        self.agrees() && self.contained() && self.unimodal()
    }
}

/// Runs every configuration against every battery model. All configurations sharing a
/// `(model, y)` pair see the same samples.
pub fn run_battery(
    specs: &[LossSpec],
    ys: &[f64],
    seed: u64,
    n_samples: usize,
    search: &OracleSearch,
) -> Result<Vec<OracleCell>> {
    let mut out = Vec::new();
    for (iy, &y) in ys.iter().enumerate() {
        for (im, model) in battery_models(y)?.into_iter().enumerate() {
            let stream = (iy * 16 + im) as u64;
            let samples = model.sample_stream(seed, stream, n_samples);
            for spec in specs {
                let result = minimize_on_samples(spec, &model, &samples, search)?;
                out.push(OracleCell { spec: *spec, family: model.family(), y, variance: model.variance(), result });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteDataReport {
    pub pixels: usize,
    pub trials: usize,
    pub empirical: f64,
    pub empirical_se: f64,
    pub closed_form: f64,
}

impl FiniteDataReport {
    pub fn agrees(&self) -> bool {
        (self.empirical - self.closed_form).abs() <= 4.0 * self.empirical_se
    }
}

/// Expected squared error between the clean mean and the mean of `ŷ_i + e_i`, with
/// `e_i ~ Normal(error_means[i], error_vars[i])` drawn independently of `ŷ_i`.
pub fn finite_data_check(
    models: &[NoiseModel],
    error_means: &[f64],
    error_vars: &[f64],
    n_trials: usize,
    seed: u64,
) -> Result<FiniteDataReport> {
    let n = models.len();
    if n == 0 || error_means.len() != n || error_vars.len() != n {
        return Err(Error::Contract(format!(
            "finite-data lists must be non-empty and equal length (models {n}, means {}, vars {})",
            error_means.len(),
            error_vars.len()
        )));
    }
    if n_trials < 2 {
        return Err(domain("n_trials", n_trials as f64, "must be >= 2"));
    }
    let errors: Vec<Normal<f64>> = error_means
        .iter()
        .zip(error_vars)
        .map(|(&m, &v)| {
            if !(v >= 0.0) {
                return Err(domain("error variance", v, "must be >= 0"));
            }
            Normal::new(m, v.sqrt()).map_err(|e| Error::Contract(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let clean: f64 = models.iter().map(NoiseModel::mean).sum::<f64>() / n as f64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n_trials {
        let mut total = 0.0;
        for (m, e) in models.iter().zip(&errors) {
            total += m.draw(&mut rng) + e.sample(&mut rng);
        }
        let d = total / n as f64 - clean;
        s1 += d * d;
        s2 += d * d * d * d;
    }
    let t = n_trials as f64;
    let empirical = s1 / t;
    let var = (s2 / t - empirical * empirical) * t / (t - 1.0);
    let avg_var = models.iter().zip(error_vars).map(|(m, v)| m.variance() + v).sum::<f64>() / n as f64;
    let avg_bias = error_means.iter().sum::<f64>() / n as f64;
    Ok(FiniteDataReport {
        pixels: n,
        trials: n_trials,
        empirical,
        empirical_se: (var / t).sqrt(),
        closed_form: avg_var / n as f64 + avg_bias * avg_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tonemap::ToneMap;

    const N: usize = 200_000;

    fn run(spec: LossSpec, model: NoiseModel) -> OracleResult {
        empirical_minimizer(&spec, &model, 7, N, &OracleSearch::default()).unwrap()
    }

    #[test]
    fn l2_recovers_two_point_mean() {
        let spec = LossSpec::untonemapped(LossKind::L2, 0.01).unwrap();
        let r = run(spec, NoiseModel::two_point(1.0, 1.0).unwrap());
        assert!((r.empirical_argmin - 1.0).abs() <= 3.0 * r.mc_standard_error);
        assert_eq!(r.interval, BiasInterval::point(1.0));
        assert_eq!(r.local_minima, 1);
    }

    #[test]
    fn reinhard_l2_matches_tone_mean_and_interval() {
        let spec = LossSpec::new(LossKind::L2, Placement::Both, ToneMap::Reinhard, 0.01).unwrap();
        let model = NoiseModel::with_relative_variance(Family::Lognormal, 1.0, 0.5).unwrap();
        let samples = model.sample(11, N);
        let r = minimize_on_samples(&spec, &model, &samples, &OracleSearch::default()).unwrap();
        let tone_mean = samples.iter().map(|&v| ToneMap::Reinhard.value(v)).sum::<f64>() / N as f64;
        let direct = ToneMap::Reinhard.inverse(tone_mean).unwrap();
        assert!((r.empirical_argmin - direct).abs() <= 3.0 * r.mc_standard_error);
        assert!((r.interval.lower - 0.6).abs() < 1e-12 && (r.interval.upper - 1.0).abs() < 1e-12);
        assert!(r.interval.contains(r.empirical_argmin, 0.0));
    }

    #[test]
    fn hdr_star_root_is_sample_mean() {
        let spec = LossSpec::untonemapped(LossKind::HdrStar, 0.01).unwrap();
        let model = NoiseModel::gamma(3.0, 2.0).unwrap();
        let r = run(spec, model);
        assert!((r.empirical_argmin - r.closed_form).abs() <= 1e-5 * r.closed_form);
        assert!((r.empirical_argmin - 3.0).abs() <= 3.0 * r.mc_standard_error);
    }

    #[test]
    fn boundary_cell_brackets_to_zero() {
        let xs = log_grid(1e-3, 1.0, 16);
        let x = refine_argmin(|x| (x - 1e-4).powi(2), &xs, 0, 1e-9);
        assert!((x - 1e-4).abs() < 1e-10);
        let deep = refine_argmin(|x| (x.ln() - (3e-12f64).ln()).powi(2), &xs, 0, 1e-9);
        assert!((deep - 3e-12).abs() < 1e-18);
        assert_eq!(refine_argmin(|x| x, &xs, 0, 1e-9), 0.0);
    }

    #[test]
    fn local_minima_counting() {
        assert_eq!(count_local_minima(&[3.0, 2.0, 1.0, 2.0]), 1);
        assert_eq!(count_local_minima(&[3.0, 1.0, 2.0, 1.0, 4.0]), 2);
        assert_eq!(count_local_minima(&[1.0, 2.0, 3.0]), 1);
        assert_eq!(count_local_minima(&[5.0, 5.0, 5.0]), 1);
        assert_eq!(count_local_minima(&[2.0, 2.0 + 1e-15, 2.0, 1.0, 3.0]), 1);
    }

    #[test]
    fn rejects_small_sample_counts() {
        let spec = LossSpec::untonemapped(LossKind::L2, 0.01).unwrap();
        let m = NoiseModel::gamma(1.0, 2.0).unwrap();
        assert!(empirical_minimizer(&spec, &m, 1, 100, &OracleSearch::default()).is_err());
    }

    #[test]
    fn finite_data_examples() {
        let m = NoiseModel::two_point(1.0, 1.0).unwrap();
        let r = finite_data_check(&[m], &[0.0], &[0.0], 200_000, 5).unwrap();
        assert_eq!(r.closed_form, 1.0);
        assert!(r.agrees(), "{r:?}");

        let models = vec![NoiseModel::gamma(2.0, 4.0).unwrap(); 10];
        let r = finite_data_check(&models, &[0.3; 10], &[0.0; 10], 100_000, 6).unwrap();
        assert!((r.closed_form - (1.0 / 10.0 + 0.09)).abs() < 1e-15);
        assert!(r.agrees(), "{r:?}");

        assert!(finite_data_check(&models, &[0.0; 3], &[0.0; 10], 10, 1).is_err());
    }
}
