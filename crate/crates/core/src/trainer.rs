//! Per-pixel scalar estimators trained by SGD on noisy targets over a synthetic HDR field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::loss::{LossSpec, Placement, DEFAULT_EPSILON};
use crate::noise_models::{Family, NoiseModel};

/// 99th percentile of the standard normal.
const Z99: f64 = 2.326_347_874_040_841;

const FIELD_STREAM: u64 = 0;
const INPUT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub pixels: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Log-normal prior with median 1; `tail_value` is its 99th percentile.
    pub tail_value: f64,
    pub family: Family,
    pub relative_variance: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            pixels: 4096,
            y_min: 1e-4,
            y_max: 1e4,
            tail_value: 100.0,
            family: Family::Lognormal,
            relative_variance: 0.5,
        }
    }
}

/// Clean pixel values, their noise models, and one noisy input draw per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticField {
    clean: Vec<f64>,
    noise: Vec<NoiseModel>,
    input: Vec<f64>,
}

impl SyntheticField {
    pub fn generate(config: &FieldConfig, seed: u64) -> Result<Self> {
        if config.pixels == 0 {
            return Err(domain("pixels", 0.0, "must be >= 1"));
        }
        if !(config.y_min > 0.0 && config.y_max > config.y_min) {
            return Err(domain("y_max", config.y_max, "must exceed y_min > 0"));
        }
        if !(config.tail_value > 1.0) {
            return Err(domain("tail_value", config.tail_value, "must be > 1"));
        }
        let scale = config.tail_value.ln() / Z99;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(FIELD_STREAM);
        let clean: Vec<f64> = (0..config.pixels)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (scale * z).exp().clamp(config.y_min, config.y_max)
            })
            .collect();
        let noise = clean
            .iter()
            .map(|&y| NoiseModel::with_relative_variance(config.family, y, config.relative_variance))
            .collect::<Result<Vec<_>>>()?;
        rng.set_stream(INPUT_STREAM);
        rng.set_word_pos(0);
        let input = noise.iter().map(|m| m.draw(&mut rng)).collect();
        Ok(SyntheticField { clean, noise, input })
    }

    pub fn clean(&self) -> &[f64] {
        &self.clean
    }

    pub fn noise(&self) -> &[NoiseModel] {
        &self.noise
    }

    /// The noisy input `x̂_i`; training starts from it.
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// Validation rMSE of the noisy input itself.
    pub fn input_rmse(&self) -> Result<f64> {
        validation_rmse(&self.input, &self.clean, DEFAULT_EPSILON)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 20_000, lr: 0.05, batch: 256, clip: 1e3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Converged,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub step: usize,
    /// Mean per-sample training loss over the steps since the previous checkpoint.
    pub train_loss: f64,
    /// Largest finite pre-clip gradient norm since the previous checkpoint.
    pub grad_norm_preclip: f64,
    /// Largest gradient norm actually applied since the previous checkpoint.
    pub grad_norm_applied: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub spec: LossSpec,
    pub config: TrainConfig,
    pub curves: Vec<Checkpoint>,
    /// Trained `ỹ_i` in radiance.
    pub final_estimates: Vec<f64>,
    pub skipped_steps: usize,
    pub status: RunStatus,
    /// Largest finite pre-clip gradient norm of the whole run.
    pub grad_norm_max: f64,
}

impl TrainRun {
    pub fn final_rmse(&self) -> f64 {
        self.curves.last().map_or(f64::NAN, |c| c.val_rmse)
    }
}

/// Mean over pixels of `(ỹ_i − y_i)²/(y_i + ε)²`.
pub fn validation_rmse(estimates: &[f64], clean: &[f64], epsilon: f64) -> Result<f64> {
    if estimates.len() != clean.len() || clean.is_empty() {
        return Err(Error::Contract(format!(
            "validation needs equal non-empty lengths, got {} estimates and {} clean values",
            estimates.len(),
            clean.len()
        )));
    }
    let sum: f64 = estimates
        .iter()
        .zip(clean)
        .map(|(&e, &y)| {
            let d = (e - y) / (y + epsilon);
            d * d
        })
        .sum();
    Ok(sum / clean.len() as f64)
}

/// The trainable parameter of one pixel.
///
/// Outputs in radiance are stored as `θ = ln ỹ`; outputs in tone space (target-only placement)
/// are stored directly and projected onto the map's range.
struct Parametrization {
    spec: LossSpec,
    upper: f64,
}

impl Parametrization {
    fn new(spec: LossSpec) -> Self {
        let upper = spec.tonemap().output_bound().map_or(f64::INFINITY, |b| b * (1.0 - 1e-12));
        Parametrization { spec, upper }
    }

    fn tone_space(&self) -> bool {
        self.spec.placement() == Placement::TargetOnly
    }

    fn init(&self, x: f64, floor: f64) -> f64 {
        if self.tone_space() {
            self.project(self.spec.tonemap().value(x))
        } else {
            x.max(floor).ln()
        }
    }

    /// Model output fed to the loss and its derivative w.r.t. the parameter.
    #[inline]
    fn output(&self, theta: f64) -> (f64, f64) {
        if self.tone_space() {
            (theta, 1.0)
        } else {
            let y = theta.exp();
            (y, y)
        }
    }

    #[inline]
    fn project(&self, theta: f64) -> f64 {
        if self.tone_space() {
            theta.clamp(0.0, self.upper)
        } else {
            theta
        }
    }

    fn radiance(&self, theta: f64) -> Result<f64> {
        if self.tone_space() {
            self.spec.tonemap().inverse(theta)
        } else {
            Ok(theta.exp())
        }
    }
}

/// Trains one estimator per pixel. Every step samples `batch` pixels with replacement, draws a
/// fresh noisy target for each, and applies one clipped SGD update.
pub fn train(field: &SyntheticField, spec: &LossSpec, config: &TrainConfig) -> Result<TrainRun> {
    if config.steps == 0 {
        return Err(domain("steps", 0.0, "steps ≥ 1"));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(domain("lr", config.lr, "must be finite and > 0"));
    }
    if config.batch == 0 {
        return Err(domain("batch", 0.0, "must be >= 1"));
    }
    if !(config.clip > 0.0) {
        return Err(domain("clip", config.clip, "must be > 0"));
    }
    if field.is_empty() {
        return Err(Error::Contract("field has no pixels".into()));
    }
    let param = Parametrization::new(*spec);
    let floor = field.clean.iter().copied().fold(f64::INFINITY, f64::min);
    let mut theta: Vec<f64> = field.input.iter().map(|&x| param.init(x, floor)).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let every = (config.steps / 200).max(1);
    let n = field.len();
    let mut idx = vec![0usize; config.batch];
    let mut grad = vec![0.0f64; config.batch];
    let mut curves = Vec::with_capacity(config.steps / every + 1);
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let (mut pre_max, mut applied_max) = (0.0f64, 0.0f64);
    let mut grad_norm_max = 0.0f64;
    let mut skipped_steps = 0;
    let mut estimates = vec![0.0; n];

    for step in 1..=config.steps {
        let mut norm_sq = 0.0;
        let mut batch_loss = 0.0;
        for (slot, g) in idx.iter_mut().zip(grad.iter_mut()) {
            let i = rng.random_range(0..n);
            *slot = i;
            let target = field.noise[i].draw(&mut rng);
            let (out, d_out) = param.output(theta[i]);
            let (l, dl) = match (spec.loss_value(out, target), spec.loss_gradient(out, target)) {
                (Ok(l), Ok(dl)) => (l, dl),
                _ => (f64::NAN, f64::NAN),
            };
            batch_loss += l;
            *g = dl * d_out;
            norm_sq += *g * *g;
        }
        let norm = norm_sq.sqrt();
        if norm.is_finite() {
            pre_max = pre_max.max(norm);
            grad_norm_max = grad_norm_max.max(norm);
            let scale = if norm > config.clip { config.clip / norm } else { 1.0 };
            applied_max = applied_max.max(norm * scale);
            for (&i, &g) in idx.iter().zip(&grad) {
                theta[i] = param.project(theta[i] - config.lr * scale * g);
            }
            loss_sum += batch_loss / config.batch as f64;
            loss_count += 1;
        } else {
            skipped_steps += 1;
        }
        if step % every == 0 || step == config.steps {
            for (e, &t) in estimates.iter_mut().zip(&theta) {
                *e = param.radiance(t)?;
            }
            curves.push(Checkpoint {
                step,
                train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
                grad_norm_preclip: pre_max,
                grad_norm_applied: applied_max,
                val_rmse: validation_rmse(&estimates, &field.clean, DEFAULT_EPSILON)?,
            });
            (loss_sum, loss_count, pre_max, applied_max) = (0.0, 0, 0.0, 0.0);
        }
    }
    let status = if skipped_steps * 100 > config.steps { RunStatus::Diverged } else { RunStatus::Converged };
    Ok(TrainRun {
        spec: *spec,
        config: *config,
        curves,
        final_estimates: estimates,
        skipped_steps,
        status,
        grad_norm_max,
    })
}

/// Centered running median of odd width `width` (even widths are widened by one); the window is
/// truncated at the ends.
pub fn median_smooth(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w: Vec<f64> = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            if m % 2 == 1 {
                w[m / 2]
            } else {
                0.5 * (w[m / 2 - 1] + w[m / 2])
            }
        })
        .collect()
}
