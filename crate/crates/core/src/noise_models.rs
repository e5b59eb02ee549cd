//! Noisy-target distributions with known mean and variance, and the bounded-support variance bound.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, unknown, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Gamma,
    Lognormal,
    ScaledBernoulli,
    TwoPoint,
    ClippedLognormal,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gamma,
        Family::Lognormal,
        Family::ScaledBernoulli,
        Family::TwoPoint,
        Family::ClippedLognormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gamma => "GAMMA",
            Family::Lognormal => "LOGNORMAL",
            Family::ScaledBernoulli => "SCALED_BERNOULLI",
            Family::TwoPoint => "TWO_POINT",
            Family::ClippedLognormal => "CLIPPED_LOGNORMAL",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| unknown("noise family", s, &Family::ALL.map(Family::name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: Family,
    pub mean: f64,
    #[serde(default)]
    pub param: Option<f64>,
    #[serde(default)]
    pub support_max: Option<f64>,
}

/// A distribution over `ŷ ≥ 0` with `E[ŷ] = mean`.
///
/// `param` is the gamma shape, the lognormal `σ`, the two-point relative spread `a`
/// (atoms at `mean·(1 ± a)`), or the scaled-Bernoulli atom `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseSpec", into = "NoiseSpec")]
pub struct NoiseModel {
    family: Family,
    mean: f64,
    param: f64,
    support_max: Option<f64>,
    variance: f64,
    location: f64,
}

fn positive(what: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(domain(what, v, "must be finite and > 0"))
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[min(L, M)^p]` for `ln L ~ N(mu, sigma²)`, `p ∈ {1, 2}`.
fn clipped_moment(mu: f64, sigma: f64, max: f64, p: f64) -> f64 {
    let z = (max.ln() - mu) / sigma;
    (p * mu + 0.5 * p * p * sigma * sigma).exp() * normal_cdf(z - p * sigma) + max.powf(p) * normal_cdf(-z)
}

impl NoiseModel {
    pub fn gamma(mean: f64, shape: f64) -> Result<Self> {
        let mean = positive("mean", mean)?;
        let shape = positive("gamma shape", shape)?;
        Ok(NoiseModel {
            family: Family::Gamma,
            mean,
            param: shape,
            support_max: None,
            variance: mean * mean / shape,
            location: 0.0,
        })
    }

    pub fn lognormal(mean: f64, sigma: f64) -> Result<Self> {
        let mean = positive("mean", mean)?;
        let sigma = positive("lognormal sigma", sigma)?;
        Ok(NoiseModel {
            family: Family::Lognormal,
            mean,
            param: sigma,
            support_max: None,
            variance: mean * mean * (sigma * sigma).exp_m1(),
            location: mean.ln() - 0.5 * sigma * sigma,
        })
    }

    /// `M` with probability `mean/M`, otherwise 0.
    pub fn scaled_bernoulli(mean: f64, max: f64) -> Result<Self> {
        let mean = positive("mean", mean)?;
        if !(max >= mean && max.is_finite()) {
            return Err(domain("support max", max, "must be finite and >= mean"));
        }
        Ok(NoiseModel {
            family: Family::ScaledBernoulli,
            mean,
            param: max,
            support_max: Some(max),
            variance: mean * (max - mean),
            location: 0.0,
        })
    }

    /// `mean·(1 − a)` or `mean·(1 + a)` with probability ½ each.
    pub fn two_point(mean: f64, spread: f64) -> Result<Self> {
        let mean = positive("mean", mean)?;
        if !(0.0..=1.0).contains(&spread) {
            return Err(domain("two-point spread", spread, "must lie in [0, 1]"));
        }
        Ok(NoiseModel {
            family: Family::TwoPoint,
            mean,
            param: spread,
            support_max: Some(mean * (1.0 + spread)),
            variance: (spread * mean).powi(2),
            location: 0.0,
        })
    }

    /// `min(L, M)` with `L` lognormal of log-scale `sigma`, its location calibrated so the mean is exact.
    pub fn clipped_lognormal(mean: f64, sigma: f64, max: f64) -> Result<Self> {
        let mean = positive("mean", mean)?;
        let sigma = positive("lognormal sigma", sigma)?;
        if !(max > mean && max.is_finite()) {
            return Err(domain("support max", max, "must be finite and > mean"));
        }
        let mut lo = mean.ln() - 0.5 * sigma * sigma;
        let mut hi = max.ln() + 40.0 * sigma;
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if clipped_moment(mid, sigma, max, 1.0) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let location = 0.5 * (lo + hi);
        let second = clipped_moment(location, sigma, max, 2.0);
        Ok(NoiseModel {
            family: Family::ClippedLognormal,
            mean,
            param: sigma,
            support_max: Some(max),
            variance: (second - mean * mean).max(0.0),
            location,
        })
    }

    /// A model of the given family whose variance is `relative_variance · mean²`.
    pub fn with_relative_variance(family: Family, mean: f64, relative_variance: f64) -> Result<Self> {
        let r = relative_variance;
        if !(r >= 0.0 && r.is_finite()) {
            return Err(domain("relative variance", r, "must be finite and >= 0"));
        }
        if r == 0.0 {
            return NoiseModel::two_point(mean, 0.0);
        }
        match family {
            Family::Gamma => NoiseModel::gamma(mean, 1.0 / r),
            Family::Lognormal => NoiseModel::lognormal(mean, r.ln_1p().sqrt()),
            Family::ScaledBernoulli => NoiseModel::scaled_bernoulli(mean, mean * (1.0 + r)),
            Family::TwoPoint if r <= 1.0 => NoiseModel::two_point(mean, r.sqrt()),
            Family::TwoPoint => Err(domain("relative variance", r, "must be <= 1 for TWO_POINT")),
            Family::ClippedLognormal => Err(Error::Contract(
                "CLIPPED_LOGNORMAL has no relative-variance parametrization".into(),
            )),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn param(&self) -> f64 {
        self.param
    }

    pub fn support_max(&self) -> Option<f64> {
        self.support_max
    }

    /// One draw.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::Gamma => Gamma::new(self.param, self.mean / self.param).unwrap().sample(rng),
            Family::Lognormal => {
                let z: f64 = StandardNormal.sample(rng);
                (self.location + self.param * z).exp()
            }
            Family::ScaledBernoulli => {
                if rng.random::<f64>() * self.param < self.mean {
                    self.param
                } else {
                    0.0
                }
            }
            Family::TwoPoint => {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                self.mean * (1.0 + s * self.param)
            }
            Family::ClippedLognormal => {
                let z: f64 = StandardNormal.sample(rng);
                (self.location + self.param * z).exp().min(self.support_max.unwrap())
            }
        }
    }

    /// `n` draws from a ChaCha20 stream seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        self.sample_stream(seed, 0, n)
    }

    /// `n` draws from stream `stream` of the ChaCha20 generator seeded with `seed`.
    pub fn sample_stream(&self, seed: u64, stream: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// `E[g(ŷ)]` computed exactly for discrete families and by quadrature otherwise.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        match self.family {
            Family::ScaledBernoulli => {
                let p = self.mean / self.param;
                (1.0 - p) * g(0.0) + p * g(self.param)
            }
            Family::TwoPoint => {
                0.5 * g(self.mean * (1.0 - self.param)) + 0.5 * g(self.mean * (1.0 + self.param))
            }
            Family::Gamma => {
                let k = self.param;
                let theta = self.mean / k;
                let norm = ln_gamma(k) + k * theta.ln();
                // In log space: density of u = ln x is x·f(x).
                let f = |u: f64| {
                    let x = u.exp();
                    g(x) * (k * u - x / theta - norm).exp()
                };
                let lo = theta.ln() - 80.0 / k;
                let hi = (theta * (k + 80.0 + 20.0 * k.sqrt())).ln();
                integrate_pieces(f, lo.max(-740.0), hi, 2.0)
            }
            Family::Lognormal => self.expect_normal(&g, 12.0),
            Family::ClippedLognormal => {
                let max = self.support_max.unwrap();
                let zmax = (max.ln() - self.location) / self.param;
                self.expect_normal(&|x: f64| g(x.min(max)), zmax.min(12.0)) + normal_cdf(-zmax) * g(max)
            }
        }
    }

    fn expect_normal(&self, g: &dyn Fn(f64) -> f64, upper: f64) -> f64 {
        let (mu, s) = (self.location, self.param);
        let f = |z: f64| g((mu + s * z).exp()) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if upper <= -12.0 {
            return 0.0;
        }
        integrate_pieces(f, -12.0, upper, 1.0)
    }
}

/// Double-exponential quadrature over `[a, b]` split into pieces no wider than `width`.
fn integrate_pieces(f: impl Fn(f64) -> f64, a: f64, b: f64, width: f64) -> f64 {
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    let step = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let lo = a + step * i as f64;
            let hi = if i + 1 == n { b } else { lo + step };
            quadrature::integrate(&f, lo, hi, 1e-16).integral
        })
        .sum()
}

impl TryFrom<NoiseSpec> for NoiseModel {
    type Error = Error;

    fn try_from(s: NoiseSpec) -> Result<Self> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::Contract(format!("{} requires `{what}`", s.family)))
        };
        match s.family {
            Family::Gamma => NoiseModel::gamma(s.mean, need(s.param, "param")?),
            Family::Lognormal => NoiseModel::lognormal(s.mean, need(s.param, "param")?),
            Family::ScaledBernoulli => {
                NoiseModel::scaled_bernoulli(s.mean, need(s.support_max.or(s.param), "support_max")?)
            }
            Family::TwoPoint => NoiseModel::two_point(s.mean, need(s.param, "param")?),
            Family::ClippedLognormal => NoiseModel::clipped_lognormal(
                s.mean,
                need(s.param, "param")?,
                need(s.support_max, "support_max")?,
            ),
        }
    }
}

impl From<NoiseModel> for NoiseSpec {
    fn from(m: NoiseModel) -> Self {
        NoiseSpec {
            family: m.family,
            mean: m.mean,
            param: Some(m.param),
            support_max: m.support_max,
        }
    }
}

/// Largest variance of a variable on `[0, max]` with the given mean: `(max − mean)·mean`.
pub fn bhatia_davis_bound(mean: f64, max: f64) -> Result<f64> {
    if !(max >= 0.0 && max.is_finite()) {
        return Err(domain("support max", max, "must be finite and >= 0"));
    }
    if !(mean >= 0.0 && mean <= max) {
        return Err(domain("mean", mean, "must lie in [0, support max]"));
    }
    Ok((max - mean) * mean)
}
