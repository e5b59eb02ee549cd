//! Scalar tone-mapping operators with first and second derivatives and closed-form inverses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, unknown, Error, Result};

/// Exponent of the gamma compression curve.
pub const GAMMA: f64 = 1.0 / 2.2;
const INV_GAMMA: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneMap {
    Identity,
    Reinhard,
    Gamma,
    ReinhardGamma,
    InputLog,
}

impl ToneMap {
    pub const ALL: [ToneMap; 5] = [
        ToneMap::Identity,
        ToneMap::Reinhard,
        ToneMap::Gamma,
        ToneMap::ReinhardGamma,
        ToneMap::InputLog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToneMap::Identity => "identity",
            ToneMap::Reinhard => "reinhard",
            ToneMap::Gamma => "gamma",
            ToneMap::ReinhardGamma => "reinhard_gamma",
            ToneMap::InputLog => "input_log",
        }
    }

    pub fn increasing(self) -> bool {
        true
    }

    /// Supremum of `value` over `[0, ∞)`, if finite. Never attained.
    pub fn output_bound(self) -> Option<f64> {
        match self {
            ToneMap::Reinhard | ToneMap::ReinhardGamma => Some(1.0),
            _ => None,
        }
    }

    pub fn value(self, v: f64) -> f64 {
        match self {
            ToneMap::Identity => v,
            ToneMap::Reinhard => v / (1.0 + v),
            ToneMap::Gamma => v.powf(GAMMA),
            ToneMap::ReinhardGamma => (v / (1.0 + v)).powf(GAMMA),
            ToneMap::InputLog => 0.1 * v.ln_1p(),
        }
    }

    /// dT/dv. The gamma curves return `+∞` at `v = 0`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            ToneMap::Identity => 1.0,
            ToneMap::Reinhard => 1.0 / ((1.0 + v) * (1.0 + v)),
            ToneMap::Gamma if v == 0.0 => f64::INFINITY,
            ToneMap::Gamma => GAMMA * v.powf(GAMMA - 1.0),
            ToneMap::ReinhardGamma if v == 0.0 => f64::INFINITY,
            ToneMap::ReinhardGamma => GAMMA * self.value(v) / (v * (1.0 + v)),
            ToneMap::InputLog => 0.1 / (1.0 + v),
        }
    }

    /// d²T/dv². The gamma curves return `-∞` at `v = 0`.
    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            ToneMap::Identity => 0.0,
            ToneMap::Reinhard => -2.0 / (1.0 + v).powi(3),
            ToneMap::Gamma if v == 0.0 => f64::NEG_INFINITY,
            ToneMap::Gamma => GAMMA * (GAMMA - 1.0) * v.powf(GAMMA - 2.0),
            ToneMap::ReinhardGamma if v == 0.0 => f64::NEG_INFINITY,
            ToneMap::ReinhardGamma => {
                let s = v * (1.0 + v);
                GAMMA * self.value(v) * (GAMMA - 1.0 - 2.0 * v) / (s * s)
            }
            ToneMap::InputLog => -0.1 / ((1.0 + v) * (1.0 + v)),
        }
    }

    /// Maps a tone value back to radiance.
    pub fn inverse(self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain("tone value", t, "must be >= 0"));
        }
        if let Some(bound) = self.output_bound() {
            if t >= bound {
                return Err(domain("tone value", t, "must be below the output bound 1"));
            }
        }
        Ok(match self {
            ToneMap::Identity => t,
            ToneMap::Reinhard => t / (1.0 - t),
            ToneMap::Gamma => t.powf(INV_GAMMA),
            ToneMap::ReinhardGamma => {
                if t == 0.0 {
                    return Ok(0.0);
                }
                let log_r = INV_GAMMA * t.ln();
                log_r.exp() / -log_r.exp_m1()
            }
            ToneMap::InputLog => (10.0 * t).exp_m1(),
        })
    }
}

impl fmt::Display for ToneMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToneMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToneMap::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| unknown("tone map", s, &ToneMap::ALL.map(ToneMap::name)))
    }
}
