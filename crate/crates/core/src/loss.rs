//! Loss functions with tone-map placement, their gradients, and closed-form expected-loss minimizers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, unknown, Error, Result};
use crate::tonemap::ToneMap;

pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "L2", alias = "l2")]
    L2,
    #[serde(rename = "RMSE", alias = "rmse")]
    Rmse,
    #[serde(rename = "HDR", alias = "hdr")]
    Hdr,
    #[serde(rename = "HDR_STAR", alias = "hdr_star")]
    HdrStar,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::L2, LossKind::Rmse, LossKind::Hdr, LossKind::HdrStar];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "L2",
            LossKind::Rmse => "RMSE",
            LossKind::Hdr => "HDR",
            LossKind::HdrStar => "HDR_STAR",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| unknown("loss", s, &LossKind::ALL.map(LossKind::name)))
    }
}

/// Where the tone map is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    None,
    /// The model output is already in tone space; only the target is mapped.
    #[serde(rename = "target", alias = "target_only")]
    TargetOnly,
    Both,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::None, Placement::TargetOnly, Placement::Both];

    pub fn name(self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::TargetOnly => "target",
            Placement::Both => "both",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Placement::None),
            "target" | "target_only" => Ok(Placement::TargetOnly),
            "both" => Ok(Placement::Both),
            _ => Err(unknown("placement", s, &["none", "target", "both"])),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LossSpecRepr {
    kind: LossKind,
    placement: Placement,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_tonemap")]
    tonemap: ToneMap,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_tonemap() -> ToneMap {
    ToneMap::Identity
}

/// A validated loss configuration. With `Placement::None` the tone map is always identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossSpecRepr", into = "LossSpecRepr")]
pub struct LossSpec {
    kind: LossKind,
    placement: Placement,
    epsilon: f64,
    tonemap: ToneMap,
}

impl TryFrom<LossSpecRepr> for LossSpec {
    type Error = Error;

    fn try_from(r: LossSpecRepr) -> Result<Self> {
        LossSpec::new(r.kind, r.placement, r.tonemap, r.epsilon)
    }
}

impl From<LossSpec> for LossSpecRepr {
    fn from(s: LossSpec) -> Self {
        LossSpecRepr {
            kind: s.kind,
            placement: s.placement,
            epsilon: s.epsilon,
            tonemap: s.tonemap,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, placement: Placement, tonemap: ToneMap, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(domain("epsilon", epsilon, "must be finite and > 0"));
        }
        if kind == LossKind::HdrStar && placement != Placement::None {
            return Err(Error::Contract(
                "HDR_STAR is only defined with placement `none`".into(),
            ));
        }
        let tonemap = if placement == Placement::None {
            ToneMap::Identity
        } else {
            tonemap
        };
        Ok(LossSpec {
            kind,
            placement,
            epsilon,
            tonemap,
        })
    }

    pub fn untonemapped(kind: LossKind, epsilon: f64) -> Result<Self> {
        LossSpec::new(kind, Placement::None, ToneMap::Identity, epsilon)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tonemap(&self) -> ToneMap {
        self.tonemap
    }

    /// Short label such as `HDR/both/reinhard_gamma`.
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.kind, self.placement, self.tonemap)
    }

    /// The 22 distinct configurations: four untonemapped losses, then
    /// {L2, RMSE, HDR} x {target, both} x {reinhard, gamma, reinhard_gamma}.
    pub fn sweep(epsilon: f64) -> Result<Vec<LossSpec>> {
        let mut out = Vec::with_capacity(22);
        for kind in LossKind::ALL {
            out.push(LossSpec::untonemapped(kind, epsilon)?);
        }
        for placement in [Placement::TargetOnly, Placement::Both] {
            for kind in [LossKind::L2, LossKind::Rmse, LossKind::Hdr] {
                for map in [ToneMap::Reinhard, ToneMap::Gamma, ToneMap::ReinhardGamma] {
                    out.push(LossSpec::new(kind, placement, map, epsilon)?);
                }
            }
        }
        Ok(out)
    }

    /// Target as seen by the loss: `T(ŷ)` unless placement is `None`.
    #[inline]
    pub fn target_side(&self, target: f64) -> f64 {
        match self.placement {
            Placement::None => target,
            _ => self.tonemap.value(target),
        }
    }

    /// Model output as seen by the loss, with its derivative w.r.t. the model output.
    #[inline]
    pub fn output_side(&self, output: f64) -> (f64, f64) {
        match self.placement {
            Placement::Both => (self.tonemap.value(output), self.tonemap.derivative(output)),
            _ => (output, 1.0),
        }
    }

    /// Loss between already-placed operands `a` (output side) and `b` (target side).
    #[inline]
    pub fn value_placed(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        match self.kind {
            LossKind::L2 => d * d,
            LossKind::Rmse => d * d / ((b + self.epsilon) * (b + self.epsilon)),
            LossKind::Hdr | LossKind::HdrStar => d * d / ((a + self.epsilon) * (a + self.epsilon)),
        }
    }

    /// dL/da for already-placed operands.
    #[inline]
    pub fn gradient_placed(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        let e = self.epsilon;
        match self.kind {
            LossKind::L2 => 2.0 * d,
            LossKind::Rmse => 2.0 * d / ((b + e) * (b + e)),
            LossKind::Hdr => 2.0 * d * (b + e) / (a + e).powi(3),
            LossKind::HdrStar => 2.0 * d / ((a + e) * (a + e)),
        }
    }

    fn check(output: f64, target: f64) -> Result<()> {
        if !(output >= 0.0) {
            return Err(domain("model output", output, "must be >= 0"));
        }
        if !(target >= 0.0) {
            return Err(domain("target", target, "must be >= 0"));
        }
        Ok(())
    }

    pub fn loss_value(&self, output: f64, target: f64) -> Result<f64> {
        Self::check(output, target)?;
        Ok(self.value_placed(self.output_side(output).0, self.target_side(target)))
    }

    /// d loss / d model output. For `HDR_STAR` the `(ỹ+ε)²` denominator is held constant.
    pub fn loss_gradient(&self, output: f64, target: f64) -> Result<f64> {
        Self::check(output, target)?;
        let (a, da) = self.output_side(output);
        Ok(self.gradient_placed(a, self.target_side(target)) * da)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Expectations over the placed target `b` (`T(ŷ)`, or `ŷ` without tone mapping).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    Mean,
    MeanSquare,
    InvShiftedSquare,
    ShiftedRatio,
    Inverse,
    InverseSquare,
}

impl Moment {
    pub fn name(self) -> &'static str {
        match self {
            Moment::Mean => "E[b]",
            Moment::MeanSquare => "E[b^2]",
            Moment::InvShiftedSquare => "E[1/(b+eps)^2]",
            Moment::ShiftedRatio => "E[b/(b+eps)^2]",
            Moment::Inverse => "E[1/b]",
            Moment::InverseSquare => "E[1/b^2]",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub mean: Option<f64>,
    pub mean_square: Option<f64>,
    pub inv_shifted_square: Option<f64>,
    pub shifted_ratio: Option<f64>,
    pub inverse: Option<f64>,
    pub inverse_square: Option<f64>,
}

impl Moments {
    /// Every moment, computed from `expect(g) = E[g(b)]` where `b` is the placed target.
    pub fn from_expectation(spec: &LossSpec, mut expect: impl FnMut(&dyn Fn(f64) -> f64) -> f64) -> Self {
        let e = spec.epsilon;
        let s = *spec;
        Moments {
            mean: Some(expect(&|y| s.target_side(y))),
            mean_square: Some(expect(&|y| s.target_side(y).powi(2))),
            inv_shifted_square: Some(expect(&|y| (s.target_side(y) + e).powi(-2))),
            shifted_ratio: Some(expect(&|y| {
                let b = s.target_side(y);
                b / ((b + e) * (b + e))
            })),
            inverse: Some(expect(&|y| 1.0 / s.target_side(y))),
            inverse_square: Some(expect(&|y| s.target_side(y).powi(-2))),
        }
    }

    /// Sample moments of the placed targets.
    pub fn from_samples(spec: &LossSpec, samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let e = spec.epsilon;
        let mut acc = [0.0f64; 6];
        for &y in samples {
            let b = spec.target_side(y);
            let w = 1.0 / ((b + e) * (b + e));
            acc[0] += b;
            acc[1] += b * b;
            acc[2] += w;
            acc[3] += b * w;
            acc[4] += 1.0 / b;
            acc[5] += 1.0 / (b * b);
        }
        Moments {
            mean: Some(acc[0] / n),
            mean_square: Some(acc[1] / n),
            inv_shifted_square: Some(acc[2] / n),
            shifted_ratio: Some(acc[3] / n),
            inverse: Some(acc[4] / n),
            inverse_square: Some(acc[5] / n),
        }
    }

    fn get(&self, m: Moment) -> Result<f64> {
        let v = match m {
            Moment::Mean => self.mean,
            Moment::MeanSquare => self.mean_square,
            Moment::InvShiftedSquare => self.inv_shifted_square,
            Moment::ShiftedRatio => self.shifted_ratio,
            Moment::Inverse => self.inverse,
            Moment::InverseSquare => self.inverse_square,
        };
        v.ok_or(Error::MissingMoment(m.name()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerForm {
    pub value: f64,
    pub moment_terms: &'static [Moment],
}

const MEAN: &[Moment] = &[Moment::Mean];
const RMSE_EXACT: &[Moment] = &[Moment::ShiftedRatio, Moment::InvShiftedSquare];
const RMSE_LIMIT: &[Moment] = &[Moment::Inverse, Moment::InverseSquare];
const HDR_TERMS: &[Moment] = &[Moment::MeanSquare, Moment::Mean];

fn to_radiance(spec: &LossSpec, tone: f64, terms: &'static [Moment]) -> Result<MinimizerForm> {
    let value = match spec.placement {
        Placement::None => tone,
        _ => spec.tonemap.inverse(tone)?,
    };
    Ok(MinimizerForm {
        value,
        moment_terms: terms,
    })
}

fn consistent(mean: f64, mean_square: f64) -> Result<()> {
    if mean_square < mean * mean * (1.0 - 1e-12) {
        return Err(Error::Contract(format!(
            "inconsistent moments: E[b^2] = {mean_square} < E[b]^2 = {}",
            mean * mean
        )));
    }
    Ok(())
}

/// Global minimizer of expected loss with ε kept exact. Target-only placement shares the
/// both-sides formula.
pub fn closed_form_minimizer(spec: &LossSpec, moments: &Moments) -> Result<MinimizerForm> {
    let e = spec.epsilon;
    match spec.kind {
        LossKind::L2 | LossKind::HdrStar => to_radiance(spec, moments.get(Moment::Mean)?, MEAN),
        LossKind::Rmse => {
            let r = moments.get(Moment::ShiftedRatio)?;
            let w = moments.get(Moment::InvShiftedSquare)?;
            to_radiance(spec, r / w, RMSE_EXACT)
        }
        LossKind::Hdr => {
            let m1 = moments.get(Moment::Mean)?;
            let m2 = moments.get(Moment::MeanSquare)?;
            consistent(m1, m2)?;
            to_radiance(spec, (m2 + e * m1) / (m1 + e), HDR_TERMS)
        }
    }
}

/// The ε → 0 approximations of the RMSE and HDR minimizers; other kinds match the exact form.
pub fn limit_minimizer(spec: &LossSpec, moments: &Moments) -> Result<MinimizerForm> {
    match spec.kind {
        LossKind::Rmse => {
            let inv = moments.get(Moment::Inverse)?;
            let inv2 = moments.get(Moment::InverseSquare)?;
            to_radiance(spec, inv / inv2, RMSE_LIMIT)
        }
        LossKind::Hdr => {
            let m1 = moments.get(Moment::Mean)?;
            let m2 = moments.get(Moment::MeanSquare)?;
            consistent(m1, m2)?;
            to_radiance(spec, m2 / m1, HDR_TERMS)
        }
        _ => closed_form_minimizer(spec, moments),
    }
}
