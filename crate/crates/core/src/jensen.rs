//! Jensen-gap bound functions `J₋(y) ≤ (E[φ(X)] − φ(E[X])) / Var(X) ≤ J₊(y)` for the composed
//! nonlinearities that appear inside the loss minimizers, and the minimizer intervals built from them.

use std::collections::HashMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::{OnceLock, RwLock};

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::error::{domain, unknown, Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::search::{aitken, golden_min, log_grid};
use crate::tonemap::ToneMap;

/// Outer function `g` applied to the tone-mapped value `t = T(ŷ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    /// `t`
    Tone,
    /// `t²`
    Square,
    /// `1/(t+ε)²`
    InvShiftedSquare,
    /// `t/(t+ε)²`
    ShiftedRatio,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Tone, Shape::Square, Shape::InvShiftedSquare, Shape::ShiftedRatio];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Tone => "tone",
            Shape::Square => "square",
            Shape::InvShiftedSquare => "inv_shifted_square",
            Shape::ShiftedRatio => "shifted_ratio",
        }
    }

    fn uses_epsilon(self) -> bool {
        matches!(self, Shape::InvShiftedSquare | Shape::ShiftedRatio)
    }

    /// `(g, g', g'')` at `t`.
    #[inline]
    fn eval(self, t: f64, e: f64) -> (f64, f64, f64) {
        match self {
            Shape::Tone => (t, 1.0, 0.0),
            Shape::Square => (t * t, 2.0 * t, 2.0),
            Shape::InvShiftedSquare => {
                let s = t + e;
                let s2 = s * s;
                (1.0 / s2, -2.0 / (s2 * s), 6.0 / (s2 * s2))
            }
            Shape::ShiftedRatio => {
                let s = t + e;
                let s2 = s * s;
                (t / s2, (e - t) / (s2 * s), (2.0 * t - 4.0 * e) / (s2 * s2))
            }
        }
    }
}

/// `φ(ŷ) = g(T(ŷ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiFunction {
    shape: Shape,
    map: ToneMap,
    epsilon: f64,
}

impl PhiFunction {
    pub fn new(shape: Shape, map: ToneMap, epsilon: f64) -> Result<Self> {
        if shape.uses_epsilon() && !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(domain("epsilon", epsilon, "must be finite and > 0"));
        }
        let epsilon = if shape.uses_epsilon() { epsilon } else { 0.0 };
        Ok(PhiFunction { shape, map, epsilon })
    }

    pub fn identity() -> Self {
        PhiFunction { shape: Shape::Tone, map: ToneMap::Identity, epsilon: 0.0 }
    }

    pub fn square() -> Self {
        PhiFunction { shape: Shape::Square, map: ToneMap::Identity, epsilon: 0.0 }
    }

    /// The fourteen tabulated rows, in table order.
    pub fn table(epsilon: f64) -> Result<Vec<PhiFunction>> {
        use Shape::*;
        use ToneMap::*;
        let rows = [
            (Tone, Reinhard),
            (Tone, Gamma),
            (Tone, ReinhardGamma),
            (InvShiftedSquare, Identity),
            (ShiftedRatio, Identity),
            (InvShiftedSquare, Reinhard),
            (ShiftedRatio, Reinhard),
            (InvShiftedSquare, Gamma),
            (ShiftedRatio, Gamma),
            (InvShiftedSquare, ReinhardGamma),
            (ShiftedRatio, ReinhardGamma),
            (Square, Reinhard),
            (Square, Gamma),
            (Square, ReinhardGamma),
        ];
        rows.iter().map(|&(s, m)| PhiFunction::new(s, m, epsilon)).collect()
    }

    /// Parses an id of the form `shape:tonemap`, e.g. `shifted_ratio:gamma`.
    pub fn parse(id: &str, epsilon: f64) -> Result<Self> {
        let valid: Vec<String> = Shape::ALL
            .iter()
            .flat_map(|s| ToneMap::ALL.iter().map(move |m| format!("{}:{}", s.name(), m.name())))
            .collect();
        let bad = || {
            let refs: Vec<&str> = valid.iter().map(String::as_str).collect();
            unknown("phi", id, &refs)
        };
        let (s, m) = id.split_once(':').ok_or_else(bad)?;
        let shape = Shape::ALL.into_iter().find(|x| x.name() == s).ok_or_else(bad)?;
        let map = m.parse::<ToneMap>().map_err(|_| bad())?;
        PhiFunction::new(shape, map, epsilon)
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.shape.name(), self.map.name())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn map(&self) -> ToneMap {
        self.map
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.shape.uses_epsilon().then_some(self.epsilon)
    }

    pub fn is_table_row(&self) -> bool {
        match self.shape {
            Shape::Tone | Shape::Square => {
                matches!(self.map, ToneMap::Reinhard | ToneMap::Gamma | ToneMap::ReinhardGamma)
            }
            _ => self.map != ToneMap::InputLog,
        }
    }

    /// Rows whose upper bound has no closed form.
    pub fn numeric_only_upper(&self) -> bool {
        self.shape == Shape::ShiftedRatio && matches!(self.map, ToneMap::Gamma | ToneMap::ReinhardGamma)
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        self.shape.eval(self.map.value(y), self.epsilon).0
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        let (_, g1, _) = self.shape.eval(self.map.value(y), self.epsilon);
        g1 * self.map.derivative(y)
    }

    #[inline]
    pub fn second_derivative(&self, y: f64) -> f64 {
        let (_, g1, g2) = self.shape.eval(self.map.value(y), self.epsilon);
        let d1 = self.map.derivative(y);
        let d2 = self.map.second_derivative(y);
        if g2 == 0.0 {
            g1 * d2
        } else {
            g2 * d1 * d1 + g1 * d2
        }
    }
}

impl fmt::Display for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(12).unwrap()))
}

const NEAR: f64 = 0.05;

/// `h(x, µ)` without domain checks; `x = 0` is allowed.
fn h_raw(phi: &PhiFunction, x: f64, mu: f64) -> f64 {
    let d = x - mu;
    if d.abs() <= NEAR * mu {
        // Integral remainder of the first-order Taylor expansion; avoids cancellation near µ.
        return legendre().integrate(0.0, 1.0, |s| (1.0 - s) * phi.second_derivative(mu + s * d));
    }
    (phi.value(x) - phi.value(mu)) / (d * d) - phi.derivative(mu) / d
}

/// `h(x, µ) = (φ(x) − φ(µ))/(x − µ)² − φ'(µ)/(x − µ)`, continuously extended by `φ''(µ)/2` at `x = µ`.
pub fn h(phi: &PhiFunction, x: f64, mu: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain("x", x, "must be > 0"));
    }
    if !(mu > 0.0) {
        return Err(domain("mu", mu, "must be > 0"));
    }
    Ok(h_raw(phi, x, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Analytic,
    Numeric,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Analytic => "ANALYTIC",
            Method::Numeric => "NUMERIC",
        }
    }
}

/// `J₋` and `J₊` at one `y`, with how each side was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub minus: f64,
    pub plus: f64,
    pub method: [Method; 2],
}

impl BoundPair {
    pub fn abs_max(&self) -> f64 {
        self.minus.abs().max(self.plus.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    pub points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub rel_tol: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid { points: 4096, x_min: 1e-8, x_max: 1e8, rel_tol: 1e-8 }
    }
}

/// Closed-form bound functions for a tabulated row (plus the identity and square).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticJ {
    phi: PhiFunction,
}

pub fn analytic_j(phi: &PhiFunction) -> Result<AnalyticJ> {
    if phi.is_table_row() || *phi == PhiFunction::identity() || *phi == PhiFunction::square() {
        Ok(AnalyticJ { phi: *phi })
    } else {
        let rows: Vec<String> = PhiFunction::table(0.01)?.iter().map(PhiFunction::id).collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        Err(unknown("table row", &phi.id(), &refs))
    }
}

fn p11(y: f64, k: f64) -> f64 {
    y.powf(k / 11.0)
}

impl AnalyticJ {
    pub fn phi(&self) -> &PhiFunction {
        &self.phi
    }

    pub fn methods(&self) -> [Method; 2] {
        let upper = if self.phi.numeric_only_upper() { Method::Numeric } else { Method::Analytic };
        [Method::Analytic, upper]
    }

    pub fn j_minus(&self, y: f64) -> f64 {
        use Shape::*;
        use ToneMap::*;
        let e = self.phi.epsilon;
        match (self.phi.shape, self.phi.map) {
            (Tone, Reinhard) => -1.0 / ((y + 1.0) * (y + 1.0)),
            (Tone, Gamma) => -6.0 / (11.0 * p11(y, 17.0)),
            (Tone, ReinhardGamma) => -(11.0 * y + 6.0) / (11.0 * p11(y, 17.0) * p11(y + 1.0, 16.0)),
            (ShiftedRatio, Identity) => -2.0 / (e + y).powi(3),
            (ShiftedRatio, Reinhard) => {
                let s = e * y + e + y;
                -(s + 2.0) / s.powi(3)
            }
            (ShiftedRatio, Gamma) => {
                -2.0 * (3.0 * e * y + 8.0 * p11(y, 16.0)) / (11.0 * p11(y, 28.0) * (e + p11(y, 5.0)).powi(3))
            }
            (ShiftedRatio, ReinhardGamma) => {
                let q5 = p11(y + 1.0, 5.0);
                let num = 11.0 * e * y * y * q5 + 6.0 * e * y * q5 + 11.0 * p11(y, 27.0) + 16.0 * p11(y, 16.0);
                let den = 11.0 * p11(y, 28.0) * p11(y + 1.0, 6.0) * (e * q5 + p11(y, 5.0)).powi(3);
                -num / den
            }
            (Square, Identity) => 1.0,
            (Square, Reinhard) => -(y * y) / (y + 1.0).powi(4),
            (Square, Gamma) => -1.0 / (11.0 * p11(y, 12.0)),
            (Square, ReinhardGamma) => -(11.0 * y + 1.0) / (11.0 * p11(y, 12.0) * p11(y + 1.0, 21.0)),
            _ => 0.0,
        }
    }

    /// `None` for the rows that are only available numerically.
    pub fn j_plus(&self, y: f64) -> Option<f64> {
        use Shape::*;
        use ToneMap::*;
        let e = self.phi.epsilon;
        Some(match (self.phi.shape, self.phi.map) {
            _ if self.phi.numeric_only_upper() => return None,
            (InvShiftedSquare, Identity) => (3.0 * e + y) / (e * e * (e + y).powi(3)),
            // The tabulated expression is the interior maximum of h, which exists only while
            // T(y) > ε; below that the supremum is the x → ∞ limit, zero.
            (ShiftedRatio, Identity) if y > e => (y - e).powi(2) / (4.0 * e * (e + y).powi(4)),
            (ShiftedRatio, Reinhard) if ToneMap::Reinhard.value(y) > e => {
                let s = e * y + e + y;
                (e + 1.0).powi(2) * (e * y + e - y).powi(2) / (4.0 * e * s.powi(4))
            }
            (InvShiftedSquare, Reinhard) => {
                let s = e * y + e + y;
                (2.0 * e * e * y + 2.0 * e * e + 3.0 * e * y + 3.0 * e + y) / (e * e * s.powi(3))
            }
            (InvShiftedSquare, Gamma) => {
                (12.0 * e * e * y + 33.0 * e * p11(y, 16.0) + 11.0 * p11(y, 21.0))
                    / (11.0 * e * e * p11(y, 28.0) * (e + p11(y, 5.0)).powi(3))
            }
            (InvShiftedSquare, ReinhardGamma) => {
                let num = 22.0 * e * e * y * y
                    + 12.0 * e * e * y
                    + 33.0 * e * p11(y, 16.0) * p11(y + 1.0, 6.0)
                    + 11.0 * p11(y, 21.0) * p11(y + 1.0, 1.0);
                let den = 11.0
                    * e
                    * e
                    * p11(y, 28.0)
                    * p11(y + 1.0, 1.0)
                    * (e * p11(y + 1.0, 5.0) + p11(y, 5.0)).powi(3);
                num / den
            }
            (Square, Identity) => 1.0,
            (Square, Reinhard) if y <= 1.0 => (1.0 - y) / (y + 1.0).powi(3),
            _ => 0.0,
        })
    }
}

/// Infimum and supremum of `h(·, y)` over `(0, ∞)`: a log grid, the two limits, then golden-section
/// refinement of the best interior cell.
pub fn numeric_j(phi: &PhiFunction, y: f64, grid: &SearchGrid) -> Result<BoundPair> {
    if !(y > 0.0) {
        return Err(domain("y", y, "must be > 0"));
    }
    let xs = log_grid(grid.x_min, grid.x_max, grid.points);
    let mut hs = Vec::with_capacity(xs.len());
    for &x in &xs {
        let v = h_raw(phi, x, y);
        if !v.is_finite() {
            return Err(Error::NonFinite { x, mu: y });
        }
        hs.push(v);
    }
    let at_zero = h_raw(phi, 0.0, y);
    let far = [grid.x_max * 1e-2, grid.x_max * 1e-1, grid.x_max].map(|x| h_raw(phi, x, y));
    let at_inf = aitken(far[0], far[1], far[2]);
    let limits: Vec<f64> = [at_zero, at_inf].into_iter().filter(|v| v.is_finite()).collect();

    let extreme = |sign: f64| -> f64 {
        let (i, _) = hs
            .iter()
            .enumerate()
            .min_by(|a, b| (sign * a.1).total_cmp(&(sign * b.1)))
            .unwrap();
        let lo = xs[i.saturating_sub(1)].ln();
        let hi = xs[(i + 1).min(xs.len() - 1)].ln();
        let (_, best) = golden_min(|u| sign * h_raw(phi, u.exp(), y), lo, hi, grid.rel_tol);
        let mut v = (sign * best).min(sign * hs[i]);
        for &l in &limits {
            v = v.min(sign * l);
        }
        sign * v
    };
    Ok(BoundPair {
        minus: extreme(1.0),
        plus: extreme(-1.0),
        method: [Method::Numeric; 2],
    })
}

type CacheKey = (Shape, ToneMap, u64, u64);

fn numeric_cache() -> &'static RwLock<HashMap<CacheKey, BoundPair>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, BoundPair>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Numeric bounds on the default grid, memoized per `(φ, y)`.
pub fn numeric_j_cached(phi: &PhiFunction, y: f64) -> Result<BoundPair> {
    let key = (phi.shape, phi.map, phi.epsilon.to_bits(), y.to_bits());
    if let Some(p) = numeric_cache().read().unwrap().get(&key) {
        return Ok(*p);
    }
    let p = numeric_j(phi, y, &SearchGrid::default())?;
    numeric_cache().write().unwrap().insert(key, p);
    Ok(p)
}

/// Closed forms where available, numeric otherwise.
pub fn j_bounds(phi: &PhiFunction, y: f64) -> Result<BoundPair> {
    match analytic_j(phi) {
        Ok(a) => {
            let minus = a.j_minus(y);
            match a.j_plus(y) {
                Some(plus) => Ok(BoundPair { minus, plus, method: a.methods() }),
                None => {
                    let n = numeric_j_cached(phi, y)?;
                    Ok(BoundPair { minus, plus: n.plus, method: a.methods() })
                }
            }
        }
        Err(_) => numeric_j_cached(phi, y),
    }
}

/// One row of the `max(|J₋|, |J₊|)` curve table. Non-finite values are reported as `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub phi: String,
    pub y: f64,
    pub j_abs_max: f64,
    pub method: Method,
}

pub fn curve_emit(phis: &[PhiFunction], ys: &[f64]) -> Result<Vec<CurveRow>> {
    let mut out = Vec::with_capacity(phis.len() * ys.len());
    for phi in phis {
        let analytic = analytic_j(phi).ok();
        let method = match analytic {
            Some(a) if a.methods() == [Method::Analytic; 2] => Method::Analytic,
            _ => Method::Numeric,
        };
        for &y in ys {
            if y < 0.0 {
                return Err(domain("y", y, "must be >= 0"));
            }
            let value = match (analytic, y > 0.0) {
                (Some(a), _) if a.j_plus(y).is_some() => a.j_minus(y).abs().max(a.j_plus(y).unwrap().abs()),
                (_, true) => j_bounds(phi, y)?.abs_max(),
                (_, false) => f64::INFINITY,
            };
            let value = if value.is_finite() { value } else { f64::INFINITY };
            out.push(CurveRow { phi: phi.id(), y, j_abs_max: value, method });
        }
    }
    Ok(out)
}

/// Agreement tolerance between closed-form and numeric bounds: `max(abs, rel · |closed form|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-5, rel: 1e-4 }
    }
}

impl Tolerance {
    pub fn allows(&self, closed: f64, numeric: f64) -> bool {
        (closed - numeric).abs() <= self.abs.max(self.rel * closed.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// `J₊` has no closed form; only `J₋` was compared.
    #[serde(rename = "SKIPPED-ANALYTIC")]
    SkippedAnalytic,
}

impl RowStatus {
    pub fn name(self) -> &'static str {
        match self {
            RowStatus::Pass => "PASS",
            RowStatus::Fail => "FAIL",
            RowStatus::SkippedAnalytic => "SKIPPED-ANALYTIC",
        }
    }
}

/// Outcome of comparing one row's closed forms against [`numeric_j`] over a set of `y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowReport {
    pub phi: String,
    pub status: RowStatus,
    pub points: usize,
    pub failures: usize,
    /// Largest `|closed − numeric|` divided by the allowed deviation; `≤ 1` passes.
    pub worst_ratio: f64,
    pub worst_y: f64,
    pub worst_side: &'static str,
}

pub fn verify_row(phi: &PhiFunction, ys: &[f64], tol: &Tolerance, grid: &SearchGrid) -> Result<RowReport> {
    let a = analytic_j(phi)?;
    let (mut failures, mut worst_ratio, mut worst_y, mut worst_side) = (0, 0.0f64, f64::NAN, "-");
    for &y in ys {
        let n = numeric_j(phi, y, grid)?;
        let mut sides = vec![("minus", a.j_minus(y), n.minus)];
        if let Some(plus) = a.j_plus(y) {
            sides.push(("plus", plus, n.plus));
        }
        let mut ok = true;
        for (side, closed, numeric) in sides {
            let ratio = (closed - numeric).abs() / tol.abs.max(tol.rel * closed.abs());
            let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            ok &= tol.allows(closed, numeric);
            if ratio > worst_ratio || worst_y.is_nan() {
                (worst_ratio, worst_y, worst_side) = (ratio, y, side);
            }
        }
        failures += usize::from(!ok);
    }
    let status = match (failures, phi.numeric_only_upper()) {
        (0, true) => RowStatus::SkippedAnalytic,
        (0, false) => RowStatus::Pass,
        _ => RowStatus::Fail,
    };
    Ok(RowReport { phi: phi.id(), status, points: ys.len(), failures, worst_ratio, worst_y, worst_side })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasInterval {
    pub lower: f64,
    pub upper: f64,
}

impl BiasInterval {
    pub fn point(v: f64) -> Self {
        BiasInterval { lower: v, upper: v }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower - tol && x <= self.upper + tol
    }
}

/// Whether the `ε` inside the sub-nonlinearities is kept or sent to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    Exact,
    Vanishing,
}

/// Maps a tone-space interval back to radiance. Negative lower ends clamp to 0; an upper end at or
/// past the output bound (or not finite) becomes `+∞`. Decreasing maps swap the ends.
fn tone_to_radiance(
    lo: f64,
    hi: f64,
    inverse: impl Fn(f64) -> Result<f64>,
    increasing: bool,
    bound: Option<f64>,
) -> Result<BiasInterval> {
    let lo = lo.max(0.0);
    let beyond = |t: f64| !t.is_finite() || bound.is_some_and(|b| t >= b);
    let end = |t: f64| if beyond(t) { Ok(f64::INFINITY) } else { inverse(t) };
    let (a, b) = (end(lo)?, end(hi)?);
    let (lower, upper) = if increasing { (a, b) } else { (b, a) };
    Ok(BiasInterval { lower, upper: upper.max(lower) })
}

/// Interval for the expected-loss minimizer given only the clean value `y` and `Var(ŷ)`.
pub fn bias_interval(spec: &LossSpec, y: f64, variance: f64, mode: EpsilonMode) -> Result<BiasInterval> {
    if !(variance >= 0.0) {
        return Err(domain("variance", variance, "must be >= 0"));
    }
    if !(y > 0.0) {
        return Err(domain("y", y, "must be > 0"));
    }
    let map = spec.tonemap();
    let e = spec.epsilon();
    let v = variance;
    let t = map.value(y);
    let bounds = |shape: Shape| -> Result<BoundPair> { j_bounds(&PhiFunction::new(shape, map, e)?, y) };
    let (lo, hi) = match spec.kind() {
        LossKind::HdrStar => return Ok(BiasInterval::point(y)),
        LossKind::L2 => {
            let j = bounds(Shape::Tone)?;
            (t + j.minus * v, t + j.plus * v)
        }
        LossKind::Rmse => {
            if mode == EpsilonMode::Vanishing {
                return Ok(BiasInterval { lower: 0.0, upper: f64::INFINITY });
            }
            let ratio = PhiFunction::new(Shape::ShiftedRatio, map, e)?;
            let weight = PhiFunction::new(Shape::InvShiftedSquare, map, e)?;
            let jr = j_bounds(&ratio, y)?;
            let jw = j_bounds(&weight, y)?;
            let num_lo = (ratio.value(y) + jr.minus * v).max(0.0);
            let num_hi = ratio.value(y) + jr.plus * v;
            let den_lo = weight.value(y) + jw.minus * v;
            let den_hi = weight.value(y) + jw.plus * v;
            let upper = if den_lo > 0.0 { num_hi / den_lo } else { f64::INFINITY };
            (num_lo / den_hi, upper)
        }
        LossKind::Hdr => {
            let e = if mode == EpsilonMode::Vanishing { 0.0 } else { e };
            let j1 = bounds(Shape::Tone)?;
            let j2 = bounds(Shape::Square)?;
            let num_lo = (t * t + j2.minus * v + e * (t + j1.minus * v)).max(0.0);
            let num_hi = t * t + j2.plus * v + e * (t + j1.plus * v);
            let den_lo = t + j1.minus * v + e;
            let den_hi = t + j1.plus * v + e;
            let upper = if den_lo > 0.0 { num_hi / den_lo } else { f64::INFINITY };
            (num_lo / den_hi, upper)
        }
    };
    tone_to_radiance(lo, hi, |u| map.inverse(u), map.increasing(), map.output_bound())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Placement;
    use proptest::prelude::*;

    const E: f64 = 0.01;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn table_has_fourteen_rows_and_two_numeric_uppers() {
        let t = PhiFunction::table(E).unwrap();
        assert_eq!(t.len(), 14);
        assert_eq!(t.iter().filter(|p| p.numeric_only_upper()).count(), 2);
        assert!(t.iter().all(PhiFunction::is_table_row));
        assert!(!PhiFunction::identity().is_table_row());
    }

    #[test]
    fn parse_ids() {
        for p in PhiFunction::table(E).unwrap() {
            assert_eq!(PhiFunction::parse(&p.id(), E).unwrap(), p);
        }
        assert!(PhiFunction::parse("cube:gamma", E).is_err());
        assert!(PhiFunction::parse("tone", E).is_err());
        assert!(PhiFunction::new(Shape::ShiftedRatio, ToneMap::Gamma, 0.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut phis = PhiFunction::table(E).unwrap();
        phis.push(PhiFunction::square());
        for phi in phis {
            for i in 0..=60 {
                let y = 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0);
                let h = 1e-3 * y;
                let stencil = |f: &dyn Fn(f64) -> f64| {
                    (8.0 * (f(y + h) - f(y - h)) - (f(y + 2.0 * h) - f(y - 2.0 * h))) / (12.0 * h)
                };
                let fd1 = stencil(&|x| phi.value(x));
                let fd2 = stencil(&|x| phi.derivative(x));
                let floor1 = 1e-9 * phi.value(y).abs() / y;
                let floor2 = 1e-9 * phi.derivative(y).abs() / y + floor1 / y;
                let (d1, d2) = (phi.derivative(y), phi.second_derivative(y));
                assert!((d1 - fd1).abs() <= 1e-5 * d1.abs() + floor1, "{phi} y={y}");
                assert!((d2 - fd2).abs() <= 1e-5 * d2.abs() + floor2, "{phi} y={y}");
            }
        }
    }

    #[test]
    fn h_examples() {
        let sq = PhiFunction::square();
        for (x, mu) in [(0.3, 2.0), (5.0, 1.0), (1e-6, 1e3), (1.001, 1.0)] {
            assert!((h(&sq, x, mu).unwrap() - 1.0).abs() < 1e-12);
        }
        let id = PhiFunction::identity();
        assert_eq!(h(&id, 4.0, 2.0).unwrap(), 0.0);
        let r = PhiFunction::new(Shape::Tone, ToneMap::Reinhard, 0.0).unwrap();
        // Evaluated at 40 digits: -1/12.
        assert!((h(&r, 2.0, 1.0).unwrap() + 0.083_333_333_333_333_33).abs() < 1e-15);
        assert!(h(&r, 0.0, 1.0).is_err());
        assert!(h(&r, 1.0, -1.0).is_err());
    }

    #[test]
    fn h_is_continuous_through_mu() {
        for phi in PhiFunction::table(E).unwrap() {
            let mu = 0.7;
            let at = h(&phi, mu, mu).unwrap();
            let half = 0.5 * phi.second_derivative(mu);
            assert!(rel(at, half) < 1e-12, "{phi}");
            let inside = h(&phi, mu * (1.0 + 0.9 * NEAR), mu).unwrap();
            let outside = h(&phi, mu * (1.0 + 1.1 * NEAR), mu).unwrap();
            assert!(rel(inside, outside) < 0.05, "{phi}");
            let x = mu * (1.0 + NEAR);
            let direct = (phi.value(x) - phi.value(mu)) / (x - mu).powi(2) - phi.derivative(mu) / (x - mu);
            assert!(rel(h(&phi, x, mu).unwrap(), direct) < 1e-9, "{phi}");
        }
    }

    #[test]
    fn analytic_examples() {
        let r = analytic_j(&PhiFunction::new(Shape::Tone, ToneMap::Reinhard, E).unwrap()).unwrap();
        assert_eq!(r.j_minus(1.0), -0.25);
        assert_eq!(r.j_plus(1.0), Some(0.0));
        let r2 = analytic_j(&PhiFunction::new(Shape::Square, ToneMap::Reinhard, E).unwrap()).unwrap();
        assert_eq!(r2.j_plus(2.0), Some(0.0));
        assert_eq!(r2.j_plus(0.0), Some(1.0));
        let g = analytic_j(&PhiFunction::new(Shape::Tone, ToneMap::Gamma, E).unwrap()).unwrap();
        assert!((g.j_minus(1.0) + 6.0 / 11.0).abs() < 1e-16);
        let star = analytic_j(&PhiFunction::new(Shape::ShiftedRatio, ToneMap::Gamma, E).unwrap()).unwrap();
        assert_eq!(star.j_plus(1.0), None);
        assert_eq!(star.methods(), [Method::Analytic, Method::Numeric]);
        assert!(analytic_j(&PhiFunction::new(Shape::Tone, ToneMap::InputLog, E).unwrap()).is_err());
    }

    #[test]
    fn numeric_examples() {
        let g = SearchGrid::default();
        let r = PhiFunction::new(Shape::Tone, ToneMap::Reinhard, E).unwrap();
        let j = numeric_j(&r, 1.0, &g).unwrap();
        assert!((j.minus + 0.25).abs() < 1e-6);
        assert!(j.plus.abs() < 1e-6);
        let id = numeric_j(&PhiFunction::identity(), 3.7, &g).unwrap();
        assert!(id.minus.abs() < 1e-12 && id.plus.abs() < 1e-12);
        let sq = numeric_j(&PhiFunction::square(), 3.0, &g).unwrap();
        assert!((sq.minus - 1.0).abs() < 1e-9 && (sq.plus - 1.0).abs() < 1e-9);
        assert!(numeric_j(&r, 0.0, &g).is_err());
    }

    #[test]
    fn starred_rows_have_reference_values() {
        // Independent 50-digit grid search plus golden refinement.
        let cases = [(ToneMap::Gamma, 1.0, 23.5848), (ToneMap::ReinhardGamma, 1.0, 23.3734)];
        for (map, y, want) in cases {
            let phi = PhiFunction::new(Shape::ShiftedRatio, map, E).unwrap();
            let got = j_bounds(&phi, y).unwrap();
            assert!(rel(got.plus, want) < 1e-5, "{map} {}", got.plus);
            assert_eq!(got.method, [Method::Analytic, Method::Numeric]);
            let again = j_bounds(&phi, y).unwrap();
            assert_eq!(got, again);
        }
    }

    #[test]
    fn curves_at_zero() {
        let rows = curve_emit(
            &[
                PhiFunction::new(Shape::Tone, ToneMap::Reinhard, E).unwrap(),
                PhiFunction::new(Shape::Square, ToneMap::Reinhard, E).unwrap(),
                PhiFunction::new(Shape::Tone, ToneMap::Gamma, E).unwrap(),
                PhiFunction::new(Shape::ShiftedRatio, ToneMap::Gamma, E).unwrap(),
                PhiFunction::identity(),
            ],
            &[0.0, 1.0],
        )
        .unwrap();
        let at = |id: &str, y: f64| rows.iter().find(|r| r.phi == id && r.y == y).unwrap().clone();
        assert_eq!(at("tone:reinhard", 0.0).j_abs_max, 1.0);
        assert_eq!(at("square:reinhard", 0.0).j_abs_max, 1.0);
        assert_eq!(at("tone:gamma", 0.0).j_abs_max, f64::INFINITY);
        assert_eq!(at("shifted_ratio:gamma", 0.0).j_abs_max, f64::INFINITY);
        assert_eq!(at("shifted_ratio:gamma", 1.0).method, Method::Numeric);
        assert_eq!(at("tone:identity", 1.0).j_abs_max, 0.0);
        assert_eq!(at("tone:gamma", 1.0).method, Method::Analytic);
    }

    #[test]
    fn interval_examples() {
        let s = LossSpec::new(LossKind::L2, Placement::Both, ToneMap::Identity, E).unwrap();
        assert_eq!(bias_interval(&s, 5.0, 2.0, EpsilonMode::Exact).unwrap(), BiasInterval::point(5.0));

        let s = LossSpec::untonemapped(LossKind::Hdr, E).unwrap();
        let i = bias_interval(&s, 2.0, 1.0, EpsilonMode::Vanishing).unwrap();
        assert!((i.lower - 2.5).abs() < 1e-15 && (i.upper - 2.5).abs() < 1e-15);
        let i = bias_interval(&s, 2.0, 1.0, EpsilonMode::Exact).unwrap();
        assert!((i.lower - (4.0 + 1.0 + 0.02) / 2.01).abs() < 1e-15);

        // T_R(1) = 1/2, J₋(1) = -1/4, J₊ = 0: tone interval [0.375, 0.5].
        let s = LossSpec::new(LossKind::L2, Placement::Both, ToneMap::Reinhard, E).unwrap();
        let i = bias_interval(&s, 1.0, 0.5, EpsilonMode::Exact).unwrap();
        assert!((i.lower - 0.6).abs() < 1e-15);
        assert!((i.upper - 1.0).abs() < 1e-15);

        for kind in [LossKind::L2, LossKind::HdrStar] {
            let s = LossSpec::untonemapped(kind, E).unwrap();
            assert_eq!(bias_interval(&s, 3.0, 9.0, EpsilonMode::Exact).unwrap(), BiasInterval::point(3.0));
        }
        assert!(bias_interval(&s, 1.0, -1.0, EpsilonMode::Exact).is_err());
    }

    #[test]
    fn saturated_upper_ends_are_unbounded() {
        let s = LossSpec::new(LossKind::Rmse, Placement::Both, ToneMap::Reinhard, E).unwrap();
        let i = bias_interval(&s, 50.0, 1e6, EpsilonMode::Exact).unwrap();
        assert_eq!(i.upper, f64::INFINITY);
        let v = LossSpec::new(LossKind::Rmse, Placement::Both, ToneMap::Gamma, E).unwrap();
        let i = bias_interval(&v, 1.0, 1.0, EpsilonMode::Vanishing).unwrap();
        assert_eq!((i.lower, i.upper), (0.0, f64::INFINITY));
    }

    #[test]
    fn decreasing_map_swaps_ends() {
        // T(v) = 1/(1+v), T⁻¹(t) = 1/t - 1.
        let inv = |t: f64| Ok(1.0 / t - 1.0);
        let i = tone_to_radiance(0.25, 0.5, inv, false, Some(1.0)).unwrap();
        assert_eq!((i.lower, i.upper), (1.0, 3.0));
        let i = tone_to_radiance(-0.1, 0.5, Ok, true, None).unwrap();
        assert_eq!((i.lower, i.upper), (0.0, 0.5));
    }

    proptest! {
        #[test]
        fn ordering_holds(ly in -4.6f64..4.6) {
            let y = ly.exp();
            for phi in PhiFunction::table(E).unwrap() {
                let j = j_bounds(&phi, y).unwrap();
                prop_assert!(j.minus <= j.plus, "{} y={}", phi, y);
            }
        }

        #[test]
        fn analytic_bounds_bracket_h(ly in -4.6f64..4.6, lx in -12.0f64..12.0) {
            let (y, x) = (ly.exp(), lx.exp());
            for phi in PhiFunction::table(E).unwrap().into_iter().filter(|p| !p.numeric_only_upper()) {
                let a = analytic_j(&phi).unwrap();
                let hv = h(&phi, x, y).unwrap();
                let slack = 1e-9 * (1.0 + hv.abs());
                prop_assert!(hv >= a.j_minus(y) - slack, "{} y={} x={} h={}", phi, y, x, hv);
                prop_assert!(hv <= a.j_plus(y).unwrap() + slack, "{} y={} x={} h={}", phi, y, x, hv);
            }
        }

        #[test]
        fn intervals_are_ordered(ly in -2.3f64..2.3, lv in -6.0f64..3.0) {
            let (y, v) = (ly.exp(), lv.exp());
            for s in LossSpec::sweep(E).unwrap() {
                for mode in [EpsilonMode::Exact, EpsilonMode::Vanishing] {
                    let i = bias_interval(&s, y, v, mode).unwrap();
                    prop_assert!(i.lower >= 0.0 && i.lower <= i.upper, "{} {:?}", s, i);
                }
            }
        }
    }
}
