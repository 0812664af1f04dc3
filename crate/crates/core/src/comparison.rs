//! Class-K comparison functions and their dynamic (scaling) factors.
//!
//! Every comparison function `α` is stored through its quasi-linear form
//! `α(v) = s(v)·v`, where `s` is the dynamic factor. The rational factor
//!
//! ```text
//! s_rat(v) = (k_min·v + k_max·ℓ) / (v + ℓ)
//! ```
//!
//! is strictly decreasing from `k_max` at `v = 0` toward `k_min`, and
//! `v·s_rat(v)` is strictly concave, which makes it the constructive handle
//! for concave comparisons. Composing it with `v ↦ v^p`, `p ∈ (0,1)`, keeps
//! that property.

use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::windowed::Window;

/// Parameters of the rational concave factor. `ell` is in the same units as `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalFactorParams {
    pub k_min: f64,
    pub k_max: f64,
    pub ell: f64,
}

impl RationalFactorParams {
    /// `k_min = k_max` is accepted and yields a constant factor.
    pub fn new(k_min: f64, k_max: f64, ell: f64) -> Result<Self> {
        let p = RationalFactorParams { k_min, k_max, ell };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_min.is_finite() && self.k_max.is_finite() && self.ell.is_finite()) {
            return Err(Error::InvalidParameter("rational factor parameters must be finite".into()));
        }
        if self.k_min < 0.0 || self.k_max <= 0.0 || self.k_min > self.k_max {
            return Err(Error::InvalidParameter(format!(
                "rational factor requires 0 <= k_min <= k_max and k_max > 0, got k_min={}, k_max={}",
                self.k_min, self.k_max
            )));
        }
        if self.ell <= 0.0 {
            return Err(Error::InvalidParameter(format!("ell must be positive, got {}", self.ell)));
        }
        Ok(())
    }

    /// True when `k_min == k_max`, i.e. the factor is constant.
    pub fn is_degenerate(&self) -> bool {
        self.k_min == self.k_max
    }

    #[inline]
    pub(crate) fn eval(&self, v: f64) -> f64 {
        if v.is_infinite() {
            return self.k_min;
        }
        (self.k_min * v + self.k_max * self.ell) / (v + self.ell)
    }
}

/// `s_rat(v) = (k_min·v + k_max·ℓ)/(v + ℓ)`.
pub fn rational_factor(params: &RationalFactorParams, v: f64) -> Result<f64> {
    require(v >= 0.0, || format!("level must be nonnegative, got {v}"))?;
    Ok(params.eval(v))
}

/// `s_rat(v^p)` for `p ∈ (0, 1)`.
pub fn power_composed_factor(params: &RationalFactorParams, p: f64, v: f64) -> Result<f64> {
    require(p > 0.0 && p < 1.0, || format!("exponent must lie in (0,1), got {p}"))?;
    require(v >= 0.0, || format!("level must be nonnegative, got {v}"))?;
    Ok(params.eval(v.powf(p)))
}

/// A positive, nonincreasing factor used as the template of an endpoint-normalized comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorTemplate {
    Constant { value: f64 },
    Rational { factor: RationalFactorParams },
    PowerRational { factor: RationalFactorParams, exponent: f64 },
}

impl FactorTemplate {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            FactorTemplate::Constant { value } => *value,
            FactorTemplate::Rational { factor } => factor.eval(v),
            FactorTemplate::PowerRational { factor, exponent } => factor.eval(v.powf(*exponent)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FactorTemplate::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::InvalidParameter(format!("constant template must be positive, got {value}")));
                }
            }
            FactorTemplate::Rational { factor } => factor.validate()?,
            FactorTemplate::PowerRational { factor, exponent } => {
                factor.validate()?;
                if !(*exponent > 0.0 && *exponent < 1.0) {
                    return Err(Error::InvalidParameter(format!("exponent must lie in (0,1), got {exponent}")));
                }
            }
        }
        Ok(())
    }
}

/// The family a comparison function belongs to, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum ComparisonKind {
    /// `α(v) = σ·v`
    Linear { sigma: f64 },
    /// `α(v) = coefficient·√v`
    Sqrt { coefficient: f64 },
    /// `α(v) = coefficient·v^exponent`
    Power { coefficient: f64, exponent: f64 },
    /// `α(v) = σ·s_rat(v)·v`
    RationalConcave { sigma: f64, factor: RationalFactorParams },
    /// `α(v) = σ·s_rat(v^p)·v`
    PowerComposedRational { sigma: f64, factor: RationalFactorParams, exponent: f64 },
    /// Monotone piecewise-linear interpolation through `(v, α(v))` pairs starting at `(0, 0)`.
    Tabulated { points: Vec<[f64; 2]> },
    /// `α(y) = (s(y)/s(c))·r·σ·y`, so that `α(c) = r·σ·c`.
    NormalizedConcave { template: FactorTemplate, c: f64, r: f64, sigma: f64 },
}

/// Local curvature label used by [`ShapeClass::Mixed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalShape {
    Linear,
    Concave,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSegment {
    pub lo: f64,
    pub hi: f64,
    pub shape: LocalShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShapeClass {
    Linear,
    StrictlyConcave,
    StrictlyConvex,
    /// Maximal subintervals partitioning the analysis window.
    Mixed(Vec<ShapeSegment>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ComparisonRepr {
    #[serde(flatten)]
    kind: ComparisonKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain_hint: Option<[f64; 2]>,
}

/// A validated class-K comparison function. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComparisonRepr", into = "ComparisonRepr")]
pub struct ComparisonFn {
    kind: ComparisonKind,
    domain_hint: Option<[f64; 2]>,
}

impl TryFrom<ComparisonRepr> for ComparisonFn {
    type Error = Error;
    fn try_from(r: ComparisonRepr) -> Result<Self> {
        let f = ComparisonFn::new(r.kind)?;
        match r.domain_hint {
            Some(h) => f.with_domain_hint(h[0], h[1]),
            None => Ok(f),
        }
    }
}

impl From<ComparisonFn> for ComparisonRepr {
    fn from(f: ComparisonFn) -> Self {
        ComparisonRepr { kind: f.kind, domain_hint: f.domain_hint }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")))
    }
}

impl ComparisonFn {
    pub fn new(kind: ComparisonKind) -> Result<Self> {
        match &kind {
            ComparisonKind::Linear { sigma } => positive("sigma", *sigma)?,
            ComparisonKind::Sqrt { coefficient } => positive("coefficient", *coefficient)?,
            ComparisonKind::Power { coefficient, exponent } => {
                positive("coefficient", *coefficient)?;
                positive("exponent", *exponent)?;
            }
            ComparisonKind::RationalConcave { sigma, factor } => {
                positive("sigma", *sigma)?;
                factor.validate()?;
            }
            ComparisonKind::PowerComposedRational { sigma, factor, exponent } => {
                positive("sigma", *sigma)?;
                factor.validate()?;
                if !(*exponent > 0.0 && *exponent < 1.0) {
                    return Err(Error::Precondition(format!("exponent must lie in (0,1), got {exponent}")));
                }
            }
            ComparisonKind::Tabulated { points } => validate_table(points)?,
            ComparisonKind::NormalizedConcave { template, c, r, sigma } => {
                template.validate()?;
                positive("c", *c)?;
                positive("sigma", *sigma)?;
                if !(*r > 0.0 && *r <= 1.0) {
                    return Err(Error::Precondition(format!("endpoint ratio r must lie in (0,1], got {r}")));
                }
                let sc = template.eval(*c);
                if !(sc.is_finite() && sc > 0.0) {
                    return Err(Error::InvalidParameter(format!("template factor must be positive at c, got {sc}")));
                }
            }
        }
        Ok(ComparisonFn { kind, domain_hint: None })
    }

    pub fn linear(sigma: f64) -> Result<Self> {
        Self::new(ComparisonKind::Linear { sigma })
    }

    pub fn sqrt(coefficient: f64) -> Result<Self> {
        Self::new(ComparisonKind::Sqrt { coefficient })
    }

    pub fn power(coefficient: f64, exponent: f64) -> Result<Self> {
        Self::new(ComparisonKind::Power { coefficient, exponent })
    }

    pub fn rational(sigma: f64, factor: RationalFactorParams) -> Result<Self> {
        Self::new(ComparisonKind::RationalConcave { sigma, factor })
    }

    pub fn tabulated(points: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(ComparisonKind::Tabulated { points })
    }

    pub fn with_domain_hint(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::InvalidParameter(format!("domain hint must satisfy 0 <= lo < hi, got [{lo}, {hi}]")));
        }
        self.domain_hint = Some([lo, hi]);
        Ok(self)
    }

    pub fn kind(&self) -> &ComparisonKind {
        &self.kind
    }

    pub fn domain_hint(&self) -> Option<[f64; 2]> {
        self.domain_hint
    }

    /// Evaluates `α(v)`. Negative levels are a precondition error.
    pub fn eval_alpha(&self, v: f64) -> Result<f64> {
        require(v >= 0.0 && !v.is_nan(), || format!("level must be nonnegative, got {v}"))?;
        Ok(self.value(v))
    }

    /// `α(v)` without the domain check; `v` must be nonnegative.
    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        match &self.kind {
            ComparisonKind::Linear { sigma } => sigma * v,
            ComparisonKind::Sqrt { coefficient } => coefficient * v.sqrt(),
            ComparisonKind::Power { coefficient, exponent } => coefficient * v.powf(*exponent),
            ComparisonKind::RationalConcave { sigma, factor } => sigma * factor.eval(v) * v,
            ComparisonKind::PowerComposedRational { sigma, factor, exponent } => {
                sigma * factor.eval(v.powf(*exponent)) * v
            }
            ComparisonKind::Tabulated { points } => interpolate(points, v),
            ComparisonKind::NormalizedConcave { template, c, r, sigma } => {
                template.eval(v) / template.eval(*c) * r * sigma * v
            }
        }
    }

    /// Dynamic factor `s(v) = α(v)/v`, with the analytic limit at `v = 0`.
    ///
    /// Kinds whose limit at the origin is unbounded (`Sqrt`, `Power` with exponent
    /// below one) report `f64::INFINITY` there. Tabulated functions have no known
    /// limit and return [`Error::Unsupported`].
    pub fn dynamic_factor(&self, v: f64) -> Result<f64> {
        require(v >= 0.0 && !v.is_nan(), || format!("level must be nonnegative, got {v}"))?;
        if v > 0.0 {
            return Ok(self.factor_at(v));
        }
        Ok(match &self.kind {
            ComparisonKind::Linear { sigma } => *sigma,
            ComparisonKind::Sqrt { .. } => f64::INFINITY,
            ComparisonKind::Power { coefficient, exponent } => {
                if *exponent < 1.0 {
                    f64::INFINITY
                } else if *exponent == 1.0 {
                    *coefficient
                } else {
                    0.0
                }
            }
            ComparisonKind::RationalConcave { sigma, factor }
            | ComparisonKind::PowerComposedRational { sigma, factor, .. } => sigma * factor.k_max,
            ComparisonKind::Tabulated { .. } => {
                return Err(Error::Unsupported("dynamic factor of a tabulated function at v = 0".into()))
            }
            ComparisonKind::NormalizedConcave { template, c, r, sigma } => {
                template.eval(0.0) / template.eval(*c) * r * sigma
            }
        })
    }

    #[inline]
    pub(crate) fn factor_at(&self, v: f64) -> f64 {
        match &self.kind {
            ComparisonKind::Linear { sigma } => *sigma,
            ComparisonKind::RationalConcave { sigma, factor } => sigma * factor.eval(v),
            ComparisonKind::PowerComposedRational { sigma, factor, exponent } => {
                sigma * factor.eval(v.powf(*exponent))
            }
            ComparisonKind::NormalizedConcave { template, c, r, sigma } => {
                template.eval(v) / template.eval(*c) * r * sigma
            }
            _ => self.value(v) / v,
        }
    }

    /// Global slope bound `|α(v₁) − α(v₂)| ≤ L·|v₁ − v₂|` where one is known.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match &self.kind {
            ComparisonKind::Linear { sigma } => Some(*sigma),
            ComparisonKind::RationalConcave { sigma, factor }
            | ComparisonKind::PowerComposedRational { sigma, factor, .. } => Some(sigma * factor.k_max),
            ComparisonKind::Power { coefficient, exponent } if *exponent == 1.0 => Some(*coefficient),
            ComparisonKind::Tabulated { points } => points
                .windows(2)
                .map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]))
                .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s)))),
            _ => None,
        }
    }

    /// Returns `k·α`, staying within the same family.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        positive("scale", k)?;
        let kind = match &self.kind {
            ComparisonKind::Linear { sigma } => ComparisonKind::Linear { sigma: sigma * k },
            ComparisonKind::Sqrt { coefficient } => ComparisonKind::Sqrt { coefficient: coefficient * k },
            ComparisonKind::Power { coefficient, exponent } => {
                ComparisonKind::Power { coefficient: coefficient * k, exponent: *exponent }
            }
            ComparisonKind::RationalConcave { sigma, factor } => {
                ComparisonKind::RationalConcave { sigma: sigma * k, factor: *factor }
            }
            ComparisonKind::PowerComposedRational { sigma, factor, exponent } => {
                ComparisonKind::PowerComposedRational { sigma: sigma * k, factor: *factor, exponent: *exponent }
            }
            ComparisonKind::Tabulated { points } => {
                ComparisonKind::Tabulated { points: points.iter().map(|p| [p[0], p[1] * k]).collect() }
            }
            ComparisonKind::NormalizedConcave { template, c, r, sigma } => ComparisonKind::NormalizedConcave {
                template: template.clone(),
                c: *c,
                r: *r,
                sigma: sigma * k,
            },
        };
        let mut out = ComparisonFn::new(kind)?;
        out.domain_hint = self.domain_hint;
        Ok(out)
    }

    /// Closed-form `∫_ε^c dv/α(v)` for the kinds that have one.
    pub fn closed_form_crossing_time(&self, eps: f64, c: f64) -> Option<f64> {
        match &self.kind {
            ComparisonKind::Linear { sigma } => Some((c / eps).ln() / sigma),
            ComparisonKind::Sqrt { coefficient } => Some(2.0 * (c.sqrt() - eps.sqrt()) / coefficient),
            ComparisonKind::Power { coefficient, exponent } => {
                if *exponent == 1.0 {
                    Some((c / eps).ln() / coefficient)
                } else {
                    let e = 1.0 - exponent;
                    Some((c.powf(e) - eps.powf(e)) / (e * coefficient))
                }
            }
            ComparisonKind::RationalConcave { sigma, factor } => {
                let RationalFactorParams { k_min, k_max, ell } = *factor;
                if k_min == 0.0 {
                    // 1/α = (v+ℓ)/(σ k_max ℓ v)
                    return Some(((c / eps).ln() + (c - eps) / ell) / (sigma * k_max));
                }
                let log_ratio = (c / eps).ln();
                let second = ((k_min * c + k_max * ell) / (k_min * eps + k_max * ell)).ln();
                Some((log_ratio / k_max + (k_max - k_min) / (k_max * k_min) * second) / sigma)
            }
            _ => None,
        }
    }

    /// Shape implied by the family and its parameters, when it is known analytically.
    pub fn nominal_shape(&self) -> Option<ShapeClass> {
        match &self.kind {
            ComparisonKind::Linear { .. } => Some(ShapeClass::Linear),
            ComparisonKind::Sqrt { .. } => Some(ShapeClass::StrictlyConcave),
            ComparisonKind::Power { exponent, .. } => Some(if *exponent < 1.0 {
                ShapeClass::StrictlyConcave
            } else if *exponent > 1.0 {
                ShapeClass::StrictlyConvex
            } else {
                ShapeClass::Linear
            }),
            ComparisonKind::RationalConcave { factor, .. }
            | ComparisonKind::PowerComposedRational { factor, .. } => Some(if factor.is_degenerate() {
                ShapeClass::Linear
            } else {
                ShapeClass::StrictlyConcave
            }),
            _ => None,
        }
    }
}

fn validate_table(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("tabulated function needs at least two points".into()));
    }
    if points[0] != [0.0, 0.0] {
        return Err(Error::InvalidParameter("tabulated function must start at (0, 0)".into()));
    }
    for w in points.windows(2) {
        if !(w[1][0] > w[0][0] && w[1][1] > w[0][1] && w[1][0].is_finite() && w[1][1].is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tabulated points must be strictly increasing in both coordinates near v = {}",
                w[1][0]
            )));
        }
    }
    Ok(())
}

/// Piecewise-linear interpolation; beyond the last knot the last slope is continued.
fn interpolate(points: &[[f64; 2]], v: f64) -> f64 {
    let idx = points.partition_point(|p| p[0] < v);
    let (a, b) = if idx == 0 {
        (points[0], points[1])
    } else if idx >= points.len() {
        (points[points.len() - 2], points[points.len() - 1])
    } else {
        (points[idx - 1], points[idx])
    };
    a[1] + (b[1] - a[1]) * (v - a[0]) / (b[0] - a[0])
}

/// Builds `α(v) = σ·s_rat(v)·v`, or `σ·s_rat(v^p)·v` when an exponent is given.
pub fn make_concave_comparison(sigma: f64, params: RationalFactorParams, p: Option<f64>) -> Result<ComparisonFn> {
    match p {
        None => ComparisonFn::new(ComparisonKind::RationalConcave { sigma, factor: params }),
        Some(exponent) => {
            ComparisonFn::new(ComparisonKind::PowerComposedRational { sigma, factor: params, exponent })
        }
    }
}

/// `α(y) = (s(y)/s(c))·r·σ·y`: the endpoint is pinned to `α(c) = r·σ·c`.
pub fn normalized_concave(template: FactorTemplate, c: f64, r: f64, sigma: f64) -> Result<ComparisonFn> {
    ComparisonFn::new(ComparisonKind::NormalizedConcave { template, c, r, sigma })
}

/// Classifies the shape of `α` on a window from second central differences on a
/// uniform grid, cross-checked against the monotonicity of the dynamic factor.
pub fn classify_shape(f: &ComparisonFn, window: &Window, grid_size: usize) -> Result<ShapeClass> {
    require(grid_size >= 16, || format!("grid_size must be at least 16, got {grid_size}"))?;
    let (lo, hi) = (window.eps(), window.c());
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&v| f.value(v)).collect();
    let labels = curvature_labels(&values);

    let mut segments: Vec<ShapeSegment> = Vec::new();
    for (j, &shape) in labels.iter().enumerate() {
        let i = j + 1;
        let cell_lo = if j == 0 { lo } else { 0.5 * (grid[i - 1] + grid[i]) };
        let cell_hi = if j + 1 == labels.len() { hi } else { 0.5 * (grid[i] + grid[i + 1]) };
        match segments.last_mut() {
            Some(seg) if seg.shape == shape => seg.hi = cell_hi,
            _ => segments.push(ShapeSegment { lo: cell_lo, hi: cell_hi, shape }),
        }
    }

    if segments.len() > 1 {
        return Ok(ShapeClass::Mixed(segments));
    }
    let shape = segments[0].shape;

    // Cross-check: a concave α with α(0) = 0 has a nonincreasing factor, a convex one nondecreasing.
    let factors: Vec<f64> = grid.iter().map(|&v| f.factor_at(v)).collect();
    let s_scale = factors.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let tol = 1e-9 * s_scale;
    let worst_rise = factors.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let worst_fall = factors.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    match shape {
        LocalShape::Concave if worst_rise > tol => Err(Error::Classification(format!(
            "second differences indicate concavity but the dynamic factor increases by {worst_rise:.3e} on [{lo}, {hi}]"
        ))),
        LocalShape::Convex if worst_fall > tol => Err(Error::Classification(format!(
            "second differences indicate convexity but the dynamic factor decreases by {worst_fall:.3e} on [{lo}, {hi}]"
        ))),
        LocalShape::Concave => Ok(ShapeClass::StrictlyConcave),
        LocalShape::Convex => Ok(ShapeClass::StrictlyConvex),
        LocalShape::Linear => Ok(ShapeClass::Linear),
    }
}

/// Labels each interior grid point by the sign of the second central difference,
/// with `1e-9·max|α|` as the band counted as zero.
pub(crate) fn curvature_labels(values: &[f64]) -> Vec<LocalShape> {
    let scale = values.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let tol = 1e-9 * scale;
    values
        .windows(3)
        .map(|w| {
            let d2 = w[0] - 2.0 * w[1] + w[2];
            if d2 < -tol {
                LocalShape::Concave
            } else if d2 > tol {
                LocalShape::Convex
            } else {
                LocalShape::Linear
            }
        })
        .collect()
}
