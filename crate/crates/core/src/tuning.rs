//! Endpoint normalization, closed-form rates and the tuning recipe for the
//! rational concave factor.
//!
//! `ℓ` is stored in absolute level units. For the power-composed factor the
//! normalization is applied at `c^p`, so `s_rat(c^p) = r`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{pointwise_decay_cap, required_actuation, RegularityConstants, SamplingOptions};
use crate::comparison::{make_concave_comparison, ComparisonFn, RationalFactorParams};
use crate::error::{require, Error, Result};
use crate::plant::PlantModel;
use crate::qp::SoftQpController;
use crate::sim::{simulate, SimConfig};
use crate::windowed::{nominal_rate, Window};

/// Iteration budget of each recipe phase.
pub const RECIPE_ITERATIONS: usize = 100;
/// Upper end of the `k_max` search range.
pub const K_MAX_LIMIT: f64 = 1e3;
/// `k_min` is not reduced below this value.
pub const K_MIN_FLOOR: f64 = 1e-3;

const K_MAX_STEP: f64 = 1.25;
const R_STEP: f64 = 0.05;
const K_MIN_STEP: f64 = 0.8;
const RATE_TOL: f64 = 1e-6;

/// `ℓ = (r − k_min)·c/(k_max − r)`, which pins `s_rat(c) = r`.
pub fn normalize_ell(k_min: f64, k_max: f64, r: f64, c: f64) -> Result<f64> {
    require(c > 0.0 && c.is_finite(), || format!("c must be positive, got {c}"))?;
    if !(k_min < r && r < k_max) {
        return Err(Error::InfeasibleNormalization(format!(
            "endpoint ratio {r} must lie strictly between k_min = {k_min} and k_max = {k_max}"
        )));
    }
    Ok((r - k_min) * c / (k_max - r))
}

/// Windowed rate of `α(v) = σ·s_rat(v)·v`.
///
/// Uses the logarithmic closed form; `k_min = 0` falls back to quadrature.
pub fn closed_form_rate(k_min: f64, k_max: f64, ell: f64, sigma: f64, w: &Window) -> Result<f64> {
    let params = RationalFactorParams::new(k_min, k_max, ell)?;
    require(sigma > 0.0, || format!("σ must be positive, got {sigma}"))?;
    if k_min == 0.0 {
        return nominal_rate(&make_concave_comparison(sigma, params, None)?, w);
    }
    let span = w.log_span();
    let tail = ((k_min * w.c() + k_max * ell) / (k_min * w.eps() + k_max * ell)).ln();
    Ok(sigma * k_max * span / (span + (k_max - k_min) / k_min * tail))
}

/// Rate of the rational (closed form) or power-composed (quadrature) comparison.
pub fn factor_rate(sigma: f64, params: RationalFactorParams, exponent: Option<f64>, w: &Window) -> Result<f64> {
    match exponent {
        None => closed_form_rate(params.k_min, params.k_max, params.ell, sigma, w),
        Some(p) => nominal_rate(&make_concave_comparison(sigma, params, Some(p))?, w),
    }
}

/// Design targets for the rational factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSpec {
    pub window: Window,
    /// Baseline linear rate.
    pub sigma: f64,
    /// Target windowed rate.
    pub sigma_star: f64,
    /// Endpoint ratio `s(c)`.
    pub r: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// Available actuation.
    pub theta: f64,
    #[serde(default)]
    pub constants: Option<RegularityConstants>,
    /// Exponent used when the recipe falls back to the power-composed factor.
    #[serde(default)]
    pub exponent: Option<f64>,
}

impl TuningSpec {
    pub fn validate(&self) -> Result<()> {
        require(self.sigma > 0.0 && self.sigma_star >= self.sigma, || {
            format!("need σ_star ≥ σ > 0, got σ = {}, σ_star = {}", self.sigma, self.sigma_star)
        })?;
        require(self.k_min >= 0.0 && self.k_min <= 1.0, || format!("k_min must lie in [0, 1], got {}", self.k_min))?;
        require(self.r > 0.0 && self.r <= 1.0, || format!("r must lie in (0, 1], got {}", self.r))?;
        require(self.k_max > 0.0 && self.k_max.is_finite(), || format!("k_max must be positive, got {}", self.k_max))?;
        require(self.theta > 0.0, || format!("θ must be positive, got {}", self.theta))?;
        if let Some(c) = &self.constants {
            c.validate()?;
        }
        if let Some(p) = self.exponent {
            require(p > 0.0 && p < 1.0, || format!("exponent must lie in (0,1), got {p}"))?;
        }
        Ok(())
    }
}

fn rate_at(spec: &TuningSpec, k_min: f64, k_max: f64, r: f64, exponent: Option<f64>) -> Result<(RationalFactorParams, f64)> {
    let c_eff = exponent.map_or(spec.window.c(), |p| spec.window.c().powf(p));
    let ell = normalize_ell(k_min, k_max, r, c_eff)?;
    let params = RationalFactorParams::new(k_min, k_max, ell)?;
    Ok((params, factor_rate(spec.sigma, params, exponent, &spec.window)?))
}

/// Smallest `k_max` (to the rate tolerance) whose normalized factor reaches `σ_star`.
pub fn solve_kmax(spec: &TuningSpec) -> Result<f64> {
    spec.validate()?;
    let target = spec.sigma_star;
    let tol = RATE_TOL * target;
    if (spec.k_min - spec.r).abs() <= 1e-12 && (spec.sigma * spec.k_min - target).abs() <= tol {
        // Constant factor: the linear baseline scaled by k_min already hits the target.
        return Ok(spec.k_min);
    }
    let rate = |k_max: f64| rate_at(spec, spec.k_min, k_max, spec.r, None).map(|(_, s)| s);
    let mut lo = (target / spec.sigma).max(spec.r) * (1.0 + 1e-9);
    let mut hi = K_MAX_LIMIT;
    if lo >= hi {
        return Err(Error::Tuning { message: format!("target needs k_max ≥ {lo}"), achieved: rate(hi)? });
    }
    if rate(lo)? >= target - tol {
        return Ok(lo);
    }
    let top = rate(hi)?;
    if top < target - tol {
        return Err(Error::Tuning { message: format!("target {target} unreachable for k_max ≤ {K_MAX_LIMIT}"), achieved: top });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = rate(mid)?;
        if (s - target).abs() <= tol {
            return Ok(mid);
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Position and value of the smallest margin on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMargin {
    pub margin: f64,
    pub level: f64,
}

/// `min_v [k3·v + k4·θ·√v − α(v)]` over a log-spaced grid of the window.
///
/// A nonnegative margin means the necessary level-wise condition holds.
pub fn feasibility_margin(
    f: &ComparisonFn,
    theta: f64,
    consts: &RegularityConstants,
    w: &Window,
    grid: usize,
) -> Result<FeasibilityMargin> {
    require(grid >= 2, || format!("grid needs at least 2 points, got {grid}"))?;
    let (k3, k4) = (consts.k3(), consts.k4());
    let (lo, hi) = (w.eps(), w.c());
    let mut worst = FeasibilityMargin { margin: f64::INFINITY, level: hi };
    for i in 0..grid {
        let v = if i + 1 == grid { hi } else { lo * (hi / lo).powf(i as f64 / (grid - 1) as f64) };
        let m = k3 * v + k4 * theta * v.sqrt() - f.value(v);
        if m < worst.margin {
            worst = FeasibilityMargin { margin: m, level: v };
        }
    }
    Ok(worst)
}

/// How the recipe decides feasibility once the rate target is met.
#[derive(Debug, Clone)]
pub enum FeasibilityCheck<'a> {
    /// No check; the recipe accepts the first rate-feasible parameters.
    Skip,
    /// Necessary condition from `TuningSpec::constants`.
    Necessary { grid: usize },
    /// Sampled `θ_min(α; c) ≤ θ`.
    Sampled { plant: &'a dyn PlantModel, options: SamplingOptions },
    /// Simulates the soft QP from the plant's initial state and requires
    /// `α(V) ≤ D_max(x, θ)` at every sample with `V ≥ ε`.
    Trajectory { plant: &'a dyn PlantModel, config: SimConfig, slack_weight: f64, cost: DMatrix<f64> },
}

impl FeasibilityCheck<'_> {
    fn label(&self) -> &'static str {
        match self {
            FeasibilityCheck::Skip => "skip",
            FeasibilityCheck::Necessary { .. } => "necessary",
            FeasibilityCheck::Sampled { .. } => "sampled",
            FeasibilityCheck::Trajectory { .. } => "trajectory",
        }
    }

    /// Returns a margin whose sign decides feasibility.
    fn margin(&self, spec: &TuningSpec, alpha: &ComparisonFn) -> Result<Option<f64>> {
        let w = &spec.window;
        match self {
            FeasibilityCheck::Skip => Ok(None),
            FeasibilityCheck::Necessary { grid } => {
                let consts = spec
                    .constants
                    .as_ref()
                    .ok_or_else(|| Error::Precondition("the necessary check needs regularity constants".into()))?;
                Ok(Some(feasibility_margin(alpha, spec.theta, consts, w, *grid)?.margin))
            }
            FeasibilityCheck::Sampled { plant, options } => {
                let need = required_actuation(*plant, alpha, w.c().min(plant.c_max()), options)?;
                Ok(Some(spec.theta - need.value()))
            }
            FeasibilityCheck::Trajectory { plant, config, slack_weight, cost } => {
                let mut ctl = SoftQpController::new(alpha.clone(), spec.theta, cost.clone(), *slack_weight);
                let rec = simulate(*plant, &mut ctl, config, &plant.initial_state())?;
                let mut worst = f64::INFINITY;
                for (x, &v) in rec.states.iter().zip(&rec.values) {
                    if v < w.eps() {
                        break;
                    }
                    worst = worst.min(pointwise_decay_cap(*plant, x, spec.theta)? - alpha.value(v));
                }
                // Relative slack for round-off in the cap evaluation.
                Ok(Some(worst + 1e-9 * alpha.value(w.c())))
            }
        }
    }
}

/// One recorded action of the recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub step: u8,
    pub action: String,
    pub k_min: f64,
    pub k_max: f64,
    pub r: f64,
    pub ell: Option<f64>,
    pub exponent: Option<f64>,
    pub rate: Option<f64>,
    pub margin: Option<f64>,
}

/// Accepted parameters with the full trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeOutcome {
    pub params: RationalFactorParams,
    pub r: f64,
    pub exponent: Option<f64>,
    pub rate: f64,
    pub margin: Option<f64>,
    pub check: String,
    pub trace: Vec<TraceEntry>,
}

impl RecipeOutcome {
    pub fn comparison(&self, sigma: f64) -> Result<ComparisonFn> {
        make_concave_comparison(sigma, self.params, self.exponent)
    }
}

#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct RecipeFailure {
    pub error: Error,
    pub trace: Vec<TraceEntry>,
}

impl From<RecipeFailure> for Error {
    fn from(f: RecipeFailure) -> Self {
        f.error
    }
}

/// Runs the recipe with the necessary check when `spec.constants` is set, and no check otherwise.
pub fn tuning_recipe(spec: &TuningSpec) -> std::result::Result<RecipeOutcome, RecipeFailure> {
    let check = if spec.constants.is_some() { FeasibilityCheck::Necessary { grid: 512 } } else { FeasibilityCheck::Skip };
    tuning_recipe_with(spec, &check)
}

struct Recorder {
    trace: Vec<TraceEntry>,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, iteration: usize, step: u8, action: impl Into<String>, k_min: f64, k_max: f64, r: f64, exponent: Option<f64>) -> &mut TraceEntry {
        self.trace.push(TraceEntry {
            iteration,
            step,
            action: action.into(),
            k_min,
            k_max,
            r,
            ell: None,
            exponent,
            rate: None,
            margin: None,
        });
        self.trace.last_mut().expect("just pushed")
    }
}

/// Seeds, normalizes, raises the rate until it meets the target, then checks
/// feasibility and backs off `r` and `k_max` on failure. Feasibility wins:
/// once a failed check has lowered `r` or `k_max`, the rate search may not raise them past
/// those values. When the rational phase is exhausted and `spec.exponent` is set,
/// the recipe restarts from the seeds with the power-composed factor.
pub fn tuning_recipe_with(
    spec: &TuningSpec,
    check: &FeasibilityCheck<'_>,
) -> std::result::Result<RecipeOutcome, RecipeFailure> {
    let mut rec = Recorder { trace: Vec::new() };
    if let Err(error) = spec.validate() {
        return Err(RecipeFailure { error, trace: rec.trace });
    }
    let target = spec.sigma_star * (1.0 - RATE_TOL);
    rec.push(
        0,
        1,
        format!("window [{:e}, {:e}], σ = {}, σ_star = {}, θ = {}", spec.window.eps(), spec.window.c(), spec.sigma, spec.sigma_star, spec.theta),
        spec.k_min,
        spec.k_max,
        spec.r,
        None,
    );
    let mut best_rate = 0.0f64;
    let phases: Vec<Option<f64>> = std::iter::once(None).chain(spec.exponent.map(Some)).collect();
    for exponent in phases {
        let (mut k_min, mut k_max, mut r) = (spec.k_min, spec.k_max, spec.r);
        let (mut r_ceiling, mut k_max_ceiling) = (spec.r, K_MAX_LIMIT);
        let phase = if exponent.is_some() { "switch to power-composed factor" } else { "seed" };
        rec.push(0, if exponent.is_some() { 7 } else { 2 }, phase, k_min, k_max, r, exponent);
        for iteration in 1..=RECIPE_ITERATIONS {
            let (params, rate) = match rate_at(spec, k_min, k_max, r, exponent) {
                Ok(v) => v,
                Err(Error::InfeasibleNormalization(_)) => {
                    let action = if r >= k_max && r * K_MAX_STEP <= k_max_ceiling {
                        k_max = r * K_MAX_STEP;
                        "normalization infeasible: raise k_max above r"
                    } else if k_min >= r && k_min * K_MIN_STEP >= K_MIN_FLOOR {
                        k_min *= K_MIN_STEP;
                        "normalization infeasible: lower k_min"
                    } else {
                        rec.push(iteration, 3, "normalization infeasible: no admissible adjustment", k_min, k_max, r, exponent);
                        break;
                    };
                    rec.push(iteration, 3, action, k_min, k_max, r, exponent);
                    continue;
                }
                Err(error) => return Err(RecipeFailure { error, trace: rec.trace }),
            };
            best_rate = best_rate.max(rate);
            let e = rec.push(iteration, 3, "normalize ℓ", k_min, k_max, r, exponent);
            e.ell = Some(params.ell);
            e.rate = Some(rate);

            if rate < target {
                let action = if k_max * K_MAX_STEP <= k_max_ceiling {
                    k_max *= K_MAX_STEP;
                    "rate below target: raise k_max"
                } else if r + R_STEP <= r_ceiling + 1e-12 {
                    r = (r + R_STEP).min(r_ceiling);
                    "rate below target: raise r"
                } else if k_min * K_MIN_STEP >= K_MIN_FLOOR {
                    k_min *= K_MIN_STEP;
                    "rate below target: lower k_min"
                } else {
                    rec.push(iteration, 4, "rate below target: adjustments exhausted", k_min, k_max, r, exponent);
                    break;
                };
                rec.push(iteration, 4, action, k_min, k_max, r, exponent).rate = Some(rate);
                continue;
            }

            let alpha = match make_concave_comparison(spec.sigma, params, exponent) {
                Ok(a) => a,
                Err(error) => return Err(RecipeFailure { error, trace: rec.trace }),
            };
            let margin = match check.margin(spec, &alpha) {
                Ok(m) => m,
                Err(error) => return Err(RecipeFailure { error, trace: rec.trace }),
            };
            let feasible = margin.is_none_or(|m| m >= 0.0);
            let e = rec.push(
                iteration,
                5,
                format!("{} check {}", check.label(), if feasible { "passed" } else { "failed" }),
                k_min,
                k_max,
                r,
                exponent,
            );
            e.ell = Some(params.ell);
            e.rate = Some(rate);
            e.margin = margin;
            if feasible {
                return Ok(RecipeOutcome {
                    params,
                    r,
                    exponent,
                    rate,
                    margin,
                    check: check.label().into(),
                    trace: rec.trace,
                });
            }

            let (new_r, new_k_max) = (r - R_STEP, k_max / K_MAX_STEP);
            if new_r <= k_min || new_k_max <= new_r {
                rec.push(iteration, 6, "infeasible: cannot lower r and k_max further", k_min, k_max, r, exponent);
                break;
            }
            r = new_r;
            k_max = new_k_max;
            r_ceiling = r;
            k_max_ceiling = k_max;
            rec.push(iteration, 6, "infeasible: lower r and k_max", k_min, k_max, r, exponent).margin = margin;
        }
    }
    Err(RecipeFailure {
        error: Error::Tuning { message: "no feasible parameters within the iteration budget".into(), achieved: best_rate },
        trace: rec.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::rational_factor;

    fn spec(sigma_star: f64) -> TuningSpec {
        TuningSpec {
            window: Window::relative(1e-2, 1.0).unwrap(),
            sigma: 3.0,
            sigma_star,
            r: 1.0,
            k_min: 0.1,
            k_max: 2.3,
            theta: 10.0,
            constants: None,
            exponent: None,
        }
    }

    #[test]
    fn ell_normalization() {
        let ell = normalize_ell(0.1, 2.3, 1.0, 1.0).unwrap();
        assert!((ell - 0.9 / 1.3).abs() < 1e-15);
        let p = RationalFactorParams::new(0.1, 2.3, ell).unwrap();
        assert!((rational_factor(&p, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(normalize_ell(0.1, 1.0, 1.0, 1.0), Err(Error::InfeasibleNormalization(_))));
        assert!(normalize_ell(0.5, 2.0, 0.4, 1.0).is_err());
    }

    #[test]
    fn degenerate_rate_is_scaled_linear() {
        let w = Window::new(1e-3, 5.0).unwrap();
        let s = closed_form_rate(1.7, 1.7, 0.3, 2.0, &w).unwrap();
        assert!((s - 3.4).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let w = Window::relative(1e-2, 1.0).unwrap();
        let ell = normalize_ell(0.1, 2.3, 1.0, 1.0).unwrap();
        let closed = closed_form_rate(0.1, 2.3, ell, 3.0, &w).unwrap();
        let f = make_concave_comparison(3.0, RationalFactorParams::new(0.1, 2.3, ell).unwrap(), None).unwrap();
        let quad = nominal_rate(&f, &w).unwrap();
        assert!(((closed - quad) / quad).abs() < 1e-8);
    }

    #[test]
    fn zero_kmin_uses_quadrature() {
        let w = Window::relative(1e-2, 1.0).unwrap();
        let s0 = closed_form_rate(0.0, 2.0, 0.5, 1.0, &w).unwrap();
        let s1 = closed_form_rate(1e-9, 2.0, 0.5, 1.0, &w).unwrap();
        assert!(((s0 - s1) / s0).abs() < 1e-6);
    }

    #[test]
    fn solve_kmax_hits_target() {
        let k = solve_kmax(&spec(5.4)).unwrap();
        let ell = normalize_ell(0.1, k, 1.0, 1.0).unwrap();
        let f = make_concave_comparison(3.0, RationalFactorParams::new(0.1, k, ell).unwrap(), None).unwrap();
        let s = nominal_rate(&f, &Window::relative(1e-2, 1.0).unwrap()).unwrap();
        assert!(((s - 5.4) / 5.4).abs() < 1e-6, "{s}");
    }

    #[test]
    fn solve_kmax_degenerate_and_unreachable() {
        let mut s = spec(3.0);
        s.k_min = 1.0;
        assert_eq!(solve_kmax(&s).unwrap(), 1.0);
        assert!(matches!(solve_kmax(&spec(300.0)), Err(Error::Tuning { .. })));
    }

    #[test]
    fn integrator_margin_sign() {
        // k3 = 0, k4 = 2: margin ≥ 0 iff σ ≤ 2θ/√c.
        let consts = RegularityConstants::from_k3_k4(0.0, 2.0).unwrap();
        let w = Window::new(1e-2, 100.0).unwrap();
        let ok = feasibility_margin(&ComparisonFn::linear(0.2).unwrap(), 1.0, &consts, &w, 200).unwrap();
        let bad = feasibility_margin(&ComparisonFn::linear(0.21).unwrap(), 1.0, &consts, &w, 200).unwrap();
        assert!(ok.margin >= -1e-12 && bad.margin < 0.0);
        assert_eq!(bad.level, 100.0);
    }

    #[test]
    fn recipe_accepts_seeds_and_fails_on_unreachable() {
        let out = tuning_recipe(&spec(5.0)).unwrap();
        assert_eq!((out.params.k_min, out.params.k_max, out.r), (0.1, 2.3, 1.0));
        let fail = tuning_recipe(&spec(300.0)).unwrap_err();
        assert!(matches!(fail.error, Error::Tuning { .. }));
        assert!(fail.trace.iter().any(|e| e.step == 4));
    }

    #[test]
    fn recipe_backs_off_when_necessary_check_fails() {
        let mut s = spec(3.5);
        s.constants = Some(RegularityConstants::from_k3_k4(0.0, 2.0).unwrap());
        s.theta = 1.0;
        s.window = Window::relative(1e-2, 1.0).unwrap();
        let out = tuning_recipe(&s);
        let trace = match &out {
            Ok(o) => &o.trace,
            Err(f) => &f.trace,
        };
        assert!(trace.iter().any(|e| e.step == 6));
        if let Ok(o) = out {
            assert!(o.r < 1.0 && o.margin.unwrap() >= 0.0);
        }
    }

    #[test]
    fn spec_roundtrip() {
        let s = spec(5.0);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TuningSpec>(&json).unwrap(), s);
    }
}
