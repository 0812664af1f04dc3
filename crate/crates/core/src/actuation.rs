//! Decay caps and actuation levels under the box input set `‖u‖∞ ≤ θ`.
//!
//! Suprema over sublevel sets `Ω(V, v)` are estimated by seeded rejection
//! sampling in a bounding box followed by coordinate-wise hill climbing from
//! the best sample. They are estimates, not certified global maxima.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{ComparisonFn, ComparisonKind};
use crate::error::{require, Error, Result};
use crate::plant::PlantModel;

/// `D_max(x, θ) = −L_fV(x) + θ‖L_gV(x)‖₁`
pub fn pointwise_decay_cap(plant: &dyn PlantModel, x: &DVector<f64>, theta: f64) -> Result<f64> {
    require(theta >= 0.0, || format!("θ must be nonnegative, got {theta}"))?;
    plant.check_state(x)?;
    let lie = plant.lie_derivatives(x);
    Ok(-lie.lf + theta * lie.lg.lp_norm(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    pub samples: usize,
    pub seed: u64,
    pub hill_climb_steps: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { samples: 10_000, seed: 0, hill_climb_steps: 50 }
    }
}

/// Uniform samples of `Ω(V, v)` drawn by rejection from the plant's bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct SublevelSample {
    pub level: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub points: Vec<DVector<f64>>,
}

impl SublevelSample {
    pub fn draw(plant: &dyn PlantModel, v: f64, count: usize, seed: u64) -> Result<Self> {
        require(v > 0.0, || format!("level must be positive, got {v}"))?;
        let (lower, upper) = plant
            .sublevel_box(v)
            .ok_or_else(|| Error::Unsupported(format!("plant '{}' provides no sublevel bounding box", plant.name())))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = lower.len();
        let max_draws = count.saturating_mul(1000).max(1000);
        let mut points = Vec::with_capacity(count);
        let mut draws = 0;
        while points.len() < count {
            if draws >= max_draws {
                return Err(Error::Sampling(format!(
                    "accepted {} of {count} points after {draws} draws at level {v}",
                    points.len()
                )));
            }
            draws += 1;
            let x = DVector::from_fn(n, |i, _| {
                if lower[i] < upper[i] {
                    rng.random_range(lower[i]..=upper[i])
                } else {
                    lower[i]
                }
            });
            if plant.clf(&x) <= v {
                points.push(x);
            }
        }
        Ok(SublevelSample { level: v, lower, upper, points })
    }
}

fn check_level(plant: &dyn PlantModel, v: f64, samples: usize) -> Result<()> {
    require(v > 0.0 && v <= plant.c_max() * (1.0 + 1e-12), || {
        format!("level {v} must lie in (0, c_max = {}]", plant.c_max())
    })?;
    require(samples >= 1000, || format!("at least 10³ samples are required, got {samples}"))
}

/// Coordinate-wise ascent of `objective` inside `Ω(V, level)` starting from `start`.
fn hill_climb<F: Fn(&DVector<f64>) -> f64>(
    plant: &dyn PlantModel,
    sample: &SublevelSample,
    start: &DVector<f64>,
    steps: usize,
    objective: F,
) -> (DVector<f64>, f64) {
    let mut x = start.clone();
    let mut best = objective(&x);
    let mut h: DVector<f64> = (&sample.upper - &sample.lower) * 0.05;
    for _ in 0..steps {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += dir * h[i];
                if plant.clf(&y) > sample.level {
                    continue;
                }
                let val = objective(&y);
                if val > best {
                    best = val;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, best)
}

/// Estimate of `ᾱ(θ, v) = sup_{Ω(V,v)} D_max(x, θ)`; exact when the plant knows it in closed form.
pub fn level_cap(plant: &dyn PlantModel, theta: f64, v: f64, opts: &SamplingOptions) -> Result<f64> {
    require(theta >= 0.0, || format!("θ must be nonnegative, got {theta}"))?;
    check_level(plant, v, opts.samples)?;
    if let Some(cap) = plant.analytic_level_cap(theta, v) {
        return Ok(cap);
    }
    let sample = SublevelSample::draw(plant, v, opts.samples, opts.seed)?;
    Ok(level_cap_on(plant, theta, &sample, opts.hill_climb_steps))
}

/// Cap estimate over a fixed sample set, refined by hill climbing.
pub fn level_cap_on(plant: &dyn PlantModel, theta: f64, sample: &SublevelSample, hill_climb_steps: usize) -> f64 {
    let cap = |x: &DVector<f64>| {
        let lie = plant.lie_derivatives(x);
        -lie.lf + theta * lie.lg.lp_norm(1)
    };
    let (best, _) = sample
        .points
        .iter()
        .map(|x| (x, cap(x)))
        .fold((None, f64::NEG_INFINITY), |acc, (x, c)| if c > acc.1 { (Some(x), c) } else { acc });
    match best {
        Some(x) => hill_climb(plant, sample, x, hill_climb_steps, cap).1,
        None => f64::NEG_INFINITY,
    }
}

/// Caps at increasing levels, made monotone by a running maximum (set inclusion).
pub fn level_cap_sweep(plant: &dyn PlantModel, theta: f64, levels: &[f64], opts: &SamplingOptions) -> Result<Vec<f64>> {
    require(levels.windows(2).all(|w| w[0] < w[1]), || "levels must be strictly increasing".into())?;
    let raw: Vec<f64> = levels
        .par_iter()
        .enumerate()
        .map(|(i, &v)| level_cap(plant, theta, v, &SamplingOptions { seed: opts.seed.wrapping_add(i as u64), ..*opts }))
        .collect::<Result<_>>()?;
    Ok(raw
        .iter()
        .scan(f64::NEG_INFINITY, |m, &c| {
            *m = m.max(c);
            Some(*m)
        })
        .collect())
}

/// Required actuation level `θ_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "value", rename_all = "snake_case")]
pub enum ActuationLevel {
    Finite(f64),
    /// Some state has `L_gV = 0` while `α(V) + L_fV > 0`.
    Unbounded,
}

impl ActuationLevel {
    /// `+∞` for the unbounded state.
    pub fn value(&self) -> f64 {
        match self {
            ActuationLevel::Finite(v) => *v,
            ActuationLevel::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ActuationLevel::Finite(_))
    }
}

fn actuation_ratio(plant: &dyn PlantModel, alpha: &ComparisonFn, x: &DVector<f64>) -> f64 {
    let lie = plant.lie_derivatives(x);
    let num = alpha.value(plant.clf(x)) + lie.lf;
    if num <= 0.0 {
        return 0.0;
    }
    let den = lie.lg.lp_norm(1);
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// `sup_{x ∈ sample} [(α(V(x)) + L_fV(x)) / ‖L_gV(x)‖₁]₊` over a fixed sample set.
pub fn required_actuation_on(plant: &dyn PlantModel, alpha: &ComparisonFn, points: &[DVector<f64>]) -> ActuationLevel {
    let mut best = 0.0f64;
    for x in points {
        let r = actuation_ratio(plant, alpha, x);
        if r.is_infinite() {
            return ActuationLevel::Unbounded;
        }
        best = best.max(r);
    }
    ActuationLevel::Finite(best)
}

/// Sampled estimate of `θ_min(α; v)`, refined by hill climbing from the best sample.
pub fn required_actuation(
    plant: &dyn PlantModel,
    alpha: &ComparisonFn,
    v: f64,
    opts: &SamplingOptions,
) -> Result<ActuationLevel> {
    check_level(plant, v, opts.samples)?;
    if let Some(exact) = plant.analytic_required_actuation(alpha, v) {
        return Ok(ActuationLevel::Finite(exact));
    }
    let sample = SublevelSample::draw(plant, v, opts.samples, opts.seed)?;
    let coarse = required_actuation_on(plant, alpha, &sample.points);
    let ActuationLevel::Finite(value) = coarse else { return Ok(coarse) };
    if value == 0.0 {
        return Ok(coarse);
    }
    let start = sample
        .points
        .iter()
        .max_by(|a, b| actuation_ratio(plant, alpha, a).total_cmp(&actuation_ratio(plant, alpha, b)))
        .expect("nonempty sample");
    let (_, refined) = hill_climb(plant, &sample, start, opts.hill_climb_steps, |x| actuation_ratio(plant, alpha, x));
    Ok(if refined.is_infinite() { ActuationLevel::Unbounded } else { ActuationLevel::Finite(refined.max(value)) })
}

/// Growth and gradient bounds behind the analytic actuation lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    /// `‖f(x)‖ ≤ L1‖x‖`
    pub l1: f64,
    /// `‖∇V(x)‖ ≤ L2‖x‖`
    pub l2: f64,
    /// `‖g_i(x)‖ ≤ ḡ_i` per input column.
    pub g_bars: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
}

impl RegularityConstants {
    pub fn new(l1: f64, l2: f64, g_bars: Vec<f64>, k1: f64, k2: f64) -> Result<Self> {
        let c = RegularityConstants { l1, l2, g_bars, k1, k2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.l1 >= 0.0 && self.l2 > 0.0, || "L1 must be nonnegative and L2 positive".into())?;
        require(!self.g_bars.is_empty() && self.g_bars.iter().all(|&g| g > 0.0), || {
            "input column bounds must be positive".into()
        })?;
        require(0.0 < self.k1 && self.k1 <= self.k2, || format!("need 0 < k1 ≤ k2, got {}, {}", self.k1, self.k2))
    }

    /// `k3 = L1·L2/k1`
    pub fn k3(&self) -> f64 {
        self.l1 * self.l2 / self.k1
    }

    /// `k4 = (L2/√k1)·Σḡ_i`
    pub fn k4(&self) -> f64 {
        self.l2 / self.k1.sqrt() * self.g_bars.iter().sum::<f64>()
    }

    /// Constants from direct values of `k3` and `k4` (with `k1 = k2 = 1`).
    pub fn from_k3_k4(k3: f64, k4: f64) -> Result<Self> {
        require(k3 >= 0.0 && k4 > 0.0, || format!("need k3 ≥ 0 and k4 > 0, got {k3}, {k4}"))?;
        RegularityConstants::new(k3, 1.0, vec![k4], 1.0, 1.0)
    }

    /// Empirical maxima of the defining ratios over a sample of `Ω(V, v)`, inflated by 5%
    /// (`k1` deflated by the same factor).
    pub fn estimate(plant: &dyn PlantModel, sample: &SublevelSample) -> Result<Self> {
        let m = plant.input_dim();
        let (mut l1, mut l2, mut kmin, mut kmax) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
        let mut g = vec![0.0f64; m];
        for x in &sample.points {
            let nx = x.norm();
            if nx == 0.0 {
                continue;
            }
            l1 = l1.max(plant.drift(x).norm() / nx);
            l2 = l2.max(plant.clf_gradient(x).norm() / nx);
            let ratio = plant.clf(x) / (nx * nx);
            kmin = kmin.min(ratio);
            kmax = kmax.max(ratio);
            let gm = plant.input_map(x);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = gi.max(gm.column(i).norm());
            }
        }
        let (k1, k2) = match plant.quadratic_bounds() {
            Some(b) => (b.k1, b.k2),
            None => (kmin / 1.05, kmax * 1.05),
        };
        RegularityConstants::new(l1 * 1.05, l2 * 1.05, g.iter().map(|v| v * 1.05).collect(), k1, k2)
    }
}

/// `[(α(V) − k3·V) / (k4·√V)]₊`
pub fn lower_bound_integrand(alpha: &ComparisonFn, v: f64, consts: &RegularityConstants) -> f64 {
    ((alpha.value(v) - consts.k3() * v) / (consts.k4() * v.sqrt())).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    /// Level attaining the supremum (the endpoint when endpoint-dominated).
    pub argmax: f64,
}

/// `θ̱_min(α; v) = sup_{0 < V ≤ v} [(α(V) − k3 V)/(k4 √V)]₊`.
pub fn actuation_lower_bound(alpha: &ComparisonFn, v: f64, consts: &RegularityConstants) -> Result<LowerBound> {
    require(v > 0.0, || format!("level must be positive, got {v}"))?;
    consts.validate()?;
    if let ComparisonKind::Linear { sigma } = alpha.kind() {
        // (σ − k3)√V/k4 increases in V, so the endpoint dominates.
        let value = ((sigma - consts.k3()) * v.sqrt() / consts.k4()).max(0.0);
        return Ok(LowerBound { value, argmax: v });
    }
    let phi = |s: f64| lower_bound_integrand(alpha, s, consts);
    const GRID: usize = 2000;
    let lo = v * 1e-10;
    let grid: Vec<f64> = (0..GRID).map(|i| lo * (v / lo).powf(i as f64 / (GRID - 1) as f64)).collect();
    let (mut best_i, mut best) = (GRID - 1, phi(v));
    for (i, &s) in grid.iter().enumerate() {
        let val = phi(s);
        if val > best {
            best = val;
            best_i = i;
        }
    }
    if best == 0.0 {
        return Ok(LowerBound { value: 0.0, argmax: v });
    }
    // Golden-section refinement in log V between the neighbours of the best node.
    let (mut a, mut b) = (grid[best_i.saturating_sub(1)].ln(), grid[(best_i + 1).min(GRID - 1)].ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| phi(t.exp());
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let (value, argmax) = if f(t) > best { (f(t), t.exp().min(v)) } else { (best, grid[best_i]) };
    Ok(LowerBound { value, argmax })
}

/// Small-level behaviour of `θ_min` given growth exponents of numerator and channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSpec {
    /// Numerator growth exponent `q1 ∈ [1, 2]`.
    pub q1: f64,
    /// Channel exponent in `‖L_gV(x)‖₁ ≥ c_g‖x‖^{q2}`.
    pub q2: f64,
    pub c_g: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Vanishing,
    Bounded,
    BlowUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    pub caveat: Option<String>,
}

pub fn asymptotic_regime(spec: &AsymptoticSpec) -> Result<RegimeVerdict> {
    require((1.0..=2.0).contains(&spec.q1), || format!("q1 must lie in [1, 2], got {}", spec.q1))?;
    require(spec.q2 >= 1.0, || format!("q2 must be at least 1, got {}", spec.q2))?;
    require(spec.c_g > 0.0 && spec.rho > 0.0, || "c_g and ρ must be positive".into())?;
    let tol = 1e-12;
    Ok(if spec.q2 < spec.q1 - tol {
        RegimeVerdict { regime: Regime::Vanishing, caveat: None }
    } else if (spec.q2 - spec.q1).abs() <= tol {
        RegimeVerdict { regime: Regime::Bounded, caveat: None }
    } else {
        RegimeVerdict {
            regime: Regime::BlowUp,
            caveat: Some("divergence requires α(V) + L_fV > 0 at states approaching the origin".into()),
        }
    })
}

/// One row of a level sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapSweepRow {
    pub level: f64,
    pub cap: f64,
    pub theta_min: ActuationLevel,
    pub theta_lower: Option<f64>,
}

pub const CAP_SWEEP_HEADER: &str = "v,cap,theta_min,theta_lower";

/// Caps, required actuation, and (when constants are given) the analytic lower bound per level.
pub fn cap_sweep(
    plant: &dyn PlantModel,
    alpha: &ComparisonFn,
    theta: f64,
    levels: &[f64],
    consts: Option<&RegularityConstants>,
    opts: &SamplingOptions,
) -> Result<Vec<CapSweepRow>> {
    let caps = level_cap_sweep(plant, theta, levels, opts)?;
    levels
        .par_iter()
        .zip(caps.par_iter())
        .enumerate()
        .map(|(i, (&v, &cap))| {
            let o = SamplingOptions { seed: opts.seed.wrapping_add(i as u64), ..*opts };
            let theta_min = required_actuation(plant, alpha, v, &o)?;
            let theta_lower = consts.map(|c| actuation_lower_bound(alpha, v, c).map(|b| b.value)).transpose()?;
            Ok(CapSweepRow { level: v, cap, theta_min, theta_lower })
        })
        .collect()
}

pub fn cap_sweep_csv(rows: &[CapSweepRow]) -> String {
    let mut out = String::from(CAP_SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let lower = r.theta_lower.map_or(String::new(), |v| format!("{v:.9e}"));
        let _ = writeln!(out, "{:.9e},{:.9e},{:.9e},{}", r.level, r.cap, r.theta_min.value(), lower);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Pendulum, PendulumParams, ScalarPowerPlant, SingleIntegrator};

    #[test]
    fn integrator_caps() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let x = DVector::from_element(1, 3.0);
        assert_eq!(pointwise_decay_cap(&plant, &x, 1.0).unwrap(), 6.0);
        assert_eq!(pointwise_decay_cap(&plant, &x, 0.0).unwrap(), 0.0);
        let opts = SamplingOptions::default();
        assert_eq!(level_cap(&plant, 2.0, 100.0, &opts).unwrap(), 40.0);
        assert!(level_cap(&plant, 2.0, 101.0, &opts).is_err());
    }

    #[test]
    fn pendulum_cap_matches_vertex_enumeration() {
        let plant = Pendulum::new(PendulumParams::default()).unwrap();
        let x = DVector::from_vec(vec![std::f64::consts::FRAC_PI_4, 0.05]);
        let cap = pointwise_decay_cap(&plant, &x, 10.0).unwrap();
        let lie = plant.lie_derivatives(&x);
        let best = [-10.0, 10.0].iter().map(|u| -lie.lf - lie.lg[0] * u).fold(f64::NEG_INFINITY, f64::max);
        assert!((cap - best).abs() < 1e-12);
    }

    #[test]
    fn integrator_required_actuation() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let opts = SamplingOptions { samples: 2000, ..SamplingOptions::default() };
        let sigma = 0.3;
        let got = required_actuation(&plant, &ComparisonFn::linear(sigma).unwrap(), 100.0, &opts).unwrap();
        // ratio σx²/(2|x|) peaks at the boundary |x| = 10.
        assert!((got.value() - sigma * 10.0 / 2.0).abs() < 1e-2);
    }

    #[test]
    fn zero_when_drift_dominates() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let tiny = ComparisonFn::tabulated(vec![[0.0, 0.0], [200.0, 1e-300]]);
        if let Ok(alpha) = tiny {
            let got = required_actuation_on(&plant, &alpha, &[DVector::from_element(1, 0.0)]);
            assert_eq!(got, ActuationLevel::Finite(0.0));
        }
    }

    #[test]
    fn scalar_power_blows_up() {
        let plant = ScalarPowerPlant::new(2, 1.0).unwrap();
        let alpha = ComparisonFn::linear(1.0).unwrap();
        let opts = SamplingOptions { samples: 1000, hill_climb_steps: 0, ..SamplingOptions::default() };
        let mut prev = 0.0;
        for v in [0.5, 0.05, 0.005] {
            let got = required_actuation(&plant, &alpha, v, &opts).unwrap().value();
            assert!(got > prev, "{got} after {prev}");
            prev = got;
        }
        let at_origin = required_actuation_on(&plant, &ComparisonFn::linear(1.0).unwrap(), &[DVector::zeros(1)]);
        assert_eq!(at_origin, ActuationLevel::Finite(0.0));
    }

    #[test]
    fn lower_bound_endpoint_and_zero() {
        let consts = RegularityConstants::from_k3_k4(2.0, 3.0).unwrap();
        let below = actuation_lower_bound(&ComparisonFn::linear(1.5).unwrap(), 4.0, &consts).unwrap();
        assert_eq!(below.value, 0.0);
        let above = actuation_lower_bound(&ComparisonFn::linear(5.0).unwrap(), 4.0, &consts).unwrap();
        assert_eq!(above.argmax, 4.0);
        assert!((above.value - 3.0 * 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lower_bound_grid_path() {
        let consts = RegularityConstants::from_k3_k4(0.5, 1.0).unwrap();
        let f = ComparisonFn::sqrt(2.0).unwrap();
        // (2√V − 0.5V)/√V = 2 − 0.5√V, maximal as V → 0.
        let b = actuation_lower_bound(&f, 1.0, &consts).unwrap();
        assert!((b.value - 2.0).abs() < 1e-4);
    }

    #[test]
    fn regimes() {
        let spec = |q1, q2| AsymptoticSpec { q1, q2, c_g: 1.0, rho: 1.0 };
        assert_eq!(asymptotic_regime(&spec(2.0, 1.0)).unwrap().regime, Regime::Vanishing);
        assert_eq!(asymptotic_regime(&spec(1.0, 1.0)).unwrap().regime, Regime::Bounded);
        let v = asymptotic_regime(&spec(1.0, 2.0)).unwrap();
        assert_eq!(v.regime, Regime::BlowUp);
        assert!(v.caveat.is_some());
        assert!(asymptotic_regime(&spec(3.0, 1.0)).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let plant = Pendulum::new(PendulumParams::default()).unwrap();
        let a = SublevelSample::draw(&plant, plant.c_max(), 500, 7).unwrap();
        let b = SublevelSample::draw(&plant, plant.c_max(), 500, 7).unwrap();
        assert_eq!(a.points, b.points);
        assert!(a.points.iter().all(|x| plant.clf(x) <= plant.c_max()));
    }
}
