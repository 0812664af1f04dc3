//! Closed-loop simulation with zero-order-hold control and windowed metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::comparison::ComparisonFn;
use crate::error::{require, Error, Result};
use crate::plant::PlantModel;
use crate::qp::{
    BangBangController, Controller, FlexibleQpController, HardQpController, KappaSchedule, MiniNormController,
    QpStatus, SoftQpController, SLACK_FLOOR,
};

/// Rates and crossings are only reported above this fraction of the initial level.
pub const LEVEL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control period (s).
    pub dt: f64,
    /// Total simulated time (s).
    pub horizon: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-3, horizon: 5.0, substeps: 4 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.dt > 0.0 && self.dt.is_finite(), || format!("dt must be positive, got {}", self.dt))?;
        require(self.horizon >= self.dt, || {
            format!("horizon {} is shorter than one control period {}", self.horizon, self.dt)
        })?;
        require(self.substeps >= 1, || "at least one integration substep is required".into())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Input cost matrix selection.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    #[default]
    Identity,
    /// `J⁻¹` of the attitude plant.
    InverseInertia,
    Matrix(Vec<Vec<f64>>),
}

impl CostSpec {
    pub fn matrix(&self, plant: &dyn PlantModel) -> Result<DMatrix<f64>> {
        let m = plant.input_dim();
        match self {
            CostSpec::Identity => Ok(DMatrix::identity(m, m)),
            CostSpec::InverseInertia => plant
                .inverse_inertia()
                .ok_or_else(|| Error::Config(format!("plant '{}' has no inertia for an inverse_inertia cost", plant.name()))),
            CostSpec::Matrix(rows) => {
                require(rows.len() == m && rows.iter().all(|r| r.len() == m), || {
                    format!("cost matrix must be {m}×{m}")
                })
                .map_err(|e| Error::Config(e.to_string()))?;
                Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            }
        }
    }
}

/// Serializable controller selection, generic over how the comparison is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerSpec<C = ComparisonFn> {
    MiniNorm {
        comparison: C,
    },
    HardQp {
        comparison: C,
        theta: f64,
        #[serde(default)]
        cost: CostSpec,
    },
    SoftQp {
        comparison: C,
        theta: f64,
        slack_weight: f64,
        #[serde(default)]
        cost: CostSpec,
    },
    FlexQp {
        sigma_min: f64,
        sigma_max: f64,
        kappa: KappaSchedule,
        theta: f64,
        #[serde(default)]
        cost: CostSpec,
    },
    BangBang {
        theta: f64,
    },
}

impl<C> ControllerSpec<C> {
    pub fn comparison(&self) -> Option<&C> {
        match self {
            ControllerSpec::MiniNorm { comparison }
            | ControllerSpec::HardQp { comparison, .. }
            | ControllerSpec::SoftQp { comparison, .. } => Some(comparison),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::MiniNorm { .. } => "mini_norm",
            ControllerSpec::HardQp { .. } => "hard_qp",
            ControllerSpec::SoftQp { .. } => "soft_qp",
            ControllerSpec::FlexQp { .. } => "flex_qp",
            ControllerSpec::BangBang { .. } => "bang_bang",
        }
    }

    /// Converts the comparison of comparison-based controllers.
    pub fn map_comparison<D>(self, f: impl FnOnce(C) -> Result<D>) -> Result<ControllerSpec<D>> {
        Ok(match self {
            ControllerSpec::MiniNorm { comparison } => ControllerSpec::MiniNorm { comparison: f(comparison)? },
            ControllerSpec::HardQp { comparison, theta, cost } => {
                ControllerSpec::HardQp { comparison: f(comparison)?, theta, cost }
            }
            ControllerSpec::SoftQp { comparison, theta, slack_weight, cost } => {
                ControllerSpec::SoftQp { comparison: f(comparison)?, theta, slack_weight, cost }
            }
            ControllerSpec::FlexQp { sigma_min, sigma_max, kappa, theta, cost } => {
                ControllerSpec::FlexQp { sigma_min, sigma_max, kappa, theta, cost }
            }
            ControllerSpec::BangBang { theta } => ControllerSpec::BangBang { theta },
        })
    }
}

impl ControllerSpec {
    pub fn build(&self, plant: &dyn PlantModel) -> Result<Box<dyn Controller>> {
        Ok(match self {
            ControllerSpec::MiniNorm { comparison } => Box::new(MiniNormController { alpha: comparison.clone() }),
            ControllerSpec::HardQp { comparison, theta, cost } => {
                Box::new(HardQpController::new(comparison.clone(), *theta, cost.matrix(plant)?))
            }
            ControllerSpec::SoftQp { comparison, theta, slack_weight, cost } => Box::new(SoftQpController::new(
                comparison.clone(),
                *theta,
                cost.matrix(plant)?,
                *slack_weight,
            )),
            ControllerSpec::FlexQp { sigma_min, sigma_max, kappa, theta, cost } => Box::new(
                FlexibleQpController::new(*sigma_min, *sigma_max, *kappa, *theta, cost.matrix(plant)?),
            ),
            ControllerSpec::BangBang { theta } => Box::new(BangBangController { theta: *theta }),
        })
    }
}

/// Sampled closed-loop trajectory; sample `k` holds the state at `t_k` and the
/// input applied on `[t_k, t_k + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub substeps: usize,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    /// Raw slack values as returned by the controller.
    pub deltas: Vec<f64>,
    /// `−V̇/V` under the held input; `None` where `V ≤ 10⁻¹²·V(x₀)`.
    pub rates: Vec<Option<f64>>,
    /// Rate chosen by a flexible controller.
    pub sigmas: Vec<Option<f64>>,
    pub statuses: Vec<QpStatus>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Number of control steps whose QP was infeasible.
    pub fn infeasible_steps(&self) -> usize {
        self.statuses.iter().filter(|s| **s == QpStatus::Infeasible).count()
    }

    pub fn csv_header(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut h = String::from("t_s");
        for i in 0..n {
            let _ = write!(h, ",x{i}");
        }
        for i in 0..m {
            let _ = write!(h, ",u{i}");
        }
        h.push_str(",V,delta,rate_per_s,status");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{:.6}", self.times[k]);
            for v in self.states[k].iter().chain(self.inputs[k].iter()) {
                let _ = write!(out, ",{v:.12e}");
            }
            let rate = self.rates[k].map_or(String::new(), |r| format!("{r:.12e}"));
            let _ = writeln!(out, ",{:.12e},{:.12e},{},{:?}", self.values[k], self.deltas[k], rate, self.statuses[k]);
        }
        out
    }
}

/// Runs the closed loop from `x0` until the horizon or until `V < 10⁻¹²·V(x₀)`.
///
/// Infeasible hard-QP steps continue with the least-violating input and are
/// flagged in [`TrajectoryRecord::statuses`].
pub fn simulate(
    plant: &dyn PlantModel,
    controller: &mut dyn Controller,
    cfg: &SimConfig,
    x0: &DVector<f64>,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    plant.check_state(x0)?;
    controller.reset();
    let v0 = plant.clf(x0);
    let steps = cfg.steps();
    let mut rec = TrajectoryRecord {
        dt: cfg.dt,
        substeps: cfg.substeps,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
        deltas: Vec::with_capacity(steps + 1),
        rates: Vec::with_capacity(steps + 1),
        sigmas: Vec::with_capacity(steps + 1),
        statuses: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let v = plant.clf(&x);
        let at_origin = v0 == 0.0;
        let out = if at_origin {
            crate::qp::ControlOutput {
                u: DVector::zeros(plant.input_dim()),
                delta: 0.0,
                sigma: None,
                status: QpStatus::Optimal,
            }
        } else {
            controller.compute(plant, &x)?
        };
        let rate = if v > LEVEL_FLOOR * v0 {
            let lie = plant.lie_derivatives(&x);
            Some(-(lie.lf + lie.lg.dot(&out.u)) / v)
        } else {
            None
        };
        rec.times.push(k as f64 * cfg.dt);
        rec.states.push(x.clone());
        rec.values.push(v);
        rec.deltas.push(out.delta);
        rec.rates.push(rate);
        rec.sigmas.push(out.sigma);
        rec.statuses.push(out.status);
        let done = at_origin || v < LEVEL_FLOOR * v0 || k == steps;
        if !done {
            x = plant.step(&x, &out.u, cfg.dt, cfg.substeps);
            if x.iter().any(|e| !e.is_finite()) {
                return Err(Error::Numerical(format!("state diverged at t = {}", (k + 1) as f64 * cfg.dt)));
            }
        }
        rec.inputs.push(out.u);
        if done {
            break;
        }
    }
    Ok(rec)
}

/// First time `V` enters `Ω(V, ε)`, interpolated in `ln V` between samples.
pub fn crossing_time_empirical(rec: &TrajectoryRecord, eps: f64) -> Result<f64> {
    require(!rec.is_empty(), || "empty trajectory record".into())?;
    let k = rec.values.iter().position(|&v| v <= eps).ok_or_else(|| Error::NoCrossing {
        level: eps,
        final_value: *rec.values.last().expect("nonempty"),
    })?;
    if k == 0 || rec.values[k] == eps {
        return Ok(rec.times[k]);
    }
    let (t0, t1) = (rec.times[k - 1], rec.times[k]);
    let (v0, v1) = (rec.values[k - 1], rec.values[k]);
    let frac = if v1 > 0.0 { (eps.ln() - v0.ln()) / (v1.ln() - v0.ln()) } else { (v0 - eps) / (v0 - v1) };
    Ok(t0 + frac * (t1 - t0))
}

/// `∫₀ᵀ uᵀu dt` of the held input sequence.
pub fn control_energy(rec: &TrajectoryRecord, until: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..rec.len() {
        let start = rec.times[k];
        if start >= until {
            break;
        }
        let end = (start + rec.dt).min(until);
        total += rec.inputs[k].norm_squared() * (end - start);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub eps: f64,
    pub crossing_time: f64,
    pub nominal_rate: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub c: f64,
    pub windows: Vec<WindowMetrics>,
    /// `max_t ‖u(t)‖∞`
    pub peak_input: f64,
    /// Largest slack over the record, with values below the floor reported as 0.
    pub max_slack: f64,
    pub infeasible_steps: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "label,eps,T_s,sigma_nom_per_s,energy_N2m2s,peak_u";

    pub fn csv_rows(&self, label: &str) -> String {
        let mut out = String::new();
        for w in &self.windows {
            let _ = writeln!(
                out,
                "{label},{:.6e},{:.6},{:.6},{:.6},{:.6}",
                w.eps, w.crossing_time, w.nominal_rate, w.energy, self.peak_input
            );
        }
        out
    }

    pub fn window(&self, eps: f64) -> Option<&WindowMetrics> {
        self.windows.iter().find(|w| (w.eps - eps).abs() <= 1e-12 * eps)
    }
}

/// Crossing times, nominal rates, and energies for each `ε`, plus input peaks.
pub fn metrics(rec: &TrajectoryRecord, c: f64, eps_list: &[f64]) -> Result<MetricsReport> {
    require(!rec.is_empty(), || "empty trajectory record".into())?;
    require((rec.initial_value() - c).abs() <= 1e-12 * c.abs().max(1.0), || {
        format!("c = {c} differs from the recorded initial level {}", rec.initial_value())
    })?;
    let mut windows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        require(eps > 0.0 && eps < c, || format!("ε = {eps} must lie in (0, {c})"))?;
        let t = crossing_time_empirical(rec, eps)?;
        windows.push(WindowMetrics { eps, crossing_time: t, nominal_rate: (c / eps).ln() / t, energy: control_energy(rec, t) });
    }
    let peak_input = rec.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let max_slack = rec.deltas.iter().map(|&d| if d < SLACK_FLOOR { 0.0 } else { d }).fold(0.0, f64::max);
    Ok(MetricsReport { c, windows, peak_input, max_slack, infeasible_steps: rec.infeasible_steps() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBoundVerdict {
    pub holds: bool,
    /// Largest `‖x(t)‖ / envelope(t)` over the record.
    pub worst_ratio: f64,
}

/// Checks `‖x(t)‖ ≤ √(k2/k1)·e^{−σt/2}·‖x(0)‖` with 1% slack.
pub fn state_bound_check(rec: &TrajectoryRecord, k1: f64, k2: f64, sigma: f64) -> Result<StateBoundVerdict> {
    require(0.0 < k1 && k1 <= k2, || format!("need 0 < k1 ≤ k2, got {k1}, {k2}"))?;
    require(!rec.is_empty(), || "empty trajectory record".into())?;
    let x0 = rec.states[0].norm();
    let gain = (k2 / k1).sqrt();
    let mut worst = 0.0f64;
    for (t, x) in rec.times.iter().zip(&rec.states) {
        let envelope = gain * (-0.5 * sigma * t).exp() * x0;
        let n = x.norm();
        if n == 0.0 {
            continue;
        }
        worst = worst.max(if envelope > 0.0 { n / envelope } else { f64::INFINITY });
    }
    Ok(StateBoundVerdict { holds: worst <= 1.01, worst_ratio: worst })
}

/// Solution of `ẏ = −α(y)`, `y(0) = y0`, sampled like `rec` with the same RK4 scheme.
pub fn comparison_solution(rec: &TrajectoryRecord, alpha: &ComparisonFn, y0: f64) -> Vec<f64> {
    let h = rec.dt / rec.substeps as f64;
    let rhs = |y: f64| -alpha.value(y.max(0.0));
    let mut y = y0;
    let mut out = Vec::with_capacity(rec.len());
    for k in 0..rec.len() {
        if k > 0 {
            for _ in 0..rec.substeps {
                let k1 = rhs(y);
                let k2 = rhs(y + 0.5 * h * k1);
                let k3 = rhs(y + 0.5 * h * k2);
                let k4 = rhs(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        out.push(y);
    }
    out
}

/// Largest `V(x(t)) − y(t)` against the comparison solution started at `V(x₀)`.
pub fn comparison_envelope_excess(rec: &TrajectoryRecord, alpha: &ComparisonFn) -> f64 {
    let y = comparison_solution(rec, alpha, rec.initial_value());
    rec.values.iter().zip(&y).map(|(v, y)| v - y).fold(f64::NEG_INFINITY, f64::max)
}
