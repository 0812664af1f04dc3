//! Case-study evaluation protocols: `c = V(x₀)`, `ε = ξ·c`, 1 ms ZOH control.

use rayon::prelude::*;

use crate::comparison::ComparisonFn;
use crate::error::Result;
use crate::plant::{Pendulum, PendulumParams, PlantModel, QuadAttitude, QuadParams};
use crate::qp::KappaSchedule;
use crate::sim::{metrics, simulate, ControllerSpec, CostSpec, MetricsReport, SimConfig, TrajectoryRecord};

use super::config::NormalizedRational;

/// Relative window levels of both case studies.
pub const XI: [f64; 3] = [1e-2, 1e-3, 1e-4];

pub const PENDULUM_R: [f64; 5] = [1.0, 0.9, 0.8, 0.7, 0.6];
pub const QUADROTOR_R: [f64; 2] = [0.95, 0.85];

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub label: String,
    pub controller: ControllerSpec,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub record: TrajectoryRecord,
    pub metrics: MetricsReport,
}

pub fn pendulum() -> Result<Pendulum> {
    Pendulum::new(PendulumParams::default())
}

pub fn quadrotor() -> Result<QuadAttitude> {
    QuadAttitude::new(QuadParams::default())
}

pub fn initial_level(plant: &dyn PlantModel) -> f64 {
    plant.clf(&plant.initial_state())
}

/// Linear baseline `σ = 3` and the normalized rational designs, all soft QP with `q = 10⁵`, `θ = 10`.
pub fn pendulum_runs(c: f64) -> Result<Vec<ProtocolRun>> {
    let soft = |comparison: ComparisonFn| ControllerSpec::SoftQp {
        comparison,
        theta: 10.0,
        slack_weight: 1e5,
        cost: CostSpec::Identity,
    };
    let mut runs = vec![ProtocolRun { label: "linear".into(), controller: soft(ComparisonFn::linear(3.0)?) }];
    for r in PENDULUM_R {
        runs.push(ProtocolRun { label: format!("r={r:.1}"), controller: soft(pendulum_rational(r, c)?) });
    }
    Ok(runs)
}

pub fn pendulum_rational(r: f64, c: f64) -> Result<ComparisonFn> {
    NormalizedRational { sigma: 3.0, k_min: 0.1, k_max: 2.3, r, exponent: None }.resolve(c)
}

/// Concave soft QP (`H = J⁻¹`, `q = 300`, `θ = 11`) for each `r`, then the flexible QP.
pub fn quadrotor_runs(c: f64) -> Result<Vec<ProtocolRun>> {
    let mut runs = Vec::new();
    for r in QUADROTOR_R {
        let comparison = NormalizedRational { sigma: 2.0, k_min: 0.8, k_max: 2.5, r, exponent: None }.resolve(c)?;
        runs.push(ProtocolRun {
            label: format!("r={r:.2}"),
            controller: ControllerSpec::SoftQp { comparison, theta: 11.0, slack_weight: 300.0, cost: CostSpec::InverseInertia },
        });
    }
    runs.push(ProtocolRun {
        label: "flexible".into(),
        controller: ControllerSpec::FlexQp {
            sigma_min: 0.29,
            sigma_max: 10.0,
            kappa: KappaSchedule::Saturating { gain: 0.9, rate: 0.9 },
            theta: 11.0,
            cost: CostSpec::Identity,
        },
    });
    Ok(runs)
}

/// Simulates every run from the plant's initial state in parallel and computes metrics at `ξ·c`.
pub fn run_protocol(plant: &dyn PlantModel, runs: &[ProtocolRun], cfg: &SimConfig, xi: &[f64]) -> Result<Vec<RunResult>> {
    let x0 = plant.initial_state();
    let c = plant.clf(&x0);
    let eps: Vec<f64> = xi.iter().map(|x| x * c).collect();
    runs.par_iter()
        .map(|run| {
            let mut ctl = run.controller.build(plant)?;
            let record = simulate(plant, ctl.as_mut(), cfg, &x0)?;
            let metrics = metrics(&record, c, &eps)?;
            Ok(RunResult { label: run.label.clone(), record, metrics })
        })
        .collect()
}
