use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_small_qp_with, QpProblem, QpSolution, QpStatus, RateVariable, WarmStart};
use crate::comparison::ComparisonFn;
use crate::error::{require, Error, Result};
use crate::plant::PlantModel;

/// Mini-norm CLF input: zero when `L_fV + α(V) ≤ 0`, otherwise the least-norm
/// input making the decay constraint active.
pub fn mini_norm(plant: &dyn PlantModel, x: &DVector<f64>, alpha: &ComparisonFn) -> Result<DVector<f64>> {
    let lie = plant.lie_derivatives(x);
    let residual = lie.lf + alpha.eval_alpha(plant.clf(x))?;
    if residual <= 0.0 {
        return Ok(DVector::zeros(plant.input_dim()));
    }
    let norm_sq = lie.lg.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::Infeasible(format!("L_gV = 0 with positive decay residual {residual}")));
    }
    Ok(&lie.lg * (-residual / norm_sq))
}

fn decay_problem(
    plant: &dyn PlantModel,
    x: &DVector<f64>,
    alpha: Option<&ComparisonFn>,
    theta: f64,
    cost: &DMatrix<f64>,
) -> Result<QpProblem> {
    let lie = plant.lie_derivatives(x);
    let offset = match alpha {
        Some(a) => lie.lf + a.eval_alpha(plant.clf(x))?,
        None => lie.lf,
    };
    Ok(QpProblem { cost: cost.clone(), decay_row: lie.lg, decay_offset: offset, theta, slack_weight: None, rate: None })
}

/// `min uᵀHu` s.t. `L_fV + L_gV·u + α(V) ≤ 0`, `‖u‖∞ ≤ θ`.
pub fn clf_qp_hard(
    plant: &dyn PlantModel,
    x: &DVector<f64>,
    alpha: &ComparisonFn,
    theta: f64,
    cost: &DMatrix<f64>,
) -> Result<QpSolution> {
    require(theta > 0.0, || format!("θ must be positive, got {theta}"))?;
    solve_small_qp_with(&decay_problem(plant, x, Some(alpha), theta, cost)?, None)
}

/// `min uᵀHu + qδ²` s.t. `L_fV + L_gV·u + α(V) ≤ δ`, `δ ≥ 0`, `‖u‖∞ ≤ θ`.
pub fn clf_qp_soft(
    plant: &dyn PlantModel,
    x: &DVector<f64>,
    alpha: &ComparisonFn,
    theta: f64,
    cost: &DMatrix<f64>,
    slack_weight: f64,
) -> Result<QpSolution> {
    let mut p = decay_problem(plant, x, Some(alpha), theta, cost)?;
    p.slack_weight = Some(slack_weight);
    solve_small_qp_with(&p, None)
}

/// `min (1−κ)uᵀHu + κ(σ_max − σ)²` s.t. `L_fV + L_gV·u + σV ≤ 0`,
/// `σ ∈ [σ_min, σ_max]`, `‖u‖∞ ≤ θ`.
pub fn flexible_clf_qp(
    plant: &dyn PlantModel,
    x: &DVector<f64>,
    sigma_min: f64,
    sigma_max: f64,
    kappa: f64,
    theta: f64,
    cost: &DMatrix<f64>,
) -> Result<QpSolution> {
    let mut p = decay_problem(plant, x, None, theta, cost)?;
    p.rate = Some(RateVariable { sigma_min, sigma_max, weight: kappa, level: plant.clf(x) });
    solve_small_qp_with(&p, None)
}

/// State-dependent weight `κ(x)` of the flexible controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KappaSchedule {
    Constant { value: f64 },
    /// `κ = gain·(1 − e^{−rate·V})`
    Saturating { gain: f64, rate: f64 },
}

impl KappaSchedule {
    pub fn eval(&self, v: f64) -> f64 {
        let k = match *self {
            KappaSchedule::Constant { value } => value,
            KappaSchedule::Saturating { gain, rate } => gain * (1.0 - (-rate * v).exp()),
        };
        // The QP needs κ strictly inside (0, 1); at V = 0 the schedule touches 0.
        k.clamp(1e-12, 1.0 - 1e-12)
    }
}

/// One control decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    /// Raw slack (soft form), or the remaining violation of an infeasible hard step.
    pub delta: f64,
    pub sigma: Option<f64>,
    pub status: QpStatus,
}

/// A feedback law evaluated once per control period.
///
/// Controllers may keep warm-start state, so one instance serves one trajectory.
pub trait Controller: Send {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput>;

    /// Clears per-trajectory state.
    fn reset(&mut self) {}
}

#[derive(Debug, Clone)]
pub struct MiniNormController {
    pub alpha: ComparisonFn,
}

impl Controller for MiniNormController {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput> {
        let u = mini_norm(plant, x, &self.alpha)?;
        Ok(ControlOutput { u, delta: 0.0, sigma: None, status: QpStatus::Optimal })
    }
}

fn check_cost(plant: &dyn PlantModel, cost: &DMatrix<f64>) -> Result<()> {
    let m = plant.input_dim();
    require(cost.shape() == (m, m), || format!("cost must be {m}×{m} for plant '{}'", plant.name()))
}

#[derive(Debug, Clone)]
pub struct HardQpController {
    pub alpha: ComparisonFn,
    pub theta: f64,
    pub cost: DMatrix<f64>,
    warm: Option<WarmStart>,
}

impl HardQpController {
    pub fn new(alpha: ComparisonFn, theta: f64, cost: DMatrix<f64>) -> Self {
        HardQpController { alpha, theta, cost, warm: None }
    }
}

impl Controller for HardQpController {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput> {
        check_cost(plant, &self.cost)?;
        let p = decay_problem(plant, x, Some(&self.alpha), self.theta, &self.cost)?;
        let sol = solve_small_qp_with(&p, self.warm.as_ref())?;
        self.warm = (sol.status == QpStatus::Optimal).then(|| sol.dense.warm_start());
        Ok(ControlOutput { u: sol.u, delta: sol.delta, sigma: None, status: sol.status })
    }

    fn reset(&mut self) {
        self.warm = None;
    }
}

#[derive(Debug, Clone)]
pub struct SoftQpController {
    pub alpha: ComparisonFn,
    pub theta: f64,
    pub cost: DMatrix<f64>,
    pub slack_weight: f64,
    warm: Option<WarmStart>,
}

impl SoftQpController {
    pub fn new(alpha: ComparisonFn, theta: f64, cost: DMatrix<f64>, slack_weight: f64) -> Self {
        SoftQpController { alpha, theta, cost, slack_weight, warm: None }
    }
}

impl Controller for SoftQpController {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput> {
        check_cost(plant, &self.cost)?;
        let mut p = decay_problem(plant, x, Some(&self.alpha), self.theta, &self.cost)?;
        p.slack_weight = Some(self.slack_weight);
        let sol = solve_small_qp_with(&p, self.warm.as_ref())?;
        self.warm = (sol.status == QpStatus::Optimal).then(|| sol.dense.warm_start());
        Ok(ControlOutput { u: sol.u, delta: sol.delta, sigma: None, status: sol.status })
    }

    fn reset(&mut self) {
        self.warm = None;
    }
}

#[derive(Debug, Clone)]
pub struct FlexibleQpController {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kappa: KappaSchedule,
    pub theta: f64,
    pub cost: DMatrix<f64>,
    warm: Option<WarmStart>,
}

impl FlexibleQpController {
    pub fn new(sigma_min: f64, sigma_max: f64, kappa: KappaSchedule, theta: f64, cost: DMatrix<f64>) -> Self {
        FlexibleQpController { sigma_min, sigma_max, kappa, theta, cost, warm: None }
    }
}

impl Controller for FlexibleQpController {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput> {
        check_cost(plant, &self.cost)?;
        let v = plant.clf(x);
        let mut p = decay_problem(plant, x, None, self.theta, &self.cost)?;
        p.rate = Some(RateVariable {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            weight: self.kappa.eval(v),
            level: v,
        });
        let sol = solve_small_qp_with(&p, self.warm.as_ref())?;
        self.warm = (sol.status == QpStatus::Optimal).then(|| sol.dense.warm_start());
        Ok(ControlOutput { u: sol.u, delta: sol.delta, sigma: sol.sigma_star, status: sol.status })
    }

    fn reset(&mut self) {
        self.warm = None;
    }
}

/// `u_i = −θ·sign(L_gV_i)`, the input attaining the pointwise decay cap.
#[derive(Debug, Clone, Copy)]
pub struct BangBangController {
    pub theta: f64,
}

impl Controller for BangBangController {
    fn compute(&mut self, plant: &dyn PlantModel, x: &DVector<f64>) -> Result<ControlOutput> {
        let lg = plant.lie_derivatives(x).lg;
        let u = lg.map(|g| if g > 0.0 { -self.theta } else if g < 0.0 { self.theta } else { 0.0 });
        Ok(ControlOutput { u, delta: 0.0, sigma: None, status: QpStatus::Optimal })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Pendulum, PendulumParams, SingleIntegrator};

    #[test]
    fn integrator_mini_norm_closed_form() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let alpha = ComparisonFn::linear(3.0).unwrap();
        for x in [-2.0, 0.5, 4.0] {
            let u = mini_norm(&plant, &DVector::from_element(1, x), &alpha).unwrap();
            assert!((u[0] + 1.5 * x).abs() < 1e-14);
        }
        assert_eq!(mini_norm(&plant, &DVector::zeros(1), &alpha).unwrap()[0], 0.0);
    }

    #[test]
    fn mini_norm_zero_when_drift_suffices() {
        let plant = Pendulum::new(PendulumParams::default()).unwrap();
        // Moving back toward upright with high speed makes L_fV strongly negative.
        let x = DVector::from_vec(vec![0.5, -2.0]);
        let alpha = ComparisonFn::linear(0.01).unwrap();
        let lie = plant.lie_derivatives(&x);
        assert!(lie.lf + alpha.value(plant.clf(&x)) <= 0.0);
        assert_eq!(mini_norm(&plant, &x, &alpha).unwrap()[0], 0.0);
    }

    #[test]
    fn hard_feasibility_tracks_decay_cap() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let x = DVector::from_element(1, 3.0);
        let cost = DMatrix::identity(1, 1);
        // D_max = 2θ|x| = 6 at θ = 1.
        let ok = clf_qp_hard(&plant, &x, &ComparisonFn::linear(0.6).unwrap(), 1.0, &cost).unwrap();
        assert_eq!(ok.status, QpStatus::Optimal);
        let bad = clf_qp_hard(&plant, &x, &ComparisonFn::linear(0.7).unwrap(), 1.0, &cost).unwrap();
        assert_eq!(bad.status, QpStatus::Infeasible);
        assert_eq!(bad.u[0], -1.0);
    }

    #[test]
    fn soft_zero_box() {
        let plant = Pendulum::new(PendulumParams::default()).unwrap();
        let x = plant.initial_state();
        let alpha = ComparisonFn::linear(3.0).unwrap();
        let sol = clf_qp_soft(&plant, &x, &alpha, 0.0, &DMatrix::identity(1, 1), 1e5).unwrap();
        let lie = plant.lie_derivatives(&x);
        assert_eq!(sol.u[0], 0.0);
        let expected = (lie.lf + alpha.value(plant.clf(&x))).max(0.0);
        assert!((sol.delta - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn bang_bang_matches_cap() {
        let plant = SingleIntegrator::new(2.0).unwrap();
        let mut ctrl = BangBangController { theta: 2.0 };
        let out = ctrl.compute(&plant, &DVector::from_element(1, 5.0)).unwrap();
        assert_eq!(out.u[0], -2.0);
        let lie = plant.lie_derivatives(&DVector::from_element(1, 5.0));
        assert_eq!(-(lie.lf + lie.lg[0] * out.u[0]), 2.0 * 2.0 * 5.0);
    }

    #[test]
    fn kappa_schedule() {
        let k = KappaSchedule::Saturating { gain: 0.9, rate: 0.9 };
        assert!((k.eval(1.0) - 0.9 * (1.0 - (-0.9f64).exp())).abs() < 1e-15);
        assert!(k.eval(0.0) > 0.0);
    }
}
