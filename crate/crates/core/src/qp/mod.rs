//! Small dense convex QPs with box bounds and at most one general inequality.
//!
//! The solver is a primal active-set method: a Phase-1 step finds a point of
//! the box satisfying the inequality (or proves none exists), then equality-
//! constrained subproblems over the free variables are solved with a Cholesky
//! factorization of the reduced Hessian and a Schur complement for the row.

mod controllers;

pub use controllers::*;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};

/// Active-set changes allowed before giving up.
pub const MAX_ITERATIONS: usize = 200;

/// Largest supported number of decision variables.
pub const MAX_VARIABLES: usize = 8;

/// Slack values below this are reported as exactly zero in metrics.
pub const SLACK_FLOOR: f64 = 1e-9;

/// `aᵀz ≤ b`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub a: DVector<f64>,
    pub b: f64,
}

/// `min ½zᵀGz + cᵀz` subject to `lower ≤ z ≤ upper` and an optional row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub row: Option<LinearRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

/// Solver state carried between consecutive related solves.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub bounds: Vec<BoundState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    /// Multiplier of the row (`≥ 0`).
    pub row_multiplier: f64,
    /// `ν` in `Gz + c + λa + ν = 0`: negative on active lower bounds, positive on upper.
    pub bound_multipliers: DVector<f64>,
    pub bounds: Vec<BoundState>,
    pub row_active: bool,
    pub status: QpStatus,
    pub iterations: usize,
}

impl DenseSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { z: self.z.clone(), bounds: self.bounds.clone() }
    }
}

/// Stationarity, primal feasibility, and complementarity residuals (absolute).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

impl DenseQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        require((1..=MAX_VARIABLES).contains(&n), || format!("QP size {n} outside 1..={MAX_VARIABLES}"))?;
        require(self.hessian.shape() == (n, n), || "Hessian shape mismatch".into())?;
        require(self.lower.len() == n && self.upper.len() == n, || "bound length mismatch".into())?;
        require((&self.hessian - self.hessian.transpose()).abs().max() <= 1e-12 * (1.0 + self.hessian.abs().max()), || {
            "Hessian must be symmetric".into()
        })?;
        for i in 0..n {
            require(self.lower[i] <= self.upper[i] && !self.lower[i].is_nan() && !self.upper[i].is_nan(), || {
                format!("empty box on variable {i}")
            })?;
        }
        if let Some(row) = &self.row {
            require(row.a.len() == n && row.b.is_finite() && row.a.iter().all(|v| v.is_finite()), || {
                "inequality row must be finite and match the dimension".into()
            })?;
        }
        if Cholesky::new(self.hessian.clone()).is_none() {
            return Err(Error::Precondition("Hessian must be positive definite".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    fn row_value(&self, z: &DVector<f64>) -> f64 {
        self.row.as_ref().map_or(f64::NEG_INFINITY, |r| r.a.dot(z) - r.b)
    }

    fn row_tolerance(&self, z: &DVector<f64>) -> f64 {
        self.row.as_ref().map_or(0.0, |r| {
            1e-12 * (1.0 + r.b.abs() + r.a.iter().zip(z.iter()).map(|(a, z)| (a * z).abs()).sum::<f64>())
        })
    }
}

/// Residuals of the KKT conditions for `sol` (multipliers as stored in the solution).
pub fn kkt_residual(qp: &DenseQp, sol: &DenseSolution) -> KktResidual {
    let z = &sol.z;
    let lambda = sol.row_multiplier;
    let mut stat = &qp.hessian * z + &qp.linear + &sol.bound_multipliers;
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual = (-lambda).max(0.0);
    if let Some(row) = &qp.row {
        stat += &row.a * lambda;
        let g = row.a.dot(z) - row.b;
        primal = primal.max(g);
        comp = comp.max((lambda * g).abs());
    }
    for i in 0..qp.dim() {
        primal = primal.max(qp.lower[i] - z[i]).max(z[i] - qp.upper[i]);
        let nu = sol.bound_multipliers[i];
        if nu < 0.0 {
            comp = comp.max((nu * (z[i] - qp.lower[i])).abs());
        } else if nu > 0.0 {
            comp = comp.max((nu * (qp.upper[i] - z[i])).abs());
        }
        if qp.lower[i] < qp.upper[i] {
            match sol.bounds[i] {
                BoundState::Lower => dual = dual.max(nu),
                BoundState::Upper => dual = dual.max(-nu),
                BoundState::Free => dual = dual.max(nu.abs()),
            }
        }
    }
    let stationarity = stat.amax();
    KktResidual { stationarity, primal: primal.max(0.0), complementarity: comp, dual }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Phase 1: a point of the box satisfying the row, starting from `z0`.
/// Returns `Err(point)` with the least-violating vertex when none exists.
fn phase_one(qp: &DenseQp, z0: DVector<f64>) -> std::result::Result<DVector<f64>, DVector<f64>> {
    let Some(row) = &qp.row else { return Ok(z0) };
    let excess = row.a.dot(&z0) - row.b;
    if excess <= qp.row_tolerance(&z0) {
        return Ok(z0);
    }
    let mut vertex = z0.clone();
    for i in 0..qp.dim() {
        let a = row.a[i];
        if a == 0.0 {
            continue;
        }
        let target = if a > 0.0 { qp.lower[i] } else { qp.upper[i] };
        if target.is_infinite() {
            // Unbounded in a decreasing direction: move this coordinate only.
            let mut z = z0;
            z[i] -= excess / a;
            return Ok(z);
        }
        vertex[i] = target;
    }
    let min_value = row.a.dot(&vertex) - row.b;
    if min_value > qp.row_tolerance(&vertex) {
        return Err(vertex);
    }
    let t = (excess / (excess - min_value)).min(1.0);
    let mut z = &z0 + (&vertex - &z0) * t;
    for i in 0..qp.dim() {
        z[i] = clamp(z[i], qp.lower[i], qp.upper[i]);
    }
    Ok(z)
}

struct Reduced {
    free: Vec<usize>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Reduced {
    fn new(qp: &DenseQp, bounds: &[BoundState]) -> Self {
        let free: Vec<usize> = (0..qp.dim()).filter(|&i| bounds[i] == BoundState::Free).collect();
        let chol = if free.is_empty() {
            None
        } else {
            let g = DMatrix::from_fn(free.len(), free.len(), |i, j| qp.hessian[(free[i], free[j])]);
            Cholesky::new(g)
        };
        Reduced { free, chol }
    }

    fn gather(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| v[i]))
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.as_ref().expect("nonempty free set").solve(v)
    }
}

/// Solves a [`DenseQp`], optionally warm-started from a previous solution.
pub fn solve_dense(qp: &DenseQp, warm: Option<&WarmStart>) -> Result<DenseSolution> {
    qp.validate()?;
    let n = qp.dim();
    let start = match warm {
        Some(w) if w.z.len() == n => w.z.clone(),
        _ => DVector::zeros(n),
    };
    let z0 = DVector::from_fn(n, |i, _| clamp(start[i], qp.lower[i], qp.upper[i]));

    let mut z = match phase_one(qp, z0) {
        Ok(z) => z,
        Err(vertex) => {
            return Ok(DenseSolution {
                objective: qp.objective(&vertex),
                bounds: vec![BoundState::Free; n],
                bound_multipliers: DVector::zeros(n),
                z: vertex,
                row_multiplier: 0.0,
                row_active: false,
                status: QpStatus::Infeasible,
                iterations: 0,
            })
        }
    };

    let mut bounds: Vec<BoundState> = (0..n)
        .map(|i| {
            let prev = warm.filter(|w| w.bounds.len() == n).map(|w| w.bounds[i]);
            if qp.lower[i] == qp.upper[i] || (prev == Some(BoundState::Lower) && z[i] == qp.lower[i]) {
                BoundState::Lower
            } else if prev == Some(BoundState::Upper) && z[i] == qp.upper[i] {
                BoundState::Upper
            } else {
                BoundState::Free
            }
        })
        .collect();
    let mut row_active = false;
    let zero_a = DVector::zeros(n);
    let a = qp.row.as_ref().map_or(&zero_a, |r| &r.a);

    for iteration in 0..MAX_ITERATIONS {
        let grad = &qp.hessian * &z + &qp.linear;
        let red = Reduced::new(qp, &bounds);
        if !red.free.is_empty() && red.chol.is_none() {
            return Err(Error::Numerical("reduced Hessian lost positive definiteness".into()));
        }

        // Step p on the free set and the row multiplier of the equality subproblem.
        let mut p = DVector::zeros(n);
        let mut lambda = None;
        if !red.free.is_empty() {
            let y = red.solve(&red.gather(&grad));
            let mut pf = -y.clone();
            if row_active {
                let af = red.gather(a);
                let w = red.solve(&af);
                let denom = af.dot(&w);
                if denom > 1e-14 * a.norm_squared() {
                    let l = -af.dot(&y) / denom;
                    pf = -(y + w * l);
                    lambda = Some(l);
                }
            }
            for (k, &i) in red.free.iter().enumerate() {
                p[i] = pf[k];
            }
        }

        let step_size = p.amax();
        if step_size <= 1e-14 * (1.0 + z.amax()) {
            let lambda = if row_active {
                match lambda {
                    Some(l) => l,
                    None => degenerate_row_multiplier(qp, &bounds, &grad, a),
                }
            } else {
                0.0
            };
            let mult_tol = 1e-12 * (1.0 + grad.amax());
            if row_active && lambda < -mult_tol {
                row_active = false;
                continue;
            }
            let lambda = lambda.max(0.0);
            let r = &grad + a * lambda;
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if qp.lower[i] == qp.upper[i] {
                    continue;
                }
                let mu = match bounds[i] {
                    BoundState::Free => continue,
                    BoundState::Lower => r[i],
                    BoundState::Upper => -r[i],
                };
                if mu < -mult_tol && worst.is_none_or(|(_, m)| mu < m) {
                    worst = Some((i, mu));
                }
            }
            if let Some((i, _)) = worst {
                bounds[i] = BoundState::Free;
                continue;
            }
            let nu = DVector::from_fn(n, |i, _| if bounds[i] == BoundState::Free { 0.0 } else { -r[i] });
            let sol = DenseSolution {
                objective: qp.objective(&z),
                z,
                row_multiplier: if row_active { lambda } else { 0.0 },
                bound_multipliers: nu,
                bounds,
                row_active,
                status: QpStatus::Optimal,
                iterations: iteration + 1,
            };
            debug_assert!({
                let res = kkt_residual(qp, &sol);
                let scale = 1.0 + qp.linear.amax() + qp.hessian.amax() * sol.z.amax();
                res.max() <= 1e-8 * scale
            });
            return Ok(sol);
        }

        // Ratio test against inactive bounds and the row.
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &red.free {
            let t = if p[i] < 0.0 && qp.lower[i].is_finite() {
                Some(((qp.lower[i] - z[i]) / p[i], BoundState::Lower))
            } else if p[i] > 0.0 && qp.upper[i].is_finite() {
                Some(((qp.upper[i] - z[i]) / p[i], BoundState::Upper))
            } else {
                None
            };
            if let Some((t, side)) = t {
                let t = t.max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(Some((i, side)));
                }
            }
        }
        if !row_active && qp.row.is_some() {
            let ap = a.dot(&p);
            if ap > 1e-15 * a.amax() * step_size {
                let t = (-qp.row_value(&z) / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(None);
                }
            }
        }
        z += &p * alpha;
        match blocking {
            Some(Some((i, side))) => {
                z[i] = if side == BoundState::Lower { qp.lower[i] } else { qp.upper[i] };
                bounds[i] = side;
            }
            Some(None) => row_active = true,
            None => {}
        }
    }

    let nu = DVector::zeros(n);
    Ok(DenseSolution {
        objective: qp.objective(&z),
        z,
        row_multiplier: 0.0,
        bound_multipliers: nu,
        bounds,
        row_active,
        status: QpStatus::MaxIter,
        iterations: MAX_ITERATIONS,
    })
}

/// Row multiplier when the row has no free coefficients: the smallest
/// `λ ≥ 0` that keeps every active bound multiplier nonnegative, if any.
fn degenerate_row_multiplier(qp: &DenseQp, bounds: &[BoundState], grad: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for i in 0..qp.dim() {
        if qp.lower[i] == qp.upper[i] {
            continue;
        }
        let s = match bounds[i] {
            BoundState::Free => continue,
            BoundState::Lower => 1.0,
            BoundState::Upper => -1.0,
        };
        let (coef, constant) = (s * a[i], s * grad[i]);
        if coef > 0.0 {
            lo = lo.max(-constant / coef);
        } else if coef < 0.0 {
            hi = hi.min(-constant / coef);
        }
    }
    if lo <= hi {
        lo
    } else {
        hi.max(0.0)
    }
}

/// Optional rate decision variable of the flexible formulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateVariable {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Weight `κ ∈ (0, 1)` trading input economy against rate.
    pub weight: f64,
    /// Current CLF value multiplying the rate in the decay row.
    pub level: f64,
}

/// One CLF-QP instance over the inputs `u`.
///
/// The decay row reads `a·u + b ≤ δ` with a slack, `a·u + b + σ·V ≤ 0` with a
/// rate variable, and `a·u + b ≤ 0` otherwise. Inputs are boxed to `|u_i| ≤ θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Input cost `H`.
    pub cost: DMatrix<f64>,
    pub decay_row: DVector<f64>,
    pub decay_offset: f64,
    pub theta: f64,
    pub slack_weight: Option<f64>,
    pub rate: Option<RateVariable>,
}

/// Identifies an active constraint of a [`QpSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveConstraint {
    Decay,
    InputLower(usize),
    InputUpper(usize),
    SlackLower,
    RateLower,
    RateUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Optimal slack; for an infeasible hard problem, the remaining violation.
    pub delta: f64,
    pub sigma_star: Option<f64>,
    pub objective: f64,
    pub active: Vec<ActiveConstraint>,
    pub status: QpStatus,
    pub decay_multiplier: f64,
    pub dense: DenseSolution,
}

impl QpProblem {
    fn validate(&self) -> Result<()> {
        let m = self.decay_row.len();
        require(m >= 1, || "at least one input is required".into())?;
        require(self.cost.shape() == (m, m), || format!("cost must be {m}×{m}"))?;
        require(self.theta >= 0.0, || format!("θ must be nonnegative, got {}", self.theta))?;
        require(self.decay_offset.is_finite(), || "decay offset must be finite".into())?;
        require(!(self.slack_weight.is_some() && self.rate.is_some()), || {
            "slack and rate variables cannot be combined".into()
        })?;
        if let Some(q) = self.slack_weight {
            require(q > 0.0, || format!("slack weight must be positive, got {q}"))?;
        }
        if let Some(r) = &self.rate {
            require(0.0 < r.sigma_min && r.sigma_min <= r.sigma_max, || {
                format!("rate bounds must satisfy 0 < σ_min ≤ σ_max, got [{}, {}]", r.sigma_min, r.sigma_max)
            })?;
            require(r.weight > 0.0 && r.weight < 1.0, || format!("κ must lie in (0,1), got {}", r.weight))?;
            require(r.level >= 0.0, || "CLF level must be nonnegative".into())?;
        }
        Ok(())
    }

    /// Dense form and the constant dropped from the objective.
    pub fn to_dense(&self) -> Result<(DenseQp, f64)> {
        self.validate()?;
        let m = self.decay_row.len();
        let extra = usize::from(self.slack_weight.is_some() || self.rate.is_some());
        let n = m + extra;
        let input_scale = self.rate.map_or(1.0, |r| 1.0 - r.weight);
        let mut hessian = DMatrix::zeros(n, n);
        hessian.view_mut((0, 0), (m, m)).copy_from(&(&self.cost * (2.0 * input_scale)));
        let mut linear = DVector::zeros(n);
        let mut lower = DVector::from_element(n, -self.theta);
        let mut upper = DVector::from_element(n, self.theta);
        let mut a = DVector::zeros(n);
        a.rows_mut(0, m).copy_from(&self.decay_row);
        let mut constant = 0.0;
        if let Some(q) = self.slack_weight {
            hessian[(m, m)] = 2.0 * q;
            lower[m] = 0.0;
            upper[m] = f64::INFINITY;
            a[m] = -1.0;
        }
        if let Some(r) = &self.rate {
            hessian[(m, m)] = 2.0 * r.weight;
            linear[m] = -2.0 * r.weight * r.sigma_max;
            constant = r.weight * r.sigma_max * r.sigma_max;
            lower[m] = r.sigma_min;
            upper[m] = r.sigma_max;
            a[m] = r.level;
        }
        let row = Some(LinearRow { a, b: -self.decay_offset });
        Ok((DenseQp { hessian, linear, lower, upper, row }, constant))
    }
}

/// Solves one CLF-QP instance.
pub fn solve_small_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_small_qp_with(p, None)
}

/// As [`solve_small_qp`], warm-started from an earlier solution of the same shape.
pub fn solve_small_qp_with(p: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
    let (dense, constant) = p.to_dense()?;
    let sol = solve_dense(&dense, warm)?;
    let m = p.decay_row.len();
    let u = sol.z.rows(0, m).into_owned();
    let decay_value = p.decay_row.dot(&u) + p.decay_offset;
    let delta = if p.slack_weight.is_some() {
        sol.z[m]
    } else if sol.status == QpStatus::Infeasible {
        decay_value.max(0.0)
    } else {
        0.0
    };
    let sigma_star = p.rate.map(|_| sol.z[m]);
    let mut active = Vec::new();
    if sol.status == QpStatus::Optimal {
        if sol.row_active {
            active.push(ActiveConstraint::Decay);
        }
        for (i, b) in sol.bounds.iter().enumerate() {
            let c = match (i < m, b, p.rate.is_some()) {
                (_, BoundState::Free, _) => continue,
                (true, BoundState::Lower, _) => ActiveConstraint::InputLower(i),
                (true, BoundState::Upper, _) => ActiveConstraint::InputUpper(i),
                (false, BoundState::Lower, false) => ActiveConstraint::SlackLower,
                (false, BoundState::Lower, true) => ActiveConstraint::RateLower,
                (false, BoundState::Upper, true) => ActiveConstraint::RateUpper,
                (false, BoundState::Upper, false) => continue,
            };
            active.push(c);
        }
    }
    Ok(QpSolution {
        u,
        delta,
        sigma_star,
        objective: sol.objective + constant,
        active,
        status: sol.status,
        decay_multiplier: sol.row_multiplier,
        dense: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(a: f64, b: f64, theta: f64) -> QpProblem {
        QpProblem {
            cost: DMatrix::identity(1, 1),
            decay_row: DVector::from_element(1, a),
            decay_offset: b,
            theta,
            slack_weight: None,
            rate: None,
        }
    }

    #[test]
    fn unconstrained_optimum_is_zero() {
        let sol = solve_small_qp(&scalar_problem(2.0, -3.0, 10.0)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.u[0], 0.0);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn one_dimensional_kkt() {
        let sol = solve_small_qp(&scalar_problem(2.0, 3.0, 10.0)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.u[0] + 1.5).abs() < 1e-14);
        assert_eq!(sol.active, vec![ActiveConstraint::Decay]);
        // 2u + 2λ = 0 at u = −1.5
        assert!((sol.decay_multiplier - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hard_infeasible_reports_min_violation_vertex() {
        let sol = solve_small_qp(&scalar_problem(2.0, 30.0, 10.0)).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert_eq!(sol.u[0], -10.0);
        assert!((sol.delta - 10.0).abs() < 1e-12);
    }

    #[test]
    fn soft_closed_form_scalar() {
        let (a, b, q) = (0.7, 2.0, 1e5);
        let mut p = scalar_problem(a, b, 10.0);
        p.slack_weight = Some(q);
        let sol = solve_small_qp(&p).unwrap();
        let expected = (-q * b * a / (1.0 + q * a * a)).clamp(-10.0, 10.0);
        assert!((sol.u[0] - expected).abs() < 1e-10 * expected.abs());
        assert!((sol.delta - (a * sol.u[0] + b)).abs() < 1e-10);
        // θ = 0 leaves everything to the slack.
        p.theta = 0.0;
        let sol = solve_small_qp(&p).unwrap();
        assert_eq!(sol.u[0], 0.0);
        assert!((sol.delta - b).abs() < 1e-12);
    }

    #[test]
    fn flexible_weight_limits() {
        let base = QpProblem {
            cost: DMatrix::identity(2, 2),
            decay_row: DVector::from_vec(vec![1.0, -0.5]),
            decay_offset: 0.2,
            theta: 100.0,
            slack_weight: None,
            rate: Some(RateVariable { sigma_min: 0.29, sigma_max: 10.0, weight: 1e-6, level: 1.0 }),
        };
        let sol = solve_small_qp(&base).unwrap();
        assert!((sol.sigma_star.unwrap() - 0.29).abs() < 1e-3);
        let mut p = base.clone();
        p.rate.as_mut().unwrap().weight = 1.0 - 1e-7;
        let sol = solve_small_qp(&p).unwrap();
        assert!((sol.sigma_star.unwrap() - 10.0).abs() < 1e-3);
        // Tiny box: even σ_min is out of reach.
        p.theta = 0.01;
        let sol = solve_small_qp(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_start_reaches_same_answer() {
        let mut p = scalar_problem(1.0, 0.5, 1.0);
        p.slack_weight = Some(10.0);
        let cold = solve_small_qp(&p).unwrap();
        p.decay_offset = 0.6;
        let warm = solve_small_qp_with(&p, Some(&cold.dense.warm_start())).unwrap();
        let fresh = solve_small_qp(&p).unwrap();
        assert!((warm.u[0] - fresh.u[0]).abs() < 1e-13);
        assert!((warm.delta - fresh.delta).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_problems() {
        let mut p = scalar_problem(1.0, 1.0, 1.0);
        p.cost = DMatrix::from_element(1, 1, -1.0);
        assert!(solve_small_qp(&p).is_err());
        let mut p = scalar_problem(1.0, 1.0, 1.0);
        p.slack_weight = Some(1.0);
        p.rate = Some(RateVariable { sigma_min: 1.0, sigma_max: 2.0, weight: 0.5, level: 1.0 });
        assert!(solve_small_qp(&p).is_err());
    }

    #[test]
    fn dense_degenerate_corner() {
        // Optimum sits at a vertex where the row and a bound meet.
        let qp = DenseQp {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::from_vec(vec![-3.0, -3.0]),
            lower: DVector::from_vec(vec![-1.0, -1.0]),
            upper: DVector::from_vec(vec![1.0, 1.0]),
            row: Some(LinearRow { a: DVector::from_vec(vec![1.0, 0.0]), b: 1.0 }),
        };
        let sol = solve_dense(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-14 && (sol.z[1] - 1.0).abs() < 1e-14);
        assert!(kkt_residual(&qp, &sol).max() < 1e-12);
    }
}
