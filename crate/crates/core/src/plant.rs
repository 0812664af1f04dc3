//! Control-affine plants `ẋ = f(x) + g(x)u` with their control Lyapunov functions.
//!
//! States are flat vectors. The attitude plant embeds `(R, ω)` as twelve
//! numbers (rotation matrix row-major, then body rates); its CLF gradient is
//! taken in those embedding coordinates, so `∇V·f` and `∇Vᵀg` are the Lie
//! derivatives for every plant here.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::comparison::{ComparisonFn, ComparisonKind};
use crate::error::{require, Error, Result};

/// Lie derivatives of `V` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    pub lf: f64,
    pub lg: DVector<f64>,
}

/// Constants of the sandwich `k1‖x‖² ≤ V(x) ≤ k2‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBounds {
    pub k1: f64,
    pub k2: f64,
}

pub trait PlantModel: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `n × m` input matrix.
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn clf(&self, x: &DVector<f64>) -> f64;
    fn clf_gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn lie_derivatives(&self, x: &DVector<f64>) -> LieDerivatives {
        let grad = self.clf_gradient(x);
        LieDerivatives { lf: grad.dot(&self.drift(x)), lg: self.input_map(x).tr_mul(&grad) }
    }

    fn quadratic_bounds(&self) -> Option<QuadraticBounds> {
        None
    }

    /// Largest sublevel value the plant is certified for.
    fn c_max(&self) -> f64;

    /// Initial condition of the evaluation protocol.
    fn initial_state(&self) -> DVector<f64>;

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::State(format!("expected {} state entries, got {}", self.state_dim(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::State("state has non-finite entries".into()));
        }
        Ok(())
    }

    /// Axis-aligned box containing `Ω(V, v)`, when the plant can bound it.
    fn sublevel_box(&self, _v: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }

    /// Exact `ᾱ(θ, v)` when known in closed form.
    fn analytic_level_cap(&self, _theta: f64, _v: f64) -> Option<f64> {
        None
    }

    /// Exact `θ_min(α; v)` when known in closed form.
    fn analytic_required_actuation(&self, _alpha: &ComparisonFn, _v: f64) -> Option<f64> {
        None
    }

    /// `J⁻¹` for rigid-body plants.
    fn inverse_inertia(&self) -> Option<DMatrix<f64>> {
        None
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_map(x) * u
    }

    /// Advances the state by `dt` with `u` held, using `substeps` RK4 steps.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64, substeps: usize) -> DVector<f64> {
        let h = dt / substeps as f64;
        let mut x = x.clone();
        for _ in 0..substeps {
            let k1 = self.dynamics(&x, u);
            let k2 = self.dynamics(&(&x + &k1 * (0.5 * h)), u);
            let k3 = self.dynamics(&(&x + &k2 * (0.5 * h)), u);
            let k4 = self.dynamics(&(&x + &k3 * h), u);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }
}

/// `hat(v)·w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; rejects matrices that are not skew-symmetric to 1e-9.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (m + m.transpose()).abs().max();
    require(asym <= 1e-9, || format!("vee needs a skew-symmetric matrix, |M + Mᵀ| = {asym:.3e}"))?;
    Ok(skew_part(m))
}

/// `vee(½(M − Mᵀ))` without the skew check.
fn skew_part(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rodrigues formula for `expm(hat(w))`.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let th = w.norm();
    let k = hat(w);
    if th < 1e-8 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    Matrix3::identity() + k * (th.sin() / th) + k * k * ((1.0 - th.cos()) / (th * th))
}

/// Nearest rotation in Frobenius norm (polar factor).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}

/// Solves `AᵀP + PA = −σQ` for symmetric `P`.
pub fn lyap_solve_2x2(a: &Matrix2<f64>, q: &Matrix2<f64>, sigma: f64) -> Result<Matrix2<f64>> {
    require(sigma > 0.0, || format!("scale must be positive, got {sigma}"))?;
    require((q - q.transpose()).abs().max() <= 1e-12, || "Q must be symmetric".into())?;
    require(q[(0, 0)] > 0.0 && q.determinant() > 0.0, || "Q must be positive definite".into())?;
    if !(a.trace() < 0.0 && a.determinant() > 0.0) {
        return Err(Error::Precondition(format!(
            "A is not Hurwitz (trace {}, det {}), no positive definite solution",
            a.trace(),
            a.determinant()
        )));
    }
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let m = nalgebra::Matrix3::new(2.0 * a11, 2.0 * a21, 0.0, a12, a11 + a22, a21, 0.0, 2.0 * a12, 2.0 * a22);
    let rhs = Vector3::new(q[(0, 0)], q[(0, 1)], q[(1, 1)]) * -sigma;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov system".into()))?;
    let p = Matrix2::new(sol[0], sol[1], sol[1], sol[2]);
    if !(p[(0, 0)] > 0.0 && p.determinant() > 0.0) {
        return Err(Error::Numerical("Lyapunov solution is not positive definite".into()));
    }
    Ok(p)
}

fn eig_sym2(p: &Matrix2<f64>) -> (f64, f64) {
    let mean = 0.5 * (p[(0, 0)] + p[(1, 1)]);
    let rad = (0.25 * (p[(0, 0)] - p[(1, 1)]).powi(2) + p[(0, 1)] * p[(1, 0)]).sqrt();
    (mean - rad, mean + rad)
}

/// `ẋ = u`, `V = x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleIntegrator {
    pub theta: f64,
    /// Initial state of the protocol; `c = x0²`.
    pub x0: f64,
}

impl SingleIntegrator {
    pub fn new(theta: f64) -> Result<Self> {
        require(theta > 0.0, || format!("θ must be positive, got {theta}"))?;
        Ok(SingleIntegrator { theta, x0: 10.0 })
    }
}

impl PlantModel for SingleIntegrator {
    fn name(&self) -> &str {
        "integrator"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn clf(&self, x: &DVector<f64>) -> f64 {
        x[0] * x[0]
    }
    fn clf_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 2.0 * x[0])
    }
    fn quadratic_bounds(&self) -> Option<QuadraticBounds> {
        Some(QuadraticBounds { k1: 1.0, k2: 1.0 })
    }
    fn c_max(&self) -> f64 {
        self.x0 * self.x0
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, self.x0)
    }
    fn sublevel_box(&self, v: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        let r = v.max(0.0).sqrt();
        Some((DVector::from_element(1, -r), DVector::from_element(1, r)))
    }
    fn analytic_level_cap(&self, theta: f64, v: f64) -> Option<f64> {
        Some(2.0 * theta * v.max(0.0).sqrt())
    }
    fn analytic_required_actuation(&self, alpha: &ComparisonFn, v: f64) -> Option<f64> {
        // sup over |x| ≤ √v of α(V)/(2√V); increasing in V for a linear α.
        match alpha.kind() {
            ComparisonKind::Linear { sigma } => Some(sigma * v.max(0.0).sqrt() / 2.0),
            _ => None,
        }
    }
}

/// Scalar plant `ẋ = xᵠu` with `V = x²/2`.
///
/// The input channel `L_gV = x^{q+1}` vanishes faster than `V` for `q > 1`,
/// which makes the required actuation of a linear comparison blow up near 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarPowerPlant {
    pub exponent: i32,
    pub x0: f64,
}

impl ScalarPowerPlant {
    pub fn new(exponent: i32, x0: f64) -> Result<Self> {
        require(exponent >= 1, || format!("exponent must be at least 1, got {exponent}"))?;
        require(x0.is_finite() && x0 != 0.0, || format!("x0 must be finite and nonzero, got {x0}"))?;
        Ok(ScalarPowerPlant { exponent, x0 })
    }
}

impl PlantModel for ScalarPowerPlant {
    fn name(&self) -> &str {
        "scalar_power"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0].powi(self.exponent))
    }
    fn clf(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[0] * x[0]
    }
    fn clf_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }
    fn quadratic_bounds(&self) -> Option<QuadraticBounds> {
        Some(QuadraticBounds { k1: 0.5, k2: 0.5 })
    }
    fn c_max(&self) -> f64 {
        0.5 * self.x0 * self.x0
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, self.x0)
    }
    fn sublevel_box(&self, v: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        let r = (2.0 * v.max(0.0)).sqrt();
        Some((DVector::from_element(1, -r), DVector::from_element(1, r)))
    }
}

/// Physical and CLF-design parameters of the torque-saturated pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub friction: f64,
    pub gravity: f64,
    /// Proportional gain of the PD template.
    pub k_p: f64,
    /// Derivative gain of the PD template.
    pub k_d: f64,
    pub sigma_clf: f64,
    pub q_clf: [[f64; 2]; 2],
    pub x0: [f64; 2],
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 1.0,
            friction: 0.01,
            gravity: 9.81,
            k_p: 6.0,
            k_d: 5.0,
            sigma_clf: 3.0,
            q_clf: [[1.0, 0.0], [0.0, 1.0]],
            x0: [FRAC_PI_4, 0.05],
        }
    }
}

impl PendulumParams {
    /// `I = m l²/3` (uniform rod about its pivot).
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length / 3.0
    }

    /// Coefficient of `sin ψ` in `ω̇`: gravity acts at the rod's midpoint, `m g l/(2I)`.
    pub fn drift_coefficient(&self) -> f64 {
        self.mass * self.gravity * self.length / (2.0 * self.inertia())
    }

    /// Linearized closed loop under the PD template `u = k_p ψ + k_d ω`.
    pub fn clf_matrix(&self) -> Matrix2<f64> {
        let i = self.inertia();
        Matrix2::new(0.0, 1.0, self.drift_coefficient() - self.k_p / i, -(self.friction + self.k_d) / i)
    }
}

/// Inverted pendulum `ψ̇ = ω`, `ω̇ = a sin ψ − (b/I) ω − u/I` with `V = xᵀPx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    params: PendulumParams,
    p: Matrix2<f64>,
    c_max: f64,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        let positive = [params.mass, params.length, params.gravity, params.sigma_clf];
        require(positive.iter().all(|&v| v > 0.0) && params.friction >= 0.0, || {
            "pendulum parameters must be positive".into()
        })?;
        let q = Matrix2::new(params.q_clf[0][0], params.q_clf[0][1], params.q_clf[1][0], params.q_clf[1][1]);
        let p = lyap_solve_2x2(&params.clf_matrix(), &q, params.sigma_clf)?;
        let x0 = Vector2::new(params.x0[0], params.x0[1]);
        let c_max = x0.dot(&(p * x0));
        require(c_max > 0.0, || "initial state must be away from the origin".into())?;
        Ok(Pendulum { params, p, c_max })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn p_matrix(&self) -> &Matrix2<f64> {
        &self.p
    }
}

impl PlantModel for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        DVector::from_vec(vec![x[1], p.drift_coefficient() * x[0].sin() - p.friction / p.inertia() * x[1]])
    }
    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_vec(2, 1, vec![0.0, -1.0 / self.params.inertia()])
    }
    fn clf(&self, x: &DVector<f64>) -> f64 {
        let v = Vector2::new(x[0], x[1]);
        v.dot(&(self.p * v))
    }
    fn clf_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.p * Vector2::new(x[0], x[1]) * 2.0;
        DVector::from_vec(vec![g[0], g[1]])
    }
    fn quadratic_bounds(&self) -> Option<QuadraticBounds> {
        let (k1, k2) = eig_sym2(&self.p);
        Some(QuadraticBounds { k1, k2 })
    }
    fn c_max(&self) -> f64 {
        self.c_max
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(self.params.x0.to_vec())
    }
    fn sublevel_box(&self, v: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        // max x_i over xᵀPx ≤ v is sqrt(v (P⁻¹)_ii).
        let pinv = self.p.try_inverse()?;
        let hi = DVector::from_vec(vec![(v * pinv[(0, 0)]).sqrt(), (v * pinv[(1, 1)]).sqrt()]);
        Some((-&hi, hi))
    }
}

/// Rigid-body attitude parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    /// Inertia matrix, row-major.
    pub inertia: [[f64; 3]; 3],
    pub k_r: f64,
    pub k_c: f64,
    pub r_desired: [[f64; 3]; 3],
    pub omega_desired: [f64; 3],
    /// Initial attitude, re-orthonormalized on construction.
    pub r0: [[f64; 3]; 3],
    pub omega0: [f64; 3],
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            inertia: [[0.0820, 0.0, 0.0], [0.0, 0.0845, 0.0], [0.0, 0.0, 0.1377]],
            k_r: 8.81,
            k_c: 0.1377,
            r_desired: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            omega_desired: [0.0; 3],
            r0: [[0.25, -0.058, 0.9665], [0.433, 0.8995, -0.058], [-0.866, 0.433, 0.25]],
            omega0: [0.0; 3],
        }
    }
}

fn mat3(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

/// Packs `(R, ω)` into the 12-entry state vector.
pub fn attitude_state(r: &Matrix3<f64>, omega: &Vector3<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(12);
    for i in 0..3 {
        for j in 0..3 {
            x[3 * i + j] = r[(i, j)];
        }
        x[9 + i] = omega[i];
    }
    x
}

/// Unpacks a 12-entry state into `(R, ω)`.
pub fn split_attitude(x: &DVector<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    (Matrix3::from_fn(|i, j| x[3 * i + j]), Vector3::new(x[9], x[10], x[11]))
}

/// Attitude dynamics `Ṙ = R hat(ω)`, `Jω̇ = −ω × Jω + u` with the geometric CLF
/// `V = ½ωᵀJω + k_R Ψ + k_c e_R·ω`, `Ψ = ½ tr(I − R_dᵀR)`.
///
/// With `E = R_dᵀR` and `ω_d = 0`, the Lie derivatives are
/// `L_fV = k_R e_R·ω + k_c ωᵀC(E)ω − k_c e_Rᵀ J⁻¹(ω × Jω)` and
/// `L_gV = ω + k_c J⁻¹e_R`, where `C(E) = ½(tr(E) I − Eᵀ)` gives `ė_R = C(E)ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadAttitude {
    params: QuadParams,
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
    r_d: Matrix3<f64>,
    x0: DVector<f64>,
    c_max: f64,
}

impl QuadAttitude {
    pub fn new(params: QuadParams) -> Result<Self> {
        let j = mat3(&params.inertia);
        require((j - j.transpose()).abs().max() <= 1e-12, || "inertia must be symmetric".into())?;
        let eig = j.symmetric_eigenvalues();
        require(eig.min() > 0.0, || "inertia must be positive definite".into())?;
        require(params.k_r > 0.0 && params.k_c > 0.0, || "CLF gains must be positive".into())?;
        if params.omega_desired.iter().any(|&w| w != 0.0) {
            return Err(Error::Unsupported("only a zero desired body rate is supported".into()));
        }
        let r_d = mat3(&params.r_desired);
        check_rotation(&r_d)?;
        let j_inv = j.try_inverse().ok_or_else(|| Error::Numerical("singular inertia".into()))?;
        let r0 = orthonormalize(&mat3(&params.r0));
        let mut plant = QuadAttitude { params, j, j_inv, r_d, x0: DVector::zeros(12), c_max: 0.0 };
        plant.x0 = attitude_state(&r0, &Vector3::from(plant.params.omega0));
        plant.c_max = plant.clf(&plant.x0);
        Ok(plant)
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.j
    }

    pub fn inertia_inverse(&self) -> &Matrix3<f64> {
        &self.j_inv
    }

    fn attitude_error(&self, r: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let e = self.r_d.transpose() * r;
        (e, skew_part(&e))
    }

    /// `Ψ(R, R_d)`
    pub fn attitude_potential(&self, r: &Matrix3<f64>) -> f64 {
        0.5 * (3.0 - (self.r_d.transpose() * r).trace())
    }
}

/// Accepts `R` with `RᵀR = I` and `det R = 1` to 1e-9.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if orth > 1e-9 || (det - 1.0).abs() > 1e-9 {
        return Err(Error::State(format!("not a rotation: |RᵀR − I| = {orth:.3e}, det = {det}")));
    }
    Ok(())
}

impl PlantModel for QuadAttitude {
    fn name(&self) -> &str {
        "quadrotor"
    }
    fn state_dim(&self) -> usize {
        12
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, w) = split_attitude(x);
        let wdot = self.j_inv * (-w.cross(&(self.j * w)));
        attitude_state(&(r * hat(&w)), &wdot)
    }
    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(12, 3);
        g.view_mut((9, 0), (3, 3)).copy_from(&self.j_inv);
        g
    }
    fn clf(&self, x: &DVector<f64>) -> f64 {
        let (r, w) = split_attitude(x);
        let (_, e_r) = self.attitude_error(&r);
        0.5 * w.dot(&(self.j * w)) + self.params.k_r * self.attitude_potential(&r) + self.params.k_c * e_r.dot(&w)
    }
    fn clf_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, w) = split_attitude(x);
        let (_, e_r) = self.attitude_error(&r);
        let g_e = Matrix3::identity() * (-0.5 * self.params.k_r) + hat(&w) * (0.5 * self.params.k_c);
        attitude_state(&(self.r_d * g_e), &(self.j * w + e_r * self.params.k_c))
    }
    fn lie_derivatives(&self, x: &DVector<f64>) -> LieDerivatives {
        let (r, w) = split_attitude(x);
        let (e, e_r) = self.attitude_error(&r);
        let (k_r, k_c) = (self.params.k_r, self.params.k_c);
        let c = (Matrix3::identity() * e.trace() - e.transpose()) * 0.5;
        let gyro = self.j_inv * w.cross(&(self.j * w));
        let lf = k_r * e_r.dot(&w) + k_c * w.dot(&(c * w)) - k_c * e_r.dot(&gyro);
        let lg = w + self.j_inv * e_r * k_c;
        LieDerivatives { lf, lg: DVector::from_column_slice(lg.as_slice()) }
    }
    fn c_max(&self) -> f64 {
        self.c_max
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn inverse_inertia(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(3, 3, |i, j| self.j_inv[(i, j)]))
    }
    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != 12 {
            return Err(Error::State(format!("expected 12 state entries, got {}", x.len())));
        }
        check_rotation(&split_attitude(x).0)
    }
    /// RK4 on `ω`, then `R ← R·exp(hat(ω_mid h))` per substep and a polar
    /// re-orthonormalization at the end of the period.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64, substeps: usize) -> DVector<f64> {
        let (mut r, mut w) = split_attitude(x);
        let torque = Vector3::new(u[0], u[1], u[2]);
        let wdot = |w: &Vector3<f64>| self.j_inv * (torque - w.cross(&(self.j * w)));
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            let k1 = wdot(&w);
            let k2 = wdot(&(w + k1 * (0.5 * h)));
            let k3 = wdot(&(w + k2 * (0.5 * h)));
            let k4 = wdot(&(w + k3 * h));
            let w_next = w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            r *= so3_exp(&((w + w_next) * (0.5 * h)));
            w = w_next;
        }
        attitude_state(&orthonormalize(&r), &w)
    }
}

/// Serializable plant selection used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum PlantSpec {
    Integrator {
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default = "default_integrator_x0")]
        x0: f64,
    },
    Pendulum {
        #[serde(default, flatten)]
        params: PendulumParams,
    },
    #[serde(rename = "quadrotor")]
    Quadrotor {
        #[serde(default, flatten)]
        params: QuadParams,
    },
    ScalarPower { exponent: i32, x0: f64 },
}

fn default_theta() -> f64 {
    1.0
}

fn default_integrator_x0() -> f64 {
    10.0
}

impl PlantSpec {
    pub fn build(&self) -> Result<Box<dyn PlantModel>> {
        Ok(match self {
            PlantSpec::Integrator { theta, x0 } => {
                let mut p = SingleIntegrator::new(*theta)?;
                require(*x0 != 0.0 && x0.is_finite(), || "integrator x0 must be nonzero".into())?;
                p.x0 = *x0;
                Box::new(p)
            }
            PlantSpec::Pendulum { params } => Box::new(Pendulum::new(*params)?),
            PlantSpec::Quadrotor { params } => Box::new(QuadAttitude::new(params.clone())?),
            PlantSpec::ScalarPower { exponent, x0 } => Box::new(ScalarPowerPlant::new(*exponent, *x0)?),
        })
    }
}

/// Built-in presets: `integrator`, `pendulum`, `quadrotor`.
pub fn preset(name: &str) -> Result<PlantSpec> {
    match name {
        "integrator" => Ok(PlantSpec::Integrator { theta: 1.0, x0: 10.0 }),
        "pendulum" => Ok(PlantSpec::Pendulum { params: PendulumParams::default() }),
        "quadrotor" => Ok(PlantSpec::Quadrotor { params: QuadParams::default() }),
        other => Err(Error::Config(format!("unknown plant preset '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hat_vee_pair() {
        let h = hat(&Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(h, Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert_eq!(vee(&hat(&v)).unwrap(), v);
            assert!((hat(&v) * v).norm() < 1e-15);
            assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-14);
        }
        assert!(vee(&Matrix3::identity()).is_err());
    }

    #[test]
    fn exp_is_rotation() {
        let r = so3_exp(&Vector3::new(0.3, -1.2, 2.0));
        check_rotation(&r).unwrap();
        let small = so3_exp(&Vector3::new(1e-10, 0.0, 0.0));
        check_rotation(&small).unwrap();
    }

    #[test]
    fn lyapunov_examples() {
        let p = lyap_solve_2x2(&(-Matrix2::identity()), &Matrix2::identity(), 2.0).unwrap();
        assert!((p - Matrix2::identity()).abs().max() < 1e-15);
        let bad = Matrix2::new(0.0, 1.0, 0.0, -1.0);
        assert!(lyap_solve_2x2(&bad, &Matrix2::identity(), 1.0).is_err());
    }

    #[test]
    fn pendulum_lyapunov_residual_against_kronecker_solve() {
        let params = PendulumParams::default();
        let a = params.clf_matrix();
        let p = lyap_solve_2x2(&a, &Matrix2::identity(), 3.0).unwrap();
        let res = a.transpose() * p + p * a + Matrix2::identity() * 3.0;
        assert!(res.abs().max() < 1e-12);
        // (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −σ vec(Q)
        let at = a.transpose();
        let mut k = nalgebra::Matrix4::zeros();
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..2 {
                    for s in 0..2 {
                        let mut v = 0.0;
                        if i == r {
                            v += at[(j, s)];
                        }
                        if j == s {
                            v += at[(i, r)];
                        }
                        k[(2 * j + i, 2 * s + r)] = v;
                    }
                }
            }
        }
        let rhs = nalgebra::Vector4::new(-3.0, 0.0, 0.0, -3.0);
        let vec_p = k.lu().solve(&rhs).unwrap();
        assert!((vec_p[0] - p[(0, 0)]).abs() < 1e-12);
        assert!((vec_p[1] - p[(1, 0)]).abs() < 1e-12);
        assert!((vec_p[3] - p[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn pendulum_basics() {
        let params = PendulumParams::default();
        assert_relative_eq!(params.inertia(), 1.0 / 3.0);
        assert_relative_eq!(params.drift_coefficient(), 14.715, max_relative = 1e-12);
        let plant = Pendulum::new(params).unwrap();
        assert_eq!(plant.drift(&DVector::zeros(2)), DVector::zeros(2));
        let b = plant.quadratic_bounds().unwrap();
        assert!(0.0 < b.k1 && b.k1 <= b.k2);
        let (lo, hi) = plant.sublevel_box(plant.c_max()).unwrap();
        let x0 = plant.initial_state();
        assert!(x0[0] <= hi[0] && x0[0] >= lo[0] && x0[1] <= hi[1] && x0[1] >= lo[1]);
    }

    #[test]
    fn integrator_lie_derivatives() {
        let plant = SingleIntegrator::new(1.0).unwrap();
        let lie = plant.lie_derivatives(&DVector::from_element(1, 3.0));
        assert_eq!(lie.lf, 0.0);
        assert_eq!(lie.lg[0], 6.0);
        assert_eq!(plant.lie_derivatives(&DVector::zeros(1)).lg[0], 0.0);
        assert_eq!(plant.analytic_level_cap(1.0, 9.0), Some(6.0));
    }

    #[test]
    fn quad_equilibrium_and_initial_value() {
        let plant = QuadAttitude::new(QuadParams::default()).unwrap();
        let eq = attitude_state(&Matrix3::identity(), &Vector3::zeros());
        assert_eq!(plant.clf(&eq), 0.0);
        let lie = plant.lie_derivatives(&eq);
        assert_eq!(lie.lf, 0.0);
        assert_eq!(lie.lg.norm(), 0.0);

        let x0 = plant.initial_state();
        let (r0, _) = split_attitude(&x0);
        check_rotation(&r0).unwrap();
        let psi = 0.5 * (3.0 - r0.trace());
        assert_relative_eq!(plant.clf(&x0), 8.81 * psi, max_relative = 1e-14);
        // The given matrix is orthonormal to about three digits, so the trace barely moves.
        assert!((psi - 0.5 * (3.0 - (0.25 + 0.8995 + 0.25))).abs() < 1e-3);
    }

    #[test]
    fn quad_analytic_lie_matches_gradient_form() {
        let plant = QuadAttitude::new(QuadParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let axis = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let x = attitude_state(&so3_exp(&axis), &w);
            let grad = plant.clf_gradient(&x);
            let analytic = plant.lie_derivatives(&x);
            let lf = grad.dot(&plant.drift(&x));
            let lg = plant.input_map(&x).tr_mul(&grad);
            assert!((analytic.lf - lf).abs() <= 1e-12 * (1.0 + lf.abs()));
            assert!((&analytic.lg - &lg).norm() <= 1e-12 * (1.0 + lg.norm()));
        }
    }

    #[test]
    fn quad_step_stays_on_so3() {
        let plant = QuadAttitude::new(QuadParams::default()).unwrap();
        let mut x = attitude_state(&Matrix3::identity(), &Vector3::new(1.0, -2.0, 0.5));
        let u = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        for _ in 0..1000 {
            x = plant.step(&x, &u, 1e-3, 4);
        }
        plant.check_state(&x).unwrap();
    }

    #[test]
    fn desired_rate_is_unsupported() {
        let params = QuadParams { omega_desired: [0.0, 0.1, 0.0], ..QuadParams::default() };
        assert!(matches!(QuadAttitude::new(params), Err(Error::Unsupported(_))));
    }

    #[test]
    fn presets_build() {
        for name in ["integrator", "pendulum", "quadrotor"] {
            let plant = preset(name).unwrap().build().unwrap();
            assert_eq!(plant.name(), name);
            assert!(plant.c_max() > 0.0);
        }
        assert!(preset("cartpole").is_err());
    }

    #[test]
    fn plant_spec_json() {
        let spec: PlantSpec = serde_json::from_str(r#"{"preset":"pendulum","friction":0.02}"#).unwrap();
        match spec {
            PlantSpec::Pendulum { params } => {
                assert_eq!(params.friction, 0.02);
                assert_eq!(params.k_p, 6.0);
            }
            _ => panic!("wrong preset"),
        }
        let spec: PlantSpec = serde_json::from_str(r#"{"preset":"integrator","theta":2.0}"#).unwrap();
        assert_eq!(spec, PlantSpec::Integrator { theta: 2.0, x0: 10.0 });
    }
}
