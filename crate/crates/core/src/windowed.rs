//! Windowed decay metrics of a comparison system `ẏ = −α(y)`.
//!
//! On a window `[ε, c]` the crossing time is `T = ∫_ε^c dv/α(v)` and the
//! nominal rate is `σ_α = ln(c/ε)/T`. Integration runs in logarithmic
//! coordinates `v = ε·e^t`, where the integrand becomes `1/s(v)` and stays
//! bounded even when `α` is tiny near `ε`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::comparison::{curvature_labels, ComparisonFn, ComparisonKind, LocalShape};
use crate::error::{require, Error, Result};
use crate::quadrature::{integrate, QuadOptions};

/// Evaluation window `[eps, c]` with `0 < eps < c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct Window {
    eps: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    eps: f64,
    c: f64,
}

impl TryFrom<WindowRepr> for Window {
    type Error = Error;
    fn try_from(r: WindowRepr) -> Result<Self> {
        Window::new(r.eps, r.c)
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        WindowRepr { eps: w.eps, c: w.c }
    }
}

impl Window {
    pub fn new(eps: f64, c: f64) -> Result<Self> {
        if !(eps > 0.0 && c > eps && c.is_finite()) {
            return Err(Error::Precondition(format!("window requires 0 < eps < c, got [{eps}, {c}]")));
        }
        Ok(Window { eps, c })
    }

    /// Window `[ξ·c, c]`.
    pub fn relative(xi: f64, c: f64) -> Result<Self> {
        require(xi > 0.0 && xi < 1.0, || format!("relative level must lie in (0,1), got {xi}"))?;
        Window::new(xi * c, c)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `ln(c/ε)`
    pub fn log_span(&self) -> f64 {
        (self.c / self.eps).ln()
    }
}

/// Windowed metrics for one comparison function on one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub eps: f64,
    pub c: f64,
    pub crossing_time: f64,
    pub nominal_rate: f64,
    pub relaxation_ratio: f64,
    pub quadrature_error_estimate: f64,
}

impl RateReport {
    pub const CSV_HEADER: &'static str = "fn_id,eps,c,T_s,sigma_per_s,r";

    pub fn csv_row(&self, fn_id: &str) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            fn_id, self.eps, self.c, self.crossing_time, self.nominal_rate, self.relaxation_ratio
        )
    }
}

fn breakpoints(f: &ComparisonFn, w: &Window) -> Vec<f64> {
    match f.kind() {
        ComparisonKind::Tabulated { points } => points
            .iter()
            .map(|p| p[0])
            .filter(|&v| v > w.eps() && v < w.c())
            .map(|v| (v / w.eps()).ln())
            .collect(),
        _ => Vec::new(),
    }
}

/// Crossing time and the quadrature error estimate.
pub fn crossing_time_with_error(f: &ComparisonFn, w: &Window) -> Result<(f64, f64)> {
    let eps = w.eps();
    let bad = Cell::new(None);
    let integrand = |t: f64| {
        let v = eps * t.exp();
        let s = f.factor_at(v);
        if !(s > 0.0 && s.is_finite()) {
            bad.set(Some(v));
            return 0.0;
        }
        1.0 / s
    };
    let res = integrate(integrand, 0.0, w.log_span(), &breakpoints(f, w), QuadOptions::default())?;
    if let Some(v) = bad.get() {
        return Err(Error::Integrability(format!("α vanishes or is not finite at v = {v} inside the window")));
    }
    Ok((res.value, res.error))
}

/// `T_α(ε, c) = ∫_ε^c dv/α(v)`.
pub fn crossing_time(f: &ComparisonFn, w: &Window) -> Result<f64> {
    crossing_time_with_error(f, w).map(|(t, _)| t)
}

/// `σ_α(ε, c) = ln(c/ε)/T_α(ε, c)`.
pub fn nominal_rate(f: &ComparisonFn, w: &Window) -> Result<f64> {
    Ok(w.log_span() / crossing_time(f, w)?)
}

/// Nominal rate on `[ε, c]` from the rates on `[ε, c0]` and `[c0, c]`
/// (weighted harmonic mean with `λ = ln(c/c0)/ln(c/ε)`).
pub fn compose_rates(sigma1: f64, sigma2: f64, eps: f64, c0: f64, c: f64) -> Result<f64> {
    require(0.0 < eps && eps < c0 && c0 < c, || {
        format!("composition requires 0 < eps < c0 < c, got {eps}, {c0}, {c}")
    })?;
    require(sigma1 > 0.0 && sigma2 > 0.0, || format!("rates must be positive, got {sigma1}, {sigma2}"))?;
    let lambda = (c / c0).ln() / (c / eps).ln();
    Ok(sigma1 * sigma2 / (lambda * sigma1 + (1.0 - lambda) * sigma2))
}

/// `r_α(ε, c) = α(c)/(σ_α(ε, c)·c)`.
pub fn relaxation_ratio(f: &ComparisonFn, w: &Window) -> Result<f64> {
    let sigma = nominal_rate(f, w)?;
    Ok(f.value(w.c()) / (sigma * w.c()))
}

pub fn rate_report(f: &ComparisonFn, w: &Window) -> Result<RateReport> {
    let (t, err) = crossing_time_with_error(f, w)?;
    let sigma = w.log_span() / t;
    Ok(RateReport {
        eps: w.eps(),
        c: w.c(),
        crossing_time: t,
        nominal_rate: sigma,
        relaxation_ratio: f.value(w.c()) / (sigma * w.c()),
        quadrature_error_estimate: err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub sigma_concave: f64,
    pub sigma_linear: f64,
    pub sigma_convex: f64,
    /// `σ_vex < σ_lin < σ_cave`
    pub holds: bool,
    pub diagnostic: Option<String>,
}

/// Compares the nominal rates of three comparison functions sharing the endpoint value `α(c)`.
pub fn verify_ordering(
    cave: &ComparisonFn,
    lin: &ComparisonFn,
    vex: &ComparisonFn,
    w: &Window,
) -> Result<OrderingVerdict> {
    let c = w.c();
    let (a_cave, a_lin, a_vex) = (cave.value(c), lin.value(c), vex.value(c));
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(b.abs());
    require(close(a_cave, a_lin) && close(a_vex, a_lin), || {
        format!("endpoint values differ: concave {a_cave}, linear {a_lin}, convex {a_vex}")
    })?;
    let sigma_concave = nominal_rate(cave, w)?;
    let sigma_linear = nominal_rate(lin, w)?;
    let sigma_convex = nominal_rate(vex, w)?;
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut diagnostic = None;
    if tie(sigma_concave, sigma_linear) {
        diagnostic = Some(format!("tie: concave and linear rates coincide ({sigma_linear})"));
    } else if tie(sigma_convex, sigma_linear) {
        diagnostic = Some(format!("tie: convex and linear rates coincide ({sigma_linear})"));
    }
    let holds = diagnostic.is_none() && sigma_convex < sigma_linear && sigma_linear < sigma_concave;
    if !holds && diagnostic.is_none() {
        diagnostic = Some(format!(
            "ordering violated: convex {sigma_convex}, linear {sigma_linear}, concave {sigma_concave}"
        ));
    }
    Ok(OrderingVerdict { sigma_concave, sigma_linear, sigma_convex, holds, diagnostic })
}

/// A subinterval on which the second central differences of `α` are strictly negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcaveInterval {
    pub lo: f64,
    pub hi: f64,
    pub relaxation_ratio: f64,
}

/// Scans the window for the longest run of strictly negative curvature.
///
/// When `r_α(ε, c) < 1` a C² comparison function must be strictly concave
/// somewhere in `(0, c)`; this returns the numerical witness, or `None` when
/// no negative-curvature run is found on the grid.
pub fn detect_concave_subinterval(f: &ComparisonFn, w: &Window, grid_size: usize) -> Result<Option<ConcaveInterval>> {
    require(grid_size >= 64, || format!("grid_size must be at least 64, got {grid_size}"))?;
    let ratio = relaxation_ratio(f, w)?;
    let (lo, hi) = (w.eps(), w.c());
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&v| f.value(v)).collect();
    let labels = curvature_labels(&values);

    // Label j belongs to grid point j+1 and certifies the stencil [j, j+2].
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for (j, &label) in labels.iter().chain(std::iter::once(&LocalShape::Linear)).enumerate() {
        match (label == LocalShape::Concave, run_start) {
            (true, None) => run_start = Some(j),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| j - s > be - bs) {
                    best = Some((s, j));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(best.map(|(s, e)| ConcaveInterval { lo: grid[s], hi: grid[e + 1], relaxation_ratio: ratio }))
}
