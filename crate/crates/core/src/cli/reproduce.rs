//! Case-study reproduction with measured-vs-reference checks.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::actuation::{level_cap, pointwise_decay_cap, required_actuation, SamplingOptions};
use crate::comparison::ComparisonFn;
use crate::error::{Error, Result};
use crate::plant::{PlantModel, SingleIntegrator};
use crate::qp::BangBangController;
use crate::sim::{comparison_envelope_excess, simulate, ControllerSpec, CostSpec, MetricsReport, SimConfig};
use crate::windowed::{nominal_rate, relaxation_ratio, Window};

use super::protocol::{self, RunResult, PENDULUM_R, XI};
use super::write_file;

/// Pendulum reference values: `[T, σ_nom, energy]` for `ε = 10⁻², 10⁻³, 10⁻⁴ · c`, then the peak input.
pub const TABLE1: [(&str, [f64; 9], f64); 6] = [
    ("linear", [1.535, 3.000, 7.833, 1.998, 3.000, 7.864, 3.076, 3.000, 7.875], 9.938),
    ("r=1.0", [0.860, 5.361, 7.501, 1.196, 5.779, 7.502, 1.535, 6.004, 7.502], 9.938),
    ("r=0.9", [0.899, 5.127, 7.337, 1.235, 5.594, 7.338, 1.574, 5.853, 7.338], 9.317),
    ("r=0.8", [0.948, 4.858, 7.265, 1.286, 5.377, 7.266, 1.624, 5.673, 7.266], 8.697),
    ("r=0.7", [1.013, 4.547, 7.313, 1.351, 5.115, 7.314, 1.690, 5.452, 7.314], 8.078),
    ("r=0.6", [1.102, 4.181, 7.530, 1.441, 4.797, 7.531, 1.780, 5.178, 7.531], 7.455),
];

/// Quadrotor reference values: `[σ_nom, energy]` for `ε = 10⁻², 10⁻³ · c`, then the peak torque.
pub const TABLE2: [(&str, [f64; 4], f64); 3] = [
    ("r=0.95", [4.523, 1.049, 3.358, 1.050], 7.899),
    ("r=0.85", [4.344, 0.785, 3.250, 0.787], 7.068),
    ("flexible", [2.835, 0.921, 2.827, 0.922], 10.899),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Table1,
    Table2,
    Integrator,
    Caps,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Table1, Target::Table2, Target::Integrator, Target::Caps];

    pub fn name(&self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Integrator => "integrator",
            Target::Caps => "caps",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reproduction target '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    Relative(f64),
    Absolute(f64),
    /// Pass/fail condition without a reference value.
    Condition,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: Option<f64>,
    pub tolerance: Tolerance,
    pub pass: Option<bool>,
    pub note: Option<String>,
}

impl Check {
    pub fn relative(name: impl Into<String>, measured: f64, expected: f64, tol: f64) -> Self {
        let pass = ((measured - expected) / expected).abs() <= tol;
        Check { name: name.into(), measured, expected: Some(expected), tolerance: Tolerance::Relative(tol), pass: Some(pass), note: None }
    }

    pub fn absolute(name: impl Into<String>, measured: f64, expected: f64, tol: f64) -> Self {
        let pass = (measured - expected).abs() <= tol;
        Check { name: name.into(), measured, expected: Some(expected), tolerance: Tolerance::Absolute(tol), pass: Some(pass), note: None }
    }

    pub fn condition(name: impl Into<String>, holds: bool, measured: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            measured,
            expected: None,
            tolerance: Tolerance::Condition,
            pass: Some(holds),
            note: Some(note.into()),
        }
    }

    pub fn info(name: impl Into<String>, measured: f64, expected: Option<f64>) -> Self {
        Check { name: name.into(), measured, expected, tolerance: Tolerance::Info, pass: None, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        write!(f, "{status:<5} {:<36} measured {:>12.6}", self.name, self.measured)?;
        if let Some(e) = self.expected {
            write!(f, "  reference {e:>10.4}")?;
        }
        match self.tolerance {
            Tolerance::Relative(t) => write!(f, "  tol ±{:.1}%", t * 100.0)?,
            Tolerance::Absolute(t) => write!(f, "  tol ±{t:.1e}")?,
            _ => {}
        }
        if let Some(n) = &self.note {
            write!(f, "  ({n})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub target: Target,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl ReproReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.pass == Some(false))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn render(&self) -> String {
        let mut out = format!("== {} ==\n", self.target.name());
        for c in &self.checks {
            let _ = writeln!(out, "{c}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproOptions {
    /// Multiplies every relative and absolute tolerance.
    pub tolerance_scale: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions { tolerance_scale: 1.0, seed: 0, sim: SimConfig::default() }
    }
}

pub fn reproduce(target: Target, out: &Path, opts: &ReproOptions) -> Result<ReproReport> {
    match target {
        Target::Table1 => table1(out, opts),
        Target::Table2 => table2(out, opts),
        Target::Integrator => integrator(out, opts),
        Target::Caps => caps(out, opts),
    }
}

fn file_label(label: &str) -> String {
    label.replace('=', "")
}

fn write_runs(out: &Path, stem: &str, results: &[RunResult], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut table = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in results {
        table.push_str(&r.metrics.csv_rows(&r.label));
        files.push(write_file(out, &format!("{stem}_traj_{}.csv", file_label(&r.label)), &r.record.to_csv())?);
    }
    files.push(write_file(out, &format!("{stem}.csv"), &table)?);
    Ok(())
}

fn find<'a>(results: &'a [RunResult], label: &str) -> Result<&'a RunResult> {
    results
        .iter()
        .find(|r| r.label == label)
        .ok_or_else(|| Error::State(format!("missing protocol run '{label}'")))
}

/// Inverted pendulum, soft QP, six controllers × three windows, plus hard-QP envelope runs.
pub fn table1(out: &Path, opts: &ReproOptions) -> Result<ReproReport> {
    let s = opts.tolerance_scale;
    let plant = protocol::pendulum()?;
    let c = protocol::initial_level(&plant);
    let runs = protocol::pendulum_runs(c)?;
    let results = protocol::run_protocol(&plant, &runs, &opts.sim, &XI)?;
    let mut checks = Vec::new();
    let mut files = Vec::new();
    write_runs(out, "table1", &results, &mut files)?;

    for (label, cells, peak) in TABLE1 {
        let m = &find(&results, label)?.metrics;
        for (j, xi) in XI.iter().enumerate() {
            let w = &m.windows[j];
            let (t_ref, s_ref, e_ref) = (cells[3 * j], cells[3 * j + 1], cells[3 * j + 2]);
            let tag = |q: &str| format!("{label} {q}({xi:.0e}c)");
            let measured = [(tag("T"), w.crossing_time, t_ref), (tag("σ_nom"), w.nominal_rate, s_ref), (tag("energy"), w.energy, e_ref)];
            for (k, (name, value, reference)) in measured.into_iter().enumerate() {
                let tol = match (label, j, k) {
                    ("linear", 0, 0 | 1) => Some(0.02),
                    ("linear", 0, 2) => Some(0.05),
                    ("r=1.0", 0, 0) | ("r=1.0", 2, 1) => Some(0.05),
                    _ => None,
                };
                let check = match tol {
                    Some(t) => Check::relative(name, value, reference, t * s),
                    None => Check::info(name, value, Some(reference)),
                };
                let check = if (label, j, k) == ("linear", 1, 0) {
                    check.with_note("reference entry inconsistent with its own σ_nom; not asserted")
                } else {
                    check
                };
                checks.push(check);
            }
        }
        let tol = if label == "linear" { 0.02 } else { 0.03 };
        checks.push(Check::relative(format!("{label} ‖u‖∞"), m.peak_input, peak, tol * s));
    }
    let peaks: Vec<f64> = PENDULUM_R
        .iter()
        .map(|r| find(&results, &format!("r={r:.1}")).map(|x| x.metrics.peak_input))
        .collect::<Result<_>>()?;
    let decreasing = peaks.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check::condition("‖u‖∞ strictly decreasing in r", decreasing, peaks[peaks.len() - 1], "r = 1.0 … 0.6"));

    // Hard-constrained runs against the co-integrated comparison solution.
    let mut hard = vec![protocol::ProtocolRun {
        label: "hard linear".into(),
        controller: ControllerSpec::HardQp { comparison: ComparisonFn::linear(3.0)?, theta: 10.0, cost: CostSpec::Identity },
    }];
    for r in PENDULUM_R {
        hard.push(protocol::ProtocolRun {
            label: format!("hard r={r:.1}"),
            controller: ControllerSpec::HardQp { comparison: protocol::pendulum_rational(r, c)?, theta: 10.0, cost: CostSpec::Identity },
        });
    }
    let hard_results = protocol::run_protocol(&plant, &hard, &opts.sim, &XI)?;
    for (run, res) in hard.iter().zip(&hard_results) {
        let alpha = run.controller.comparison().expect("hard QP carries a comparison");
        let excess = comparison_envelope_excess(&res.record, alpha);
        let bound = 1e-6 * c * s;
        checks.push(Check::condition(
            format!("{} envelope V ≤ y", run.label),
            excess <= bound,
            excess,
            format!("max V − y, bound {bound:.1e}; {} infeasible steps", res.record.infeasible_steps()),
        ));
    }
    Ok(ReproReport { target: Target::Table1, checks, files })
}

/// Quadrotor attitude: ordering assertions and ±15% bands.
pub fn table2(out: &Path, opts: &ReproOptions) -> Result<ReproReport> {
    let s = opts.tolerance_scale;
    let plant = protocol::quadrotor()?;
    let c = protocol::initial_level(&plant);
    let runs = protocol::quadrotor_runs(c)?;
    let results = protocol::run_protocol(&plant, &runs, &opts.sim, &XI[..2])?;
    let mut checks = Vec::new();
    let mut files = Vec::new();
    write_runs(out, "table2", &results, &mut files)?;

    let band = 0.15 * s;
    for (label, cells, peak) in TABLE2 {
        let m = &find(&results, label)?.metrics;
        checks.push(Check::relative(format!("{label} σ_nom(1e-2c)"), m.windows[0].nominal_rate, cells[0], band));
        checks.push(Check::info(format!("{label} energy(1e-2c)"), m.windows[0].energy, Some(cells[1])));
        checks.push(Check::info(format!("{label} σ_nom(1e-3c)"), m.windows[1].nominal_rate, Some(cells[2])));
        checks.push(Check::info(format!("{label} energy(1e-3c)"), m.windows[1].energy, Some(cells[3])));
        checks.push(Check::relative(format!("{label} ‖u‖∞"), m.peak_input, peak, band));
    }
    let get = |l: &str| find(&results, l).map(|r| &r.metrics);
    let (hi, lo, flex) = (get("r=0.95")?, get("r=0.85")?, get("flexible")?);
    let (s95, s85, sf) = (hi.windows[0].nominal_rate, lo.windows[0].nominal_rate, flex.windows[0].nominal_rate);
    checks.push(Check::condition("σ_nom: r=0.95 > r=0.85 > flexible", s95 > s85 && s85 > sf, s95, format!("{s95:.4} > {s85:.4} > {sf:.4}")));
    let (p95, p85, pf) = (hi.peak_input, lo.peak_input, flex.peak_input);
    checks.push(Check::condition("‖u‖∞: r=0.85 < r=0.95 < flexible", p85 < p95 && p95 < pf, p85, format!("{p85:.4} < {p95:.4} < {pf:.4}")));
    let (e85, ef) = (lo.windows[0].energy, flex.windows[0].energy);
    checks.push(Check::condition(
        "energy(1e-2c): r=0.85 below flexible+15%",
        e85 <= ef * (1.0 + band),
        e85,
        format!("flexible {ef:.4}"),
    ));
    Ok(ReproReport { target: Target::Table2, checks, files })
}

/// Saturated single integrator `ẋ = u`, `V = x²`, `θ = 1`, `ε = 10⁻⁴`, `c = 100`.
pub fn integrator(out: &Path, opts: &ReproOptions) -> Result<ReproReport> {
    let s = opts.tolerance_scale;
    let theta = 1.0;
    let plant = SingleIntegrator::new(theta)?;
    let c = plant.c_max();
    let w = Window::new(1e-4, c)?;
    let cap = ComparisonFn::sqrt(2.0 * theta)?;
    let mut checks = vec![
        Check::relative("σ_ᾱ(ε, c) / θ", nominal_rate(&cap, &w)? / theta, 1.382, 1e-3 * s),
        Check::relative("r_ᾱ(ε, c)", relaxation_ratio(&cap, &w)?, 0.145, 5e-3 * s),
    ];
    let sampling = SamplingOptions { seed: opts.seed, ..SamplingOptions::default() };
    checks.push(Check::absolute("ᾱ(θ, c)", level_cap(&plant, theta, c, &sampling)?, 2.0 * theta * c.sqrt(), 1e-10 * s));
    for sigma in [0.05, 0.2, 1.0] {
        let need = required_actuation(&plant, &ComparisonFn::linear(sigma)?, c, &sampling)?.value();
        checks.push(Check::absolute(format!("θ_min(Linear({sigma}); c)"), need, sigma * c.sqrt() / 2.0, 1e-10 * s));
    }

    // Bang-bang: V(t) = (√c − θt)² until the crossing of ε.
    let mut ctl = BangBangController { theta };
    let cfg = SimConfig { horizon: (c.sqrt() - w.eps().sqrt()) / theta, ..opts.sim };
    let rec = simulate(&plant, &mut ctl, &cfg, &plant.initial_state())?;
    let worst = rec
        .times
        .iter()
        .zip(&rec.values)
        .filter(|(_, &v)| v >= w.eps())
        .map(|(t, v)| (v - (c.sqrt() - theta * t).powi(2)).abs() / c)
        .fold(0.0, f64::max);
    checks.push(Check::condition("bang-bang V(t) = (√c − θt)²", worst <= 1e-9 * s, worst, "max relative deviation"));

    let mut csv = String::from("t_s,V,V_closed_form\n");
    for (t, v) in rec.times.iter().zip(&rec.values) {
        let _ = writeln!(csv, "{t:.6},{v:.12e},{:.12e}", (c.sqrt() - theta * t).powi(2));
    }
    let files = vec![write_file(out, "integrator_bang_bang.csv", &csv)?];
    Ok(ReproReport { target: Target::Integrator, checks, files })
}

/// Pendulum decay cap `D_max(x, θ)` along the linear soft-QP trajectory with the candidate comparisons.
pub fn caps(out: &Path, opts: &ReproOptions) -> Result<ReproReport> {
    let plant = protocol::pendulum()?;
    let c = protocol::initial_level(&plant);
    let theta = 10.0;
    let runs = protocol::pendulum_runs(c)?;
    let results = protocol::run_protocol(&plant, &runs[..1], &opts.sim, &XI)?;
    let rec = &results[0].record;
    let alphas: Vec<(String, ComparisonFn)> = runs
        .iter()
        .map(|r| (r.label.clone(), r.controller.comparison().expect("soft QP carries a comparison").clone()))
        .collect();

    let mut csv = String::from("t_s,V,D_max");
    for (label, _) in &alphas {
        let _ = write!(csv, ",alpha_{}", file_label(label));
    }
    csv.push('\n');
    let mut peak_cap = f64::NEG_INFINITY;
    for (t, x) in rec.times.iter().zip(&rec.states) {
        let v = plant.clf(x);
        let d = pointwise_decay_cap(&plant, x, theta)?;
        peak_cap = peak_cap.max(d);
        let _ = write!(csv, "{t:.6},{v:.9e},{d:.9e}");
        for (_, a) in &alphas {
            let _ = write!(csv, ",{:.9e}", a.value(v));
        }
        csv.push('\n');
    }
    let files = vec![write_file(out, "caps.csv", &csv)?];

    let x0: DVector<f64> = plant.initial_state();
    let cap0 = pointwise_decay_cap(&plant, &x0, theta)?;
    let sampled = level_cap(&plant, theta, c, &SamplingOptions { seed: opts.seed, ..SamplingOptions::default() })?;
    let mut checks = vec![
        Check::info("D_max(x₀, θ)", cap0, None),
        Check::info("max D_max along trajectory", peak_cap, None),
        Check::info("sampled ᾱ(θ, c)", sampled, None).with_note("sup over Ω(V, c); not asserted"),
    ];
    for (label, a) in &alphas {
        checks.push(Check::info(format!("α(c) / D_max(x₀) {label}"), a.value(c) / cap0, None));
    }
    Ok(ReproReport { target: Target::Caps, checks, files })
}
