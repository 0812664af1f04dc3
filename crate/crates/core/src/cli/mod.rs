//! Experiment configuration and the commands behind the `concave-clf` binary.

pub mod config;
pub mod protocol;
pub mod reproduce;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::comparison::ComparisonKind;
use crate::error::{Error, Result};
use crate::sim::{metrics, simulate, MetricsReport};
use crate::tuning::{closed_form_rate, tuning_recipe_with, FeasibilityCheck, RecipeFailure};
use crate::windowed::{rate_report, verify_ordering, RateReport};

pub use config::ExperimentConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_TOLERANCE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
/// Failures outside the documented classes (numerical breakdown and similar).
pub const EXIT_OTHER: u8 = 1;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::Tuning { .. } | Error::InfeasibleNormalization(_) => EXIT_INFEASIBLE,
        Error::Config(_)
        | Error::Precondition(_)
        | Error::InvalidParameter(_)
        | Error::Unsupported(_)
        | Error::State(_)
        | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

/// Files written by a command and a short human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub const ANALYZE_HEADER: &str = "fn_id,eps,c,T_s,sigma_per_s,r,sigma_closed_form_per_s";

/// Rate reports for every (comparison, window) pair plus ordering verdicts.
pub fn cmd_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let plant = cfg.build_plant()?;
    let c = cfg.windows.resolve_c(plant.as_deref())?;
    let windows = cfg.windows.windows(c)?;
    let comparisons = cfg.resolve_comparisons(c)?;
    if comparisons.is_empty() {
        return Err(Error::Config("analyze needs at least one comparison".into()));
    }
    let mut csv = format!("{ANALYZE_HEADER}\n");
    let mut summary = String::new();
    for (id, f) in &comparisons {
        for w in &windows {
            let report: RateReport = rate_report(f, w)?;
            let closed = match f.kind() {
                ComparisonKind::RationalConcave { sigma, factor } => {
                    format!("{:.12e}", closed_form_rate(factor.k_min, factor.k_max, factor.ell, *sigma, w)?)
                }
                _ => String::new(),
            };
            let _ = writeln!(csv, "{},{closed}", report.csv_row(id));
            let _ = writeln!(
                summary,
                "{id:<16} ε = {:.3e}  T = {:.6}  σ = {:.6}  r = {:.6}",
                w.eps(),
                report.crossing_time,
                report.nominal_rate,
                report.relaxation_ratio
            );
        }
    }
    let mut files = vec![write_file(out, "rates.csv", &csv)?];

    if !cfg.orderings.is_empty() {
        let lookup = |id: &str| {
            comparisons
                .iter()
                .find(|(i, _)| i == id)
                .map(|(_, f)| f)
                .ok_or_else(|| Error::Config(format!("ordering references unknown comparison '{id}'")))
        };
        let mut verdicts = Vec::new();
        for o in &cfg.orderings {
            let (cave, lin, vex) = (lookup(&o.concave)?, lookup(&o.linear)?, lookup(&o.convex)?);
            for w in &windows {
                let v = verify_ordering(cave, lin, vex, w)?;
                let _ = writeln!(
                    summary,
                    "ordering {}/{}/{} at ε = {:.3e}: {}",
                    o.concave,
                    o.linear,
                    o.convex,
                    w.eps(),
                    if v.holds { "holds" } else { "violated" }
                );
                verdicts.push(serde_json::json!({
                    "concave": o.concave, "linear": o.linear, "convex": o.convex,
                    "eps": w.eps(), "c": w.c(), "verdict": v,
                }));
            }
        }
        files.push(write_file(out, "orderings.json", &to_json(&verdicts)?)?);
    }
    Ok(CommandOutput { files, summary })
}

/// Runs the tuning recipe. The trace is written whether or not the recipe succeeds.
pub fn cmd_tune(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    use config::CheckKind;
    let tuning = cfg.tuning.as_ref().ok_or_else(|| Error::Config("tune needs a 'tuning' block".into()))?;
    let plant = cfg.build_plant()?;
    let c = cfg.windows.resolve_c(plant.as_deref())?;
    let spec = tuning.spec(c)?;
    let cost = |p: &dyn crate::plant::PlantModel| -> Result<DMatrix<f64>> { tuning.cost.matrix(p) };
    let need_plant = || plant.as_deref().ok_or_else(|| Error::Config("this feasibility check needs a plant".into()));
    let check = match tuning.check {
        CheckKind::Skip => FeasibilityCheck::Skip,
        CheckKind::Necessary => FeasibilityCheck::Necessary { grid: 512 },
        CheckKind::Sampled => FeasibilityCheck::Sampled {
            plant: need_plant()?,
            options: crate::actuation::SamplingOptions { seed: cfg.seed, ..tuning.sampling },
        },
        CheckKind::Trajectory => {
            let p = need_plant()?;
            FeasibilityCheck::Trajectory { plant: p, config: cfg.sim, slack_weight: tuning.slack_weight, cost: cost(p)? }
        }
        CheckKind::Auto => match (&spec.constants, plant.as_deref()) {
            (Some(_), _) => FeasibilityCheck::Necessary { grid: 512 },
            (None, Some(p)) => {
                FeasibilityCheck::Trajectory { plant: p, config: cfg.sim, slack_weight: tuning.slack_weight, cost: cost(p)? }
            }
            (None, None) => FeasibilityCheck::Skip,
        },
    };
    match tuning_recipe_with(&spec, &check) {
        Ok(outcome) => {
            let trace = write_file(out, "trace.json", &to_json(&outcome.trace)?)?;
            let params = serde_json::json!({
                "k_min": outcome.params.k_min,
                "k_max": outcome.params.k_max,
                "ell": outcome.params.ell,
                "r": outcome.r,
                "exponent": outcome.exponent,
                "sigma": spec.sigma,
                "rate": outcome.rate,
                "margin": outcome.margin,
                "check": outcome.check,
                "comparison": outcome.comparison(spec.sigma)?,
            });
            let tuned = write_file(out, "tuned.json", &to_json(&params)?)?;
            let summary = format!(
                "accepted k_min = {}, k_max = {}, r = {}, ℓ = {:.6e}, σ_α = {:.6} ({} check, {} trace entries)\n",
                outcome.params.k_min,
                outcome.params.k_max,
                outcome.r,
                outcome.params.ell,
                outcome.rate,
                outcome.check,
                outcome.trace.len()
            );
            Ok(CommandOutput { files: vec![tuned, trace], summary })
        }
        Err(RecipeFailure { error, trace }) => {
            write_file(out, "trace.json", &to_json(&trace)?)?;
            Err(error)
        }
    }
}

/// Simulates every configured run and writes one trajectory and one metrics file per run.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let plant = cfg.build_plant()?.ok_or_else(|| Error::Config("simulate needs a plant".into()))?;
    cfg.sim.validate()?;
    if cfg.runs.is_empty() {
        return Err(Error::Config("simulate needs at least one run".into()));
    }
    let x0 = plant.initial_state();
    let c = plant.clf(&x0);
    let eps = cfg.windows.eps_list(c)?;
    let specs = cfg.runs.iter().map(|r| r.resolve(c)).collect::<Result<Vec<_>>>()?;
    let results: Vec<(String, String, MetricsReport)> = cfg
        .runs
        .par_iter()
        .zip(specs.par_iter())
        .map(|(run, spec)| {
            let mut ctl = spec.build(plant.as_ref())?;
            let rec = simulate(plant.as_ref(), ctl.as_mut(), &cfg.sim, &x0)?;
            let m = metrics(&rec, c, &eps)?;
            Ok((run.label.clone(), rec.to_csv(), m))
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut summary = String::new();
    let mut all = format!("{}\n", MetricsReport::CSV_HEADER);
    for (label, traj, m) in &results {
        let name = label.replace(|ch: char| !ch.is_ascii_alphanumeric() && ch != '.' && ch != '-', "_");
        files.push(write_file(out, &format!("trajectory_{name}.csv"), traj)?);
        let rows = m.csv_rows(label);
        files.push(write_file(out, &format!("metrics_{name}.csv"), &format!("{}\n{rows}", MetricsReport::CSV_HEADER))?);
        all.push_str(&rows);
        for w in &m.windows {
            let _ = writeln!(
                summary,
                "{label:<12} ε = {:.3e}  T = {:.4}  σ_nom = {:.4}  energy = {:.4}  ‖u‖∞ = {:.4}",
                w.eps, w.crossing_time, w.nominal_rate, w.energy, m.peak_input
            );
        }
    }
    files.push(write_file(out, "metrics.csv", &all)?);
    Ok(CommandOutput { files, summary })
}
