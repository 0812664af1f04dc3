use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuation::{RegularityConstants, SamplingOptions};
use crate::comparison::{make_concave_comparison, ComparisonFn, RationalFactorParams};
use crate::error::{Error, Result};
use crate::plant::{PlantModel, PlantSpec};
use crate::sim::{ControllerSpec, CostSpec, SimConfig};
use crate::tuning::{normalize_ell, TuningSpec};
use crate::windowed::Window;

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub plant: Option<PlantSpec>,
    #[serde(default)]
    pub windows: WindowSpec,
    #[serde(default)]
    pub comparisons: Vec<NamedComparison>,
    #[serde(default)]
    pub orderings: Vec<OrderingSpec>,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub tuning: Option<TuningConfig>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn build_plant(&self) -> Result<Option<Box<dyn PlantModel>>> {
        self.plant.as_ref().map(|p| p.build()).transpose()
    }

    pub fn resolve_comparisons(&self, c: f64) -> Result<Vec<(String, ComparisonFn)>> {
        let mut out: Vec<(String, ComparisonFn)> = Vec::with_capacity(self.comparisons.len());
        for n in &self.comparisons {
            if out.iter().any(|(id, _)| id == &n.id) {
                return Err(Error::Config(format!("duplicate comparison id '{}'", n.id)));
            }
            out.push((n.id.clone(), n.comparison.resolve(c)?));
        }
        Ok(out)
    }
}

/// How the top level `c` is chosen: `"initial_value"` (`c = V(x₀)`) or a number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LevelRule {
    #[default]
    InitialValue,
    Explicit(f64),
}

impl Serialize for LevelRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LevelRule::InitialValue => s.serialize_str("initial_value"),
            LevelRule::Explicit(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for LevelRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Value(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) if s == "initial_value" => Ok(LevelRule::InitialValue),
            Repr::Name(s) => Err(serde::de::Error::custom(format!("unknown level rule '{s}'"))),
            Repr::Value(c) => Ok(LevelRule::Explicit(c)),
        }
    }
}

/// `ε` values, either relative (`ε = ξ·c`) or absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    #[serde(default = "default_xi")]
    pub xi: Vec<f64>,
    /// Absolute levels; when non-empty they replace `xi`.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub c: LevelRule,
}

fn default_xi() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { xi: default_xi(), eps: Vec::new(), c: LevelRule::InitialValue }
    }
}

impl WindowSpec {
    pub fn resolve_c(&self, plant: Option<&dyn PlantModel>) -> Result<f64> {
        match (self.c, plant) {
            (LevelRule::Explicit(c), _) if c > 0.0 && c.is_finite() => Ok(c),
            (LevelRule::Explicit(c), _) => Err(Error::Config(format!("c must be positive, got {c}"))),
            (LevelRule::InitialValue, Some(p)) => Ok(p.clf(&p.initial_state())),
            (LevelRule::InitialValue, None) => {
                Err(Error::Config("c = V(x0) needs a plant; give an explicit c instead".into()))
            }
        }
    }

    pub fn eps_list(&self, c: f64) -> Result<Vec<f64>> {
        let eps: Vec<f64> = if self.eps.is_empty() { self.xi.iter().map(|x| x * c).collect() } else { self.eps.clone() };
        if eps.is_empty() {
            return Err(Error::Config("no windows configured".into()));
        }
        if let Some(bad) = eps.iter().find(|&&e| !(e > 0.0 && e < c)) {
            return Err(Error::Config(format!("ε = {bad} must lie strictly between 0 and c = {c}")));
        }
        Ok(eps)
    }

    pub fn windows(&self, c: f64) -> Result<Vec<Window>> {
        self.eps_list(c)?.into_iter().map(|e| Window::new(e, c)).collect()
    }
}

/// Either a concrete comparison or a rational factor normalized at the resolved `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComparisonSpec {
    Explicit(ComparisonFn),
    Normalized { normalized_rational: NormalizedRational },
}

/// `σ·s_rat(v)·v` (or `σ·s_rat(v^p)·v`) with `ℓ` chosen so that the factor equals `r` at `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizedRational {
    pub sigma: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub r: f64,
    #[serde(default)]
    pub exponent: Option<f64>,
}

impl NormalizedRational {
    pub fn resolve(&self, c: f64) -> Result<ComparisonFn> {
        let c_eff = self.exponent.map_or(c, |p| c.powf(p));
        let ell = normalize_ell(self.k_min, self.k_max, self.r, c_eff)?;
        make_concave_comparison(self.sigma, RationalFactorParams::new(self.k_min, self.k_max, ell)?, self.exponent)
    }
}

impl ComparisonSpec {
    pub fn resolve(&self, c: f64) -> Result<ComparisonFn> {
        match self {
            ComparisonSpec::Explicit(f) => Ok(f.clone()),
            ComparisonSpec::Normalized { normalized_rational } => normalized_rational.resolve(c),
        }
    }
}

impl From<ComparisonFn> for ComparisonSpec {
    fn from(f: ComparisonFn) -> Self {
        ComparisonSpec::Explicit(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedComparison {
    pub id: String,
    pub comparison: ComparisonSpec,
}

/// Ids of three comparisons expected to share the endpoint value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingSpec {
    pub concave: String,
    pub linear: String,
    pub convex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub controller: ControllerSpec<ComparisonSpec>,
}

impl RunSpec {
    pub fn resolve(&self, c: f64) -> Result<ControllerSpec> {
        self.controller.clone().map_comparison(|s| s.resolve(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Necessary check with constants, else a trajectory check with a plant, else none.
    #[default]
    Auto,
    Skip,
    Necessary,
    Sampled,
    Trajectory,
}

/// Tuning targets; the window is `[xi·c, c]` with `c` from the window rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub sigma: f64,
    pub sigma_star: f64,
    #[serde(default = "one")]
    pub r: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub theta: f64,
    #[serde(default = "default_tuning_xi")]
    pub xi: f64,
    #[serde(default)]
    pub constants: Option<RegularityConstants>,
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub check: CheckKind,
    #[serde(default = "default_slack_weight")]
    pub slack_weight: f64,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub sampling: SamplingOptions,
}

fn one() -> f64 {
    1.0
}

fn default_tuning_xi() -> f64 {
    1e-2
}

fn default_slack_weight() -> f64 {
    1e5
}

impl TuningConfig {
    pub fn spec(&self, c: f64) -> Result<TuningSpec> {
        Ok(TuningSpec {
            window: Window::relative(self.xi, c)?,
            sigma: self.sigma,
            sigma_star: self.sigma_star,
            r: self.r,
            k_min: self.k_min,
            k_max: self.k_max,
            theta: self.theta,
            constants: self.constants.clone(),
            exponent: self.exponent,
        })
    }
}
