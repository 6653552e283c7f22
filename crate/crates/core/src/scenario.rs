//! Scenario files: a JSON document describing the city, the firms, the
//! preferences and an optional parameter sweep, and the runner that solves
//! it and writes the CSV/JSON outputs.
//!
//! Output files, all floats with 10 significant digits:
//!
//! * `wages.csv`: one row per (sweep value, firm);
//! * `fields_<value>.csv`: per node `x[,y]`, revenue, density, rent, then
//!   `share_<option>` and `dist_<option>` (share times density) per option;
//! * `trace_<value>.json`: solver iteration records;
//! * `summary.json`: convergence, uniqueness threshold, wage box and timing;
//! * zero-noise studies add `zero_noise.json` and `partition.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::continuation::continue_to;
use crate::economy::{CobbDouglas, FirmSpec, ModelParams, WageVector};
use crate::equilibrium::{ChoiceOption, Economy, EquilibriumResult, SolverConfig, WageBox};
use crate::error::{Error, Result};
use crate::format::{sig10, to_json_sig10};
use crate::grid::{write_node_table, CityGrid, Interval, Point};
use crate::telework::{Ces2, TeleEconomy, TeleEquilibrium, TeleFirmSpec};
use crate::zero_noise::{zero_noise_limit_study, LimitStudy, LimitStudyOptions, DEFAULT_SIGMAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Single-input firms.
    #[default]
    Base,
    /// On-site and remote labour with a CES technology.
    Telework,
    /// Regularised solves with decreasing noise, checked against the noiseless model.
    ZeroNoiseStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// 1 or 2.
    pub dimension: usize,
    /// One `[lo, hi]` pair per axis.
    pub bounds: Vec<[f64; 2]>,
    pub nodes_per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Technology {
    /// `f(l) = A^(1-beta) l^beta`.
    CobbDouglas { productivity: f64, beta: f64 },
    /// `F(l, s) = A^(1-beta) (l^alpha + B s^alpha)^(beta/alpha)`.
    Ces {
        productivity: f64,
        remote_productivity: f64,
        alpha: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FirmConfig {
    /// One coordinate per axis.
    pub location: Vec<f64>,
    pub technology: Technology,
}

fn default_commute_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Housing share exponent in `[0, 1)`.
    pub theta: f64,
    /// Noise level; must be positive except in zero-noise studies, where it is ignored.
    pub sigma: f64,
    /// Home wage.
    pub w0: f64,
    /// Commuting cost per unit distance.
    #[serde(default = "default_commute_scale")]
    pub commute_scale: f64,
}

impl From<ParamsConfig> for ModelParams {
    fn from(p: ParamsConfig) -> Self {
        ModelParams {
            theta: p.theta,
            sigma: p.sigma,
            w0: p.w0,
            commute_scale: p.commute_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum SweepParameter {
    #[serde(rename = "theta")]
    Theta,
    /// Remote productivity of every firm (telework only).
    #[serde(rename = "B", alias = "b")]
    B,
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "w0")]
    W0,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Theta => "theta",
            SweepParameter::B => "B",
            SweepParameter::Sigma => "sigma",
            SweepParameter::W0 => "w0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Strictly increasing.
    pub values: Vec<f64>,
}

fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}

fn default_tie_band() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ZeroNoiseSpec {
    /// Strictly decreasing noise levels.
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    /// Nodes whose two best options are closer than this are left out of the
    /// share-sharpness measure.
    #[serde(default = "default_tie_band")]
    pub tie_band: f64,
}

impl Default for ZeroNoiseSpec {
    fn default() -> Self {
        ZeroNoiseSpec {
            sigmas: default_sigmas(),
            tie_band: default_tie_band(),
        }
    }
}

/// A complete scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    pub grid: GridSpec,
    #[serde(default)]
    pub firms: Vec<FirmConfig>,
    pub params: ParamsConfig,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub zero_noise: Option<ZeroNoiseSpec>,
    /// Used when no output directory is given on the command line.
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// The JSON schema of [`ScenarioConfig`], pretty-printed.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    serde_json::to_string_pretty(&schema).expect("schema serialises")
}

/// Line of the key reached by following `path` through `text`: each step is
/// a key and the number of earlier occurrences to skip after the previous
/// step's position.
fn anchor(text: &str, path: &[(&str, usize)]) -> Option<usize> {
    let mut pos = 0;
    for (key, skip) in path {
        let needle = format!("\"{key}\"");
        for _ in 0..=*skip {
            let mut from = pos;
            loop {
                let at = from + text[from..].find(&needle)?;
                let after = text[at + needle.len()..].trim_start();
                from = at + needle.len();
                if after.starts_with(':') {
                    break;
                }
            }
            pos = from;
        }
    }
    Some(text[..pos].lines().count().max(1))
}

fn config_err(text: &str, path: &[(&str, usize)], message: impl Into<String>) -> Error {
    Error::Config {
        line: anchor(text, path),
        message: message.into(),
    }
}

impl ScenarioConfig {
    /// Parses and validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        cfg.validate_against(text)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json_str(&text)
    }

    /// Validation without a source document (no line numbers).
    pub fn validate(&self) -> Result<()> {
        self.validate_against("")
    }

    fn validate_against(&self, text: &str) -> Result<()> {
        let g = &self.grid;
        if !(g.dimension == 1 || g.dimension == 2) {
            return Err(config_err(text, &[("grid", 0), ("dimension", 0)], format!("grid.dimension must be 1 or 2, got {}", g.dimension)));
        }
        if g.bounds.len() != g.dimension {
            return Err(config_err(text, &[("grid", 0), ("bounds", 0)], format!("grid.bounds needs {} [lo, hi] pairs, got {}", g.dimension, g.bounds.len())));
        }
        for (axis, b) in g.bounds.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(config_err(text, &[("grid", 0), ("bounds", 0)], format!("grid.bounds[{axis}] = {b:?} is not an interval lo < hi")));
            }
        }
        if g.nodes_per_axis < 2 {
            return Err(config_err(text, &[("grid", 0), ("nodes_per_axis", 0)], format!("grid.nodes_per_axis must be >= 2, got {}", g.nodes_per_axis)));
        }
        let p = &self.params;
        let at_param = |key: &'static str| vec![("params", 0), (key, 0)];
        if !(p.theta >= 0.0 && p.theta < 1.0) {
            return Err(config_err(text, &at_param("theta"), format!("params.theta must lie in [0, 1), got {}", p.theta)));
        }
        match self.mode {
            Mode::ZeroNoiseStudy => {
                if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
                    return Err(config_err(text, &at_param("sigma"), format!("params.sigma must be >= 0, got {}", p.sigma)));
                }
            }
            _ => {
                if !(p.sigma > 0.0 && p.sigma.is_finite()) {
                    return Err(config_err(text, &at_param("sigma"), format!("params.sigma must be > 0 in {} mode, got {} (use mode zero_noise_study for the noiseless model)", self.mode_name(), p.sigma)));
                }
            }
        }
        if !(p.w0 > 0.0 && p.w0.is_finite()) {
            return Err(config_err(text, &at_param("w0"), format!("params.w0 must be > 0, got {}", p.w0)));
        }
        if !(p.commute_scale >= 0.0 && p.commute_scale.is_finite()) {
            return Err(config_err(text, &at_param("commute_scale"), format!("params.commute_scale must be >= 0, got {}", p.commute_scale)));
        }
        for (i, f) in self.firms.iter().enumerate() {
            let at = |key: &'static str| vec![("firms", 0), (key, i)];
            if f.location.len() != g.dimension {
                return Err(config_err(text, &at("location"), format!("firms[{i}].location needs {} coordinates, got {}", g.dimension, f.location.len())));
            }
            for (axis, (c, b)) in f.location.iter().zip(&g.bounds).enumerate() {
                if !(*c >= b[0] && *c <= b[1]) {
                    return Err(config_err(text, &at("location"), format!("firms[{i}].location[{axis}] = {c} lies outside [{}, {}]", b[0], b[1])));
                }
            }
            let tech_err = |e: Error| config_err(text, &at("technology"), format!("firms[{i}].technology: {e}"));
            match (self.mode, f.technology) {
                (Mode::Telework, Technology::Ces { .. }) => {
                    self.ces(&f.technology).validate().map_err(tech_err)?;
                }
                (Mode::Telework, _) => {
                    return Err(config_err(text, &at("technology"), format!("firms[{i}].technology must be of kind \"ces\" in telework mode")));
                }
                (_, Technology::CobbDouglas { productivity, beta }) => {
                    CobbDouglas { productivity, beta }.validate().map_err(tech_err)?;
                }
                (_, _) => {
                    return Err(config_err(text, &at("technology"), format!("firms[{i}].technology must be of kind \"cobb_douglas\" in {} mode", self.mode_name())));
                }
            }
        }
        if let Some(s) = &self.sweep {
            let at_values = [("sweep", 0), ("values", 0)];
            if self.mode == Mode::ZeroNoiseStudy {
                return Err(config_err(text, &[("sweep", 0)], "sweep is not available in zero_noise_study mode; list the noise levels in zero_noise.sigmas"));
            }
            if s.values.is_empty() {
                return Err(config_err(text, &at_values, "sweep.values is empty"));
            }
            if s.values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(config_err(text, &at_values, "sweep.values must be strictly increasing"));
            }
            for v in &s.values {
                let ok = match s.parameter {
                    SweepParameter::Theta => *v >= 0.0 && *v < 1.0,
                    SweepParameter::B => *v >= 0.0 && v.is_finite(),
                    SweepParameter::Sigma | SweepParameter::W0 => *v > 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(config_err(text, &at_values, format!("sweep value {v} is out of range for {}", s.parameter.name())));
                }
            }
            if s.parameter == SweepParameter::B && self.mode != Mode::Telework {
                return Err(config_err(text, &[("sweep", 0), ("parameter", 0)], "sweeping B needs telework mode"));
            }
        }
        self.solver
            .validate()
            .map_err(|e| config_err(text, &[("solver", 0)], format!("solver: {e}")))?;
        if let Some(z) = &self.zero_noise {
            let at_sig = [("zero_noise", 0), ("sigmas", 0)];
            if z.sigmas.is_empty() || z.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(config_err(text, &at_sig, "zero_noise.sigmas must be a nonempty list of positive values"));
            }
            if z.sigmas.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(config_err(text, &at_sig, "zero_noise.sigmas must be strictly decreasing"));
            }
            if !(z.tie_band >= 0.0 && z.tie_band.is_finite()) {
                return Err(config_err(text, &[("zero_noise", 0), ("tie_band", 0)], "zero_noise.tie_band must be >= 0"));
            }
        }
        Ok(())
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Base => "base",
            Mode::Telework => "telework",
            Mode::ZeroNoiseStudy => "zero_noise_study",
        }
    }

    fn ces(&self, t: &Technology) -> Ces2 {
        match *t {
            Technology::Ces { productivity, remote_productivity, alpha, beta } => Ces2 {
                productivity,
                remote_productivity,
                alpha,
                beta,
            },
            Technology::CobbDouglas { productivity, beta } => Ces2 {
                productivity,
                remote_productivity: 0.0,
                alpha: 1.0,
                beta,
            },
        }
    }

    pub fn build_grid(&self) -> Result<Arc<CityGrid>> {
        let bounds: Vec<Interval> = self.grid.bounds.iter().map(|b| Interval::new(b[0], b[1])).collect();
        Ok(Arc::new(CityGrid::new(&bounds, self.grid.nodes_per_axis)?))
    }

    fn location(&self, f: &FirmConfig) -> Point {
        [f.location[0], f.location.get(1).copied().unwrap_or(0.0)]
    }

    /// Firms of a base or zero-noise scenario.
    pub fn base_firms(&self) -> Vec<FirmSpec> {
        self.firms
            .iter()
            .map(|f| {
                let tech = match f.technology {
                    Technology::CobbDouglas { productivity, beta } => CobbDouglas { productivity, beta },
                    Technology::Ces { productivity, beta, .. } => CobbDouglas { productivity, beta },
                };
                FirmSpec::new(self.location(f), tech)
            })
            .collect()
    }

    /// Firms of a telework scenario, with `B` overridden when given.
    pub fn tele_firms(&self, b: Option<f64>) -> Vec<TeleFirmSpec> {
        self.firms
            .iter()
            .map(|f| {
                let mut tech = self.ces(&f.technology);
                if let Some(b) = b {
                    tech.remote_productivity = b;
                }
                TeleFirmSpec { location: self.location(f), tech }
            })
            .collect()
    }

    pub fn model_params(&self) -> ModelParams {
        self.params.into()
    }

    /// The sweep to run: the configured one, or the current `theta` alone.
    pub fn sweep_values(&self) -> (SweepParameter, Vec<f64>) {
        match &self.sweep {
            Some(s) => (s.parameter, s.values.clone()),
            None => (SweepParameter::Theta, vec![self.params.theta]),
        }
    }
}

/// Runner settings that do not belong in the scenario file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Run the sweep from the last value to the first.
    pub reverse: bool,
    /// Ignore the sweep and solve at the configured parameters only.
    pub single: bool,
    /// Retry a failing sweep value with up to `2^max_doublings` continuation steps.
    pub max_doublings: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            reverse: false,
            single: false,
            max_doublings: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdSummary {
    pub theta0: f64,
    pub alpha0: f64,
    /// Smallest profit curvature (base) or Hessian eigenvalue (telework) over the box.
    pub curvature: f64,
    /// `base`, `telework`, or `reduced` when remote options were dropped.
    pub model: &'static str,
    pub theta_in_uniqueness_regime: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub value: f64,
    pub params: ModelParams,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
    pub continuation_steps: usize,
    pub options: Vec<String>,
    pub wages: Vec<f64>,
    pub wage_box: WageBox,
    pub wages_in_box: bool,
    pub uniqueness: Option<ThresholdSummary>,
    pub seconds: f64,
    pub fields_file: Option<String>,
    pub trace_file: Option<String>,
    pub events: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: Option<String>,
    pub mode: Mode,
    pub sweep_parameter: &'static str,
    pub reverse: bool,
    pub nodes_per_axis: usize,
    pub runs: Vec<RunRecord>,
    pub all_converged: bool,
    pub total_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_noise: Option<LimitStudy>,
}

impl RunSummary {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let v = to_json_sig10(self)?;
        let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut f, &v)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

enum Solved {
    Base(EquilibriumResult),
    Tele(TeleEquilibrium),
}

impl Solved {
    fn result(&self) -> &EquilibriumResult {
        match self {
            Solved::Base(r) => r,
            Solved::Tele(t) => &t.result,
        }
    }

    fn warm(&self) -> Vec<(ChoiceOption, f64)> {
        let r = self.result();
        r.options[1..].iter().copied().zip(r.wages.iter().copied()).collect()
    }
}

/// Starting wages for `options` from a neighbouring solution; options that
/// did not exist there (remote options switched back on) start at `w0`.
fn adapt_warm(options: &[ChoiceOption], warm: &[(ChoiceOption, f64)], w0: f64) -> Vec<f64> {
    options[1..]
        .iter()
        .map(|o| {
            warm.iter()
                .find(|(p, _)| p == o)
                .map_or(w0, |(_, w)| *w)
        })
        .collect()
}

fn value_tag(v: f64) -> String {
    sig10(v)
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    grid: Arc<CityGrid>,
    parameter: SweepParameter,
}

impl Runner<'_> {
    fn params_at(&self, v: f64) -> ModelParams {
        let mut p = self.cfg.model_params();
        match self.parameter {
            SweepParameter::Theta => p.theta = v,
            SweepParameter::Sigma => p.sigma = v,
            SweepParameter::W0 => p.w0 = v,
            SweepParameter::B => {}
        }
        p
    }

    fn b_at(&self, v: f64) -> Option<f64> {
        (self.parameter == SweepParameter::B).then_some(v)
    }

    fn solve_at(&self, v: f64, warm: Option<Vec<(ChoiceOption, f64)>>) -> Result<Solved> {
        let params = self.params_at(v);
        let mut solver = self.cfg.solver.clone();
        match self.cfg.mode {
            Mode::Telework => {
                let eco = TeleEconomy::new(self.grid.clone(), self.cfg.tele_firms(self.b_at(v)), params)?;
                if let Some(w) = warm {
                    solver.initial_wages = Some(adapt_warm(eco.options(), &w, params.w0));
                }
                eco.solve(&solver).map(Solved::Tele)
            }
            _ => {
                let eco = Economy::new(self.grid.clone(), self.cfg.base_firms(), params)?;
                if let Some(w) = warm {
                    solver.initial_wages = Some(w.into_iter().map(|(_, x)| x).collect());
                }
                eco.solve(&solver).map(Solved::Base)
            }
        }
    }

    fn threshold(&self, v: f64) -> Result<ThresholdSummary> {
        let params = self.params_at(v);
        let (theta0, alpha0, curvature, model) = match self.cfg.mode {
            Mode::Telework => {
                let firms = self.cfg.tele_firms(self.b_at(v));
                if firms.iter().all(|f| f.remote_active()) {
                    let r = TeleEconomy::new(self.grid.clone(), firms, params)?.uniqueness_threshold()?;
                    (r.theta0, r.alpha0, r.nu, "telework")
                } else {
                    // remote options are dropped below B_MIN: the reduced model's threshold
                    let reduced: Vec<FirmSpec> = firms
                        .iter()
                        .map(|f| FirmSpec::new(f.location, f.tech.onsite_only()))
                        .collect();
                    let r = Economy::new(self.grid.clone(), reduced, params)?.uniqueness_threshold();
                    (r.theta0, r.alpha0, r.min_curvature, "reduced")
                }
            }
            _ => {
                let r = Economy::new(self.grid.clone(), self.cfg.base_firms(), params)?.uniqueness_threshold();
                (r.theta0, r.alpha0, r.min_curvature, "base")
            }
        };
        Ok(ThresholdSummary {
            theta0,
            alpha0,
            curvature,
            model,
            theta_in_uniqueness_regime: params.theta <= theta0,
        })
    }
}

fn write_fields(path: &Path, r: &EquilibriumResult) -> Result<()> {
    let labels: Vec<String> = r.options.iter().map(|o| o.label()).collect();
    let dists: Vec<Vec<f64>> = (0..r.options.len()).map(|j| r.distribution(j)).collect();
    let share_names: Vec<String> = labels.iter().map(|l| format!("share_{l}")).collect();
    let dist_names: Vec<String> = labels.iter().map(|l| format!("dist_{l}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![
        ("revenue", r.revenue.values()),
        ("density", r.density.values()),
        ("rent", r.rent.values()),
    ];
    for (name, s) in share_names.iter().zip(&r.shares) {
        cols.push((name, s.values()));
    }
    for (name, d) in dist_names.iter().zip(&dists) {
        cols.push((name, d));
    }
    let f = BufWriter::new(File::create(path)?);
    write_node_table(f, r.density.grid(), &cols)
}

fn write_trace(path: &Path, r: &EquilibriumResult) -> Result<()> {
    let v = to_json_sig10(&r.trace)?;
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &v)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn wages_header(mode: Mode, parameter: SweepParameter) -> Vec<&'static str> {
    let mut h = vec![parameter.name(), "firm"];
    match mode {
        Mode::Telework => h.extend([
            "wage_onsite",
            "wage_remote",
            "mass_onsite",
            "mass_remote",
            "demand_onsite",
            "demand_remote",
        ]),
        _ => h.extend(["wage", "demand", "supply"]),
    }
    h.extend(["residual_norm", "iterations", "converged"]);
    h
}

fn wage_rows(v: f64, solved: &Solved) -> Vec<Vec<String>> {
    let r = solved.result();
    let tail = [
        sig10(r.residual_norm),
        r.iterations.to_string(),
        r.converged.to_string(),
    ];
    match solved {
        Solved::Base(r) => (0..r.wages.len())
            .map(|i| {
                let mut row = vec![
                    sig10(v),
                    (i + 1).to_string(),
                    sig10(r.wages[i]),
                    sig10(r.demands[i]),
                    sig10(r.labor_supply[i + 1]),
                ];
                row.extend(tail.iter().cloned());
                row
            })
            .collect(),
        Solved::Tele(t) => (0..t.n_firms())
            .map(|i| {
                let mut row = vec![
                    sig10(v),
                    (i + 1).to_string(),
                    sig10(t.onsite_wage(i)),
                    t.remote_wage(i).map(sig10).unwrap_or_default(),
                    sig10(t.onsite_mass(i)),
                    sig10(t.remote_mass(i)),
                    sig10(t.onsite_demand(i)),
                    sig10(t.remote_demand(i)),
                ];
                row.extend(tail.iter().cloned());
                row
            })
            .collect(),
    }
}

fn record(
    v: f64,
    params: ModelParams,
    r: &EquilibriumResult,
    steps: usize,
    uniqueness: Option<ThresholdSummary>,
    seconds: f64,
) -> RunRecord {
    RunRecord {
        value: v,
        params,
        converged: r.converged,
        residual_norm: r.residual_norm,
        iterations: r.iterations,
        continuation_steps: steps,
        options: r.options.iter().map(|o| o.label()).collect(),
        wages: r.wages.clone(),
        wage_box: r.wage_box,
        wages_in_box: r.in_wage_box(),
        uniqueness,
        seconds,
        fields_file: None,
        trace_file: None,
        events: r.events.clone(),
        error: None,
    }
}

/// Solves every sweep value with continuation and writes the outputs into
/// `opts.out_dir`. A solver failure stops the sweep; the outputs written so
/// far, the failing run's best iterate and a summary flagging the failure are
/// kept, and the returned summary has `all_converged == false`.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.mode == Mode::ZeroNoiseStudy {
        return Err(Error::Config {
            line: None,
            message: "zero_noise_study scenarios are run by the zero-noise study (`cityeq zeronoise`)".into(),
        });
    }
    let start = Instant::now();
    fs::create_dir_all(&opts.out_dir)?;
    let grid = cfg.build_grid()?;
    let (parameter, mut values) = cfg.sweep_values();
    if opts.single {
        let p = cfg.model_params();
        values = vec![match parameter {
            SweepParameter::Theta => p.theta,
            SweepParameter::Sigma => p.sigma,
            SweepParameter::W0 => p.w0,
            SweepParameter::B => cfg.tele_firms(None).first().map_or(0.0, |f| f.tech.remote_productivity),
        }];
    }
    if opts.reverse {
        values.reverse();
    }
    let runner = Runner { cfg, grid: grid.clone(), parameter };
    let mut wages = csv::Writer::from_path(opts.out_dir.join("wages.csv"))?;
    wages.write_record(wages_header(cfg.mode, parameter))?;
    let mut runs = Vec::new();
    // explicit initial wages stay in the solver config until a run has converged
    let mut warm: Option<Vec<(ChoiceOption, f64)>> = None;
    let mut prev: Option<f64> = None;
    let mut all_converged = true;
    for &v in &values {
        let t = Instant::now();
        let params = runner.params_at(v);
        let uniqueness = match runner.threshold(v) {
            Ok(u) => Some(u),
            Err(e) => {
                warn!("uniqueness threshold at {} = {v}: {e}", parameter.name());
                None
            }
        };
        let geometric = parameter == SweepParameter::Sigma;
        let outcome = continue_to(
            prev,
            v,
            warm.clone(),
            geometric,
            opts.max_doublings,
            |p, w| runner.solve_at(p, w),
            |s| s.warm(),
        );
        let tag = value_tag(v);
        let fields_name = format!("fields_{tag}.csv");
        let trace_name = format!("trace_{tag}.json");
        match outcome {
            Ok((solved, steps)) => {
                let r = solved.result();
                info!(
                    "{} = {v}: residual {:.2e} after {} iterations",
                    parameter.name(),
                    r.residual_norm,
                    r.iterations
                );
                for row in wage_rows(v, &solved) {
                    wages.write_record(row)?;
                }
                write_fields(&opts.out_dir.join(&fields_name), r)?;
                write_trace(&opts.out_dir.join(&trace_name), r)?;
                let mut rec = record(v, params, r, steps, uniqueness, t.elapsed().as_secs_f64());
                rec.fields_file = Some(fields_name);
                rec.trace_file = Some(trace_name);
                runs.push(rec);
                warm = Some(solved.warm());
                prev = Some(v);
            }
            Err(Error::NotConverged(report)) => {
                all_converged = false;
                warn!("{} = {v}: {}", parameter.name(), Error::NotConverged(report.clone()));
                let mut rec = match report.partial.as_deref() {
                    Some(r) => {
                        let solved = match cfg.mode {
                            Mode::Telework => Solved::Tele(TeleEquilibrium::from_result(r.clone(), cfg.firms.len())),
                            _ => Solved::Base(r.clone()),
                        };
                        for row in wage_rows(v, &solved) {
                            wages.write_record(row)?;
                        }
                        write_fields(&opts.out_dir.join(&fields_name), r)?;
                        write_trace(&opts.out_dir.join(&trace_name), r)?;
                        let mut rec = record(v, params, r, 0, uniqueness, t.elapsed().as_secs_f64());
                        rec.fields_file = Some(fields_name);
                        rec.trace_file = Some(trace_name);
                        rec
                    }
                    None => RunRecord {
                        value: v,
                        params,
                        converged: false,
                        residual_norm: report.best_residual_norm,
                        iterations: report.iterations,
                        continuation_steps: 0,
                        options: Vec::new(),
                        wages: report.best_wages.clone(),
                        wage_box: WageBox { lower: f64::NAN, upper: f64::NAN },
                        wages_in_box: false,
                        uniqueness,
                        seconds: t.elapsed().as_secs_f64(),
                        fields_file: None,
                        trace_file: None,
                        events: report.events.clone(),
                        error: None,
                    },
                };
                rec.error = Some(format!(
                    "solver did not converge: best residual {:.3e}",
                    report.best_residual_norm
                ));
                runs.push(rec);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    wages.flush()?;
    let summary = RunSummary {
        name: cfg.name.clone(),
        mode: cfg.mode,
        sweep_parameter: parameter.name(),
        reverse: opts.reverse,
        nodes_per_axis: cfg.grid.nodes_per_axis,
        runs,
        all_converged,
        total_seconds: start.elapsed().as_secs_f64(),
        zero_noise: None,
    };
    summary.write(&opts.out_dir)?;
    Ok(summary)
}

/// Runs the noise-reduction study of a base or zero-noise scenario and
/// writes `zero_noise.json`, `partition.csv` (at the smallest noise level),
/// `wages.csv` (one row per noise level and firm) and `summary.json`.
pub fn run_zero_noise(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.mode == Mode::Telework {
        return Err(Error::Config {
            line: None,
            message: "the zero-noise study covers the base model only; set mode to base or zero_noise_study".into(),
        });
    }
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let grid = cfg.build_grid()?;
    let spec = cfg.zero_noise.clone().unwrap_or_default();
    let firms = cfg.base_firms();
    let params = cfg.model_params();
    let options = LimitStudyOptions {
        sigmas: spec.sigmas.clone(),
        solver: cfg.solver.clone(),
        tie_band: spec.tie_band,
        ..LimitStudyOptions::default()
    };
    let study = zero_noise_limit_study(grid.clone(), &firms, &params, &options)?;
    let last = study.rows.last().expect("nonempty study");
    let econ = Economy::new(grid, firms, ModelParams { sigma: last.sigma, ..params })?;
    let partition = econ.partition(&WageVector::new(last.wages.clone())?, None)?;
    partition.write_csv(BufWriter::new(File::create(out_dir.join("partition.csv"))?))?;

    let mut wages = csv::Writer::from_path(out_dir.join("wages.csv"))?;
    wages.write_record(["sigma", "firm", "wage", "residual_norm", "iterations"])?;
    for row in &study.rows {
        for (i, w) in row.wages.iter().enumerate() {
            wages.write_record([
                sig10(row.sigma),
                (i + 1).to_string(),
                sig10(*w),
                sig10(row.residual_norm),
                row.iterations.to_string(),
            ])?;
        }
    }
    wages.flush()?;
    let v = to_json_sig10(&study)?;
    let mut f = BufWriter::new(File::create(out_dir.join("zero_noise.json"))?);
    serde_json::to_writer_pretty(&mut f, &v)?;
    writeln!(f)?;
    f.flush()?;

    let threshold = econ.uniqueness_threshold();
    let runs = study
        .rows
        .iter()
        .map(|row| RunRecord {
            value: row.sigma,
            params: ModelParams { sigma: row.sigma, ..params },
            converged: true,
            residual_norm: row.residual_norm,
            iterations: row.iterations,
            continuation_steps: row.substeps,
            options: (0..=econ.n_firms())
                .map(|j| if j == 0 { ChoiceOption::Home } else { ChoiceOption::Firm(j - 1) }.label())
                .collect(),
            wages: row.wages.clone(),
            wage_box: threshold.wage_box,
            wages_in_box: row.wages.iter().all(|w| threshold.wage_box.contains(*w)),
            uniqueness: Some(ThresholdSummary {
                theta0: threshold.theta0,
                alpha0: threshold.alpha0,
                curvature: threshold.min_curvature,
                model: "base",
                theta_in_uniqueness_regime: params.theta <= threshold.theta0,
            }),
            seconds: 0.0,
            fields_file: None,
            trace_file: None,
            events: Vec::new(),
            error: None,
        })
        .collect();
    let summary = RunSummary {
        name: cfg.name.clone(),
        mode: cfg.mode,
        sweep_parameter: "sigma",
        reverse: false,
        nodes_per_axis: cfg.grid.nodes_per_axis,
        runs,
        all_converged: true,
        total_seconds: start.elapsed().as_secs_f64(),
        zero_noise: Some(study),
    };
    summary.write(out_dir)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEST1: &str = r#"{
  "name": "line",
  "grid": { "dimension": 1, "bounds": [[-10, 10]], "nodes_per_axis": 101 },
  "firms": [
    { "location": [-7], "technology": { "kind": "cobb_douglas", "productivity": 10000, "beta": 0.7 } },
    { "location": [0], "technology": { "kind": "cobb_douglas", "productivity": 10000, "beta": 0.7 } },
    { "location": [3], "technology": { "kind": "cobb_douglas", "productivity": 10000, "beta": 0.7 } }
  ],
  "params": { "theta": 0.0, "sigma": 0.1, "w0": 12 },
  "sweep": { "parameter": "theta", "values": [0, 0.5] }
}"#;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("cityeq-scenario-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn parses_and_defaults() {
        let cfg = ScenarioConfig::from_json_str(TEST1).unwrap();
        assert_eq!(cfg.mode, Mode::Base);
        assert_eq!(cfg.params.commute_scale, 0.5);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.base_firms()[2].location, [3.0, 0.0]);
    }

    #[test]
    fn theta_one_is_rejected_with_its_line() {
        let text = TEST1.replace("\"theta\": 0.0", "\"theta\": 1.0");
        match ScenarioConfig::from_json_str(&text).unwrap_err() {
            Error::Config { line, message } => {
                assert_eq!(line, Some(9));
                assert!(message.contains("params.theta"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn zero_sigma_rejected_in_base_mode() {
        let text = TEST1.replace("\"sigma\": 0.1", "\"sigma\": 0");
        let err = ScenarioConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("params.sigma"), "{err}");
    }

    #[test]
    fn firm_outside_city_names_the_firm() {
        let text = TEST1.replace("[3]", "[30]");
        match ScenarioConfig::from_json_str(&text).unwrap_err() {
            Error::Config { line, message } => {
                assert_eq!(line, Some(7));
                assert!(message.contains("firms[2].location"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = TEST1.replace("\"w0\": 12", "\"w0\": ");
        match ScenarioConfig::from_json_str(&text).unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, Some(9)),
            e => panic!("{e}"),
        }
        let text = TEST1.replace("\"name\"", "\"nmae\"");
        assert!(ScenarioConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn unsorted_sweep_rejected() {
        let text = TEST1.replace("[0, 0.5]", "[0.5, 0]");
        let err = ScenarioConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));
    }

    #[test]
    fn wrong_technology_for_mode() {
        let text = TEST1.replace("\"name\": \"line\",", "\"name\": \"line\", \"mode\": \"telework\",");
        let err = ScenarioConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("\"ces\""), "{err}");
    }

    #[test]
    fn sweep_writes_one_field_file_per_value() {
        let cfg = ScenarioConfig::from_json_str(TEST1).unwrap();
        let dir = tmp("sweep");
        let s = run_scenario(&cfg, &RunOptions::new(&dir)).unwrap();
        assert!(s.all_converged);
        assert_eq!(s.runs.len(), 2);
        let wages = fs::read_to_string(dir.join("wages.csv")).unwrap();
        assert_eq!(wages.lines().count(), 1 + 6);
        assert!(wages.starts_with("theta,firm,wage,demand,supply,residual_norm,iterations,converged\n"));
        let fields = fs::read_to_string(dir.join("fields_0.5.csv")).unwrap();
        assert_eq!(fields.lines().count(), 102);
        assert_eq!(
            fields.lines().next().unwrap(),
            "x,revenue,density,rent,share_home,share_1,share_2,share_3,dist_home,dist_1,dist_2,dist_3"
        );
        assert!(dir.join("fields_0.csv").exists());
        assert!(dir.join("trace_0.json").exists());
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        let u = &summary["runs"][0]["uniqueness"];
        assert!(u["theta0"].as_f64().unwrap() > 0.0);
        assert_eq!(u["theta_in_uniqueness_regime"], true);
        assert_eq!(summary["runs"][1]["uniqueness"]["theta_in_uniqueness_regime"], false);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn empty_firm_list_is_everyone_home() {
        let text = r#"{
  "grid": { "dimension": 1, "bounds": [[0, 1]], "nodes_per_axis": 11 },
  "params": { "theta": 0.6, "sigma": 0.1, "w0": 5 }
}"#;
        let cfg = ScenarioConfig::from_json_str(text).unwrap();
        let dir = tmp("empty");
        let s = run_scenario(&cfg, &RunOptions::new(&dir)).unwrap();
        assert!(s.all_converged);
        let fields = fs::read_to_string(dir.join("fields_0.6.csv")).unwrap();
        for line in fields.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[1], "5");
            assert_eq!(cols[2], "1");
            assert_eq!(cols[4], "1");
        }
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn reruns_overwrite_deterministically() {
        let cfg = ScenarioConfig::from_json_str(TEST1).unwrap();
        let dir = tmp("rerun");
        run_scenario(&cfg, &RunOptions::new(&dir)).unwrap();
        let a = fs::read(dir.join("fields_0.csv")).unwrap();
        let wa = fs::read(dir.join("wages.csv")).unwrap();
        run_scenario(&cfg, &RunOptions::new(&dir)).unwrap();
        assert_eq!(a, fs::read(dir.join("fields_0.csv")).unwrap());
        assert_eq!(wa, fs::read(dir.join("wages.csv")).unwrap());
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn schema_mentions_every_section() {
        let s = config_schema();
        for key in ["grid", "firms", "params", "sweep", "solver", "zero_noise", "cobb_douglas", "ces"] {
            assert!(s.contains(key), "{key}");
        }
    }
}
