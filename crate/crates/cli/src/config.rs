//! Experiment configuration documents.
//!
//! Precedence, highest first: command-line flags, the configuration file,
//! built-in defaults.

use std::path::{Path, PathBuf};

use bikeshare::env::{DaySegmentation, Environment, RateProfile, Segment};
use bikeshare::meanfield::StepControl;
use bikeshare::qbd::{FixedPointOptions, Initialization};
use bikeshare::simulator::{SimConfig, SimMode};
use bikeshare::{AssemblyMode, ModelParams, Scale};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelSection>,
    pub environment: EnvSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub simulation: SimSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub capacity: u32,
    pub initial_bikes: u32,
    pub waiting_room: u32,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// Explicit generator, one row per phase.
    pub generator: Option<Vec<Vec<f64>>>,
    /// Cyclic environment built from a segmentation of the day.
    pub day: Option<DaySection>,
    /// Per-phase rental rates; override the day averages when both given.
    pub lambda: Option<Vec<f64>>,
    /// Per-phase ride-completion rates.
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaySection {
    /// Each segment is a list of `[start, end)` intervals in hours.
    pub segments: Vec<Vec<[f64; 2]>>,
    #[serde(default = "one")]
    pub time_scale: f64,
    pub rent: ProfileSpec,
    #[serde(rename = "return")]
    pub ret: ProfileSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    Constant { rate: f64 },
    PiecewiseConstant { points: Vec<[f64; 2]> },
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl ProfileSpec {
    fn build(&self) -> RateProfile {
        let pairs = |v: &[[f64; 2]]| v.iter().map(|p| (p[0], p[1])).collect();
        match self {
            Self::Constant { rate } => RateProfile::Constant(*rate),
            Self::PiecewiseConstant { points } => RateProfile::PiecewiseConstant(pairs(points)),
            Self::PiecewiseLinear { knots } => RateProfile::PiecewiseLinear(pairs(knots)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub mode: String,
    /// Finite station count for the rates; the mean-field limit when absent.
    pub stations: Option<u64>,
    pub damping: f64,
    pub adaptive: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub newton_fallback: bool,
    pub init: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = FixedPointOptions::default();
        Self {
            mode: AssemblyMode::Standard.as_str().into(),
            stations: None,
            damping: d.damping,
            adaptive: d.adaptive,
            tol: d.tol,
            max_iter: d.max_iter,
            newton_fallback: d.newton_fallback,
            init: "initial-bikes".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub t_end: f64,
    pub atol: f64,
    pub rtol: f64,
    pub sample_every: Option<f64>,
    /// Drift-norm threshold for steady-state detection.
    pub steady_tol: f64,
    pub steady_atol: f64,
    pub steady_rtol: f64,
    pub t_max: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let c = StepControl::default();
        let s = StepControl::steady_state();
        Self {
            t_end: 200.0,
            atol: c.atol,
            rtol: c.rtol,
            sample_every: Some(1.0),
            steady_tol: 1e-10,
            steady_atol: s.atol,
            steady_rtol: s.rtol,
            t_max: 1e4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub stations: usize,
    pub horizon: f64,
    pub seed: u64,
    pub mode: String,
    pub burn_in: f64,
    pub sample_every: Option<f64>,
    pub max_events: Option<u64>,
    pub check_conservation: bool,
    /// Station-group size for the independence check; off when absent.
    pub chaos_group: Option<usize>,
    pub bootstrap: usize,
    pub replications: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            stations: 1000,
            horizon: 20.0,
            seed: 1,
            mode: SimMode::Physical.as_str().into(),
            burn_in: 0.2,
            sample_every: Some(1.0),
            max_events: None,
            check_conservation: false,
            chaos_group: None,
            bootstrap: 200,
            replications: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Axes of the Cartesian product; the first axis varies slowest.
    pub axis: Vec<Axis>,
    /// Also compute the waiting-room efficiency ratio at every point.
    #[serde(default)]
    pub efficiency: bool,
    #[serde(default)]
    pub plot: Vec<PlotSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub file: String,
    pub x: String,
    pub y: String,
    pub series: Option<String>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
        }
    }
}

fn one() -> f64 {
    1.0
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// The resolved document, as echoed into output headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn environment(&self) -> Result<Environment, CliError> {
        let e = &self.environment;
        let env = match (&e.generator, &e.day) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either environment.generator or environment.day, not both".into(),
                ))
            }
            (Some(rows), None) => {
                let m = rows.len();
                if m == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(CliError::Config(
                        "environment.generator must be square".into(),
                    ));
                }
                let w = DMatrix::from_row_iterator(m, m, rows.iter().flatten().copied());
                let (Some(lambda), Some(mu)) = (&e.lambda, &e.mu) else {
                    return Err(CliError::Config(
                        "an explicit generator needs environment.lambda and environment.mu".into(),
                    ));
                };
                Environment::new(w, lambda.clone(), mu.clone())?
            }
            (None, Some(day)) => {
                let segments = day
                    .segments
                    .iter()
                    .map(|s| Segment::new(s.iter().map(|iv| (iv[0], iv[1])).collect()))
                    .collect();
                let seg = DaySegmentation::new(segments)?;
                let env = Environment::from_day(
                    &seg,
                    &day.rent.build(),
                    &day.ret.build(),
                    day.time_scale,
                )?;
                match (&e.lambda, &e.mu) {
                    (None, None) => env,
                    (l, m) => env.with_rates(
                        l.clone().unwrap_or_else(|| env.lambda().to_vec()),
                        m.clone().unwrap_or_else(|| env.mu().to_vec()),
                    )?,
                }
            }
            (None, None) => {
                return Err(CliError::Config(
                    "environment needs a generator or a day segmentation".into(),
                ))
            }
        };
        Ok(env)
    }

    pub fn model(&self) -> Result<ModelParams, CliError> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [model] section".into()))?;
        Ok(ModelParams::new(
            m.capacity,
            m.initial_bikes,
            m.waiting_room,
            m.alpha,
            m.beta,
            self.environment()?,
        )?)
    }

    pub fn assembly_mode(&self) -> Result<AssemblyMode, CliError> {
        self.solver
            .mode
            .parse()
            .map_err(|_| CliError::Config(format!("unknown assembly mode `{}`", self.solver.mode)))
    }

    pub fn scale(&self) -> Scale {
        match self.solver.stations {
            Some(n) => Scale::Finite(n),
            None => Scale::Limit,
        }
    }

    pub fn fixed_point_options(&self) -> Result<FixedPointOptions, CliError> {
        let s = &self.solver;
        let init = match s.init.as_str() {
            "initial-bikes" => Initialization::InitialBikes,
            "uniform" => Initialization::Uniform,
            other => return Err(CliError::Config(format!("unknown solver.init `{other}`"))),
        };
        Ok(FixedPointOptions {
            init,
            damping: s.damping,
            adaptive: s.adaptive,
            tol: s.tol,
            max_iter: s.max_iter,
            newton_fallback: s.newton_fallback,
        })
    }

    pub fn step_control(&self) -> StepControl {
        let i = &self.integrator;
        StepControl {
            atol: i.atol,
            rtol: i.rtol,
            sample_every: i.sample_every,
            ..StepControl::default()
        }
    }

    pub fn steady_control(&self) -> StepControl {
        let i = &self.integrator;
        StepControl {
            atol: i.steady_atol,
            rtol: i.steady_rtol,
            ..StepControl::default()
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let s = &self.simulation;
        let mode: SimMode = s
            .mode
            .parse()
            .map_err(|_| CliError::Config(format!("unknown simulation mode `{}`", s.mode)))?;
        let mut cfg = SimConfig::new(s.stations, s.horizon, s.seed);
        cfg.mode = mode;
        cfg.burn_in = s.burn_in;
        cfg.sample_every = s.sample_every;
        cfg.max_events = s.max_events;
        cfg.check_conservation = s.check_conservation;
        Ok(cfg)
    }
}

/// Set a named model parameter. Phase-indexed rates are `lambda1`, `mu2`, ...
/// (one-based).
pub fn set_param(p: &ModelParams, name: &str, value: f64) -> Result<ModelParams, CliError> {
    let mut q = p.clone();
    let as_count = |v: f64| -> Result<u32, CliError> {
        if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(CliError::Config(format!(
                "{name} needs a nonnegative integer, got {v}"
            )))
        }
    };
    match name {
        "capacity" => q.capacity = as_count(value)?,
        "initial_bikes" => q.initial_bikes = as_count(value)?,
        "waiting_room" => q.waiting_room = as_count(value)?,
        "alpha" => q.alpha = value,
        "beta" => q.beta = value,
        _ => {
            let (vec, idx) = if let Some(i) = name.strip_prefix("lambda") {
                (0, i)
            } else if let Some(i) = name.strip_prefix("mu") {
                (1, i)
            } else {
                return Err(CliError::Config(format!(
                    "unknown sweep parameter `{name}`"
                )));
            };
            let j: usize = idx
                .parse()
                .ok()
                .filter(|&j| j >= 1 && j <= p.phases())
                .ok_or_else(|| CliError::Config(format!("bad phase index in `{name}`")))?;
            let mut lambda = p.env.lambda().to_vec();
            let mut mu = p.env.mu().to_vec();
            if vec == 0 {
                lambda[j - 1] = value;
            } else {
                mu[j - 1] = value;
            }
            q.env = p.env.with_rates(lambda, mu)?;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMMON: &str = r#"
[model]
capacity = 20
initial_bikes = 10
waiting_room = 5
alpha = 0.5
beta = 0.5

[environment]
generator = [[-1.0, 1.0], [1.0, -1.0]]
lambda = [35.0, 50.0]
mu = [30.0, 20.0]
"#;

    #[test]
    fn parses_and_resolves() {
        let c = Config::parse(COMMON).unwrap();
        let p = c.model().unwrap();
        assert_eq!(p.dim(), 62);
        assert_eq!(c.assembly_mode().unwrap(), AssemblyMode::Standard);
        assert_eq!(c.scale(), Scale::Limit);
        // the echoed document parses back to the same model
        let again = Config::parse(&c.to_toml()).unwrap();
        assert_eq!(again.model().unwrap().env, p.env);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = format!("{COMMON}\n[solver]\ndampening = 0.3\n");
        assert!(Config::parse(&bad).is_err());
    }

    #[test]
    fn sweep_parameters() {
        let p = Config::parse(COMMON).unwrap().model().unwrap();
        let q = set_param(&p, "lambda1", 40.0).unwrap();
        assert_eq!(q.env.lambda(), &[40.0, 50.0]);
        let q = set_param(&q, "waiting_room", 3.0).unwrap();
        assert_eq!(q.waiting_room, 3);
        assert!(set_param(&p, "mu3", 1.0).is_err());
        assert!(set_param(&p, "waiting_room", 2.5).is_err());
        assert!(set_param(&p, "gamma", 1.0).is_err());
    }

    #[test]
    fn day_environment_with_override() {
        let text = r#"
[environment]
lambda = [0.0, 5.0]
[environment.day]
segments = [[[0.0, 6.0], [18.0, 24.0]], [[6.0, 18.0]]]
rent = { kind = "constant", rate = 3.0 }
return = { kind = "piecewise-constant", points = [[0.0, 1.0], [12.0, 2.0]] }
"#;
        let c = Config::parse(text).unwrap();
        let env = c.environment().unwrap();
        assert_eq!(env.lambda(), &[0.0, 5.0]);
        assert_eq!(env.mu(), &[1.5, 1.5]);
        assert!((env.stationary()[0] - 0.5).abs() < 1e-12);
    }
}
