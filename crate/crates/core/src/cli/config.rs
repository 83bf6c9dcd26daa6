use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dynamics::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Portrait,
    Simulate,
    Liouville,
    Recurrence,
    Volume,
    Invariance,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Portrait,
        Experiment::Simulate,
        Experiment::Liouville,
        Experiment::Recurrence,
        Experiment::Volume,
        Experiment::Invariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Portrait => "portrait",
            Experiment::Simulate => "simulate",
            Experiment::Liouville => "liouville",
            Experiment::Recurrence => "recurrence",
            Experiment::Volume => "volume",
            Experiment::Invariance => "invariance",
        }
    }

    pub fn uses_seed(self) -> bool {
        matches!(self, Experiment::Recurrence | Experiment::Volume | Experiment::Invariance)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKey {
    Harmonic,
    Pendulum,
    Damped,
    Rotation,
    Doubling,
    Contraction,
    CustomPolynomial,
}

impl SystemKey {
    pub const ALL: [SystemKey; 7] = [
        SystemKey::Harmonic,
        SystemKey::Pendulum,
        SystemKey::Damped,
        SystemKey::Rotation,
        SystemKey::Doubling,
        SystemKey::Contraction,
        SystemKey::CustomPolynomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKey::Harmonic => "harmonic",
            SystemKey::Pendulum => "pendulum",
            SystemKey::Damped => "damped",
            SystemKey::Rotation => "rotation",
            SystemKey::Doubling => "doubling",
            SystemKey::Contraction => "contraction",
            SystemKey::CustomPolynomial => "custom-polynomial",
        }
    }

    pub fn is_map(self) -> bool {
        matches!(self, SystemKey::Rotation | SystemKey::Doubling | SystemKey::Contraction)
    }

    /// Whether the system preserves Lebesgue measure (the recurrence and
    /// invariance checks expect opposite outcomes for the controls).
    pub fn preserves_volume(self) -> bool {
        !matches!(self, SystemKey::Damped | SystemKey::Contraction)
    }
}

impl fmt::Display for SystemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Experiment parameters. Every key is optional; defaults depend on the
/// experiment and system and are listed by `ergolab systems`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(rename = "g_over_L", skip_serializing_if = "Option::is_none")]
    pub g_over_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "E_levels", alias = "E-levels", skip_serializing_if = "Option::is_none")]
    pub energy_levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Parameters {
    /// Names of the keys that are set.
    pub fn present_keys(&self) -> BTreeSet<String> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub system: SystemKey,
    #[serde(default)]
    pub parameters: Parameters,
    /// Output path stem; files are `<stem>.csv`, `<stem>.svg`,
    /// `<stem>.manifest.json`.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub artifact_version: String,
    pub wall_time_seconds: f64,
    /// File name → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub check: Option<bool>,
    pub summary: serde_json::Value,
}

/// Parses a config document. A run manifest is accepted too, in which case
/// its echoed config is used.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    match serde_json::from_str::<ExperimentConfig>(text) {
        Ok(c) => Ok(c),
        Err(config_err) => match serde_json::from_str::<RunManifest>(text) {
            Ok(m) => Ok(m.config),
            Err(_) => Err(CliError::validation(format!("config: {config_err}"))),
        },
    }
}

/// One tunable of a builtin system.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: serde_json::Value,
    pub about: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemSpec {
    pub key: SystemKey,
    pub kind: &'static str,
    pub about: &'static str,
    pub parameters: Vec<ParamSpec>,
    pub experiments: Vec<Experiment>,
}

pub(crate) mod defaults {
    pub const M: f64 = 1.0;
    pub const OMEGA: f64 = 1.0;
    pub const G_OVER_L: f64 = 1.0;
    pub const GAMMA: f64 = 0.5;
    pub const CONTRACTION_FACTOR: f64 = 0.5;
    pub const COEFFICIENTS: [f64; 3] = [0.0, 0.0, 0.5];
    pub const DT: f64 = 1e-3;
    pub const FLOW_RECURRENCE_DT: f64 = 1e-2;
    pub const N_POINTS: usize = 500;
    pub const MAP_HORIZON: u64 = 1000;
    pub const DOUBLING_HORIZON: u64 = 10_000;
    pub const N_SAMPLES: u64 = 1_000_000;
    pub const GRID: usize = 10_000;
    pub const VOLUME_GRID: usize = 1000;
    pub const SET: [f64; 2] = [0.0, 0.1];
    pub const CONTRACTION_SET: [f64; 2] = [0.5, 1.0];
    pub const RADIUS: f64 = 0.1;
    pub const K_SIGMA: f64 = 4.0;
}

fn p(name: &'static str, default: impl Serialize, about: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        default: serde_json::to_value(default).unwrap_or(serde_json::Value::Null),
        about,
    }
}

/// The builtin systems with their physical parameters and defaults.
pub fn system_registry() -> Vec<SystemSpec> {
    use defaults::*;
    use Experiment::*;
    let golden = crate::dynamics::golden_mean();
    vec![
        SystemSpec {
            key: SystemKey::Harmonic,
            kind: "hamiltonian",
            about: "linear oscillator H = p^2/2m + m omega^2 q^2/2",
            parameters: vec![
                p("m", M, "mass"),
                p("omega", OMEGA, "angular frequency"),
                p("A", 1.0, "amplitude of the closed-form comparison solution (simulate)"),
                p("delta", 0.0, "time shift of the closed-form comparison solution (simulate)"),
                p("E_levels", [0.5, 1.0, 2.0], "energy levels (portrait, volume)"),
            ],
            experiments: vec![Portrait, Simulate, Liouville, Recurrence, Volume],
        },
        SystemSpec {
            key: SystemKey::Pendulum,
            kind: "hamiltonian",
            about: "normalized pendulum H = p^2/2 + (g/L)(1 - cos theta)",
            parameters: vec![
                p("g_over_L", G_OVER_L, "gravity over length"),
                p("E_levels", [1.0, 2.0, 3.0], "energy levels (portrait, volume)"),
            ],
            experiments: vec![Portrait, Simulate, Liouville, Recurrence, Volume],
        },
        SystemSpec {
            key: SystemKey::Damped,
            kind: "vector-field",
            about: "damped oscillator (q, p)' = (p, -q - gamma p), divergence -gamma",
            parameters: vec![p("gamma", GAMMA, "damping rate")],
            experiments: vec![Simulate, Liouville, Recurrence],
        },
        SystemSpec {
            key: SystemKey::Rotation,
            kind: "map",
            about: "circle rotation x -> x + alpha mod 1",
            parameters: vec![
                p("alpha", golden, "rotation number (default: golden mean)"),
                p("set", SET, "target interval [lo, hi)"),
            ],
            experiments: vec![Recurrence, Invariance],
        },
        SystemSpec {
            key: SystemKey::Doubling,
            kind: "map",
            about: "doubling map x -> 2x mod 1 (recurrence uses exact binary digits)",
            parameters: vec![p("set", SET, "target interval [lo, hi)")],
            experiments: vec![Recurrence, Invariance],
        },
        SystemSpec {
            key: SystemKey::Contraction,
            kind: "map",
            about: "non-invariant control x -> x/2",
            parameters: vec![p("set", CONTRACTION_SET, "target interval [lo, hi)")],
            experiments: vec![Recurrence, Invariance],
        },
        SystemSpec {
            key: SystemKey::CustomPolynomial,
            kind: "hamiltonian",
            about: "H = p^2/2 + sum_k c_k q^k",
            parameters: vec![
                p("coefficients", COEFFICIENTS, "c_0, c_1, ... of the potential"),
                p("E_levels", [0.5, 1.0, 2.0], "energy levels (portrait)"),
            ],
            experiments: vec![Portrait, Simulate, Liouville],
        },
    ]
}

/// Experiment-level keys shared by systems.
pub fn experiment_keys() -> Vec<(Experiment, Vec<ParamSpec>)> {
    use defaults::*;
    vec![
        (
            Experiment::Portrait,
            vec![
                p("dt", DT, "step"),
                p("t_final", serde_json::Value::Null, "horizon (default: one period for harmonic, 20 otherwise)"),
                p("scheme", "leapfrog", "rk4 | symplectic_euler | leapfrog"),
                p("tolerance", 1e-4, "level-set residual bound for --check"),
            ],
        ),
        (
            Experiment::Simulate,
            vec![
                p("q0", serde_json::Value::Null, "initial position (default 1, pendulum 0)"),
                p("p0", serde_json::Value::Null, "initial momentum (default 0, pendulum sqrt 2)"),
                p("dt", DT, "step"),
                p("t_final", 10.0, "horizon"),
                p("scheme", "rk4", "rk4 | symplectic_euler | leapfrog"),
                p("tolerance", 1e-5, "energy drift bound for --check"),
            ],
        ),
        (
            Experiment::Liouville,
            vec![
                p("q0", 1.0, "initial position"),
                p("p0", 0.0, "initial momentum"),
                p("dt", DT, "step"),
                p("t_final", 2.0, "single evaluation time"),
                p("times", serde_json::Value::Null, "list of evaluation times (instead of t_final)"),
                p("tolerance", 1e-5, "bound on |det - reference| for --check"),
            ],
        ),
        (
            Experiment::Recurrence,
            vec![
                p("n_points", N_POINTS, "start points sampled in the set"),
                p("horizon", MAP_HORIZON, "iterates per orbit (maps; doubling default 10000)"),
                p("t_final", serde_json::Value::Null, "flow horizon (default: three periods, 50 for pendulum)"),
                p("dt", FLOW_RECURRENCE_DT, "flow step"),
                p("q0", serde_json::Value::Null, "flow set center position (default 1, pendulum 0)"),
                p("p0", serde_json::Value::Null, "flow set center momentum (default 0, pendulum sqrt 2)"),
                p("radius", RADIUS, "flow set radius"),
                p("seed", 0, "sampling seed"),
            ],
        ),
        (
            Experiment::Volume,
            vec![
                p("n_samples", N_SAMPLES, "Monte Carlo samples per level"),
                p("grid", VOLUME_GRID, "midpoint grid cells per axis"),
                p("seed", 0, "sampling seed"),
                p("tolerance", K_SIGMA, "standard errors allowed for --check"),
            ],
        ),
        (
            Experiment::Invariance,
            vec![
                p("n_samples", N_SAMPLES, "Monte Carlo samples"),
                p("grid", GRID, "preimage grid cells per axis"),
                p("seed", 0, "sampling seed"),
                p("tolerance", K_SIGMA, "k in the k-sigma pass rule"),
            ],
        ),
    ]
}
