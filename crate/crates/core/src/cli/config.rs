//! Config resolution: defaults, then config-file values, then command-line
//! flags, then the RAQM_SEED environment override for the seed. The resolved
//! configuration is echoed into every summary artifact for provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde_json::json;

use crate::bellharness::Mode;
use crate::exactmath::{ExactMathError, PrimeModulus};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Chsh,
    Bell1964,
    MiReport,
    Audit,
    Triangle,
    ChshCert,
    Qubit,
    Singlet,
    Butterfly,
    Lorenz,
    Convergence,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Chsh => "chsh",
            CommandKind::Bell1964 => "bell1964",
            CommandKind::MiReport => "mi-report",
            CommandKind::Audit => "audit",
            CommandKind::Triangle => "triangle",
            CommandKind::ChshCert => "chsh-cert",
            CommandKind::Qubit => "qubit",
            CommandKind::Singlet => "singlet",
            CommandKind::Butterfly => "butterfly",
            CommandKind::Lorenz => "lorenz",
            CommandKind::Convergence => "convergence",
        }
    }
}

impl FromStr for CommandKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chsh" => Ok(CommandKind::Chsh),
            "bell1964" => Ok(CommandKind::Bell1964),
            "mi-report" => Ok(CommandKind::MiReport),
            "audit" => Ok(CommandKind::Audit),
            "triangle" => Ok(CommandKind::Triangle),
            "chsh-cert" => Ok(CommandKind::ChshCert),
            "qubit" => Ok(CommandKind::Qubit),
            "singlet" => Ok(CommandKind::Singlet),
            "butterfly" => Ok(CommandKind::Butterfly),
            "lorenz" => Ok(CommandKind::Lorenz),
            "convergence" => Ok(CommandKind::Convergence),
            other => Err(ConfigError(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Flat key=value config file; `#` starts a comment line.
pub fn parse_config_file(text: &str, path_for_errors: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    const KNOWN: [&str; 10] = [
        "seed", "p", "epsilon", "runs", "mode", "experiment", "angles", "out_csv", "out_json",
        "workers",
    ];
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!(
                "{path_for_errors}:{}: expected key=value, got {line:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        if !KNOWN.contains(&key) {
            return Err(ConfigError(format!(
                "{path_for_errors}:{}: unknown key {key:?}",
                lineno + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Raw option layers before resolution (file < flags).
#[derive(Debug, Default, Clone)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub p: Option<u64>,
    pub epsilon: Option<f64>,
    pub runs: Option<u64>,
    pub mode: Option<String>,
    pub angles: Option<Vec<f64>>,
    pub out_csv: Option<PathBuf>,
    pub out_json: Option<PathBuf>,
    pub workers: Option<usize>,
    pub experiment: Option<String>,
}

impl ConfigOverrides {
    pub fn from_file_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let parse_num = |key: &str, v: &str| -> Result<u64, ConfigError> {
            v.parse()
                .map_err(|_| ConfigError(format!("key {key}: expected an integer, got {v:?}")))
        };
        let mut o = Self::default();
        if let Some(v) = map.get("seed") {
            o.seed = Some(parse_num("seed", v)?);
        }
        if let Some(v) = map.get("p") {
            o.p = Some(parse_num("p", v)?);
        }
        if let Some(v) = map.get("runs") {
            o.runs = Some(parse_num("runs", v)?);
        }
        if let Some(v) = map.get("workers") {
            o.workers = Some(parse_num("workers", v)? as usize);
        }
        if let Some(v) = map.get("epsilon") {
            o.epsilon = Some(
                v.parse()
                    .map_err(|_| ConfigError(format!("key epsilon: expected a number, got {v:?}")))?,
            );
        }
        if let Some(v) = map.get("mode") {
            o.mode = Some(v.clone());
        }
        if let Some(v) = map.get("experiment") {
            o.experiment = Some(v.clone());
        }
        if let Some(v) = map.get("angles") {
            let angles: Result<Vec<f64>, _> = v.split(',').map(|t| t.trim().parse()).collect();
            o.angles = Some(angles.map_err(|_| {
                ConfigError(format!("key angles: expected comma-separated numbers, got {v:?}"))
            })?);
        }
        if let Some(v) = map.get("out_csv") {
            o.out_csv = Some(PathBuf::from(v));
        }
        if let Some(v) = map.get("out_json") {
            o.out_json = Some(PathBuf::from(v));
        }
        Ok(o)
    }

    /// Overlay `self` (higher precedence) onto `base`.
    fn over(self, base: Self) -> Self {
        Self {
            seed: self.seed.or(base.seed),
            p: self.p.or(base.p),
            epsilon: self.epsilon.or(base.epsilon),
            runs: self.runs.or(base.runs),
            mode: self.mode.or(base.mode),
            angles: self.angles.or(base.angles),
            out_csv: self.out_csv.or(base.out_csv),
            out_json: self.out_json.or(base.out_json),
            workers: self.workers.or(base.workers),
            experiment: self.experiment.or(base.experiment),
        }
    }
}

/// The fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub seed: u64,
    pub p: PrimeModulus,
    pub p_value: u64,
    pub epsilon: f64,
    pub runs: u64,
    pub mode: Mode,
    pub angles: Vec<f64>,
    pub out_csv: Option<PathBuf>,
    pub out_json: Option<PathBuf>,
    pub workers: usize,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_P: u64 = 10007;
pub const DEFAULT_RUNS: u64 = 100_000;

/// chsh angles are polariser-frame degrees; the measurement-plane direction
/// sits at twice the polariser angle.
pub const DEFAULT_CHSH_POLARISER_DEGREES: [f64; 4] = [0.0, 45.0, 22.5, 67.5];
/// bell1964 angles are measurement-plane degrees.
pub const DEFAULT_BELL1964_PLANE_DEGREES: [f64; 3] = [0.0, 45.0, 90.0];

/// Resolve one command's configuration: defaults < file < flags, with
/// RAQM_SEED (when set) overriding every seed source.
pub fn resolve(
    command: CommandKind,
    file: Option<ConfigOverrides>,
    flags: ConfigOverrides,
    env_seed: Option<&str>,
) -> Result<ExperimentConfig, ConfigError> {
    let merged = flags.over(file.unwrap_or_default());

    let seed = match env_seed {
        Some(raw) => raw.parse::<u64>().map_err(|_| {
            ConfigError(format!("RAQM_SEED: expected a 64-bit integer, got {raw:?}"))
        })?,
        None => merged.seed.unwrap_or(DEFAULT_SEED),
    };

    let p_value = merged.p.unwrap_or(DEFAULT_P);
    let p = PrimeModulus::from_u64(p_value).map_err(|e| match e {
        ExactMathError::NotPrime(_) => ConfigError(format!("p must be prime (got {p_value})")),
        other => ConfigError(other.to_string()),
    })?;

    let epsilon = merged.epsilon.unwrap_or(10.0 / p_value as f64);
    if !(epsilon > 0.0) {
        return Err(ConfigError(format!("epsilon must be positive (got {epsilon})")));
    }

    let runs = merged.runs.unwrap_or(DEFAULT_RUNS);
    if runs == 0 {
        return Err(ConfigError("runs must be >= 1".into()));
    }

    let mode = match merged.mode.as_deref() {
        None => Mode::Sampled,
        Some("exact") => Mode::Exact,
        Some("sampled") => Mode::Sampled,
        Some(other) => {
            return Err(ConfigError(format!(
                "mode must be \"exact\" or \"sampled\" (got {other:?})"
            )))
        }
    };

    let workers = merged.workers.unwrap_or(1);
    if workers == 0 {
        return Err(ConfigError("workers must be >= 1".into()));
    }

    let angles = match command {
        CommandKind::Bell1964 => {
            let a = merged
                .angles
                .unwrap_or_else(|| DEFAULT_BELL1964_PLANE_DEGREES.to_vec());
            if a.len() != 3 {
                return Err(ConfigError(format!(
                    "bell1964 needs exactly 3 angles, got {}",
                    a.len()
                )));
            }
            a
        }
        _ => {
            let a = merged
                .angles
                .unwrap_or_else(|| DEFAULT_CHSH_POLARISER_DEGREES.to_vec());
            if a.len() != 4 {
                return Err(ConfigError(format!(
                    "chsh-style experiments need exactly 4 angles, got {}",
                    a.len()
                )));
            }
            a
        }
    };

    Ok(ExperimentConfig {
        command,
        seed,
        p,
        p_value,
        epsilon,
        runs,
        mode,
        angles,
        out_csv: merged.out_csv,
        out_json: merged.out_json,
        workers,
    })
}

impl ExperimentConfig {
    /// The experiment-defining keys, embedded into artifacts. Execution
    /// machinery (worker count, output paths) is deliberately excluded so
    /// that identical experiments emit byte-identical files regardless of
    /// parallelism.
    pub fn provenance_json(&self) -> serde_json::Value {
        json!({
            "experiment": self.command.name(),
            "seed": self.seed,
            "p": self.p_value,
            "epsilon": crate::cli::emit::format_sig(self.epsilon, 12),
            "runs": self.runs,
            "mode": match self.mode { Mode::Exact => "exact", Mode::Sampled => "sampled" },
            "angles_degrees": self.angles.iter().map(|a| crate::cli::emit::format_sig(*a, 12)).collect::<Vec<_>>(),
        })
    }
}
