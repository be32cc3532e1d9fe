//! Experiment configuration: per-kind defaults, TOML file values, and CLI
//! flag overrides, resolved in that order so a flag always wins.

use std::path::PathBuf;

use serde::Deserialize;

use crate::CliError;

/// Experiment kinds, one per subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Sample,
    Lift,
    Solve,
    Convergence,
    Averaging,
    Malliavin,
    Uniqueness,
    Spaces,
}

impl Kind {
    /// Subcommand name, echoed in reports.
    pub fn name(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Lift => "lift",
            Kind::Solve => "solve",
            Kind::Convergence => "convergence",
            Kind::Averaging => "averaging",
            Kind::Malliavin => "malliavin",
            Kind::Uniqueness => "uniqueness",
            Kind::Spaces => "spaces",
        }
    }
}

/// Optional values as they appear in a TOML config file. Unknown keys are
/// rejected so a typo cannot silently fall back to a default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub hurst: Option<f64>,
    pub degree: Option<usize>,
    pub grid: Option<usize>,
    pub refinement: Option<usize>,
    pub samples: Option<usize>,
    pub sigma: Option<String>,
    pub drift: Option<String>,
    pub kappa: Option<f64>,
    pub out: Option<String>,
}

/// Flag values collected from the command line; same shape as the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub hurst: Option<f64>,
    pub degree: Option<usize>,
    pub grid: Option<usize>,
    pub refinement: Option<usize>,
    pub samples: Option<usize>,
    pub sigma: Option<String>,
    pub drift: Option<String>,
    pub kappa: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved experiment configuration; every field has a value.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub hurst: f64,
    pub degree: usize,
    pub grid: usize,
    pub refinement: usize,
    pub samples: usize,
    pub sigma: String,
    pub drift: String,
    pub kappa: f64,
    pub out: PathBuf,
}

/// Per-kind defaults for the fields a kind actually consumes; the others
/// keep harmless global defaults so the config echo is always complete.
fn default_grid(kind: Kind) -> usize {
    match kind {
        Kind::Sample => 512,
        Kind::Lift => 128,
        Kind::Solve => 256,
        Kind::Convergence => 512,
        Kind::Averaging => 65536,
        Kind::Malliavin => 256,
        Kind::Uniqueness => 256,
        Kind::Spaces => 512,
    }
}

fn default_samples(kind: Kind) -> usize {
    match kind {
        Kind::Sample => 2000,
        Kind::Averaging => 1000,
        Kind::Malliavin => 2000,
        Kind::Uniqueness => 50,
        _ => 1,
    }
}

fn default_sigma(kind: Kind) -> &'static str {
    match kind {
        Kind::Averaging | Kind::Uniqueness => "identity",
        _ => "elliptic",
    }
}

fn default_drift(kind: Kind) -> &'static str {
    match kind {
        Kind::Uniqueness | Kind::Spaces => "weierstrass",
        _ => "smooth",
    }
}

/// Resolves the final configuration: defaults, then file values, then flags.
/// The seed has no default; it must come from the file or the flag.
pub fn resolve(
    kind: Kind,
    file: Option<ConfigFile>,
    flags: Overrides,
) -> Result<ExperimentConfig, CliError> {
    let file = file.unwrap_or_default();
    let seed = flags
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Usage("a seed is required (--seed or `seed` in the config file)".into()))?;
    let cfg = ExperimentConfig {
        kind,
        seed,
        hurst: flags.hurst.or(file.hurst).unwrap_or(0.4),
        degree: flags.degree.or(file.degree).unwrap_or(2),
        grid: flags.grid.or(file.grid).unwrap_or_else(|| default_grid(kind)),
        refinement: flags.refinement.or(file.refinement).unwrap_or(1),
        samples: flags.samples.or(file.samples).unwrap_or_else(|| default_samples(kind)),
        sigma: flags.sigma.or(file.sigma).unwrap_or_else(|| default_sigma(kind).into()),
        drift: flags.drift.or(file.drift).unwrap_or_else(|| default_drift(kind).into()),
        kappa: flags.kappa.or(file.kappa).unwrap_or(0.5),
        out: flags
            .out
            .or(file.out.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("artifacts")),
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Documented ranges; violations are usage errors.
fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if !(cfg.hurst > 0.05 && cfg.hurst < 0.95) {
        return Err(CliError::Usage(format!(
            "hurst must lie in (0.05, 0.95), got {}",
            cfg.hurst
        )));
    }
    if !(1..=3).contains(&cfg.degree) {
        return Err(CliError::Usage(format!("degree must be 1, 2, or 3, got {}", cfg.degree)));
    }
    if !cfg.grid.is_power_of_two() || !(8..=1 << 20).contains(&cfg.grid) {
        return Err(CliError::Usage(format!(
            "grid must be a power of two in [8, 2^20], got {}",
            cfg.grid
        )));
    }
    if cfg.refinement == 0 || cfg.grid % cfg.refinement != 0 {
        return Err(CliError::Usage(format!(
            "refinement must be >= 1 and divide the grid, got {}",
            cfg.refinement
        )));
    }
    if !(1..=1_000_000).contains(&cfg.samples) {
        return Err(CliError::Usage(format!(
            "samples must lie in [1, 10^6], got {}",
            cfg.samples
        )));
    }
    if !(cfg.kappa > 0.0 && cfg.kappa <= 10.0) {
        return Err(CliError::Usage(format!("kappa must lie in (0, 10], got {}", cfg.kappa)));
    }
    if !["identity", "elliptic"].contains(&cfg.sigma.as_str()) {
        return Err(CliError::Usage(format!(
            "sigma must be `identity` or `elliptic`, got `{}`",
            cfg.sigma
        )));
    }
    if !["constant", "smooth", "weierstrass", "lp-block"].contains(&cfg.drift.as_str()) {
        return Err(CliError::Usage(format!(
            "drift must be one of constant, smooth, weierstrass, lp-block, got `{}`",
            cfg.drift
        )));
    }
    Ok(())
}

/// Loads and parses the TOML config file; parse failures are usage errors.
pub fn load_file(path: &std::path::Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("cannot parse config {}: {e}", path.display())))
}
