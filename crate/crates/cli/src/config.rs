//! Problem configuration: the JSON schema, flag overrides, and conversion to
//! a [`ProblemSpec`].

use std::path::{Path, PathBuf};

use hessquot_core::expr::{parse, Expr, ParseError};
use hessquot_core::grid::{Grid, GridError, GridFunction};
use hessquot_core::solver::{HomotopyParams, NewtonParams, ProblemSpec, Psi};
use hessquot_core::verify::{self, VerifyError};
use hessquot_core::{AlgebraError, QuotientSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Manufactured,
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomotopyConfig {
    pub dt: Option<f64>,
    pub dt_min: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutConfig {
    pub grid: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// On-disk configuration, `"version": 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub domain: Option<Domain>,
    pub psi: Option<String>,
    pub phi: Option<String>,
    pub subsolution: Option<String>,
    /// Exact solution for `manufactured` mode.
    pub ustar: Option<String>,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub homotopy: HomotopyConfig,
    #[serde(default)]
    pub out: OutConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub quiet: bool,
}

fn default_mode() -> Mode {
    Mode::Solve
}

fn default_tau() -> f64 {
    1.0
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub t_step: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported config version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("missing field '{0}' (required in {1} mode)")]
    Missing(&'static str, &'static str),
    #[error("{field}: {source}")]
    Parse { field: &'static str, source: ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] AlgebraError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Manufactured(#[from] VerifyError),
}

impl ConfigError {
    /// Byte offset into the offending expression, for parse errors.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ConfigError::Parse { source, .. } => Some(source.offset()),
            _ => None,
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::Parse { field, .. } | ConfigError::Missing(field, _) => Some(field),
            _ => None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        if cfg.version != SCHEMA_VERSION {
            return Err(ConfigError::Version(cfg.version));
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(dir) = &o.out {
            self.out.grid = Some(dir.join("solution.csv"));
            self.out.report = Some(dir.join("report.json"));
        }
        if let (Some(r), Some(d)) = (o.resolution, self.domain.as_mut()) {
            d.resolution = r;
        }
        if let Some(dt) = o.t_step {
            self.homotopy.dt = Some(dt);
        }
        if let Some(tol) = o.tol {
            self.newton.tol = Some(tol);
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.quiet |= o.quiet;
    }

    pub fn quotient_spec(&self) -> Result<QuotientSpec, ConfigError> {
        Ok(QuotientSpec::new(self.n, self.k, self.l, self.tau)?)
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Solve => "solve",
            Mode::Manufactured => "manufactured",
            Mode::Selftest => "selftest",
        }
    }

    fn expr(&self, field: &'static str, text: &Option<String>) -> Result<Expr, ConfigError> {
        let text = text.as_deref().ok_or(ConfigError::Missing(field, self.mode_name()))?;
        parse(text, self.n).map_err(|source| ConfigError::Parse { field, source })
    }

    fn grid(&self) -> Result<Grid, ConfigError> {
        let d = self.domain.as_ref().ok_or(ConfigError::Missing("domain", self.mode_name()))?;
        if d.lo.len() != self.n || d.hi.len() != self.n {
            return Err(ConfigError::Invalid(format!(
                "domain.lo and domain.hi need {} entries, got {} and {}",
                self.n,
                d.lo.len(),
                d.hi.len()
            )));
        }
        Ok(Grid::new(d.lo.clone(), d.hi.clone(), d.resolution)?)
    }

    fn params(&self) -> (NewtonParams, HomotopyParams) {
        let mut newton = NewtonParams::default();
        let mut homotopy = HomotopyParams::default();
        if let Some(t) = self.newton.tol {
            newton.tol_residual = t;
        }
        if let Some(m) = self.newton.max_iters {
            newton.max_iters = m;
        }
        if let Some(dt) = self.homotopy.dt {
            homotopy.dt_init = dt;
            homotopy.dt_max = homotopy.dt_max.max(dt);
        }
        if let Some(dt_min) = self.homotopy.dt_min {
            homotopy.dt_min = dt_min;
        }
        (newton, homotopy)
    }

    /// The problem to solve and, in manufactured mode, the exact solution.
    pub fn problem(&self) -> Result<(ProblemSpec, Option<GridFunction>), ConfigError> {
        let spec = self.quotient_spec()?;
        let grid = self.grid()?;
        let (newton, homotopy) = self.params();
        match self.mode {
            Mode::Solve => {
                let psi = self.expr("psi", &self.psi)?;
                let phi = self.expr("phi", &self.phi)?;
                let subsolution = self.expr("subsolution", &self.subsolution)?;
                let psi = Psi::from_expr(psi, self.n);
                Ok((ProblemSpec { grid, spec, psi, phi, subsolution, newton, homotopy }, None))
            }
            Mode::Manufactured => {
                let ustar = self.expr("ustar", &self.ustar)?;
                let (mut prob, exact) = verify::manufactured_problem(&ustar, &grid, spec)?;
                if self.subsolution.is_some() {
                    prob.subsolution = self.expr("subsolution", &self.subsolution)?;
                }
                prob.newton = newton;
                prob.homotopy = homotopy;
                Ok((prob, Some(exact)))
            }
            Mode::Selftest => Err(ConfigError::Invalid("selftest mode has no problem".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "version": 1, "n": 2, "k": 2, "l": 0,
        "domain": {"lo": [0, 0], "hi": [1, 1], "resolution": 9},
        "psi": "1", "phi": "0.5*(x1^2 + x2^2)", "subsolution": "0.5*(x1^2 + x2^2)"
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = Config::from_json(BASE).unwrap();
        assert_eq!(cfg.mode, Mode::Solve);
        assert_eq!(cfg.tau, 1.0);
        let (prob, exact) = cfg.problem().unwrap();
        assert!(exact.is_none());
        assert_eq!(prob.grid.res(), 9);
        assert_eq!(prob.newton, NewtonParams::default());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = Config::from_json(BASE).unwrap();
        cfg.apply(&Overrides {
            resolution: Some(17),
            tol: Some(1e-7),
            t_step: Some(0.5),
            out: Some("o".into()),
            ..Default::default()
        });
        let (prob, _) = cfg.problem().unwrap();
        assert_eq!(prob.grid.res(), 17);
        assert_eq!(prob.newton.tol_residual, 1e-7);
        assert_eq!(prob.homotopy.dt_init, 0.5);
        assert_eq!(cfg.out.grid.as_deref(), Some(Path::new("o/solution.csv")));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::from_json("{"), Err(ConfigError::Json(_))));
        let v2 = BASE.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Config::from_json(&v2), Err(ConfigError::Version(2))));
        let extra = BASE.replace("\"n\": 2", "\"n\": 2, \"bogus\": 1");
        assert!(matches!(Config::from_json(&extra), Err(ConfigError::Json(_))));

        let bad_psi = BASE.replace("\"psi\": \"1\"", "\"psi\": \"1 + * u\"");
        let err = Config::from_json(&bad_psi).unwrap().problem().unwrap_err();
        assert_eq!(err.offset(), Some(4));
        assert_eq!(err.field(), Some("psi"));

        let no_phi = BASE.replace("\"phi\": \"0.5*(x1^2 + x2^2)\",", "");
        let err = Config::from_json(&no_phi).unwrap().problem().unwrap_err();
        assert!(matches!(err, ConfigError::Missing("phi", _)));
    }
}
