//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fracld::coefficients::{BuiltinModel, Dims, Func};
use fracld::ldp_harness::{power_schedule, Functional, DEFAULT_EPS};
use fracld::multiscale_sim::{McGrid, SlowFastSpec};
use fracld::poisson_cell::{prepare_fast, Measure, PoissonSolution, DEFAULT_POINTS};
use fracld::rate_fn::{LimitDrift, DEFAULT_U2_BINS, DEGENERACY_TOL, MAX_CONDITION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: Dims,
    pub hurst: f64,
    pub eps: f64,
    pub eta: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub coefficients: Coefficients,
}

/// Coefficient entries; omitted coefficients are zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    #[serde(default)]
    pub b: Vec<Func>,
    #[serde(default)]
    pub c: Vec<Func>,
    #[serde(default)]
    pub sigma1: Vec<Func>,
    #[serde(default)]
    pub sigma2: Vec<Func>,
    #[serde(default)]
    pub f: Vec<Func>,
    #[serde(default)]
    pub g: Vec<Func>,
    #[serde(default)]
    pub tau: Vec<Func>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub substeps: Option<usize>,
}

fn default_n() -> usize {
    101
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: default_n(), horizon: default_horizon(), substeps: None }
    }
}

/// `(ε, η)` schedule: explicit pairs, or `η = ε^eta_power` over `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_power")]
    pub eta_power: f64,
    #[serde(default)]
    pub pairs: Option<Vec<(f64, f64)>>,
}

fn default_eps() -> Vec<f64> {
    DEFAULT_EPS.to_vec()
}

fn default_power() -> f64 {
    1.5
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { eps: default_eps(), eta_power: default_power(), pairs: None }
    }
}

impl ScheduleConfig {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.pairs.clone().unwrap_or_else(|| power_schedule(&self.eps, self.eta_power))
    }
}

/// Every numerical threshold the tool applies, in one place.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub centering: f64,
    pub degeneracy: f64,
    pub max_condition: f64,
    pub poisson_points: usize,
    pub u2_bins: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            centering: 1e-4,
            degeneracy: DEGENERACY_TOL,
            max_condition: MAX_CONDITION,
            poisson_points: DEFAULT_POINTS,
            u2_bins: DEFAULT_U2_BINS,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Grid path fed to the rate evaluators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathSpec {
    /// A CSV file written by this tool (`t,v0,...`), relative to the config.
    Csv { file: PathBuf },
    /// Solution of the limiting equation driven by `ψ(t) = Σ coeffs[j] t^j`
    /// in every fBm component.
    PsiPoly { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    SampleFbm {
        name: String,
        #[serde(default = "one")]
        paths: usize,
        #[serde(default = "one")]
        dim: usize,
    },
    Simulate {
        name: String,
        #[serde(default = "one")]
        trials: usize,
        #[serde(default)]
        save_paths: usize,
    },
    Poisson {
        name: String,
    },
    Rate {
        name: String,
        method: String,
        path: PathSpec,
        #[serde(default)]
        hurst: Option<f64>,
    },
    LimitStudy {
        name: String,
        hurst_list: Vec<f64>,
        path: PathSpec,
    },
    Laplace {
        name: String,
        functional: Functional,
        trials: usize,
    },
    RareEvent {
        name: String,
        threshold: f64,
        #[serde(default)]
        component: usize,
        trials: usize,
        #[serde(default = "default_pilot")]
        pilot_trials: usize,
    },
}

fn one() -> usize {
    1
}

fn default_pilot() -> usize {
    1000
}

impl Experiment {
    pub fn name(&self) -> &str {
        match self {
            Experiment::SampleFbm { name, .. }
            | Experiment::Simulate { name, .. }
            | Experiment::Poisson { name }
            | Experiment::Rate { name, .. }
            | Experiment::LimitStudy { name, .. }
            | Experiment::Laplace { name, .. }
            | Experiment::RareEvent { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::SampleFbm { .. } => "sample-fbm",
            Experiment::Simulate { .. } => "simulate",
            Experiment::Poisson { .. } => "poisson",
            Experiment::Rate { .. } => "rate",
            Experiment::LimitStudy { .. } => "limit-study",
            Experiment::Laplace { .. } => "laplace",
            Experiment::RareEvent { .. } => "rare-event",
        }
    }

    pub fn uses_schedule(&self) -> bool {
        matches!(self, Experiment::Laplace { .. } | Experiment::RareEvent { .. })
    }
}

/// A parsed configuration with its source text and location.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub text: String,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: Config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let names: Vec<&str> = config.experiments.iter().map(Experiment::name).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(['/', '\\']) || names[..i].contains(n) {
                return Err(CliError::Config(format!("experiment names must be unique plain file stems, got `{n}`")));
            }
        }
        Ok(Loaded { config, text, base })
    }

    /// SHA-256 of the configuration text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Everything derived from the `[model]` section.
pub struct Prepared {
    pub model: Arc<BuiltinModel>,
    pub spec: SlowFastSpec,
    pub measure: Measure,
    pub psol: Arc<PoissonSolution>,
}

impl Config {
    pub fn builtin_model(&self) -> CliResult<BuiltinModel> {
        let c = &self.model.coefficients;
        let m = BuiltinModel {
            dims: self.model.dims,
            b: c.b.clone(),
            c: c.c.clone(),
            sigma1: c.sigma1.clone(),
            sigma2: c.sigma2.clone(),
            f: c.f.clone(),
            g: c.g.clone(),
            tau: c.tau.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn y0(&self) -> Vec<f64> {
        self.model.y0.clone().unwrap_or_else(|| vec![0.0; self.model.dims.fast])
    }

    pub fn spec(&self, model: Arc<BuiltinModel>) -> CliResult<SlowFastSpec> {
        let m = &self.model;
        Ok(SlowFastSpec::new(model, m.hurst, m.eps, m.eta, m.x0.clone(), self.y0(), m.beta)?)
    }

    pub fn mc_grid(&self) -> CliResult<McGrid> {
        if self.grid.n < 3 || self.grid.horizon.is_nan() || self.grid.horizon <= 0.0 {
            return Err(CliError::Config("grid needs n >= 3 and a positive horizon".into()));
        }
        Ok(McGrid { n: self.grid.n, horizon: self.grid.horizon, substeps: self.grid.substeps })
    }

    pub fn prepare(&self) -> CliResult<Prepared> {
        let model = Arc::new(self.builtin_model()?);
        let spec = self.spec(model.clone())?;
        let (measure, psol) = prepare_fast(&model, self.tolerances.centering, self.tolerances.poisson_points)?;
        Ok(Prepared { model, spec, measure, psol: Arc::new(psol) })
    }
}

impl Prepared {
    pub fn drift(&self) -> CliResult<LimitDrift> {
        Ok(LimitDrift::from_model(self.model.clone(), self.measure.clone(), self.psol.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
seed = 7
[model]
dims = { slow = 1, fast = 1, fbm = 1, bm = 1 }
hurst = 0.7
eps = 0.01
eta = 0.001
x0 = [1.0]
[model.coefficients]
c = [{ kind = "linear", x = [-1.0], y = [1.0] }]
sigma1 = [{ kind = "constant", value = 0.5 }]
f = [{ kind = "linear", y = [-1.0] }]
tau = [{ kind = "constant", value = 1.4142135623730951 }]

[[experiments]]
kind = "simulate"
name = "homog"
trials = 4
"#;

    #[test]
    fn parses_and_prepares() {
        let c: Config = toml::from_str(OU).unwrap();
        assert_eq!(c.grid.n, 101);
        assert_eq!(c.schedule.pairs().len(), 4);
        let p = c.prepare().unwrap();
        assert!(p.psol.is_analytic());
        assert_eq!(c.experiments[0].kind(), "simulate");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = OU.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(toml::from_str::<Config>(&bad).is_err());
    }
}
