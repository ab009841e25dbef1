use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fracmle::fbm::{HurstVector, SamplerKind, TimeGrid};
use fracmle::inference::OptimizerConfig;
use fracmle::mcstudy::StudyConfig;
use fracmle::model::{builtin, ModelSpec, ParamBox, ProbeConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Replaces the model's parameter box.
    #[serde(default)]
    pub domain: Option<DomainSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    One(f64),
    Many(Vec<f64>),
}

impl EpsilonSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::One(e) => vec![*e],
            Self::Many(v) => v.clone(),
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub n_replicates: usize,
    #[serde(default = "one")]
    pub gamma_refine: usize,
    #[serde(default)]
    pub sampler: SamplerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub model: ModelSection,
    pub grid: TimeGrid,
    pub hurst: Vec<f64>,
    pub epsilon: EpsilonSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
}

/// A config that passed every schema rule, with the objects it describes.
#[derive(Debug, Clone)]
pub struct Validated {
    pub raw: CliConfig,
    pub model: ModelSpec,
    pub hurst: HurstVector,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub epsilons: Vec<f64>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("config field `{field}`: {msg}"))
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(self) -> Result<Validated, CliError> {
        let mut model = builtin(&self.model.name).map_err(|e| invalid("model.name", e))?;
        if let Some(dom) = &self.model.domain {
            let b = ParamBox::new(dom.lower.clone(), dom.upper.clone()).map_err(|e| invalid("model.domain", e))?;
            if b.dim() != model.m {
                return Err(invalid("model.domain", format!("dimension {} but model has m = {}", b.dim(), model.m)));
            }
            model.theta_domain = b;
        }
        model.check_theta(&self.model.theta0).map_err(|e| invalid("model.theta0", e))?;
        let x0 = self.model.x0.clone().unwrap_or_else(|| model.default_x0.clone());
        if x0.len() != model.d || x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("model.x0", format!("need {} finite entries", model.d)));
        }
        let hurst = HurstVector::new(self.hurst.clone()).map_err(|e| invalid("hurst", e))?;
        if hurst.len() != model.r {
            return Err(invalid("hurst", format!("{} entries but model `{}` has r = {}", hurst.len(), model.name, model.r)));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.n_coarse, self.grid.refine_level)
            .map_err(|e| invalid("grid", e))?;
        let epsilons = self.epsilon.values();
        if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(invalid("epsilon", format!("{epsilons:?} must be a non-empty subset of (0, 1]")));
        }
        self.optimizer.validate().map_err(|e| invalid("optimizer", e))?;
        if let Some(study) = &self.study {
            if study.n_replicates < 2 {
                return Err(invalid("study.n_replicates", "must be at least 2"));
            }
            if study.gamma_refine == 0 {
                return Err(invalid("study.gamma_refine", "must be at least 1"));
            }
        }
        Ok(Validated { raw: self, model, hurst, grid, x0, epsilons })
    }
}

impl Validated {
    pub fn single_epsilon(&self) -> Result<f64, CliError> {
        match self.epsilons.as_slice() {
            [e] => Ok(*e),
            _ => Err(invalid("epsilon", "this command needs a single value")),
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.raw.output.as_ref().map(|o| o.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn study_config(&self, seed: u64, output_dir: PathBuf) -> Result<StudyConfig, CliError> {
        let study = self.raw.study.as_ref().ok_or_else(|| invalid("study", "required by `mc`"))?;
        if self.raw.model.domain.is_some() {
            return Err(invalid("model.domain", "not supported by `mc`; studies use the built-in box"));
        }
        let cfg = StudyConfig {
            model: self.model.name.clone(),
            theta0: self.raw.model.theta0.clone(),
            hurst: self.hurst.values().to_vec(),
            epsilons: self.epsilons.clone(),
            n_replicates: study.n_replicates,
            grid: self.grid,
            x0: Some(self.x0.clone()),
            optimizer: self.raw.optimizer.clone(),
            seed,
            output_dir: Some(output_dir),
            gamma_refine: study.gamma_refine,
            sampler: study.sampler,
        };
        cfg.validate().map_err(|e| invalid("study", e))?;
        Ok(cfg)
    }
}
