//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcaError};
use crate::nn::{Activation, LayerSpec};
use crate::pgpe::PgpeConfig;
use crate::tasks::{DatasetId, GaussianComponent, MixedGaussian, CLASS_COUNT};
use crate::tdca::{classifier_specs, BottomUp, CreditMode, ExpansionRule, Granularity, HiddenGate, TdcaSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Default output directory when `--out` is not given.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub task: TaskConfig,
    #[serde(default)]
    pub bp: BpConfig,
    #[serde(default)]
    pub tdca: TdcaConfig,
    #[serde(default)]
    pub pgpe: PgpeConfig,
    #[serde(default)]
    pub transfer: Option<TransferConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub flops: Option<FlopsConfig>,
    #[serde(default)]
    pub landscape: Option<LandscapeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskConfig {
    Classification(ClassificationConfig),
    Gaussian(GaussianConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationConfig {
    pub dataset: DatasetId,
    pub train_size: usize,
    /// Test examples used for reporting; absent means the whole test split.
    #[serde(default)]
    pub test_size: Option<usize>,
    pub steps: usize,
    /// Hidden layers as `width:activation`, comma separated.
    #[serde(default = "default_hidden")]
    pub hidden: String,
    #[serde(default)]
    pub subsample_seed: u64,
}

fn default_hidden() -> String {
    "100:tanh".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    #[serde(default)]
    pub components: Option<Vec<GaussianComponent>>,
    pub steps: usize,
    pub trap_start: [f64; 2],
    #[serde(default)]
    pub random_starts: usize,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default = "default_gaussian_lr")]
    pub bp_lr: f64,
    #[serde(default = "default_field_points")]
    pub field_points: usize,
}

fn default_domain() -> [f64; 2] {
    [-6.0, 6.0]
}

fn default_gaussian_lr() -> f64 {
    0.1
}

fn default_field_points() -> usize {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub lr: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self { lr: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdcaConfig {
    pub granularity: String,
    pub mode: CreditMode,
    pub rule: ExpansionRule,
    pub gate: HiddenGate,
    pub credit_scale: f64,
    pub output_scale: Option<f64>,
    pub hidden_width: usize,
    /// Seed of the credit net's initial hidden layer.
    pub init_seed: u64,
    /// Evolved credit net used by `compare`, `landscape` and `field`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TdcaConfig {
    fn default() -> Self {
        let s = TdcaSettings::default();
        Self {
            granularity: s.granularity.to_string(),
            mode: s.mode,
            rule: s.rule,
            gate: s.gate,
            credit_scale: s.credit_scale,
            output_scale: s.output_scale,
            hidden_width: s.hidden_width,
            init_seed: 0,
            checkpoint: None,
        }
    }
}

impl TdcaConfig {
    pub fn settings(&self) -> Result<TdcaSettings> {
        self.settings_with(&self.granularity)
    }

    pub fn settings_with(&self, granularity: &str) -> Result<TdcaSettings> {
        let granularity: Granularity = granularity.parse()?;
        Ok(TdcaSettings {
            granularity,
            mode: self.mode,
            rule: self.rule,
            gate: self.gate,
            credit_scale: self.credit_scale,
            output_scale: self.output_scale,
            hidden_width: self.hidden_width,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Datasets every credit net is applied to.
    pub apply_to: Vec<DatasetId>,
    pub rows: Vec<TransferRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRow {
    pub label: String,
    /// Datasets whose mean fitness drives evolution.
    pub evolve_on: Vec<DatasetId>,
    /// Use this credit net instead of evolving one.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub settings: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub label: String,
    pub granularity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConfig {
    pub batch_size: usize,
    /// Credit modes counted for TDCA; empty means `tdca.mode` only.
    #[serde(default)]
    pub modes: Vec<CreditMode>,
    pub networks: Vec<FlopNetwork>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopNetwork {
    pub name: String,
    /// Full architecture, e.g. `784:100:tanh 100:10:softmax`.
    pub architecture: String,
    /// Credit granularities counted for TDCA; BP is always included.
    #[serde(default)]
    pub granularities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub rows: usize,
    pub cols: usize,
    /// Grid padding as a fraction of the projected trajectory extent.
    pub margin: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            rows: 21,
            cols: 21,
            margin: 0.25,
        }
    }
}

pub fn parse_hidden(s: &str) -> Result<Vec<(usize, Activation)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (w, a) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| TdcaError::Config(format!("hidden layer `{part}` is not width:activation")))?;
            let width: usize = w
                .trim()
                .parse()
                .map_err(|_| TdcaError::Config(format!("bad hidden width `{w}`")))?;
            if width == 0 {
                return Err(TdcaError::Config("hidden layers need at least one unit".into()));
            }
            Ok((width, a.trim().parse()?))
        })
        .collect()
}

impl ClassificationConfig {
    pub fn hidden_layers(&self) -> Result<Vec<(usize, Activation)>> {
        parse_hidden(&self.hidden)
    }

    pub fn specs_for(&self, dataset: DatasetId) -> Result<Vec<LayerSpec>> {
        Ok(classifier_specs(dataset.input_dim(), &self.hidden_layers()?, CLASS_COUNT))
    }
}

impl GaussianConfig {
    pub fn function(&self) -> Result<MixedGaussian> {
        match &self.components {
            Some(c) => MixedGaussian::new(c.clone()),
            None => Ok(MixedGaussian::default()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| TdcaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TdcaError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            TdcaError::Config(msg) => TdcaError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical serialization, used for manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(TdcaError::Config("at least one seed is required".into()));
        }
        self.pgpe.validate()?;
        if !(self.bp.lr > 0.0) {
            return Err(TdcaError::Config("bp.lr must be positive".into()));
        }
        self.tdca.settings()?;
        match &self.task {
            TaskConfig::Classification(c) => {
                if c.steps == 0 {
                    return Err(TdcaError::Config("task.steps must be at least 1".into()));
                }
                if c.train_size == 0 {
                    return Err(TdcaError::Config("task.train_size must be at least 1".into()));
                }
                if c.test_size == Some(0) {
                    return Err(TdcaError::Config("task.test_size must be at least 1".into()));
                }
                let specs = c.specs_for(c.dataset)?;
                TdcaSettings::validate_for(&self.tdca.settings()?, &BottomUp::Classifier(specs.clone()))?;
                if let Some(sweep) = &self.sweep {
                    if sweep.settings.is_empty() {
                        return Err(TdcaError::Config("sweep needs at least one setting".into()));
                    }
                    for s in &sweep.settings {
                        let settings = self.tdca.settings_with(&s.granularity)?;
                        TdcaSettings::validate_for(&settings, &BottomUp::Classifier(specs.clone()))?;
                    }
                }
                if let Some(t) = &self.transfer {
                    if t.apply_to.is_empty() || t.rows.is_empty() {
                        return Err(TdcaError::Config("transfer needs targets and rows".into()));
                    }
                    if t.rows.iter().any(|r| r.evolve_on.is_empty() && r.checkpoint.is_none()) {
                        return Err(TdcaError::Config(
                            "every transfer row needs evolve_on datasets or a checkpoint".into(),
                        ));
                    }
                }
            }
            TaskConfig::Gaussian(g) => {
                if g.steps == 0 {
                    return Err(TdcaError::Config("task.steps must be at least 1".into()));
                }
                if !(g.domain[0] < g.domain[1]) {
                    return Err(TdcaError::Config("task.domain must be increasing".into()));
                }
                if g.field_points == 0 {
                    return Err(TdcaError::Config("task.field_points must be at least 1".into()));
                }
                g.function()?;
                self.tdca.settings()?.validate_for(&BottomUp::Point(2))?;
            }
        }
        if let Some(f) = &self.flops {
            if f.batch_size == 0 || f.networks.is_empty() {
                return Err(TdcaError::Config("flops needs a batch size and networks".into()));
            }
            for n in &f.networks {
                let specs = crate::nn::parse_specs(&n.architecture)?;
                for g in &n.granularities {
                    self.tdca.settings_with(g)?.validate_for(&BottomUp::Classifier(specs.clone()))?;
                }
            }
        }
        if let Some(l) = &self.landscape {
            if l.rows == 0 || l.cols == 0 || !(l.margin >= 0.0) {
                return Err(TdcaError::Config("landscape grid is empty or margin negative".into()));
            }
        }
        Ok(())
    }
}
