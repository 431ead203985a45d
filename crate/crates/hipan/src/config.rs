//! Run configuration: TOML file, overridden by flags and `HIPAN_` variables.

use std::path::{Path, PathBuf};

use hipan_core::metrics::{DiagnosticsOptions, TriangleOptions};
use hipan_core::model::{ModelConfig, DEFAULT_LEAK, DEFAULT_TEMPERATURE};
use hipan_core::vapo::{AdamConfig, GistConfig, Optimizer, Phase, TrainPlan};
use hipan_core::CodecParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_error, usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gist,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Curriculum {
    /// 8 / 4 / 100 epochs.
    Standard,
    /// 20 / 20 / 20 epochs at 1e-3.
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub output: OutputSection,
    pub codec: CodecSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub plan: PlanSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub tree: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub p: Option<u32>,
    pub heads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub leak: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub eps: f64,
    pub warmup_lr: f64,
    pub step_decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub curriculum: Curriculum,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// Replaces the curriculum when present.
    pub phases: Option<Vec<Phase>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub spearman_pairs: usize,
    pub ece_bins: usize,
    pub triangle_exhaustive_limit: usize,
    pub triangle_samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("hipan-run"),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            leak: DEFAULT_LEAK,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            kind: OptimizerKind::Gist,
            patience: GistConfig::default().patience,
            beta1: a.beta1,
            beta2: a.beta2,
            lr: a.lr,
            eps: a.eps,
            warmup_lr: a.warmup_lr,
            step_decay: a.step_decay,
        }
    }
}

impl Default for PlanSection {
    fn default() -> Self {
        let plan = TrainPlan::standard(0);
        Self {
            curriculum: Curriculum::Standard,
            batch_size: plan.batch_size,
            checkpoint_every: plan.checkpoint_every,
            phases: None,
        }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        let d = DiagnosticsOptions::default();
        Self {
            spearman_pairs: d.spearman_pairs,
            ece_bins: d.ece_bins,
            triangle_exhaustive_limit: d.triangle.exhaustive_limit,
            triangle_samples: d.triangle.samples,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, codec: CodecParams) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::new(codec);
        if let Some(h) = self.codec.heads {
            cfg.heads = h;
        }
        cfg.leak = self.model.leak;
        cfg.temperature = self.model.temperature;
        for w in cfg.validate().map_err(usage)? {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }

    pub fn optimizer(&self) -> CliResult<Optimizer> {
        let o = &self.optimizer;
        let opt = match o.kind {
            OptimizerKind::Gist => Optimizer::Gist(GistConfig {
                patience: o.patience,
            }),
            OptimizerKind::Adam => Optimizer::Adam(AdamConfig {
                beta1: o.beta1,
                beta2: o.beta2,
                lr: o.lr,
                eps: o.eps,
                warmup_lr: o.warmup_lr,
                step_decay: o.step_decay,
            }),
        };
        opt.validate().map_err(usage)?;
        Ok(opt)
    }

    /// Curriculum with the warm-up and fine-tune rates taken from the
    /// optimizer section.
    pub fn plan(&self) -> CliResult<TrainPlan> {
        let mut plan = match self.plan.curriculum {
            Curriculum::Standard => {
                let mut p = TrainPlan::standard(self.seed);
                p.phases[0].lr = self.optimizer.warmup_lr;
                p.phases[1].lr = self.optimizer.warmup_lr;
                p.phases[2].lr = self.optimizer.lr;
                p
            }
            Curriculum::Short => TrainPlan::short(self.seed),
        };
        if let Some(phases) = &self.plan.phases {
            plan.phases = phases.clone();
        }
        plan.batch_size = self.plan.batch_size;
        plan.checkpoint_every = self.plan.checkpoint_every;
        plan.validate().map_err(usage)?;
        Ok(plan)
    }

    pub fn diagnostics(&self) -> CliResult<DiagnosticsOptions> {
        if self.metrics.ece_bins < 2 {
            return Err(CliError::Usage("ece_bins must be at least 2".into()));
        }
        Ok(DiagnosticsOptions {
            spearman_pairs: self.metrics.spearman_pairs,
            triangle: TriangleOptions {
                exhaustive_limit: self.metrics.triangle_exhaustive_limit,
                samples: self.metrics.triangle_samples,
                seed: self.seed,
            },
            ece_bins: self.metrics.ece_bins,
            seed: self.seed,
        })
    }
}

/// SHA-256 over everything that determines a training trajectory.
pub fn config_hash(
    model: &ModelConfig,
    optimizer: &Optimizer,
    plan: &TrainPlan,
    init_seed: u64,
) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        model: &'a ModelConfig,
        optimizer: &'a Optimizer,
        plan: &'a TrainPlan,
        init_seed: u64,
    }
    let json = serde_json::to_vec(&Identity {
        model,
        optimizer,
        plan,
        init_seed,
    })
    .expect("identity serializes");
    hex::encode(Sha256::digest(&json))
}
