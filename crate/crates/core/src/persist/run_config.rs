use crate::curriculum::{
    check_schedule, default_schedule, OptimizerConfig, PretrainSettings, Schedule, ValidationMode, Warmup,
};
use crate::data::SyntheticTaskSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Version of the run-configuration schema. Bump on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Where task and general data come from: a synthetic spec, or files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTaskSpec>,
    /// Vocabulary file, one symbol per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// General corpus: one sentence per line, blank line between documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Directory with `train.tsv`, `dev.tsv` and `ood.tsv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_dir: Option<PathBuf>,
    #[serde(default)]
    pub pair: bool,
    #[serde(default)]
    pub kind: TaskKind,
    #[serde(default = "two")]
    pub num_labels: usize,
    /// Share of the train split used for finetuning and distillation.
    #[serde(default = "one")]
    pub task_fraction: f64,
}

fn two() -> usize {
    2
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    #[serde(default = "mask_rate")]
    pub mask_rate: f64,
    pub optimizer: OptimizerConfig,
}

fn mask_rate() -> f64 {
    0.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub optimizer: OptimizerConfig,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Dev evaluation every this many steps; zero disables.
    #[serde(default)]
    pub eval_interval: usize,
    /// Longest framed input; longer inputs are truncated.
    pub max_len: usize,
    /// Allow schedules that break the one-change rule.
    #[serde(default)]
    pub ablation: bool,
    #[serde(default = "one")]
    pub temperature: f64,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub schedule: Schedule,
}

impl RunConfig {
    /// The desk-scale setup: a 4-layer teacher, a 2-layer student, the
    /// default synthetic task and shortened stage budgets.
    pub fn desk() -> Self {
        RunConfig::for_synthetic(SyntheticTaskSpec::default())
    }

    /// [`RunConfig::desk`] with another synthetic task; vocabulary and
    /// sequence limits follow the spec.
    pub fn for_synthetic(spec: SyntheticTaskSpec) -> Self {
        let vocab = spec.vocab().len();
        let longest = spec.max_len + spec.ood_length_shift;
        let max_len = if spec.pair { 2 * longest + 3 } else { longest + 2 };
        let mut teacher = ModelConfig::new(4, 64, 128, 4, vocab, max_len);
        let mut student = ModelConfig::new(2, 32, 64, 2, vocab, max_len);
        teacher.num_labels = 2;
        student.num_labels = 2;
        let mut schedule = default_schedule(TaskKind::Classification);
        for (stage, steps) in schedule.stages.iter_mut().zip([400, 400, 150, 150]) {
            stage.steps = steps;
        }
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: None,
            eval_interval: 100,
            max_len,
            ablation: false,
            temperature: 1.0,
            teacher,
            student,
            data: DataConfig {
                pair: spec.pair,
                synthetic: Some(spec),
                vocab: None,
                corpus: None,
                task_dir: None,
                kind: TaskKind::Classification,
                num_labels: 2,
                task_fraction: 1.0,
            },
            pretrain: PretrainConfig {
                steps: 1000,
                mask_rate: 0.15,
                optimizer: OptimizerConfig::new(1e-3, 16, Warmup::Steps(100)),
            },
            finetune: FinetuneConfig {
                steps: 300,
                optimizer: OptimizerConfig::new(5e-4, 16, Warmup::Proportion(0.1)),
            },
            schedule,
        }
    }

    pub fn pretrain_settings(&self) -> PretrainSettings {
        PretrainSettings {
            steps: self.pretrain.steps,
            mask_rate: self.pretrain.mask_rate,
            max_len: self.max_len,
            pairs: self.data.pair,
        }
    }

    /// Schema version, model configs, data source and, unless `ablation`
    /// is set, strict schedule validation.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.teacher.validate()?;
        self.student.validate()?;
        for (name, m) in [("teacher", &self.teacher), ("student", &self.student)] {
            if m.max_seq_len < self.max_len {
                return Err(Error::Config(format!(
                    "{name} max_seq_len {} is below max_len {}",
                    m.max_seq_len, self.max_len
                )));
            }
            if m.task_kind != self.data.kind || m.num_labels != self.data.num_labels {
                return Err(Error::Config(format!("{name} head does not match the data kind")));
            }
        }
        let files = [&self.data.vocab, &self.data.corpus, &self.data.task_dir];
        match (&self.data.synthetic, files.iter().all(|f| f.is_some())) {
            (Some(spec), _) => {
                if files.iter().any(|f| f.is_some()) {
                    return Err(Error::Config(
                        "give either data.synthetic or data files, not both".into(),
                    ));
                }
                spec.validate()?;
            }
            (None, true) => {}
            (None, false) => {
                return Err(Error::Config(
                    "data needs either a synthetic spec or vocab, corpus and task_dir".into(),
                ))
            }
        }
        if !(self.data.task_fraction > 0.0 && self.data.task_fraction <= 1.0) {
            return Err(Error::Config("data.task_fraction must lie in (0, 1]".into()));
        }
        self.pretrain.optimizer.validate()?;
        self.finetune.optimizer.validate()?;
        let mode = if self.ablation {
            ValidationMode::Advisory
        } else {
            ValidationMode::Strict
        };
        check_schedule(&self.schedule, mode)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            RunConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.vocab, &mut cfg.data.corpus, &mut cfg.data.task_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// A model configuration on its own, as read by `paramcount`.
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ModelConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
