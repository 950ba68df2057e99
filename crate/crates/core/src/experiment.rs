//! Desk-scale studies: the curriculum ablation, the out-of-domain probe for
//! general-enhanced distillation, and the low-resource trend.
//!
//! Every arm is a prefix-sharing walk over the same stage list, so a stage
//! common to several arms is trained once per seed. Because a stage is a
//! deterministic function of the incoming student, the stage spec and the run
//! seed, the result equals running each arm's schedule from scratch.

use crate::curriculum::{
    ablate, evaluate, finetune_teacher, pretrain_teacher, train_stage, Schedule, StageData, Student, Teacher,
    Teachers, TrainSettings, GD, GED, TAD,
};
use crate::data::{encode, generate_synthetic, subsample_task, BatchItem, Encoded, Split};
use crate::error::{Error, Result};
use crate::metrics::mean_std;
use crate::persist::RunConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Setup of a study: the run configuration plus the seeds and the reduced
/// task share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub low_fraction: f64,
}

impl StudyConfig {
    pub fn desk() -> Self {
        StudyConfig {
            run: RunConfig::desk(),
            seeds: (0..5).collect(),
            low_fraction: 0.1,
        }
    }
}

/// One arm of a study: the stages it keeps and the task share it sees.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub drop: Vec<String>,
    pub low_resource: bool,
}

impl Arm {
    pub fn new(name: &str, drop: &[&str], low_resource: bool) -> Self {
        Arm {
            name: name.to_string(),
            drop: drop.iter().map(|s| s.to_string()).collect(),
            low_resource,
        }
    }
}

pub const FULL: &str = "full";
pub const TSD_ONLY: &str = "tsd_only";
pub const NO_GED: &str = "no_ged";
pub const FULL_LOW: &str = "full_low";
pub const NO_GED_LOW: &str = "no_ged_low";

/// The five arms behind the three directional comparisons.
pub fn standard_arms() -> Vec<Arm> {
    vec![
        Arm::new(FULL, &[], false),
        Arm::new(TSD_ONLY, &[GD, GED, TAD], false),
        Arm::new(NO_GED, &[GED], false),
        Arm::new(FULL_LOW, &[], true),
        Arm::new(NO_GED_LOW, &[GED], true),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub dev_accuracy: f64,
    pub ood_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    /// Dev accuracy of the finetuned teacher on the full and reduced data.
    pub teacher_dev_accuracy: f64,
    pub teacher_low_dev_accuracy: f64,
    pub teacher_ood_accuracy: f64,
    pub results: Vec<ArmResult>,
    pub wall_time_secs: f64,
}

impl StudyReport {
    fn values(&self, arm: &str, pick: impl Fn(&ArmResult) -> f64) -> Vec<f64> {
        self.results.iter().filter(|r| r.arm == arm).map(pick).collect()
    }

    /// Mean dev accuracy of `arm` over seeds.
    pub fn dev(&self, arm: &str) -> f64 {
        mean_std(&self.values(arm, |r| r.dev_accuracy)).0
    }

    /// Mean ood accuracy of `arm` over seeds.
    pub fn ood(&self, arm: &str) -> f64 {
        mean_std(&self.values(arm, |r| r.ood_accuracy)).0
    }

    /// Mean and standard deviation per arm of (dev, ood) accuracy.
    pub fn summary(&self) -> BTreeMap<String, ((f64, f64), (f64, f64))> {
        let mut arms: Vec<&str> = self.results.iter().map(|r| r.arm.as_str()).collect();
        arms.dedup();
        arms.into_iter()
            .map(|a| {
                (
                    a.to_string(),
                    (
                        mean_std(&self.values(a, |r| r.dev_accuracy)),
                        mean_std(&self.values(a, |r| r.ood_accuracy)),
                    ),
                )
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("arm\tdev_mean\tdev_std\tood_mean\tood_std\n");
        for (arm, ((dm, ds), (om, os))) in self.summary() {
            out.push_str(&format!("{arm}\t{dm:.4}\t{ds:.4}\t{om:.4}\t{os:.4}\n"));
        }
        out
    }
}

/// Framed data shared by every arm.
pub struct StudyData {
    pub general: Vec<Encoded>,
    pub train: Vec<Encoded>,
    pub train_low: Vec<Encoded>,
    pub dev: Vec<Encoded>,
    pub ood: Vec<Encoded>,
    pub vocab_len: usize,
}

/// Draws the synthetic corpus and task and frames them.
pub fn prepare_data(cfg: &StudyConfig) -> Result<(crate::data::GeneralCorpus, StudyData)> {
    let run = &cfg.run;
    let spec = run
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("studies run on the synthetic task".into()))?;
    let (corpus, task) = generate_synthetic(spec)?;
    let max_len = run.max_len;
    let general = if spec.pair {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x6E);
        crate::data::sample_consecutive_pairs(&corpus, corpus.num_sentences(), &mut rng)?
            .into_iter()
            .map(|(a, b)| encode(&BatchItem::pair(a, b), max_len))
            .collect::<Result<Vec<_>>>()?
    } else {
        corpus
            .sentences()
            .map(|s| encode(&BatchItem::single(s), max_len))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x10);
    let low = subsample_task(&task, cfg.low_fraction, &mut rng)?;
    let data = StudyData {
        general,
        train: task.encode_split(Split::Train, max_len)?,
        train_low: low.encode_split(Split::Train, max_len)?,
        dev: task.encode_split(Split::Dev, max_len)?,
        ood: task.encode_split(Split::Ood, max_len)?,
        vocab_len: spec.vocab().len(),
    };
    Ok((corpus, data))
}

/// The pretrained teacher and the finetuned teachers for the full and the
/// reduced task data.
pub struct StudyTeachers {
    pub pretrained: Teacher,
    pub finetuned: Teacher,
    pub finetuned_low: Teacher,
}

pub fn build_teachers(
    cfg: &StudyConfig,
    corpus: &crate::data::GeneralCorpus,
    data: &StudyData,
) -> Result<StudyTeachers> {
    let run = &cfg.run;
    let vocab = run
        .data
        .synthetic
        .as_ref()
        .map(|s| s.vocab())
        .ok_or_else(|| Error::Config("studies run on the synthetic task".into()))?;
    let (tg, _) = pretrain_teacher(
        &run.teacher,
        corpus,
        &vocab,
        &run.pretrain.optimizer,
        &run.pretrain_settings(),
        run.seed,
    )?;
    let settings = TrainSettings::new(run.teacher.task_kind, run.seed);
    let (tf, _) = finetune_teacher(
        &run.teacher,
        &tg,
        &data.train,
        &run.finetune.optimizer,
        run.finetune.steps,
        &settings,
    )?;
    let (tf_low, _) = finetune_teacher(
        &run.teacher,
        &tg,
        &data.train_low,
        &run.finetune.optimizer,
        run.finetune.steps,
        &settings,
    )?;
    let teacher = |w| Teacher {
        config: run.teacher.clone(),
        weights: w,
    };
    Ok(StudyTeachers {
        pretrained: teacher(tg),
        finetuned: teacher(tf),
        finetuned_low: teacher(tf_low),
    })
}

/// Trains every arm for every seed and evaluates on dev and ood.
pub fn run_study(cfg: &StudyConfig, arms: &[Arm]) -> Result<StudyReport> {
    let started = Instant::now();
    let (corpus, data) = prepare_data(cfg)?;
    let teachers = build_teachers(cfg, &corpus, &data)?;
    let mut report = run_arms(cfg, arms, &data, &teachers)?;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// [`run_study`] with data and teachers already built.
pub fn run_arms(
    cfg: &StudyConfig,
    arms: &[Arm],
    data: &StudyData,
    teachers: &StudyTeachers,
) -> Result<StudyReport> {
    let run = &cfg.run;
    let kind = run.student.task_kind;
    let eval = |t: &Teacher, split: &[Encoded]| -> Result<f64> {
        Ok(evaluate(&t.config, &t.weights, split)?.accuracy)
    };
    let mut report = StudyReport {
        teacher_dev_accuracy: eval(&teachers.finetuned, &data.dev)?,
        teacher_low_dev_accuracy: eval(&teachers.finetuned_low, &data.dev)?,
        teacher_ood_accuracy: eval(&teachers.finetuned, &data.ood)?,
        ..Default::default()
    };
    let schedules: Vec<Schedule> = arms
        .iter()
        .map(|a| {
            let drop: Vec<&str> = a.drop.iter().map(String::as_str).collect();
            if drop.is_empty() {
                Ok(run.schedule.clone())
            } else {
                ablate(&drop, &run.schedule)
            }
        })
        .collect::<Result<_>>()?;

    for &seed in &cfg.seeds {
        let mut settings = TrainSettings::new(kind, seed);
        settings.objective.temperature = run.temperature;
        let fresh = Student::init(&run.student, &run.teacher, seed)?;
        // Students after each trained prefix, keyed by (low_resource, stage names).
        let mut cache: BTreeMap<(bool, Vec<String>), Student> = BTreeMap::new();
        for (arm, schedule) in arms.iter().zip(&schedules) {
            let (task, finetuned) = if arm.low_resource {
                (&data.train_low, &teachers.finetuned_low)
            } else {
                (&data.train, &teachers.finetuned)
            };
            let stage_teachers = Teachers {
                pretrained: Some(&teachers.pretrained),
                finetuned: Some(finetuned),
            };
            let stage_data = StageData {
                general: &data.general,
                task,
            };
            let mut student = fresh.clone();
            let mut prefix = Vec::new();
            for stage in &schedule.stages {
                prefix.push(stage.name.clone());
                // Stages before any task-dependent one are shared between the
                // full and reduced arms.
                let touches_low = prefix_depends_on_task(schedule, prefix.len());
                let key = (arm.low_resource && touches_low, prefix.clone());
                if let Some(s) = cache.get(&key) {
                    student = s.clone();
                    continue;
                }
                train_stage(stage, &mut student, stage_teachers, stage_data, &settings)?;
                cache.insert(key, student.clone());
            }
            report.results.push(ArmResult {
                arm: arm.name.clone(),
                seed,
                dev_accuracy: evaluate(&student.config, &student.weights, &data.dev)?.accuracy,
                ood_accuracy: evaluate(&student.config, &student.weights, &data.ood)?.accuracy,
            });
        }
    }
    Ok(report)
}

/// Whether the first `n` stages involve the finetuned teacher or task data,
/// both of which differ between the full and reduced arms.
fn prefix_depends_on_task(schedule: &Schedule, n: usize) -> bool {
    use crate::curriculum::{DataKind, TeacherKind};
    schedule.stages[..n]
        .iter()
        .any(|s| s.teacher == TeacherKind::Finetuned || s.data == DataKind::Task)
}

/// The three directional comparisons of a study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Findings {
    /// Full curriculum minus the task-specific stage alone, dev accuracy.
    pub curriculum_gain: f64,
    /// Ood accuracy with general-enhanced distillation minus without.
    pub ged_ood_gain: f64,
    /// Absolute dev accuracy gap between those two arms.
    pub ged_dev_gap: f64,
    /// Dev accuracy gain from general-enhanced distillation on reduced data.
    pub ged_gain_low: f64,
    /// The same gain on the full data.
    pub ged_gain_full: f64,
}

impl StudyReport {
    pub fn findings(&self) -> Findings {
        Findings {
            curriculum_gain: self.dev(FULL) - self.dev(TSD_ONLY),
            ged_ood_gain: self.ood(FULL) - self.ood(NO_GED),
            ged_dev_gap: (self.dev(FULL) - self.dev(NO_GED)).abs(),
            ged_gain_low: self.dev(FULL_LOW) - self.dev(NO_GED_LOW),
            ged_gain_full: self.dev(FULL) - self.dev(NO_GED),
        }
    }
}
