use super::optim::{OptimizerConfig, Warmup};
use crate::distill::Alpha;
use crate::error::{Error, Result};
use crate::model::TaskKind;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    /// Trained on general data only.
    Pretrained,
    /// The pretrained teacher further trained on the labelled task.
    Finetuned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    General,
    Task,
}

/// One stage of the curriculum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub teacher: TeacherKind,
    pub data: DataKind,
    pub alpha: Alpha,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
}

impl StageSpec {
    pub fn new(
        name: &str,
        teacher: TeacherKind,
        data: DataKind,
        alpha: Alpha,
        steps: usize,
        optimizer: OptimizerConfig,
    ) -> Self {
        StageSpec {
            name: name.to_string(),
            teacher,
            data,
            alpha,
            steps,
            optimizer,
        }
    }

    /// Problems with the stage in isolation.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alpha == Alpha::One && self.data != DataKind::Task {
            out.push("alpha = 1 needs labelled task data".to_string());
        }
        if self.steps == 0 {
            out.push("steps must be at least 1".to_string());
        }
        if let Err(e) = self.optimizer.validate() {
            out.push(e.to_string());
        }
        out
    }
}

/// The three things a transition may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Teacher,
    Data,
    Objective,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Teacher => "teacher",
            Component::Data => "data",
            Component::Objective => "objective",
        })
    }
}

/// Components that differ between two stages.
pub fn changed_components(a: &StageSpec, b: &StageSpec) -> Vec<Component> {
    let mut out = Vec::new();
    if a.teacher != b.teacher {
        out.push(Component::Teacher);
    }
    if a.data != b.data {
        out.push(Component::Data);
    }
    if a.alpha != b.alpha {
        out.push(Component::Objective);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub stages: Vec<StageSpec>,
}

impl Schedule {
    pub fn new(stages: Vec<StageSpec>) -> Self {
        Schedule { stages }
    }

    pub fn names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Empty,
    Stage {
        index: usize,
        name: String,
        problem: String,
    },
    Transition {
        from: usize,
        from_name: String,
        to_name: String,
        changed: Vec<Component>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => f.write_str("schedule has no stages"),
            Violation::Stage { index, name, problem } => write!(f, "stage {index} ({name}): {problem}"),
            Violation::Transition {
                from,
                from_name,
                to_name,
                changed,
            } => {
                let list = if changed.is_empty() {
                    "nothing".to_string()
                } else {
                    changed
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                write!(
                    f,
                    "transition {from_name} -> {to_name} (stages {from}->{}) changes {} component(s): {list}; \
                     consecutive stages must change exactly one of teacher, data, objective",
                    from + 1,
                    changed.len()
                )
            }
        }
    }
}

/// Outcome of schedule validation; empty when the schedule is valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("schedule ok");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&lines.join("\n"))
    }
}

/// Strict mode refuses to run a schedule with violations; advisory mode
/// reports them and lets it run, as ablations need.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ValidationMode {
    #[default]
    Strict,
    Advisory,
}

/// Checks the per-stage invariants and that every consecutive pair of stages
/// differs in exactly one of teacher, data and objective.
pub fn validate_schedule(schedule: &Schedule) -> ValidationReport {
    let mut violations = Vec::new();
    if schedule.stages.is_empty() {
        violations.push(Violation::Empty);
    }
    for (index, stage) in schedule.stages.iter().enumerate() {
        for problem in stage.problems() {
            violations.push(Violation::Stage {
                index,
                name: stage.name.clone(),
                problem,
            });
        }
    }
    for (from, pair) in schedule.stages.windows(2).enumerate() {
        let changed = changed_components(&pair[0], &pair[1]);
        if changed.len() != 1 {
            violations.push(Violation::Transition {
                from,
                from_name: pair[0].name.clone(),
                to_name: pair[1].name.clone(),
                changed,
            });
        }
    }
    ValidationReport { violations }
}

/// Validation under `mode`. Per-stage problems and an empty schedule are
/// always fatal; transition violations are fatal only in strict mode.
pub fn check_schedule(schedule: &Schedule, mode: ValidationMode) -> Result<ValidationReport> {
    let report = validate_schedule(schedule);
    let fatal = report
        .violations
        .iter()
        .any(|v| mode == ValidationMode::Strict || !matches!(v, Violation::Transition { .. }));
    if fatal {
        return Err(Error::Schedule(report.to_string()));
    }
    Ok(report)
}

pub const GD: &str = "GD";
pub const GED: &str = "GED";
pub const TAD: &str = "TAD";
pub const TSD: &str = "TSD";

/// General, general-enhanced, task-adaptive and task-specific distillation
/// with desk-scale hyper-parameters. Corpus stages warm up over a fixed step
/// count; task stages over a tenth of the stage.
pub fn default_schedule(_kind: TaskKind) -> Schedule {
    let corpus = OptimizerConfig::new(1e-3, 16, Warmup::Steps(100));
    let task = OptimizerConfig::new(5e-4, 16, Warmup::Proportion(0.1));
    use DataKind::*;
    use TeacherKind::*;
    Schedule::new(vec![
        StageSpec::new(GD, Pretrained, General, Alpha::Zero, 2000, corpus.clone()),
        StageSpec::new(GED, Finetuned, General, Alpha::Zero, 2000, corpus.with_seed(1)),
        StageSpec::new(TAD, Finetuned, Task, Alpha::Zero, 500, task.clone().with_seed(2)),
        StageSpec::new(TSD, Finetuned, Task, Alpha::One, 500, task.with_seed(3)),
    ])
}

/// `base` without the named stages (matched case-insensitively).
pub fn ablate(drop: &[&str], base: &Schedule) -> Result<Schedule> {
    for name in drop {
        if !base.stages.iter().any(|s| s.name.eq_ignore_ascii_case(name)) {
            return Err(Error::InvalidArgument(format!(
                "no stage named {name:?} in schedule {:?}",
                base.names()
            )));
        }
    }
    let stages: Vec<StageSpec> = base
        .stages
        .iter()
        .filter(|s| !drop.iter().any(|d| s.name.eq_ignore_ascii_case(d)))
        .cloned()
        .collect();
    if stages.is_empty() {
        return Err(Error::Schedule("ablation removes every stage".into()));
    }
    Ok(Schedule::new(stages))
}
