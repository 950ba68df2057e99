//! Stages, schedule validation, the optimizer and the training loops.

mod optim;
mod pipeline;
mod stage;
mod train;

pub use optim::{adam_step, Adam, AdamState, OptimizerConfig, Warmup};
pub use pipeline::{run_pipeline, PipelineInputs, PipelineOutcome};
pub use stage::{
    ablate, changed_components, check_schedule, default_schedule, validate_schedule, Component, DataKind,
    Schedule, StageSpec, TeacherKind, ValidationMode, ValidationReport, Violation, GD, GED, TAD, TSD,
};
pub use train::{
    evaluate, finetune_teacher, mlm_loss, predict, pretrain_teacher, train_stage, EvalMetrics, EvalPoint,
    FrozenModel, PretrainSettings, StageData, Student, Teacher, Teachers, TrainReport, TrainSettings,
};
