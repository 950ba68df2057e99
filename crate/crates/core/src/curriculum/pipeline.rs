use super::stage::{check_schedule, Schedule, ValidationMode, ValidationReport};
use super::train::{
    evaluate, train_stage, EvalMetrics, StageData, Student, Teachers, TrainReport, TrainSettings,
};
use crate::data::Encoded;
use crate::error::Result;

/// Inputs of a full run besides the schedule and the student.
#[derive(Clone, Copy, Debug)]
pub struct PipelineInputs<'a> {
    pub teachers: Teachers<'a>,
    pub data: StageData<'a>,
    pub dev: &'a [Encoded],
    pub ood: Option<&'a [Encoded]>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub student: Student,
    pub reports: Vec<TrainReport>,
    pub validation: ValidationReport,
    pub dev: EvalMetrics,
    pub ood: Option<EvalMetrics>,
}

/// Validates `schedule` under `mode`, then trains `student` through every
/// stage in order. Nothing is trained when validation fails.
pub fn run_pipeline(
    schedule: &Schedule,
    mode: ValidationMode,
    mut student: Student,
    inputs: PipelineInputs<'_>,
    settings: &TrainSettings<'_>,
) -> Result<PipelineOutcome> {
    let validation = check_schedule(schedule, mode)?;
    for stage in &schedule.stages {
        inputs.teachers.get(stage.teacher)?;
        inputs.data.get(stage.data)?;
    }
    let mut reports = Vec::with_capacity(schedule.stages.len());
    for stage in &schedule.stages {
        reports.push(train_stage(
            stage,
            &mut student,
            inputs.teachers,
            inputs.data,
            settings,
        )?);
    }
    let dev = evaluate(&student.config, &student.weights, inputs.dev)?;
    let ood = inputs
        .ood
        .map(|o| evaluate(&student.config, &student.weights, o))
        .transpose()?;
    Ok(PipelineOutcome {
        student,
        reports,
        validation,
        dev,
        ood,
    })
}
