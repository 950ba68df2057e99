use crate::report::{aggregate, format_table, RunResult};
use crate::{Command, RunArgs, SplitArg, TeacherArgs, OUT_DIR_ENV};
use anyhow::{bail, Context, Result};
use pdistill::curriculum::{
    ablate, check_schedule, evaluate, finetune_teacher, pretrain_teacher, run_pipeline, PipelineInputs,
    Schedule, StageData, Student, Teacher, TeacherKind, Teachers, TrainReport, TrainSettings, ValidationMode,
};
use pdistill::data::{
    encode, generate_synthetic, sample_consecutive_pairs, subsample_task, BatchItem, Encoded, GeneralCorpus,
    Split, TaskDataset, Vocab,
};
use pdistill::model::{param_count, ModelConfig};
use pdistill::persist::{load_model_config, write_metrics, Checkpoint, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const PRETRAINED_CKPT: &str = "teacher_pretrained.ckpt";
pub const FINETUNED_CKPT: &str = "teacher_finetuned.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => pretrain(&args),
        Command::FinetuneTeacher(args) => finetune(&args),
        Command::Distill(args) => distill(&args, None),
        Command::Ablate { run, drop } => distill(&run, Some(&drop)),
        Command::Evaluate { config, ckpt, split } => evaluate_ckpt(&config, &ckpt, split),
        Command::Datagen(args) => datagen(&args),
        Command::Report { runs } => report(&runs),
        Command::Paramcount { config } => paramcount(&config),
    }
}

/// A loaded and validated configuration with its output directory.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn open(args: &RunArgs) -> Result<Self> {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let out = args
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Records the effective configuration next to the outputs.
    fn save_config(&self) -> Result<()> {
        let path = self.path("config.toml");
        std::fs::write(&path, self.cfg.to_toml_string()?)
            .with_context(|| format!("writing {}", path.display()))
    }

    fn log(&self, report: &TrainReport) -> Result<()> {
        write_metrics(report, &self.path(METRICS_FILE))?;
        let last = report
            .loss
            .iter()
            .rev()
            .find(|l| l.is_finite())
            .copied()
            .unwrap_or(f64::NAN);
        eprintln!(
            "{}: {} steps, final loss {last:.4}, {:.1}s",
            report.stage,
            report.steps(),
            report.wall_time_secs
        );
        Ok(())
    }
}

struct RunData {
    vocab: Vocab,
    corpus: GeneralCorpus,
    task: TaskDataset,
}

/// Corpus and task from the synthetic spec or from files, with the train
/// split reduced to `data.task_fraction`.
fn load_data(cfg: &RunConfig) -> Result<RunData> {
    let d = &cfg.data;
    let (vocab, corpus, task) = match &d.synthetic {
        Some(spec) => {
            let (corpus, task) = generate_synthetic(spec)?;
            (spec.vocab(), corpus, task)
        }
        None => {
            let need = |p: &Option<PathBuf>| p.clone().context("data files missing from config");
            let vocab = Vocab::read(&need(&d.vocab)?)?;
            let corpus = GeneralCorpus::read(&need(&d.corpus)?, &vocab)?;
            let task = TaskDataset::read_dir(&need(&d.task_dir)?, &vocab, d.kind, d.num_labels, d.pair)?;
            (vocab, corpus, task)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x10);
    let task = subsample_task(&task, d.task_fraction, &mut rng)?;
    Ok(RunData { vocab, corpus, task })
}

/// Framed general-corpus inputs for the corpus stages.
fn general_pool(cfg: &RunConfig, corpus: &GeneralCorpus) -> Result<Vec<Encoded>> {
    let pool = if cfg.data.pair {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6E);
        sample_consecutive_pairs(corpus, corpus.num_sentences(), &mut rng)?
            .into_iter()
            .map(|(a, b)| encode(&BatchItem::pair(a, b), cfg.max_len))
            .collect::<pdistill::Result<Vec<_>>>()?
    } else {
        corpus
            .sentences()
            .map(|s| encode(&BatchItem::single(s), cfg.max_len))
            .collect::<pdistill::Result<Vec<_>>>()?
    };
    Ok(pool)
}

fn load_teacher(path: &Path, expected: &ModelConfig) -> Result<Teacher> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading teacher {}", path.display()))?;
    ckpt.expect_config(expected)
        .with_context(|| format!("{} does not match the configured teacher", path.display()))?;
    Ok(Teacher {
        config: ckpt.config.clone(),
        weights: ckpt.weights()?,
    })
}

fn settings<'a>(cfg: &RunConfig, dev: &'a [Encoded]) -> TrainSettings<'a> {
    let mut s = TrainSettings::new(cfg.data.kind, cfg.seed);
    s.objective.temperature = cfg.temperature;
    s.eval_interval = cfg.eval_interval;
    s.dev = Some(dev);
    s
}

fn pretrain(args: &RunArgs) -> Result<()> {
    let run = Run::open(args)?;
    let cfg = &run.cfg;
    let data = load_data(cfg)?;
    let (weights, report) = pretrain_teacher(
        &cfg.teacher,
        &data.corpus,
        &data.vocab,
        &cfg.pretrain.optimizer,
        &cfg.pretrain_settings(),
        cfg.seed,
    )?;
    run.log(&report)?;
    let path = run.path(PRETRAINED_CKPT);
    Checkpoint::from_model(&cfg.teacher, &weights, None).save(&path)?;
    run.save_config()?;
    println!("{}", path.display());
    Ok(())
}

fn finetune(args: &TeacherArgs) -> Result<()> {
    let run = Run::open(&args.run)?;
    let cfg = &run.cfg;
    let data = load_data(cfg)?;
    let pretrained_path = args
        .pretrained
        .clone()
        .unwrap_or_else(|| run.path(PRETRAINED_CKPT));
    let pretrained = load_teacher(&pretrained_path, &cfg.teacher)?;
    let train = data.task.encode_split(Split::Train, cfg.max_len)?;
    let dev = data.task.encode_split(Split::Dev, cfg.max_len)?;
    let (weights, report) = finetune_teacher(
        &cfg.teacher,
        &pretrained.weights,
        &train,
        &cfg.finetune.optimizer,
        cfg.finetune.steps,
        &settings(cfg, &dev),
    )?;
    run.log(&report)?;
    let metrics = evaluate(&cfg.teacher, &weights, &dev)?;
    eprintln!("teacher dev accuracy {:.4}", metrics.accuracy);
    let path = run.path(FINETUNED_CKPT);
    Checkpoint::from_model(&cfg.teacher, &weights, None).save(&path)?;
    run.save_config()?;
    println!("{}", path.display());
    Ok(())
}

/// Runs the configured schedule, or with `drop` the ablated one under
/// advisory validation.
fn distill(args: &TeacherArgs, drop: Option<&[String]>) -> Result<()> {
    let run = Run::open(&args.run)?;
    let cfg = &run.cfg;
    let (schedule, mode): (Schedule, ValidationMode) = match drop {
        Some(names) => {
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            (ablate(&names, &cfg.schedule)?, ValidationMode::Advisory)
        }
        None if cfg.ablation => (cfg.schedule.clone(), ValidationMode::Advisory),
        None => (cfg.schedule.clone(), ValidationMode::Strict),
    };
    let validation = check_schedule(&schedule, mode)?;
    for v in &validation.violations {
        eprintln!("warning: {v}");
    }

    let needs = |kind| schedule.stages.iter().any(|s| s.teacher == kind);
    let load = |needed: bool, given: &Option<PathBuf>, default: &str| -> Result<Option<Teacher>> {
        if !needed {
            return Ok(None);
        }
        let path = given.clone().unwrap_or_else(|| run.path(default));
        load_teacher(&path, &cfg.teacher).map(Some)
    };
    let pretrained = load(needs(TeacherKind::Pretrained), &args.pretrained, PRETRAINED_CKPT)?;
    let finetuned = load(needs(TeacherKind::Finetuned), &args.finetuned, FINETUNED_CKPT)?;

    let data = load_data(cfg)?;
    let general = general_pool(cfg, &data.corpus)?;
    let task = data.task.encode_split(Split::Train, cfg.max_len)?;
    let dev = data.task.encode_split(Split::Dev, cfg.max_len)?;
    let ood = data.task.encode_split(Split::Ood, cfg.max_len)?;
    let inputs = PipelineInputs {
        teachers: Teachers {
            pretrained: pretrained.as_ref(),
            finetuned: finetuned.as_ref(),
        },
        data: StageData {
            general: &general,
            task: &task,
        },
        dev: &dev,
        ood: (!ood.is_empty()).then_some(&ood[..]),
    };
    let student = Student::init(&cfg.student, &cfg.teacher, cfg.seed)?;
    let outcome = run_pipeline(&schedule, mode, student, inputs, &settings(cfg, &dev))?;
    for report in &outcome.reports {
        run.log(report)?;
    }
    let s = &outcome.student;
    Checkpoint::from_model(&s.config, &s.weights, Some(&s.maps)).save(&run.path(STUDENT_CKPT))?;
    run.save_config()?;
    let result = RunResult {
        seed: cfg.seed,
        stages: schedule.names().iter().map(|n| n.to_string()).collect(),
        dev: outcome.dev,
        ood: outcome.ood,
        warnings: validation.violations.iter().map(|v| v.to_string()).collect(),
    };
    result.write(&run.out)?;
    print!("{}", format_metrics(&result));
    Ok(())
}

fn format_metrics(result: &RunResult) -> String {
    result
        .metrics()
        .iter()
        .map(|(k, v)| format!("{k}\t{v:.4}\n"))
        .collect()
}

fn evaluate_ckpt(config: &Path, ckpt: &Path, split: SplitArg) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Dev => Split::Dev,
        SplitArg::Ood => Split::Ood,
    };
    let examples = data.task.encode_split(split, cfg.max_len)?;
    if examples.is_empty() {
        bail!("split {} is empty", split.name());
    }
    let ckpt = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let m = evaluate(&ckpt.config, &ckpt.weights()?, &examples)?;
    println!("split\t{}", split.name());
    println!("examples\t{}", examples.len());
    println!("accuracy\t{:.4}", m.accuracy);
    println!("f1\t{:.4}", m.f1);
    println!("mcc\t{:.4}", m.mcc);
    if let Some(p) = m.pearson {
        println!("pearson\t{p:.4}");
    }
    Ok(())
}

/// Writes `vocab.txt`, `corpus.txt`, `task/` and a `run.toml` reading them.
fn datagen(args: &RunArgs) -> Result<()> {
    let run = Run::open(args)?;
    let Some(spec) = &run.cfg.data.synthetic else {
        bail!("datagen needs a data.synthetic section in the config");
    };
    let (corpus, task) = generate_synthetic(spec)?;
    let vocab = spec.vocab();
    vocab.write(&run.path("vocab.txt"))?;
    corpus.write(&run.path("corpus.txt"), &vocab)?;
    task.write_dir(&run.path("task"), &vocab)?;

    let mut files = run.cfg.clone();
    files.data.synthetic = None;
    files.data.vocab = Some("vocab.txt".into());
    files.data.corpus = Some("corpus.txt".into());
    files.data.task_dir = Some("task".into());
    files.output_dir = None;
    let path = run.path("run.toml");
    std::fs::write(&path, files.to_toml_string()?).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} sentences, {}/{}/{} train/dev/ood examples in {}",
        corpus.num_sentences(),
        task.train.len(),
        task.dev.len(),
        task.ood.len(),
        run.out.display()
    );
    Ok(())
}

fn report(runs: &[PathBuf]) -> Result<()> {
    let results = runs
        .iter()
        .map(|r| RunResult::read(r))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", format_table(&aggregate(&results)?));
    Ok(())
}

/// Accepts a bare model config or a run config (teacher and student).
fn paramcount(path: &Path) -> Result<()> {
    let line = |name: &str, cfg: &ModelConfig| {
        let n = param_count(cfg);
        let short = if n >= 1_000_000 {
            format!("{:.1}M", n as f64 / 1e6)
        } else {
            format!("{:.1}K", n as f64 / 1e3)
        };
        println!("{name}\t{n}\t{short}");
    };
    match load_model_config(path) {
        Ok(cfg) => line("model", &cfg),
        Err(model_err) => {
            let run = RunConfig::load(path).map_err(|_| model_err)?;
            line("teacher", &run.teacher);
            line("student", &run.student);
        }
    }
    Ok(())
}
