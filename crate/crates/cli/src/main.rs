//! `waldorf` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use waldorf::bench::{attention_flops, bench, relative_to, synthetic_dataset, BenchOptions, BenchReport, FlopModel};
use waldorf::corpus::squad::predictions_json;
use waldorf::corpus::{read_squad, QAExample, Scores};
use waldorf::distill::TrainMode;
use waldorf::model::checkpoint::Manifest;
use waldorf::model::{ControlModel, InferenceModel, ModelConfig, StudentModel, COMPRESSION};
use waldorf::pipeline::{self, Corpus, Datasets, RunConfig, DATA_DIR, TEACHER_DIR};
use waldorf::teacher::TeacherModel;
use waldorf::trainer::{
    evaluate_student, evaluate_teacher, mode_training_set, predict_student, predict_teacher, run_ablation, DecodeOptions,
    RunOptions, Trainer, CHECKPOINT_DIR, STUDENT_DIR,
};
use waldorf::Error;

#[derive(Parser, Debug)]
#[command(name = "waldorf", version, about = "Train, distill, evaluate and time compressed QA students")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// key=value config file applied on top of the desk preset
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides every seed in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of every input and output path
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Extra key=value entry, applied after the config file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and vocabulary into <out-dir>/data
    GenData,
    /// Fine-tune the teacher into <out-dir>/teacher
    TrainTeacher,
    /// Train a student into <out-dir>/distill/<mode>
    Distill {
        /// Training mode; defaults to train.mode
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Stop and checkpoint at this global step
        #[arg(long)]
        stop_after: Option<u64>,
        /// Continue from the run's last checkpoint
        #[arg(long)]
        resume: bool,
    },
    /// Score a student or teacher checkpoint
    Eval {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "dev")]
        split: Split,
    },
    /// Train every mode and print the ablation table
    Ablate,
    /// Time student and uncompressed control forward passes
    Bench,
    /// Print the analytic FLOP model
    Flops {
        #[arg(long, default_value_t = 384)]
        seq_len: usize,
        /// Also print the attention work at l and l/4
        #[arg(long)]
        compare_compression: bool,
        /// Use the student.* section instead of the full-size dimensions
        #[arg(long)]
        from_config: bool,
    },
    /// Write id -> answer predictions for a SQuAD-format file
    ExportPredictions {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Defaults to the generated dev split
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Defaults to <out-dir>/predictions.json
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Dev,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        // an unreadable or malformed config file is a usage error
        Some(p) => RunConfig::load(p).map_err(|e| Error::Config(e.to_string()))?,
        None => RunConfig::desk(),
    };
    for entry in &g.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn corpus(&self) -> Result<(Corpus, Datasets), Error> {
        let corpus = pipeline::ensure_corpus(&self.out.join(DATA_DIR), &self.cfg)?;
        let data = corpus.datasets(&self.cfg)?;
        Ok((corpus, data))
    }

    fn teacher(&self, corpus: &Corpus, data: &Datasets) -> Result<TeacherModel, Error> {
        let every = (self.cfg.teacher_train.planned_steps(data.train.len()) / 10).max(1);
        pipeline::ensure_teacher(&self.out.join(TEACHER_DIR), &self.cfg, corpus.vocab.len(), data, |s, l| {
            if s % every == 0 {
                eprintln!("teacher step {s} loss {l:.4}");
            }
        })
    }

    fn decode(&self) -> DecodeOptions {
        DecodeOptions {
            max_answer_len: self.cfg.train.max_answer_len,
            null_threshold: self.cfg.train.null_threshold,
            ..DecodeOptions::default()
        }
    }
}

fn print_scores(label: &str, s: &Scores) {
    println!("{label}: EM {:.2} F1 {:.2} (n={})", s.em, s.f1, s.n);
}

fn gen_data(ctx: &Ctx) -> Result<(), Error> {
    let dir = ctx.out.join(DATA_DIR);
    let corpus = pipeline::write_corpus(&dir, &ctx.cfg)?;
    let data = corpus.datasets(&ctx.cfg)?;
    println!(
        "wrote {}: {} train questions ({} labeled for the student), {} dev questions, vocabulary {}",
        dir.display(),
        data.train.len(),
        data.labeled,
        data.dev.len(),
        corpus.vocab.len()
    );
    Ok(())
}

fn train_teacher_cmd(ctx: &Ctx) -> Result<(), Error> {
    let (corpus, data) = ctx.corpus()?;
    let dir = ctx.out.join(TEACHER_DIR);
    let every = (ctx.cfg.teacher_train.planned_steps(data.train.len()) / 10).max(1);
    let (teacher, losses) = pipeline::write_teacher(&dir, &ctx.cfg, corpus.vocab.len(), &data, |s, l| {
        if s % every == 0 {
            eprintln!("teacher step {s} loss {l:.4}");
        }
    })?;
    let log: String = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{{\"step\":{i},\"loss\":{l}}}\n"))
        .collect();
    let path = dir.join("metrics.jsonl");
    fs::write(&path, log).map_err(|e| Error::Io { path, source: e })?;
    print_scores("teacher dev", &evaluate_teacher(&teacher, &data.dev, &ctx.decode())?);
    Ok(())
}

fn distill(ctx: &Ctx, mode: Option<TrainMode>, stop_after: Option<u64>, resume: bool) -> Result<(), Error> {
    let (corpus, data) = ctx.corpus()?;
    let mode = mode.unwrap_or(ctx.cfg.train.mode);
    let config = waldorf::trainer::TrainConfig { mode, ..ctx.cfg.train.clone() };
    let teacher = if mode.uses_teacher() { Some(ctx.teacher(&corpus, &data)?) } else { None };
    let set = match &teacher {
        Some(t) => mode_training_set(mode, t, data.labeled(), data.unlabeled(), &config)?,
        None => data.labeled().to_vec(),
    };
    let run_dir = ctx.out.join("distill").join(mode.name());
    let mut trainer = if resume {
        Trainer::resume(&run_dir.join(CHECKPOINT_DIR), teacher.as_ref(), &set)?
    } else {
        let student = StudentModel::build(ctx.cfg.student_config(corpus.vocab.len()), config.seed)?;
        Trainer::new(student, teacher.as_ref(), &set, config)?
    };
    let every = (trainer.total_steps / 20).max(1);
    let opts = RunOptions {
        out_dir: Some(run_dir.clone()),
        stop_after,
    };
    trainer.run_with(&opts, |l| {
        if l.step % every == 0 {
            eprintln!("step {} loss {:.4} lr {:.2e} T {:.2}", l.step, l.report.total, l.lr, l.temperature);
        }
    })?;
    println!("{} steps of {} written to {}", trainer.step, trainer.total_steps, run_dir.display());
    if trainer.step >= trainer.total_steps {
        print_scores("student dev", &evaluate_student(&trainer.student, &data.dev, &ctx.decode())?);
    }
    Ok(())
}

enum Loaded {
    Student(StudentModel),
    Teacher(TeacherModel),
}

/// Accepts a checkpoint directory or a distillation run directory.
fn load_model(dir: &Path) -> Result<Loaded, Error> {
    let dir = if !dir.join("manifest.txt").is_file() && dir.join(STUDENT_DIR).is_dir() {
        dir.join(STUDENT_DIR)
    } else {
        dir.to_path_buf()
    };
    let m = Manifest::load(&dir)?;
    match m.get("kind") {
        Some("teacher") => Ok(Loaded::Teacher(TeacherModel::load(&dir)?.0)),
        Some("student") => Ok(Loaded::Student(StudentModel::load(&dir)?.0)),
        other => Err(Error::Data(format!("{} holds no model checkpoint (kind {other:?})", dir.display()))),
    }
}

fn eval(ctx: &Ctx, model: &Path, split: Split) -> Result<(), Error> {
    let (_, data) = ctx.corpus()?;
    let examples = match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
    };
    let scores = match load_model(model)? {
        Loaded::Student(s) => evaluate_student(&s, examples, &ctx.decode())?,
        Loaded::Teacher(t) => evaluate_teacher(&t, examples, &ctx.decode())?,
    };
    println!("{}", serde_json::to_string(&scores).expect("scores serialise"));
    Ok(())
}

fn ablate(ctx: &Ctx) -> Result<(), Error> {
    let (corpus, data) = ctx.corpus()?;
    let teacher = ctx.teacher(&corpus, &data)?;
    print_scores("teacher dev", &evaluate_teacher(&teacher, &data.dev, &ctx.decode())?);
    let inputs = pipeline::ablation_inputs(&ctx.cfg, corpus.vocab.len(), &teacher, &data);
    let rows = run_ablation(&inputs, |r| eprintln!("{}: EM {:.2} F1 {:.2}", r.mode, r.em, r.f1))?;
    println!("{:<22} {:>7} {:>7} {:>7}", "mode", "EM", "F1", "steps");
    for r in &rows {
        println!("{:<22} {:>7.2} {:>7.2} {:>7}", r.mode.name(), r.em, r.f1, r.steps);
    }
    fs::create_dir_all(&ctx.out).map_err(|e| Error::Io { path: ctx.out.clone(), source: e })?;
    let path = ctx.out.join("ablation.json");
    let json = serde_json::to_string_pretty(&rows).expect("rows serialise");
    fs::write(&path, json).map_err(|e| Error::Io { path, source: e })
}

fn bench_cmd(ctx: &Ctx) -> Result<(), Error> {
    let b = &ctx.cfg.bench;
    let config = ModelConfig {
        vocab_size: ctx.cfg.data.vocab_size,
        max_seq_len: b.seq_len,
        ..ctx.cfg.student.clone()
    };
    let student = StudentModel::build(config.clone(), ctx.cfg.train.seed)?;
    let control = ControlModel::build(config, ctx.cfg.train.seed)?;
    let dataset = synthetic_dataset(b.n_examples, b.batch_size, b.seq_len, ctx.cfg.data.vocab_size, b.seed)?;
    let opts = BenchOptions {
        trials: b.trials,
        warmup: b.warmup,
    };
    let mut reports: Vec<BenchReport> = match b.precision.as_str() {
        "f32" => vec![
            bench("control", &InferenceModel::<f32>::control(&control), &dataset, &opts)?,
            bench("student", &InferenceModel::<f32>::student(&student), &dataset, &opts)?,
        ],
        "f64" => vec![
            bench("control", &InferenceModel::<f64>::control(&control), &dataset, &opts)?,
            bench("student", &InferenceModel::<f64>::student(&student), &dataset, &opts)?,
        ],
        other => return Err(Error::Config(format!("bench.precision must be f32 or f64, got {other:?}"))),
    };
    relative_to(&mut reports, "control")?;
    let mut lines = String::new();
    for r in &reports {
        println!(
            "{:<8} params {:>9} avg_time {:.4}s (sd {:.4}) rel_speedup {:.2}x",
            r.model, r.n_params, r.avg_time, r.stddev, r.rel_speedup
        );
        lines.push_str(&r.to_json());
        lines.push('\n');
    }
    fs::create_dir_all(&ctx.out).map_err(|e| Error::Io { path: ctx.out.clone(), source: e })?;
    let path = ctx.out.join("bench.jsonl");
    fs::write(&path, lines).map_err(|e| Error::Io { path, source: e })
}

fn flops(ctx: &Ctx, seq_len: usize, compare: bool, from_config: bool) -> Result<(), Error> {
    if seq_len == 0 || seq_len % COMPRESSION != 0 {
        return Err(Error::Config(format!("--seq-len must be a positive multiple of {COMPRESSION}")));
    }
    let c = if from_config {
        ctx.cfg.student.clone()
    } else {
        ModelConfig::full_size(30522)
    };
    c.validate()?;
    let s = FlopModel::student(&c, seq_len);
    let k = FlopModel::control(&c, seq_len);
    println!("{:<24} {:>16} {:>16}", "component", "student", "control");
    let rows = [
        ("embedding", s.embedding, k.embedding),
        ("convs", s.convs, k.convs),
        ("projections", s.projections, k.projections),
        ("attention_projections", s.attention_projections, k.attention_projections),
        ("attention", s.attention, k.attention),
        ("feed_forward", s.feed_forward, k.feed_forward),
        ("head", s.head, k.head),
        ("total", s.total(), k.total()),
    ];
    for (name, a, b) in rows {
        println!("{name:<24} {a:>16} {b:>16}");
    }
    if compare {
        let (d, h) = (c.hidden_size as u64, c.n_heads as u64);
        let full = attention_flops(seq_len as u64, d, h);
        let short = attention_flops((seq_len / COMPRESSION) as u64, d, h);
        let ratio = if full % short == 0 {
            format!("1/{}", full / short)
        } else {
            format!("{:.6}", short as f64 / full as f64)
        };
        println!(
            "attention work per layer: {full} FLOPs at l={seq_len}, {short} FLOPs at l/{COMPRESSION}={}; ratio {ratio}",
            seq_len / COMPRESSION
        );
    }
    Ok(())
}

fn export_predictions(ctx: &Ctx, model: &Path, input: Option<&Path>, output: Option<&Path>) -> Result<(), Error> {
    let (corpus, data) = ctx.corpus()?;
    let examples: Vec<QAExample> = match input {
        Some(p) => read_squad(p)?.examples(&corpus.vocab, ctx.cfg.packing())?,
        None => data.dev.clone(),
    };
    let answers = match load_model(model)? {
        Loaded::Student(s) => predict_student(&s, &examples, &ctx.decode())?,
        Loaded::Teacher(t) => predict_teacher(&t, &examples, &ctx.decode())?,
    };
    let json = predictions_json(examples.iter().zip(answers).map(|(e, a)| (e.id.clone(), a.unwrap_or_default())));
    let path = output.map_or_else(|| ctx.out.join("predictions.json"), Path::to_path_buf);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    fs::write(&path, json).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("wrote {} predictions to {}", examples.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let ctx = Ctx {
        cfg: load_config(&cli.global)?,
        out: cli.global.out_dir.clone(),
    };
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainTeacher => train_teacher_cmd(&ctx),
        Command::Distill { mode, stop_after, resume } => distill(&ctx, mode, stop_after, resume),
        Command::Eval { model, split } => eval(&ctx, &model, split),
        Command::Ablate => ablate(&ctx),
        Command::Bench => bench_cmd(&ctx),
        Command::Flops {
            seq_len,
            compare_compression,
            from_config,
        } => flops(&ctx, seq_len, compare_compression, from_config),
        Command::ExportPredictions { model, input, output } => {
            export_predictions(&ctx, &model, input.as_deref(), output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
