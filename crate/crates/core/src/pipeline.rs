//! Run configuration shared by the command-line tool and end-to-end desk
//! runs, plus the data and teacher steps every run starts from.
//!
//! Config files are `key=value` text with section prefixes: `data.`,
//! `student.`, `teacher.`, `teacher_train.`, `train.` and `bench.`. The bare
//! key `seed` sets every seed at once.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic_corpus, read_squad, write_squad, PackingConfig, QAExample, SquadFile, Vocabulary};
use crate::error::{Error, Result};
use crate::kv::{self, impl_kv_fields, KvFields};
use crate::model::ModelConfig;
use crate::teacher::{TeacherConfig, TeacherModel};
use crate::trainer::{train_teacher, AblationInputs, TeacherTrainConfig, TrainConfig};

pub const DATA_DIR: &str = "data";
pub const TEACHER_DIR: &str = "teacher";
pub const TRAIN_FILE: &str = "train.json";
pub const DEV_FILE: &str = "dev.json";
pub const VOCAB_FILE: &str = "vocab.txt";
/// Config entries a cached artifact was produced from.
const INPUTS_FILE: &str = "inputs.cfg";

/// Synthetic corpus and packing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Train split seed; the dev split uses `seed + 1`.
    pub seed: u64,
    pub train_paragraphs: usize,
    pub dev_paragraphs: usize,
    /// Train examples the student sees with labels; the rest form the
    /// unlabeled augmentation pool. 0 means all of them.
    pub student_labeled: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl_kv_fields!(DataConfig {
    seed,
    train_paragraphs,
    dev_paragraphs,
    student_labeled,
    vocab_size,
    seq_len,
});

impl DataConfig {
    pub fn desk() -> Self {
        DataConfig {
            seed: 1,
            train_paragraphs: 1000,
            dev_paragraphs: 100,
            student_labeled: 300,
            vocab_size: 600,
            seq_len: 32,
        }
    }
}

/// Inference timing setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seq_len: usize,
    pub batch_size: usize,
    pub n_examples: usize,
    pub trials: usize,
    pub warmup: usize,
    /// `f32` or `f64`.
    pub precision: String,
    pub seed: u64,
}

impl_kv_fields!(BenchConfig {
    seq_len,
    batch_size,
    n_examples,
    trials,
    warmup,
    precision,
    seed,
});

impl BenchConfig {
    pub fn desk() -> Self {
        BenchConfig {
            seq_len: 384,
            batch_size: 8,
            n_examples: 32,
            trials: 3,
            warmup: 1,
            precision: "f32".into(),
            seed: 0,
        }
    }
}

/// Everything a command needs. `vocab_size` and `max_seq_len` of the
/// student and teacher sections are replaced by the corpus values when
/// models are built for training.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub student: ModelConfig,
    pub teacher: TeacherConfig,
    pub teacher_train: TeacherTrainConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Workstation preset used by the ablation.
    pub fn desk() -> Self {
        let data = DataConfig::desk();
        RunConfig {
            student: ModelConfig::desk(data.vocab_size, data.seq_len, 32, 4, 4),
            teacher: TeacherConfig::desk(data.vocab_size, data.seq_len),
            teacher_train: TeacherTrainConfig {
                total_steps: 1000,
                seed: 0,
                init_seed: 3,
                ..TeacherTrainConfig::default()
            },
            train: TrainConfig {
                init_lr: 1e-3,
                total_steps: 6000,
                seed: 7,
                ..TrainConfig::desk()
            },
            bench: BenchConfig::desk(),
            data,
        }
    }

    fn sections(&mut self) -> [(&'static str, &mut dyn KvFields); 6] {
        [
            ("data", &mut self.data),
            ("student", &mut self.student),
            ("teacher", &mut self.teacher),
            ("teacher_train", &mut self.teacher_train),
            ("train", &mut self.train),
            ("bench", &mut self.bench),
        ]
    }

    /// Sets one `section.field` entry, or every seed for `seed`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "seed" {
            let seed = kv::parse_value(key, value).map_err(Error::Config)?;
            self.set_seed(seed);
            return Ok(());
        }
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        for (name, target) in self.sections() {
            if name == section {
                return target.set_field(field, value).map_err(|e| Error::Config(format!("{e} (section {section})")));
            }
        }
        Err(Error::Config(format!("unknown section in key {key:?}")))
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut me = self.clone();
        for (name, target) in me.sections() {
            out.extend(target.fields().into_iter().map(|(k, v)| (format!("{name}.{k}"), v)));
        }
        out
    }

    pub fn render(&self) -> String {
        let entries = self.entries();
        kv::render(entries.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    /// Applies `key=value` text on top of the desk preset.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::desk();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text).map_err(Error::Config)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.teacher_train.seed = seed;
        self.teacher_train.init_seed = seed;
        self.train.seed = seed;
        self.bench.seed = seed;
    }

    pub fn packing(&self) -> PackingConfig {
        PackingConfig::new(self.data.seq_len)
    }

    pub fn student_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_seq_len: self.data.seq_len,
            ..self.student.clone()
        }
    }

    pub fn teacher_config(&self, vocab_size: usize) -> TeacherConfig {
        TeacherConfig {
            vocab_size,
            max_seq_len: self.data.seq_len,
            ..self.teacher.clone()
        }
    }

    /// Settings the teacher depends on. It trains on the whole train split,
    /// so the size of the student's labeled subset is left out.
    fn teacher_inputs(&self) -> String {
        let text = self.section_text(&["data", "teacher", "teacher_train"]);
        text.lines()
            .filter(|l| !l.starts_with("data.student_labeled"))
            .map(|l| format!("{l}\n"))
            .collect()
    }

    fn section_text(&self, sections: &[&str]) -> String {
        let entries: Vec<(String, String)> = self
            .entries()
            .into_iter()
            .filter(|(k, _)| sections.iter().any(|s| k.split_once('.').is_some_and(|(p, _)| p == *s)))
            .collect();
        kv::render(entries.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }
}

/// Raw corpus splits and the vocabulary trained on the train split.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: SquadFile,
    pub dev: SquadFile,
}

impl Corpus {
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        let train = generate_synthetic_corpus(cfg.seed, cfg.train_paragraphs);
        let dev = generate_synthetic_corpus(cfg.seed.wrapping_add(1), cfg.dev_paragraphs);
        let vocab = Vocabulary::build(train.texts(), cfg.vocab_size)?;
        Ok(Corpus { vocab, train, dev })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_squad(&dir.join(TRAIN_FILE), &self.train)?;
        write_squad(&dir.join(DEV_FILE), &self.dev)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Corpus {
            vocab: Vocabulary::load(&dir.join(VOCAB_FILE))?,
            train: read_squad(&dir.join(TRAIN_FILE))?,
            dev: read_squad(&dir.join(DEV_FILE))?,
        })
    }

    pub fn datasets(&self, cfg: &RunConfig) -> Result<Datasets> {
        let train = self.train.examples(&self.vocab, cfg.packing())?;
        let dev = self.dev.examples(&self.vocab, cfg.packing())?;
        if train.is_empty() {
            return Err(Error::Data("train split holds no questions".into()));
        }
        let n = cfg.data.student_labeled;
        let labeled = if n == 0 { train.len() } else { n.min(train.len()) };
        Ok(Datasets { train, dev, labeled })
    }
}

/// Packed splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    /// All train examples; the teacher learns from every one.
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub labeled: usize,
}

impl Datasets {
    /// Student training set.
    pub fn labeled(&self) -> &[QAExample] {
        &self.train[..self.labeled]
    }

    /// Question/context pairs for augmentation; labels are ignored.
    pub fn unlabeled(&self) -> &[QAExample] {
        &self.train[self.labeled..]
    }
}

fn cached(dir: &Path, inputs: &str) -> bool {
    fs::read_to_string(dir.join(INPUTS_FILE)).is_ok_and(|t| t == inputs)
}

fn mark(dir: &Path, inputs: &str) -> Result<()> {
    let p = dir.join(INPUTS_FILE);
    fs::write(&p, inputs).map_err(|e| Error::io(&p, e))
}

/// Generates and writes the corpus under `dir`.
pub fn write_corpus(dir: &Path, cfg: &RunConfig) -> Result<Corpus> {
    let corpus = Corpus::generate(&cfg.data)?;
    corpus.save(dir)?;
    mark(dir, &cfg.section_text(&["data"]))?;
    Ok(corpus)
}

/// Loads the corpus under `dir` when it was generated from the same data
/// settings, otherwise generates it.
pub fn ensure_corpus(dir: &Path, cfg: &RunConfig) -> Result<Corpus> {
    if cached(dir, &cfg.section_text(&["data"])) {
        Corpus::load(dir)
    } else {
        write_corpus(dir, cfg)
    }
}

/// Builds and fine-tunes the teacher on all train examples.
pub fn fit_teacher(cfg: &RunConfig, vocab_size: usize, data: &Datasets, on_step: impl FnMut(u64, f64)) -> Result<(TeacherModel, Vec<f64>)> {
    let mut teacher = TeacherModel::build(cfg.teacher_config(vocab_size), cfg.teacher_train.init_seed)?;
    let losses = train_teacher(&mut teacher, &data.train, &cfg.teacher_train, on_step)?;
    Ok((teacher, losses))
}

/// Trains and saves the teacher to `dir`.
pub fn write_teacher(dir: &Path, cfg: &RunConfig, vocab_size: usize, data: &Datasets, on_step: impl FnMut(u64, f64)) -> Result<(TeacherModel, Vec<f64>)> {
    let (teacher, losses) = fit_teacher(cfg, vocab_size, data, on_step)?;
    teacher.save(dir, losses.len() as u64)?;
    mark(dir, &cfg.teacher_inputs())?;
    Ok((teacher, losses))
}

/// Loads the teacher under `dir` when it was trained from the same
/// settings, otherwise trains and saves one.
pub fn ensure_teacher(dir: &Path, cfg: &RunConfig, vocab_size: usize, data: &Datasets, on_step: impl FnMut(u64, f64)) -> Result<TeacherModel> {
    if cached(dir, &cfg.teacher_inputs()) {
        Ok(TeacherModel::load(dir)?.0)
    } else {
        Ok(write_teacher(dir, cfg, vocab_size, data, on_step)?.0)
    }
}

/// Ablation inputs for the five training modes.
pub fn ablation_inputs<'a>(cfg: &RunConfig, vocab_size: usize, teacher: &'a TeacherModel, data: &'a Datasets) -> AblationInputs<'a> {
    AblationInputs {
        student_config: cfg.student_config(vocab_size),
        student_seed: cfg.train.seed,
        teacher,
        train: data.labeled(),
        unlabeled: data.unlabeled(),
        dev: &data.dev,
        config: cfg.train.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_inputs_ignore_labeled_subset() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.set("data.student_labeled", "600").unwrap();
        assert_eq!(a.teacher_inputs(), b.teacher_inputs());
        b.set("teacher_train.total_steps", "5").unwrap();
        assert_ne!(a.teacher_inputs(), b.teacher_inputs());
        assert!(a.teacher_inputs().contains("data.seed=1\n"));
    }

    #[test]
    fn checked_in_desk_config_matches_preset() {
        let text = include_str!("../../../configs/desk.cfg");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::desk());
    }
}
