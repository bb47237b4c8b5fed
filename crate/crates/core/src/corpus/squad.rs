//! SQuAD v2.0 JSON reading and writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::example::{pack_example, Answer, PackingConfig, QAExample};
use super::tokenizer::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub data: Vec<Article>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Article {
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<Qa>,
}

/// A question. With no answers and no `is_impossible` flag it is treated
/// as unlabeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qa {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_impossible: Option<bool>,
}

impl Qa {
    pub fn has_label(&self) -> bool {
        self.is_impossible == Some(true) || !self.answers.is_empty()
    }
}

/// Parses SQuAD JSON text.
pub fn parse_squad(text: &str) -> std::result::Result<SquadFile, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

pub fn read_squad(path: &Path) -> Result<SquadFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_squad(path: &Path, file: &SquadFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file).expect("squad structs serialise");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl SquadFile {
    pub fn questions(&self) -> impl Iterator<Item = (&Paragraph, &Qa)> {
        self.data
            .iter()
            .flat_map(|a| a.paragraphs.iter())
            .flat_map(|p| p.qas.iter().map(move |q| (p, q)))
    }

    pub fn num_questions(&self) -> usize {
        self.questions().count()
    }

    /// All contexts and questions, for vocabulary training.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.data.iter().flat_map(|a| a.paragraphs.iter()).flat_map(|p| {
            std::iter::once(p.context.as_str()).chain(p.qas.iter().map(|q| q.question.as_str()))
        })
    }

    pub fn examples(&self, vocab: &Vocabulary, packing: PackingConfig) -> Result<Vec<QAExample>> {
        self.questions()
            .map(|(p, q)| {
                pack_example(
                    vocab,
                    packing,
                    &q.id,
                    &q.question,
                    &p.context,
                    q.answers.clone(),
                    q.is_impossible == Some(true),
                    q.has_label(),
                )
            })
            .collect()
    }

    /// Same file with every label removed.
    pub fn without_labels(&self) -> SquadFile {
        let mut out = self.clone();
        for a in &mut out.data {
            for p in &mut a.paragraphs {
                for q in &mut p.qas {
                    q.answers.clear();
                    q.is_impossible = None;
                }
            }
        }
        out
    }

    /// Serialises examples; consecutive examples sharing a context share a
    /// paragraph.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a QAExample>) -> SquadFile {
        let mut paragraphs: Vec<Paragraph> = Vec::new();
        for e in examples {
            let qa = Qa {
                id: e.id.clone(),
                question: e.question.clone(),
                answers: e.answers.clone(),
                is_impossible: e.has_label.then_some(e.is_impossible),
            };
            match paragraphs.last_mut() {
                Some(p) if p.context == e.context => p.qas.push(qa),
                _ => paragraphs.push(Paragraph {
                    context: e.context.clone(),
                    qas: vec![qa],
                }),
            }
        }
        SquadFile {
            version: Some("v2.0".into()),
            data: vec![Article {
                title: "examples".into(),
                paragraphs,
            }],
        }
    }
}

/// Reads and packs a SQuAD file.
pub fn load_squad_json(path: &Path, vocab: &Vocabulary, packing: PackingConfig) -> Result<Vec<QAExample>> {
    read_squad(path)?.examples(vocab, packing)
}

/// Predictions file: question id to answer text (`""` for null).
pub fn predictions_json(ids_and_answers: impl IntoIterator<Item = (String, String)>) -> String {
    let map: BTreeMap<String, String> = ids_and_answers.into_iter().collect();
    serde_json::to_string_pretty(&map).expect("string map serialises")
}
