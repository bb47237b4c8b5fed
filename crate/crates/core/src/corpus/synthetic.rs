//! Template grammar of short factual paragraphs with questions whose answers
//! are exact context spans. Unanswerable questions ask about a relation that
//! no sentence of the paragraph mentions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::example::Answer;
use super::squad::{Article, Paragraph, Qa, SquadFile};

pub const ENTITIES: [&str; 50] = [
    "Alba", "Bruno", "Carla", "Dario", "Elena", "Fabio", "Gina", "Hugo", "Irene", "Jonas", "Karin", "Luca",
    "Marta", "Nico", "Olga", "Pablo", "Quinn", "Rosa", "Sven", "Tania", "Ugo", "Vera", "Walter", "Xenia",
    "Yara", "Zeno", "Anton", "Bianca", "Cyril", "Delia", "Emil", "Flora", "Gustav", "Helga", "Ivan", "Julia",
    "Kurt", "Lena", "Milo", "Nora", "Oscar", "Petra", "Rudi", "Selma", "Timo", "Ulla", "Viktor", "Wanda",
    "Yusuf", "Zora",
];

const CITIES: &[&str] = &[
    "Paris", "Rome", "Lisbon", "Oslo", "Vienna", "Dublin", "Prague", "New Haven", "San Remo", "Cape Town",
];

/// A relation: sentence template, question template and admissible values.
pub struct Relation {
    pub name: &'static str,
    pub sentence: &'static str,
    pub question: &'static str,
    pub values: &'static [&'static str],
}

pub const RELATIONS: [Relation; 8] = [
    Relation {
        name: "born_in",
        sentence: "{E} was born in {V}.",
        question: "Where was {E} born?",
        values: CITIES,
    },
    Relation {
        name: "lives_in",
        sentence: "{E} lives in {V}.",
        question: "Where does {E} live?",
        values: CITIES,
    },
    Relation {
        name: "works_as",
        sentence: "{E} works as a {V}.",
        question: "What does {E} work as?",
        values: &["baker", "pilot", "nurse", "teacher", "lawyer", "truck driver", "web designer", "chef"],
    },
    Relation {
        name: "eats",
        sentence: "{E} likes to eat {V}.",
        question: "What does {E} like to eat?",
        values: &["pasta", "rice", "soup", "apples", "sweet corn", "green beans", "cheese", "bread"],
    },
    Relation {
        name: "speaks",
        sentence: "{E} speaks {V}.",
        question: "Which language does {E} speak?",
        values: &["French", "German", "Spanish", "Italian", "Polish", "Greek", "Dutch", "Swedish"],
    },
    Relation {
        name: "plays",
        sentence: "{E} plays the {V}.",
        question: "Which instrument does {E} play?",
        values: &["piano", "violin", "guitar", "drums", "flute", "cello", "bass guitar", "trumpet"],
    },
    Relation {
        name: "owns",
        sentence: "{E} owns a {V}.",
        question: "Which pet does {E} own?",
        values: &["dog", "cat", "parrot", "rabbit", "hamster", "turtle", "goldfish", "pony"],
    },
    Relation {
        name: "studied",
        sentence: "{E} studied {V}.",
        question: "What subject did {E} study?",
        values: &["physics", "history", "biology", "law", "music", "art history", "computer science", "math"],
    },
];

/// Generator knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub entities_per_paragraph: usize,
    pub facts_per_paragraph: usize,
    pub questions_per_paragraph: usize,
    pub unanswerable_fraction: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            entities_per_paragraph: 2,
            facts_per_paragraph: 3,
            questions_per_paragraph: 2,
            unanswerable_fraction: 1.0 / 3.0,
        }
    }
}

struct Fact {
    entity: usize,
    relation: usize,
    value: &'static str,
}

/// Corpus with default options.
pub fn generate_synthetic_corpus(seed: u64, n_paragraphs: usize) -> SquadFile {
    generate_synthetic_corpus_with(seed, n_paragraphs, &SyntheticOptions::default())
}

pub fn generate_synthetic_corpus_with(seed: u64, n_paragraphs: usize, opts: &SyntheticOptions) -> SquadFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_entities = opts.entities_per_paragraph.clamp(1, ENTITIES.len());
    let n_facts = opts.facts_per_paragraph.clamp(1, RELATIONS.len() - 1);
    let mut paragraphs = Vec::with_capacity(n_paragraphs);
    for p in 0..n_paragraphs {
        let entities: Vec<usize> = rand::seq::index::sample(&mut rng, ENTITIES.len(), n_entities).into_vec();
        let mut facts: Vec<Fact> = Vec::new();
        while facts.len() < n_facts {
            let entity = entities[rng.gen_range(0..n_entities)];
            let relation = rng.gen_range(0..RELATIONS.len());
            if facts.iter().any(|f| f.entity == entity && f.relation == relation) {
                continue;
            }
            let value = *RELATIONS[relation].values.choose(&mut rng).expect("values");
            facts.push(Fact { entity, relation, value });
        }

        let mut context = String::new();
        let mut value_offsets = Vec::with_capacity(facts.len());
        for f in &facts {
            if !context.is_empty() {
                context.push(' ');
            }
            let template = RELATIONS[f.relation].sentence;
            let (before, after) = template.split_once("{V}").expect("template has a value slot");
            context.push_str(&before.replace("{E}", ENTITIES[f.entity]));
            value_offsets.push(context.chars().count());
            context.push_str(f.value);
            context.push_str(after);
        }

        let absent: Vec<usize> = (0..RELATIONS.len())
            .filter(|r| facts.iter().all(|f| f.relation != *r))
            .collect();
        let mut qas = Vec::with_capacity(opts.questions_per_paragraph);
        for q in 0..opts.questions_per_paragraph {
            let id = format!("syn{seed}-{p}-{q}");
            if rng.gen_bool(opts.unanswerable_fraction.clamp(0.0, 1.0)) {
                let r = *absent.choose(&mut rng).expect("some relation is absent");
                let e = entities[rng.gen_range(0..n_entities)];
                qas.push(Qa {
                    id,
                    question: RELATIONS[r].question.replace("{E}", ENTITIES[e]),
                    answers: Vec::new(),
                    is_impossible: Some(true),
                });
            } else {
                let i = rng.gen_range(0..facts.len());
                let f = &facts[i];
                qas.push(Qa {
                    id,
                    question: RELATIONS[f.relation].question.replace("{E}", ENTITIES[f.entity]),
                    answers: vec![Answer {
                        text: f.value.to_string(),
                        answer_start: value_offsets[i],
                    }],
                    is_impossible: Some(false),
                });
            }
        }
        paragraphs.push(Paragraph { context, qas });
    }
    SquadFile {
        version: Some("v2.0".into()),
        data: vec![Article {
            title: format!("synthetic-{seed}"),
            paragraphs,
        }],
    }
}

/// Relation named by a generated question, if any.
pub fn question_relation(question: &str) -> Option<usize> {
    RELATIONS.iter().position(|r| {
        let (head, tail) = r.question.split_once("{E}").expect("template has an entity slot");
        question.starts_with(head) && question.ends_with(tail)
    })
}

/// Relations mentioned by a generated context.
pub fn context_relations(context: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for sentence in context.split_inclusive('.') {
        let s = sentence.trim();
        for (i, r) in RELATIONS.iter().enumerate() {
            let (before, after) = r.sentence.split_once("{V}").expect("value slot");
            let before = before.split_once("{E}").expect("entity slot").1;
            if s.contains(before) && s.ends_with(after) && !out.contains(&i) {
                out.push(i);
            }
        }
    }
    out
}
