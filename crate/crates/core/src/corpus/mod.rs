//! Question-answering data: tokenizer, example packing, SQuAD-format IO,
//! the synthetic corpus, augmentation and EM/F1 scoring.

pub mod example;
pub mod metrics;
pub mod squad;
pub mod synthetic;
pub mod tokenizer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use example::{batch_of, pack_example, Answer, PackingConfig, QAExample};
pub use metrics::{evaluate, evaluate_texts, Scores};
pub use squad::{load_squad_json, read_squad, write_squad, SquadFile};
pub use synthetic::{generate_synthetic_corpus, SyntheticOptions};
pub use tokenizer::Vocabulary;

/// Augmented-to-labeled size ratio used when none is given.
pub const DEFAULT_AUGMENT_RATIO: f64 = 500_000.0 / 130_000.0;

/// Labeled examples followed by at most `ratio * labeled.len()` unlabeled
/// pairs (chosen with `seed`). With `ratio == 0` the labeled set is returned
/// unchanged.
pub fn mix_augmented(labeled: &[QAExample], unlabeled: &[QAExample], ratio: f64, seed: u64) -> Vec<QAExample> {
    let mut out = labeled.to_vec();
    let want = ((labeled.len() as f64) * ratio.max(0.0)).round() as usize;
    let take = want.min(unlabeled.len());
    if take == 0 {
        return out;
    }
    let mut idx: Vec<usize> = (0..unlabeled.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(take);
    idx.sort_unstable();
    out.extend(idx.into_iter().map(|i| unlabeled[i].unlabeled()));
    out
}
